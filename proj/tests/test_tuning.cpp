#include <cmath>
#include <filesystem>
#include <map>
#include <memory>

#include "doctest.h"
#include "disentune/core/ops.hpp"
#include "disentune/io/files.hpp"
#include "disentune/tuning/tuning.hpp"
#include "support.hpp"

using namespace disentune;
using namespace disentune::tuning;

namespace {

constexpr int kSize = 8;

diffusion::DenoiserConfig micro_config() {
    diffusion::DenoiserConfig c;
    c.height = kSize;
    c.width = kSize;
    c.cond_dim = 8;
    c.cond_len = 8;
    c.base_channels = 4;
    c.time_embed_dim = 8;
    c.timesteps = 20;
    return c;
}

struct Micro {
    explicit Micro(TrainConfig cfg = {}, DType dt = DType::f32)
        : encoders(make_encoders(8, 8, kSize, dt)),
          model(std::make_unique<diffusion::Denoiser>(micro_config(), 17, dt)),
          state(*model, encoders, diffusion::make_schedule(20), cfg, "a S* square") {}

    Encoders encoders;
    std::unique_ptr<diffusion::Denoiser> model;
    TuningState state;
};

const synthbench::SubjectSet& micro_set() {
    static const synthbench::SubjectSet s =
        synthbench::make_subject_set("s0", synthbench::benchmark_subject("s0").spec, 4, 3, kSize);
    return s;
}

TrainConfig with(double lambda2, double lambda3, std::uint64_t seed = 0) {
    TrainConfig c;
    c.lambda2 = lambda2;
    c.lambda3 = lambda3;
    c.seed = seed;
    return c;
}

std::map<std::string, std::uint64_t> checksums(const NamedTensors& ts) {
    std::map<std::string, std::uint64_t> out;
    for (const auto& t : ts) out[t.name] = checksum(t.tensor);
    return out;
}

void perturb_lora(const TuningState& state, std::uint64_t seed) {
    Rng rng(seed);
    for (const auto& p : state.trainable()) {
        if (p.name.ends_with(".lora_b")) Tensor(p.tensor).assign(randn(p.tensor.shape(), rng, 0.05, p.tensor.dtype()));
    }
}

}  // namespace

TEST_SUITE("train config") {
    TEST_CASE("defaults and validation") {
        const TrainConfig c;
        CHECK(c.lambda2 == 0.01);
        CHECK(c.lambda3 == 0.001);
        CHECK(c.lr == 1e-4);
        CHECK(c.iterations == 3000);
        CHECK(c.lora_rank == 4);
        CHECK(TrainConfig::kSmokeIterations == 500);
        CHECK_NOTHROW(c.validate());
        auto bad = c;
        bad.lambda2 = 1.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        bad = c;
        bad.batch = 2;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        bad = c;
        bad.lambda3 = -1;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        CHECK(with(0, 0.001).digest() != c.digest());
        auto no_adapter = c;
        no_adapter.use_adapter = false;
        CHECK(no_adapter.digest() != c.digest());
    }

    TEST_CASE("step log format") {
        CHECK(step_log_header() == "iteration,t,L1,L2,L3,L,grad_norm\n");
        StepRecord r{3, 17, 0.5, 0.25, -0.001, 0.749, 2.0};
        CHECK(step_log_line(r) == "3,17,0.5,0.25,-0.001,0.749,2\n");
    }
}

TEST_SUITE("losses") {
    TEST_CASE("total is the exact sum of the reported terms") {
        Micro m;
        for (int b = 0; b < 10; ++b) {
            Rng rng(derive_seed(1, b));
            const auto& x = micro_set().images[static_cast<std::size_t>(b) % 4];
            const Losses l = m.state.compute_losses(x, rng);
            const float sum = (static_cast<float>(l.l1.item()) + static_cast<float>(l.l2.item())) +
                              static_cast<float>(l.l3.item());
            CHECK(static_cast<float>(l.total.item()) == sum);
            current_tape().clear();
        }
    }

    TEST_CASE("zero weights reduce the objective to the denoising term") {
        Micro m(with(0.0, 0.0));
        for (int b = 0; b < 10; ++b) {
            Rng rng(derive_seed(2, b));
            const Losses l = m.state.compute_losses(micro_set().images[0], rng);
            CHECK(l.l2.item() == 0.0);
            CHECK(l.l3.item() == 0.0);
            CHECK(bit_equal(l.total, l.l1));
            current_tape().clear();
        }
    }

    TEST_CASE("contrastive term equals lambda3 when f_i matches pooled f_s") {
        Micro m;
        Tensor pooled = ops::mean_axis(m.state.subject_condition(), 0);
        for (int b = 0; b < 10; ++b) {
            Rng rng(derive_seed(3, b));
            const Losses l = m.state.compute_losses_with(micro_set().images[0], pooled, rng);
            CHECK(l.l3.item() == static_cast<double>(static_cast<float>(0.001)));
            current_tape().clear();
        }
    }

    TEST_CASE("both denoising passes see the same noise and timestep") {
        Micro m;
        // Zeroing the output layer makes every prediction 0, so each pass
        // reduces to the mean square of the injected noise.
        for (const auto& p : m.model->parameters()) {
            if (p.name == "out.w" || p.name == "out.b") Tensor(p.tensor).assign(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
        }
        Rng rng(4);
        const Losses l = m.state.compute_losses(micro_set().images[1], rng);
        CHECK(l.eps_checksum_l1 == l.eps_checksum_l2);
        double s = 0.0;
        for (std::int64_t i = 0; i < l.eps.numel(); ++i) s += l.eps.at(i) * l.eps.at(i);
        const double mse = s / static_cast<double>(l.eps.numel());
        CHECK(l.l1.item() == doctest::Approx(mse).epsilon(1e-6));
        CHECK(l.l2.item() == doctest::Approx(0.01 * mse).epsilon(1e-6));

        Rng again(4);
        CHECK(again.below(20) + 1 == static_cast<std::uint64_t>(l.t));
        current_tape().clear();
    }

    TEST_CASE("noise draw matches the forward process") {
        ScopedDType f64(DType::f64);
        Micro m({}, DType::f64);
        Rng rng(5);
        const auto& x = micro_set().images[2];
        const Losses l = m.state.compute_losses(x, rng);
        const auto& s = m.state.schedule();
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            CHECK(l.z_t.at(i) == doctest::Approx(s.alpha(l.t) * x.at(i) + s.sigma(l.t) * l.eps.at(i)).epsilon(1e-12));
        }
        current_tape().clear();
    }

    TEST_CASE("full objective gradients match finite differences") {
        ScopedDType f64(DType::f64);
        TrainConfig cfg;
        cfg.lora_rank = 2;
        Micro m(cfg, DType::f64);
        perturb_lora(m.state, 9);
        const auto x = micro_set().images[0].to(DType::f64);
        std::vector<std::pair<std::string, Tensor>> params;
        for (const auto& p : m.state.trainable()) params.push_back({p.name, p.tensor});
        const auto rep = testsupport::fd_check(
            [&] {
                Rng rng(6);
                return m.state.compute_losses(x, rng).total;
            },
            params, 1e-4, 1e-9);
        INFO(rep.worst);
        CHECK(rep.checked == static_cast<std::size_t>(m.state.trainable_count()));
        CHECK(rep.max_rel <= 1e-4);
    }
}

TEST_SUITE("training") {
    TEST_CASE("only the trainable set moves") {
        Micro m;
        const auto base_before = checksums(m.model->parameters());
        const auto text_before = checksums(m.encoders.text.weights());
        const auto image_before = checksums(m.encoders.image.weights());
        const auto trainable_before = checksums(m.state.trainable());
        for (int it = 0; it < 3; ++it) m.state.train_step(it, micro_set().images[0]);
        CHECK(checksums(m.model->parameters()) == base_before);
        CHECK(checksums(m.encoders.text.weights()) == text_before);
        CHECK(checksums(m.encoders.image.weights()) == image_before);
        std::int64_t moved = 0;
        for (const auto& p : m.state.trainable()) {
            INFO(p.name);
            CHECK(checksum(p.tensor) != trainable_before.at(p.name));
            moved += p.tensor.numel();
        }
        CHECK(moved == m.state.trainable_count());
        CHECK(m.state.total_count() > m.state.trainable_count());
    }

    TEST_CASE("objective decreases on a fixed evaluation set") {
        TrainConfig cfg;
        cfg.lr = 3e-3;
        Micro m(cfg);
        auto evaluate = [&] {
            double total = 0.0;
            for (int k = 0; k < 64; ++k) {
                Rng rng(derive_seed(77, k));
                total += m.state.compute_losses(micro_set().images[static_cast<std::size_t>(k) % 4], rng).total.item();
                current_tape().clear();
            }
            return total / 64;
        };
        const double before = evaluate();
        for (int it = 0; it < 200; ++it) m.state.train_step(it, micro_set().images[static_cast<std::size_t>(it) % 4]);
        const double after = evaluate();
        INFO("before " << before << " after " << after);
        CHECK(after < before);
    }

    TEST_CASE("identical seeds give identical checkpoints and logs") {
        const auto dir = std::filesystem::temp_directory_path() / "disentune_tuning_det";
        std::filesystem::create_directories(dir);
        TrainConfig cfg;
        cfg.iterations = 25;
        cfg.seed = 4;
        std::string ckpt[2], log[2];
        for (int r = 0; r < 2; ++r) {
            Micro m(cfg);
            TrainHooks hooks;
            hooks.step_log = dir / ("log" + std::to_string(r) + ".csv");
            ckpt[r] = io::encode_checkpoint(train(m.state, micro_set(), hooks));
            log[r] = io::read_file(*hooks.step_log);
        }
        std::filesystem::remove_all(dir);
        CHECK(ckpt[0] == ckpt[1]);
        CHECK(log[0] == log[1]);
        CHECK(std::count(log[0].begin(), log[0].end(), '\n') == 26);
        cfg.seed = 5;
        Micro other(cfg);
        CHECK(io::encode_checkpoint(train(other.state, micro_set())) != ckpt[0]);
    }

    TEST_CASE("resuming from an intermediate checkpoint is bit-identical") {
        const auto path = std::filesystem::temp_directory_path() / "disentune_resume.ckpt";
        TrainConfig cfg;
        cfg.iterations = 20;
        cfg.seed = 8;
        Micro straight(cfg);
        const std::string full = io::encode_checkpoint(train(straight.state, micro_set()));

        {
            Micro first(cfg);
            TrainHooks hooks;
            hooks.checkpoint_path = path;
            hooks.save_every = 10;
            int seen = 0;
            hooks.on_step = [&](const StepRecord&) {
                if (++seen == 12) throw NumericError("interrupted");
            };
            CHECK_THROWS_AS(train(first.state, micro_set(), hooks), NumericError);
        }
        Micro second(cfg);
        const auto resumed_at = second.state.restore(io::load_checkpoint(path));
        std::filesystem::remove(path);
        REQUIRE(resumed_at.has_value());
        CHECK(*resumed_at == 10);
        CHECK(io::encode_checkpoint(train(second.state, micro_set(), {}, *resumed_at)) == full);
    }

    TEST_CASE("checkpoint restore rejects a different variant") {
        TrainConfig cfg;
        cfg.iterations = 2;
        Micro full(cfg);
        const auto ckpt = train(full.state, micro_set());
        cfg.use_adapter = false;
        Micro ablated(cfg);
        CHECK_THROWS_AS(ablated.state.restore(ckpt), FormatError);
        const auto ablated_ckpt = train(ablated.state, micro_set());
        CHECK(ablated_ckpt.find("projection.w"));
        CHECK_FALSE(ablated_ckpt.find("adapter.m_raw"));
        CHECK(ablated.state.trainable_count() == adaptation::lora_param_count(ablated.model->lora_registry()));
    }

    TEST_CASE("mask stays inside the unit interval after training") {
        TrainConfig cfg;
        cfg.iterations = 30;
        cfg.lr = 1e-2;
        Micro m(cfg);
        train(m.state, micro_set());
        Tensor mask = m.state.adapter()->mask();
        for (std::int64_t i = 0; i < mask.numel(); ++i) {
            CHECK(mask.at(i) > 0.0);
            CHECK(mask.at(i) < 1.0);
        }
    }

    TEST_CASE("schedule length must match the denoiser") {
        Encoders enc = make_encoders(8, 8, kSize);
        diffusion::Denoiser model(micro_config(), 1);
        CHECK_THROWS_AS(TuningState(model, enc, diffusion::make_schedule(30), TrainConfig{}, "a S* square"), ConfigError);
    }

    TEST_CASE("empty subject set") {
        Micro m;
        synthbench::SubjectSet empty;
        CHECK_THROWS_AS(train(m.state, empty), InputError);
    }
}
