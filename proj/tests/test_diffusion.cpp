#include <cmath>

#include "doctest.h"
#include "disentune/core/ops.hpp"
#include "disentune/diffusion/denoiser.hpp"
#include "disentune/diffusion/sampler.hpp"
#include "disentune/diffusion/schedule.hpp"
#include "support.hpp"

using namespace disentune;
using namespace disentune::diffusion;

namespace {

DenoiserConfig micro_config() {
    DenoiserConfig c;
    c.channels = 3;
    c.height = 8;
    c.width = 8;
    c.cond_dim = 8;
    c.cond_len = 3;
    c.base_channels = 4;
    c.depth = 2;
    c.time_embed_dim = 8;
    c.timesteps = 20;
    return c;
}

}  // namespace

TEST_SUITE("schedule") {
    TEST_CASE("variance preserving for every t") {
        for (int T : {10, 100, 1000}) {
            const auto s = make_schedule(T);
            for (int t = 0; t <= T; ++t) {
                CHECK(std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0) <= 1e-6);
            }
        }
    }

    TEST_CASE("monotone with a near-clean first step") {
        for (int T : {2, 10, 100, 1000}) {
            const auto s = make_schedule(T);
            CHECK(s.alpha(0) == 1.0);
            CHECK(s.sigma(0) == 0.0);
            CHECK(s.alpha(1) >= 0.99);
            for (int t = 1; t <= T; ++t) {
                CHECK(s.alpha(t) <= s.alpha(t - 1));
                CHECK(s.sigma(t) >= s.sigma(t - 1));
            }
        }
    }

    TEST_CASE("matches an independent cosine-schedule computation") {
        // Values from a separate float64 implementation of the cosine
        // alpha-bar recursion (beta clipped at 0.999, alpha_1 floored at 0.99).
        struct Row {
            int T, t;
            double alpha;
        };
        const Row rows[] = {
            {10, 1, 0.99},
            {10, 5, 0.70562840694181},
            {10, 9, 0.15585304301758005},
            {10, 10, 0.00492850596203755},
            {100, 1, 0.9996843093705424},
            {100, 50, 0.7027400589411691},
            {100, 99, 0.015583877179155577},
            {100, 100, 0.0004928054666245152},
            {1000, 1, 0.9999793576745362},
            {1000, 500, 0.7027400589411693},
            {1000, 999, 0.001558450161870714},
            {1000, 1000, 4.9282521313695554e-05},
        };
        for (const auto& r : rows) {
            const auto s = make_schedule(r.T);
            INFO("T=" << r.T << " t=" << r.t);
            CHECK(s.alpha(r.t) == doctest::Approx(r.alpha).epsilon(1e-12));
        }
    }

    TEST_CASE("too few steps is a configuration error") {
        CHECK_THROWS_AS(make_schedule(1), ConfigError);
        CHECK_THROWS_AS(make_schedule(0), ConfigError);
    }

    TEST_CASE("validate rejects a broken schedule") {
        auto s = make_schedule(10);
        s.sigmas[3] = 0.1;
        CHECK_THROWS_AS(validate_schedule(s), ContractError);
    }
}

TEST_SUITE("forward noise") {
    TEST_CASE("timestep outside 1..T is a range error") {
        const auto s = make_schedule(100);
        Tensor z = Tensor::zeros({3, 4, 4});
        CHECK_THROWS_AS(forward_noise(z, 0, z, s), RangeError);
        CHECK_THROWS_AS(forward_noise(z, 101, z, s), RangeError);
        CHECK_THROWS_AS(forward_noise(z, 5, Tensor::zeros({3, 4, 5}), s), DimensionError);
    }

    TEST_CASE("second moment matches alpha^2 |z|^2 + sigma^2 n") {
        const auto s = make_schedule(100);
        ScopedDType f64(DType::f64);
        Tensor z = testsupport::random_tensor({3, 4, 4}, 1, 0.5);
        double z2 = 0.0;
        for (std::int64_t i = 0; i < z.numel(); ++i) z2 += z.at(i) * z.at(i);
        Rng rng(2);
        for (int t : {1, 30, 70, 100}) {
            double acc = 0.0;
            const int n = 4000;
            for (int k = 0; k < n; ++k) {
                Tensor zt = forward_noise(z, t, randn(z.shape(), rng), s);
                for (std::int64_t i = 0; i < zt.numel(); ++i) acc += zt.at(i) * zt.at(i);
            }
            const double expected = s.alpha(t) * s.alpha(t) * z2 + s.sigma(t) * s.sigma(t) * z.numel();
            CHECK(acc / n == doctest::Approx(expected).epsilon(0.02));
        }
    }
}

TEST_SUITE("ddim") {
    TEST_CASE("timestep subsequence") {
        const auto ts = ddim_timesteps(100, 50);
        REQUIRE(ts.size() == 51);
        CHECK(ts.front() == 100);
        CHECK(ts[1] == 98);
        CHECK(ts[49] == 2);
        CHECK(ts.back() == 0);
        const auto all = ddim_timesteps(10, 10);
        for (int i = 0; i <= 10; ++i) CHECK(all[static_cast<std::size_t>(i)] == 10 - i);
        CHECK_THROWS_AS(ddim_timesteps(10, 11), ConfigError);
        CHECK_THROWS_AS(ddim_timesteps(10, 0), ConfigError);
    }

    TEST_CASE("true noise reconstructs the clean latent") {
        ScopedDType f64(DType::f64);
        const auto s = make_schedule(100);
        Rng rng(3);
        for (int k = 0; k < 50; ++k) {
            Tensor z0 = randn({3, 4, 4}, rng, 0.5);
            Tensor eps = randn({3, 4, 4}, rng);
            const int t = 1 + static_cast<int>(rng.below(100));
            Tensor zt = forward_noise(z0, t, eps, s);
            Tensor rec = ddim_step(zt, eps, t, 0, s, DdimOptions{false});
            CHECK(testsupport::max_abs_diff(rec, z0) <= 1e-9);
        }
    }

    TEST_CASE("clipping bounds the clean estimate") {
        ScopedDType f64(DType::f64);
        const auto s = make_schedule(100);
        Tensor zt = Tensor::full({1, 2, 2}, 5.0);
        Tensor eps = Tensor::zeros({1, 2, 2});
        Tensor rec = ddim_step(zt, eps, 1, 0, s, DdimOptions{true});
        for (int i = 0; i < 4; ++i) CHECK(rec.at(i) == 1.0);
    }

    TEST_CASE("sampling is deterministic in the seed") {
        const auto s = make_schedule(20);
        auto predictor = [](const Tensor& z, int) { return ops::scale(z, 0.5); };
        Tensor a = ddim_sample(predictor, {3, 4, 4}, s, 10, 7);
        Tensor b = ddim_sample(predictor, {3, 4, 4}, s, 10, 7);
        Tensor c = ddim_sample(predictor, {3, 4, 4}, s, 10, 8);
        CHECK(bit_equal(a, b));
        CHECK_FALSE(bit_equal(a, c));
    }
}

TEST_SUITE("denoiser") {
    TEST_CASE("output has the latent shape and depends on the condition") {
        Denoiser m(micro_config(), 1);
        Tensor z = testsupport::random_tensor({3, 8, 8}, 2, 1.0, DType::f32);
        Tensor c1 = testsupport::random_tensor({3, 8}, 3, 1.0, DType::f32);
        Tensor c2 = testsupport::random_tensor({3, 8}, 4, 1.0, DType::f32);
        Tensor y1 = m.predict_noise(z, 5, c1);
        CHECK(y1.shape() == z.shape());
        CHECK_FALSE(bit_equal(y1, m.predict_noise(z, 5, c2)));
        CHECK_FALSE(bit_equal(y1, m.predict_noise(z, 6, c1)));
        CHECK(bit_equal(y1, m.predict_noise(z, 5, c1)));
    }

    TEST_CASE("shape errors") {
        Denoiser m(micro_config(), 1);
        Tensor c = Tensor::zeros({3, 8});
        CHECK_THROWS_AS(m.predict_noise(Tensor::zeros({3, 8, 6}), 5, c), DimensionError);
        CHECK_THROWS_AS(m.predict_noise(Tensor::zeros({3, 8, 8}), 5, Tensor::zeros({4, 8})), DimensionError);
    }

    TEST_CASE("configuration validation") {
        auto c = micro_config();
        c.height = 6;
        CHECK_THROWS_AS(Denoiser(c, 1), ConfigError);
        c = micro_config();
        c.cond_dim = 0;
        CHECK_THROWS_AS(Denoiser(c, 1), ConfigError);
    }

    TEST_CASE("every stage has a registered condition projection") {
        Denoiser m(micro_config(), 1);
        const auto names = m.condition_projection_names();
        CHECK(names.size() == 2 * 2 + 2);
        for (const auto& n : names) CHECK(m.lora_registry().count(n) == 1);
        for (const char* n : {"mid.attn.q", "mid.attn.k", "mid.attn.v", "mid.attn.o"}) {
            CHECK(m.lora_registry().count(n) == 1);
        }
    }

    TEST_CASE("base weights are frozen after construction") {
        Denoiser m(micro_config(), 1);
        for (const auto& p : m.parameters()) CHECK_FALSE(p.tensor.requires_grad());
    }

    TEST_CASE("gradients through the network match finite differences") {
        ScopedDType f64(DType::f64);
        Denoiser m(micro_config(), 1, DType::f64);
        m.set_trainable(true);
        Tensor z = testsupport::random_tensor({3, 8, 8}, 5);
        Tensor cond = testsupport::param({3, 8}, 6);
        Tensor target = testsupport::random_tensor({3, 8, 8}, 7);
        std::vector<std::pair<std::string, Tensor>> params = {{"cond", cond}};
        for (const auto& p : m.parameters()) {
            if (p.name == "mid.attn.k" || p.name == "down0.cond_proj" || p.name == "temb.w1" || p.name == "in.b") {
                params.push_back({p.name, p.tensor});
            }
        }
        const auto rep = testsupport::fd_check([&] { return ops::mse(m.predict_noise(z, 7, cond), target); }, params,
                                               1e-5);
        INFO(rep.worst);
        CHECK(rep.max_rel <= 1e-5);
    }
}
