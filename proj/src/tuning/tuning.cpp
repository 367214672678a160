#include "disentune/tuning/tuning.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "disentune/core/ops.hpp"
#include "disentune/io/files.hpp"

namespace disentune::tuning {

namespace {

constexpr std::uint64_t kLoraStream = 0x10a;
constexpr std::uint64_t kAdapterStream = 0xada;
constexpr std::uint64_t kProjectionStream = 0x9e0;
constexpr const char* kProjectionName = "projection.w";
constexpr const char* kIterationName = "train.iteration";

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(lambda2 >= 0.0 && lambda2 < 1.0, "lambda2 must lie in [0, 1), got " + fmt(lambda2));
    require(lambda3 >= 0.0, "lambda3 must be >= 0, got " + fmt(lambda3));
    require(lr > 0.0, "lr must be > 0");
    require(iterations >= 1, "iterations must be >= 1");
    require(batch == 1, "only batch = 1 is supported");
    require(lora_rank >= 1, "lora_rank must be >= 1");
    require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, "betas must lie in (0, 1)");
    require(eps > 0.0, "eps must be > 0");
    require(weight_decay >= 0.0, "weight_decay must be >= 0");
}

std::string TrainConfig::serialize() const {
    std::ostringstream out;
    out << "lambda2=" << fmt(lambda2) << ";lambda3=" << fmt(lambda3) << ";lr=" << fmt(lr)
        << ";iterations=" << iterations << ";batch=" << batch << ";seed=" << seed << ";lora_rank=" << lora_rank
        << ";beta1=" << fmt(beta1) << ";beta2=" << fmt(beta2) << ";eps=" << fmt(eps)
        << ";weight_decay=" << fmt(weight_decay) << ";use_adapter=" << (use_adapter ? 1 : 0);
    return out.str();
}

std::uint64_t TrainConfig::digest() const { return io::fnv1a(serialize()); }

AdamWConfig TrainConfig::optimizer() const { return {lr, beta1, beta2, eps, weight_decay}; }

Tensor Encoders::encode_prompt(const std::string& prompt) const {
    const auto ids = vocab.tokenize(prompt, static_cast<int>(text.length()));
    return text.encode(ids);
}

Encoders make_encoders(std::int64_t cond_dim, std::int64_t cond_len, std::int64_t image_size, DType dt) {
    auto vocab = encoders::Vocabulary::load(encoders::default_vocabulary_path());
    const int v = vocab.size();
    return Encoders{std::move(vocab), encoders::TextEncoder(v, cond_dim, cond_len, encoders::kTextEncoderSeed, dt),
                    encoders::ImageEncoder(cond_dim, image_size, image_size, encoders::kImageEncoderSeed, dt)};
}

std::string step_log_header() { return "iteration,t,L1,L2,L3,L,grad_norm\n"; }

std::string step_log_line(const StepRecord& r) {
    return std::to_string(r.iteration) + "," + std::to_string(r.t) + "," + fmt(r.l1) + "," + fmt(r.l2) + "," +
           fmt(r.l3) + "," + fmt(r.l) + "," + fmt(r.grad_norm) + "\n";
}

TuningState::TuningState(diffusion::Denoiser& model, const Encoders& encoders, diffusion::NoiseSchedule schedule,
                         const TrainConfig& config, const std::string& prompt)
    : model_(model), encoders_(encoders), schedule_(std::move(schedule)), config_(config) {
    config_.validate();
    if (schedule_.steps != model_.config().timesteps) {
        throw ConfigError("schedule has " + std::to_string(schedule_.steps) + " steps but the denoiser expects " +
                          std::to_string(model_.config().timesteps));
    }
    const DType dt = model_.parameters().front().tensor.dtype();
    const auto d = model_.config().cond_dim;
    model_.set_trainable(false);
    adaptation::inject_lora(model_.lora_registry(), config_.lora_rank, derive_seed(config_.seed, kLoraStream));
    {
        NoGradGuard guard;
        f_s_ = encoders_.encode_prompt(prompt).to(dt);
        f_s_pooled_ = ops::mean_axis(f_s_, 0);
    }
    if (config_.use_adapter) {
        adapter_ = adaptation::MaskAdapter(d, derive_seed(config_.seed, kAdapterStream), dt);
    } else {
        Rng rng(derive_seed(config_.seed, kProjectionStream));
        projection_ = randn({d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)), dt);
    }
    optim_ = std::make_unique<AdamW>(trainable(), config_.optimizer());
}

Tensor TuningState::image_feature(const Tensor& x) const {
    NoGradGuard guard;
    return encoders_.image.encode(x.to(f_s_.dtype())).detach();
}

Tensor TuningState::identity_irrelevant(const Tensor& f_p) const {
    if (config_.use_adapter) {
        return adaptation::adapter_forward(adapter_, f_p);
    }
    const auto d = f_p.numel();
    return ops::reshape(ops::matmul_nt(ops::reshape(f_p, {1, d}), projection_), {d});
}

Losses TuningState::compute_losses(const Tensor& x, Rng& rng) const {
    return compute_losses_with(x, identity_irrelevant(image_feature(x)), rng);
}

Losses TuningState::compute_losses_with(const Tensor& x, const Tensor& f_i, Rng& rng) const {
    const DType dt = f_s_.dtype();
    const auto d = f_s_.dim(1);
    Losses out;
    out.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule_.steps)));
    out.eps = randn(x.shape(), rng, 1.0, dt);
    out.z_t = diffusion::forward_noise(x.to(dt), out.t, out.eps, schedule_);

    const Tensor cond = ops::add(f_s_, ops::reshape(f_i, {1, d}));
    out.l1 = ops::mse(out.eps, model_.predict_noise(out.z_t, out.t, cond));
    out.eps_checksum_l1 = checksum(out.eps);

    if (config_.lambda2 > 0.0) {
        out.l2 = ops::scale(ops::mse(out.eps, model_.predict_noise(out.z_t, out.t, f_s_)), config_.lambda2);
        out.eps_checksum_l2 = checksum(out.eps);
    } else {
        out.l2 = Tensor::scalar(0.0, dt);
    }
    out.l3 = ops::scale(ops::cosine_similarity(f_s_pooled_, f_i), config_.lambda3);
    out.total = ops::add(ops::add(out.l1, out.l2), out.l3);
    return out;
}

StepRecord TuningState::train_step(int iteration, const Tensor& x) {
    Rng rng(derive_seed(config_.seed, static_cast<std::uint64_t>(iteration)));
    optim_->zero_grad();
    StepRecord rec;
    rec.iteration = iteration;
    {
        const Losses losses = compute_losses(x, rng);
        rec.t = losses.t;
        rec.l1 = losses.l1.item();
        rec.l2 = losses.l2.item();
        rec.l3 = losses.l3.item();
        rec.l = losses.total.item();
        backward(losses.total);
        current_tape().clear();
    }
    rec.grad_norm = optim_->grad_norm();
    optim_->step();
    return rec;
}

NamedTensors TuningState::trainable() const {
    NamedTensors out = adaptation::lora_parameters(model_.lora_registry());
    if (config_.use_adapter) {
        for (auto& p : adapter_.parameters()) out.push_back(p);
    }
    return out;
}

std::int64_t TuningState::trainable_count() const {
    return adaptation::trainable_param_count(model_.lora_registry(), adapter());
}

std::int64_t TuningState::total_count() const {
    std::int64_t n = 0;
    for (const auto& p : model_.parameters()) n += p.tensor.numel();
    return n + trainable_count();
}

io::Checkpoint TuningState::checkpoint(bool with_optimizer, int completed_iterations) const {
    io::Checkpoint ckpt;
    ckpt.config_digest = config_.digest();
    for (const auto& p : trainable()) ckpt.entries.push_back({p.name, p.tensor.clone()});
    if (!config_.use_adapter) {
        ckpt.entries.push_back({kProjectionName, projection_.clone()});
    }
    if (with_optimizer) {
        for (const auto& s : optim_->state()) ckpt.entries.push_back({s.name, s.tensor.clone()});
        ckpt.entries.push_back({kIterationName, Tensor::scalar(completed_iterations, DType::f64)});
    }
    return ckpt;
}

std::optional<int> TuningState::restore(const io::Checkpoint& ckpt) {
    if (ckpt.config_digest != config_.digest()) {
        // Inference may use other iteration counts; only the variant must match.
        if (static_cast<bool>(ckpt.find(kProjectionName)) == config_.use_adapter) {
            throw FormatError("checkpoint variant does not match the configuration (adapter vs projection)");
        }
    }
    io::restore_into(ckpt, trainable());
    if (!config_.use_adapter) {
        io::restore_into(ckpt, {{kProjectionName, projection_}});
    }
    if (const Tensor it = ckpt.find(kIterationName)) {
        optim_->load_state(ckpt.entries);
        return static_cast<int>(it.item());
    }
    return std::nullopt;
}

io::Checkpoint train(TuningState& state, const synthbench::SubjectSet& set, const TrainHooks& hooks,
                     int start_iteration) {
    if (set.images.empty()) {
        throw InputError("train: empty subject set");
    }
    const int total = state.config().iterations;
    if (hooks.step_log && start_iteration == 0) {
        io::write_file(*hooks.step_log, step_log_header());
    }
    for (int it = start_iteration; it < total; ++it) {
        const auto& x = set.images[static_cast<std::size_t>(it) % set.images.size()];
        const StepRecord rec = state.train_step(it, x);
        if (hooks.step_log) {
            io::append_file(*hooks.step_log, step_log_line(rec));
        }
        if (hooks.on_step) {
            hooks.on_step(rec);
        }
        const int done = it + 1;
        if (hooks.checkpoint_path && hooks.save_every > 0 && done % hooks.save_every == 0 && done < total) {
            io::save_checkpoint(*hooks.checkpoint_path, state.checkpoint(true, done));
        }
    }
    io::Checkpoint final_ckpt = state.checkpoint(false);
    if (hooks.checkpoint_path) {
        io::save_checkpoint(*hooks.checkpoint_path, final_ckpt);
    }
    return final_ckpt;
}

}  // namespace disentune::tuning
