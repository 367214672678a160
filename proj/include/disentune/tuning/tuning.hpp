#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "disentune/adaptation/mask_adapter.hpp"
#include "disentune/core/optim.hpp"
#include "disentune/core/random.hpp"
#include "disentune/diffusion/denoiser.hpp"
#include "disentune/diffusion/schedule.hpp"
#include "disentune/encoders/encoders.hpp"
#include "disentune/encoders/vocab.hpp"
#include "disentune/io/checkpoint.hpp"
#include "disentune/synthbench/dataset.hpp"

namespace disentune::tuning {

struct TrainConfig {
    double lambda2 = 0.01;
    double lambda3 = 0.001;
    double lr = 1e-4;
    int iterations = 3000;
    int batch = 1;
    std::uint64_t seed = 0;
    int lora_rank = 4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    // false replaces the mask adapter by a frozen random projection (ablation).
    bool use_adapter = true;

    static constexpr int kSmokeIterations = 500;

    void validate() const;
    std::string serialize() const;
    std::uint64_t digest() const;
    AdamWConfig optimizer() const;
};

// Frozen pieces every tuning run shares.
struct Encoders {
    encoders::Vocabulary vocab;
    encoders::TextEncoder text;
    encoders::ImageEncoder image;

    // Tokenizes to the text encoder's length and encodes: [L, d].
    Tensor encode_prompt(const std::string& prompt) const;
};

// Loads the shipped vocabulary and builds the fixed-seed encoders.
Encoders make_encoders(std::int64_t cond_dim, std::int64_t cond_len, std::int64_t image_size,
                       DType dt = default_dtype());

struct Losses {
    Tensor l1;     // raw denoising term
    Tensor l2;     // lambda2 * weak denoising term
    Tensor l3;     // lambda3 * cosine term
    Tensor total;  // (l1 + l2) + l3
    int t = 0;
    Tensor eps;
    Tensor z_t;
    std::uint64_t eps_checksum_l1 = 0;  // noise consumed by each denoising pass
    std::uint64_t eps_checksum_l2 = 0;
};

struct StepRecord {
    int iteration = 0;
    int t = 0;
    double l1 = 0.0;
    double l2 = 0.0;
    double l3 = 0.0;
    double l = 0.0;
    double grad_norm = 0.0;
};

std::string step_log_header();
std::string step_log_line(const StepRecord& r);

// Subject-specific tuning state: LoRA factors injected into the denoiser, the
// identity-irrelevant branch (mask adapter, or a frozen projection for the
// ablation) and the optimizer over exactly those trainable tensors.
class TuningState {
public:
    // Injects LoRA into `model` (which must not carry LoRA yet) and freezes
    // every base weight. `prompt` is the subject prompt P_s.
    TuningState(diffusion::Denoiser& model, const Encoders& encoders, diffusion::NoiseSchedule schedule,
                const TrainConfig& config, const std::string& prompt);

    // Text condition f_s for P_s: [L, d].
    const Tensor& subject_condition() const { return f_s_; }
    // f_p of an image (frozen encoder, no gradient).
    Tensor image_feature(const Tensor& x) const;
    // f_i = adapter(f_p), or the frozen projection of f_p.
    Tensor identity_irrelevant(const Tensor& f_p) const;

    // Draws eps ~ N(0, I) and t ~ U{1..T} once from `rng` and evaluates the
    // three loss terms with the same (eps, t, z_t) for both denoising passes.
    Losses compute_losses(const Tensor& x, Rng& rng) const;
    // Same, with the image feature supplied (used to inject a constructed f_i).
    Losses compute_losses_with(const Tensor& x, const Tensor& f_i, Rng& rng) const;

    // One optimizer update using the per-iteration generator
    // derive_seed(config.seed, iteration).
    StepRecord train_step(int iteration, const Tensor& x);

    NamedTensors trainable() const;
    std::int64_t trainable_count() const;
    std::int64_t total_count() const;

    // Trainable tensors (and optionally optimizer moments plus the number of
    // completed iterations) tagged with the config digest.
    io::Checkpoint checkpoint(bool with_optimizer, int completed_iterations = 0) const;
    // Restores trainable tensors; returns the completed iteration count if the
    // checkpoint carries optimizer state.
    std::optional<int> restore(const io::Checkpoint& ckpt);

    const TrainConfig& config() const { return config_; }
    const diffusion::NoiseSchedule& schedule() const { return schedule_; }
    const diffusion::Denoiser& model() const { return model_; }
    const Encoders& encoders() const { return encoders_; }
    const adaptation::MaskAdapter* adapter() const { return config_.use_adapter ? &adapter_ : nullptr; }

private:
    diffusion::Denoiser& model_;
    const Encoders& encoders_;
    diffusion::NoiseSchedule schedule_;
    TrainConfig config_;
    Tensor f_s_;
    Tensor f_s_pooled_;
    adaptation::MaskAdapter adapter_;
    Tensor projection_;  // [d, d] frozen, ablation only
    std::unique_ptr<AdamW> optim_;
};

struct TrainHooks {
    std::optional<std::filesystem::path> step_log;
    std::optional<std::filesystem::path> checkpoint_path;
    int save_every = 0;  // 0 disables intermediate saves
    std::function<void(const StepRecord&)> on_step;
};

// Round-robin over the set's images for config.iterations steps, starting
// after `start_iteration` completed steps (resume). Returns the final
// checkpoint without optimizer state.
io::Checkpoint train(TuningState& state, const synthbench::SubjectSet& set, const TrainHooks& hooks = {},
                     int start_iteration = 0);

}  // namespace disentune::tuning
