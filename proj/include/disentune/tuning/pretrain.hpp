#pragma once

#include <cstdint>
#include <functional>

#include "disentune/diffusion/denoiser.hpp"
#include "disentune/diffusion/schedule.hpp"
#include "disentune/tuning/tuning.hpp"

namespace disentune::tuning {

// Text-to-image pretraining of the base denoiser on generic descriptions of
// random benchmark renders. Stands in for the pretrained generator that
// subject tuning starts from.
struct PretrainOptions {
    int steps = 24000;
    double lr = 1e-3;
    double warmup = 500;
    // Each attribute group of the description is dropped independently.
    double drop_prob = 0.5;
    // Fraction of steps trained on the all-zero (unconditional) condition.
    double null_prob = 0.1;
    double ema_decay = 0.999;
    std::uint64_t seed = 0;
    std::function<void(int step, double loss)> progress;
    int progress_every = 1000;
};

// Trains every base weight of `model` in place, then replaces the weights by
// their exponential moving average.
void pretrain_base(diffusion::Denoiser& model, const Encoders& encoders, const diffusion::NoiseSchedule& schedule,
                   const PretrainOptions& options);

// Base weights as a checkpoint tagged with `digest`, and the inverse.
io::Checkpoint base_checkpoint(const diffusion::Denoiser& model, std::uint64_t digest);
void load_base(diffusion::Denoiser& model, const io::Checkpoint& ckpt);

}  // namespace disentune::tuning
