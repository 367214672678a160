#pragma once

#include <vector>

#include "disentune/core/tensor.hpp"

namespace disentune::diffusion {

enum class ScheduleKind { cosine };

// Variance-preserving noise schedule. Index 0 is the clean endpoint
// (alpha = 1, sigma = 0); timesteps used for training run 1..T.
struct NoiseSchedule {
    int steps = 0;  // T
    std::vector<double> alphas;  // size T + 1
    std::vector<double> sigmas;  // size T + 1

    double alpha(int t) const { return alphas.at(static_cast<std::size_t>(t)); }
    double sigma(int t) const { return sigmas.at(static_cast<std::size_t>(t)); }
};

// Cosine alpha-bar schedule (offset s = 0.008, per-step beta capped at 0.999),
// with alpha_1 floored at 0.99 so the first step stays near-clean for small T.
NoiseSchedule make_schedule(int timesteps, ScheduleKind kind = ScheduleKind::cosine);

// Throws ContractError if any schedule invariant is violated.
void validate_schedule(const NoiseSchedule& schedule);

// alpha_t * z + sigma_t * eps.
Tensor forward_noise(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& schedule);

}  // namespace disentune::diffusion
