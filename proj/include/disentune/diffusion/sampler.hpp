#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "disentune/diffusion/denoiser.hpp"
#include "disentune/diffusion/schedule.hpp"

namespace disentune::diffusion {

using NoisePredictor = std::function<Tensor(const Tensor& z_t, int t)>;

struct DdimOptions {
    // Clamp the clean estimate to the image range [-1, 1] before re-noising.
    bool clip_denoised = true;
};

// Uniformly strided timesteps, descending from T, followed by 0.
std::vector<int> ddim_timesteps(int total_steps, int sample_steps);

// One deterministic update from t to t_prev (t_prev may be 0):
//   z0_hat = (z_t - sigma_t * eps_hat) / alpha_t
//   z_prev = alpha_prev * z0_hat + sigma_prev * eps_hat
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev, const NoiseSchedule& schedule,
                 const DdimOptions& options = {});

// Runs DDIM from `z_start` at timestep T. No tape is recorded.
Tensor ddim_sample_from(const NoisePredictor& predict, const Tensor& z_start, const NoiseSchedule& schedule,
                        int steps, const DdimOptions& options = {});

// Gaussian start drawn from `seed`, then ddim_sample_from.
Tensor ddim_sample(const NoisePredictor& predict, const Shape& latent_shape, const NoiseSchedule& schedule,
                   int steps, std::uint64_t seed, const DdimOptions& options = {}, DType dt = default_dtype());

Tensor ddim_sample(const Denoiser& model, const Tensor& cond, const NoiseSchedule& schedule, int steps,
                   std::uint64_t seed, const DdimOptions& options = {});

}  // namespace disentune::diffusion
