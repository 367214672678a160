#include "disentune/diffusion/sampler.hpp"

#include <algorithm>

#include "disentune/core/random.hpp"
#include "disentune/core/tape.hpp"

namespace disentune::diffusion {

std::vector<int> ddim_timesteps(int total_steps, int sample_steps) {
    if (sample_steps < 1 || sample_steps > total_steps) {
        throw ConfigError("ddim: steps must be in 1.." + std::to_string(total_steps) + ", got " +
                          std::to_string(sample_steps));
    }
    std::vector<int> ts;
    for (int i = sample_steps; i >= 1; --i) {
        ts.push_back(static_cast<int>(static_cast<std::int64_t>(i) * total_steps / sample_steps));
    }
    ts.push_back(0);
    return ts;
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev, const NoiseSchedule& schedule,
                 const DdimOptions& options) {
    if (t < 1 || t > schedule.steps || t_prev < 0 || t_prev >= t) {
        throw RangeError("ddim_step: invalid transition " + std::to_string(t) + " -> " + std::to_string(t_prev));
    }
    if (z_t.shape() != eps_hat.shape() || z_t.dtype() != eps_hat.dtype()) {
        throw DimensionError("ddim_step: latent " + shape_str(z_t.shape()) + " vs noise estimate " +
                             shape_str(eps_hat.shape()));
    }
    const double a = schedule.alpha(t);
    const double s = schedule.sigma(t);
    const double ap = schedule.alpha(t_prev);
    const double sp = schedule.sigma(t_prev);
    Tensor out = Tensor::zeros(z_t.shape(), z_t.dtype());
    dispatch(z_t.dtype(), [&]<class T>() {
        auto z = z_t.values<T>();
        auto e = eps_hat.values<T>();
        auto o = out.values<T>();
        for (std::size_t i = 0; i < z.size(); ++i) {
            double z0 = (static_cast<double>(z[i]) - s * static_cast<double>(e[i])) / a;
            if (options.clip_denoised) {
                z0 = std::clamp(z0, -1.0, 1.0);
            }
            o[i] = static_cast<T>(ap * z0 + sp * static_cast<double>(e[i]));
        }
    });
    if (!all_finite(out)) {
        throw NumericError("ddim_step: non-finite latent at t=" + std::to_string(t));
    }
    return out;
}

Tensor ddim_sample_from(const NoisePredictor& predict, const Tensor& z_start, const NoiseSchedule& schedule,
                        int steps, const DdimOptions& options) {
    const auto ts = ddim_timesteps(schedule.steps, steps);
    NoGradGuard no_grad;
    Tensor z = z_start.clone();
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        const Tensor eps_hat = predict(z, ts[i]);
        z = ddim_step(z, eps_hat, ts[i], ts[i + 1], schedule, options);
    }
    return z;
}

Tensor ddim_sample(const NoisePredictor& predict, const Shape& latent_shape, const NoiseSchedule& schedule,
                   int steps, std::uint64_t seed, const DdimOptions& options, DType dt) {
    // Validate before drawing so configuration errors surface first.
    (void)ddim_timesteps(schedule.steps, steps);
    Rng rng(seed);
    const Tensor z_start = randn(latent_shape, rng, 1.0, dt);
    return ddim_sample_from(predict, z_start, schedule, steps, options);
}

Tensor ddim_sample(const Denoiser& model, const Tensor& cond, const NoiseSchedule& schedule, int steps,
                   std::uint64_t seed, const DdimOptions& options) {
    const auto& c = model.config();
    return ddim_sample(
        [&](const Tensor& z_t, int t) { return model.predict_noise(z_t, t, cond); }, {c.channels, c.height, c.width},
        schedule, steps, seed, options, cond.dtype());
}

}  // namespace disentune::diffusion
