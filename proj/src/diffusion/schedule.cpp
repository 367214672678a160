#include "disentune/diffusion/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "disentune/core/ops.hpp"

namespace disentune::diffusion {

namespace {

constexpr double kCosineOffset = 0.008;
constexpr double kMaxBeta = 0.999;
constexpr double kMinFirstAlpha = 0.99;

}  // namespace

NoiseSchedule make_schedule(int timesteps, ScheduleKind kind) {
    if (timesteps < 2) {
        throw ConfigError("make_schedule: need at least 2 timesteps, got " + std::to_string(timesteps));
    }
    if (kind != ScheduleKind::cosine) {
        throw ConfigError("make_schedule: unsupported schedule kind");
    }
    const double T = timesteps;
    auto f = [&](double t) {
        const double c = std::cos((t / T + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0);
        return c * c;
    };
    std::vector<double> alpha_bar(static_cast<std::size_t>(timesteps) + 1);
    alpha_bar[0] = 1.0;
    const double f0 = f(0.0);
    for (int t = 1; t <= timesteps; ++t) {
        const double target = f(t) / f0;
        double beta = 1.0 - target / (f(t - 1) / f0);
        beta = std::clamp(beta, 0.0, kMaxBeta);
        alpha_bar[static_cast<std::size_t>(t)] = alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - beta);
        if (t == 1) {
            alpha_bar[1] = std::max(alpha_bar[1], kMinFirstAlpha * kMinFirstAlpha);
        }
    }
    NoiseSchedule s;
    s.steps = timesteps;
    for (double ab : alpha_bar) {
        s.alphas.push_back(std::sqrt(ab));
        s.sigmas.push_back(std::sqrt(1.0 - ab));
    }
    validate_schedule(s);
    return s;
}

void validate_schedule(const NoiseSchedule& s) {
    const auto n = static_cast<std::size_t>(s.steps) + 1;
    if (s.steps < 2 || s.alphas.size() != n || s.sigmas.size() != n) {
        throw ContractError("schedule: inconsistent sizes");
    }
    for (std::size_t t = 0; t < n; ++t) {
        if (std::abs(s.alphas[t] * s.alphas[t] + s.sigmas[t] * s.sigmas[t] - 1.0) > 1e-6) {
            throw ContractError("schedule: alpha^2 + sigma^2 != 1 at t=" + std::to_string(t));
        }
        if (t > 0 && (s.alphas[t] > s.alphas[t - 1] || s.sigmas[t] < s.sigmas[t - 1])) {
            throw ContractError("schedule: not monotone at t=" + std::to_string(t));
        }
    }
    if (s.alphas[1] < kMinFirstAlpha) {
        throw ContractError("schedule: alpha_1 below 0.99");
    }
}

Tensor forward_noise(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.steps) {
        throw RangeError("forward_noise: timestep " + std::to_string(t) + " outside 1.." +
                         std::to_string(schedule.steps));
    }
    if (z.shape() != eps.shape()) {
        throw DimensionError("forward_noise: latent " + shape_str(z.shape()) + " vs noise " +
                             shape_str(eps.shape()));
    }
    return ops::add(ops::scale(z, schedule.alpha(t)), ops::scale(eps, schedule.sigma(t)));
}

}  // namespace disentune::diffusion
