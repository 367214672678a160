#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "disentune/core/ops.hpp"
#include "disentune/core/random.hpp"
#include "disentune/core/tape.hpp"

namespace testsupport {

using disentune::Tensor;

struct FdReport {
    double max_rel = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

// Relative error |a - n| / max(|a|, |n|, 1e-12); elements whose absolute
// difference is below `abs_floor` count as exact (finite-difference noise on
// vanishing gradients).
inline double rel_err(double a, double n, double abs_floor) {
    const double diff = std::abs(a - n);
    if (diff <= abs_floor) {
        return 0.0;
    }
    return diff / std::max({std::abs(a), std::abs(n), 1e-12});
}

// Compares reverse-mode gradients of `loss` against central differences for
// every element of every tensor in `params`.
inline FdReport fd_check(const std::function<Tensor()>& loss, std::vector<std::pair<std::string, Tensor>> params,
                         double h, double abs_floor = 1e-10) {
    for (auto& [name, p] : params) p.zero_grad();
    {
        Tensor l = loss();
        disentune::backward(l);
        disentune::current_tape().clear();
    }
    FdReport rep;
    for (auto& [name, p] : params) {
        Tensor g = p.grad();
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double analytic = g ? g.at(i) : 0.0;
            const double orig = p.at(i);
            double up, down;
            {
                disentune::NoGradGuard guard;
                p.set(i, orig + h);
                up = loss().item();
                p.set(i, orig - h);
                down = loss().item();
                p.set(i, orig);
            }
            const double numeric = (up - down) / (2.0 * h);
            const double e = rel_err(analytic, numeric, abs_floor);
            ++rep.checked;
            if (e > rep.max_rel) {
                rep.max_rel = e;
                rep.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) + " numeric " +
                            std::to_string(numeric);
            }
        }
    }
    return rep;
}

inline Tensor random_tensor(const disentune::Shape& shape, std::uint64_t seed, double stddev = 1.0,
                            disentune::DType dt = disentune::DType::f64) {
    disentune::Rng rng(seed);
    return disentune::randn(shape, rng, stddev, dt);
}

inline Tensor param(const disentune::Shape& shape, std::uint64_t seed, double stddev = 1.0) {
    Tensor t = random_tensor(shape, seed, stddev);
    t.set_requires_grad(true);
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

}  // namespace testsupport
