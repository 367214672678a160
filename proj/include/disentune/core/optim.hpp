#pragma once

#include <string>
#include <vector>

#include "disentune/core/tensor.hpp"

namespace disentune {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using NamedTensors = std::vector<NamedTensor>;

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Adaptive-moment optimizer with decoupled weight decay. Parameters are held by
// handle, so updates land in the owning model.
class AdamW {
public:
    AdamW(NamedTensors params, AdamWConfig config);

    // Applies one update from the accumulated gradients and clears them.
    // Parameters without a gradient are skipped. Throws NumericError naming
    // the first parameter whose gradient is not finite.
    void step();
    void zero_grad();

    // Global L2 norm of the current gradients.
    double grad_norm() const;

    std::int64_t steps() const { return steps_; }
    const NamedTensors& params() const { return params_; }
    AdamWConfig& config() { return config_; }

    // Moment tensors, named "adam.m.<param>" / "adam.v.<param>", plus
    // "adam.step"; used for resumable checkpoints.
    NamedTensors state() const;
    void load_state(const NamedTensors& state);

private:
    NamedTensors params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    AdamWConfig config_;
    std::int64_t steps_ = 0;
};

}  // namespace disentune
