#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "disentune/core/optim.hpp"
#include "disentune/core/tensor.hpp"

namespace disentune::adaptation {

inline constexpr double kLoraInitStd = 0.02;

// Frozen base matrix W0 [d x k] plus a trainable rank-r update B [d x r] * A [r x k].
// The effective weight is W0 + B*A with no extra scaling factor.
struct LoraLayer {
    Tensor w0;
    Tensor a;
    Tensor b;
    int rank = 0;

    std::int64_t out_features() const { return w0.dim(0); }
    std::int64_t in_features() const { return w0.dim(1); }
};

// A ~ N(0, 0.02^2) from `seed`, B = 0. `w0` is shared, not copied.
LoraLayer init_lora(const Tensor& w0, int rank, std::uint64_t seed);

// x: [..., k] -> [..., d] under W0 + B*A. Gradients reach only A and B
// (W0 is frozen by the caller).
Tensor lora_forward(const LoraLayer& layer, const Tensor& x);

// A bias-free linear map y = x W^T that can carry a LoRA update.
class AdaptableLinear {
public:
    AdaptableLinear() = default;
    explicit AdaptableLinear(Tensor weight) : weight_(std::move(weight)) {}

    Tensor forward(const Tensor& x) const;

    const Tensor& weight() const { return weight_; }
    Tensor& weight() { return weight_; }
    const std::optional<LoraLayer>& lora() const { return lora_; }

    void attach(LoraLayer layer);
    void detach_lora() { lora_.reset(); }

private:
    Tensor weight_;
    std::optional<LoraLayer> lora_;
};

// Named maps eligible for LoRA injection, owned by the model that registers them.
using LoraRegistry = std::map<std::string, AdaptableLinear*>;

// Wraps every registered map exactly once. Throws ConfigError if a map is
// already wrapped or rank exceeds min(d, k). Per-map seeds derive from `seed`
// and the map name.
void inject_lora(LoraRegistry& registry, int rank, std::uint64_t seed);

// Trainable LoRA factors in registry order, named "<map>.lora_a"/"<map>.lora_b".
NamedTensors lora_parameters(const LoraRegistry& registry);

// Sum over injected maps of (d + k) * r.
std::int64_t lora_param_count(const LoraRegistry& registry);

}  // namespace disentune::adaptation
