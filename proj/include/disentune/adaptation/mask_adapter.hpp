#pragma once

#include <cstdint>

#include "disentune/adaptation/lora.hpp"
#include "disentune/core/optim.hpp"
#include "disentune/core/tensor.hpp"

namespace disentune::adaptation {

// Filters the identity-relevant part out of a pooled image feature:
//   f_i = M * f_p + MLP(M * f_p),  M = sigmoid(m_raw) in (0,1)^d,
// with a 2-layer ReLU MLP d -> d -> d.
class MaskAdapter {
public:
    MaskAdapter() = default;
    // m_raw = 0 (M = 0.5); MLP weights ~ N(0, 1/d), zero biases.
    MaskAdapter(std::int64_t dim, std::uint64_t seed, DType dt = default_dtype());

    Tensor forward(const Tensor& f_p) const;
    Tensor mask() const;

    std::int64_t dim() const { return m_raw.numel(); }

    // m_raw, w1, b1, w2, b2 under the "adapter." prefix.
    NamedTensors parameters() const;
    std::int64_t param_count() const;

    Tensor m_raw;
    Tensor w1;  // [d, d] (out x in)
    Tensor b1;  // [d]
    Tensor w2;
    Tensor b2;
};

Tensor adapter_forward(const MaskAdapter& adapter, const Tensor& f_p);

// Trainable set size for LoRA-injected maps plus the adapter.
std::int64_t trainable_param_count(const LoraRegistry& registry, const MaskAdapter* adapter);

}  // namespace disentune::adaptation
