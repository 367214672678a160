#include "disentune/adaptation/mask_adapter.hpp"

#include <cmath>

#include "disentune/core/ops.hpp"
#include "disentune/core/random.hpp"

namespace disentune::adaptation {

MaskAdapter::MaskAdapter(std::int64_t dim, std::uint64_t seed, DType dt) {
    if (dim < 1) {
        throw ConfigError("MaskAdapter: dimension must be >= 1");
    }
    Rng rng(seed);
    const double init_std = 1.0 / std::sqrt(static_cast<double>(dim));
    m_raw = Tensor::zeros({dim}, dt);
    w1 = randn({dim, dim}, rng, init_std, dt);
    b1 = Tensor::zeros({dim}, dt);
    w2 = randn({dim, dim}, rng, init_std, dt);
    b2 = Tensor::zeros({dim}, dt);
    for (Tensor* t : {&m_raw, &w1, &b1, &w2, &b2}) {
        t->set_requires_grad(true);
    }
}

Tensor MaskAdapter::mask() const { return ops::sigmoid(m_raw); }

Tensor MaskAdapter::forward(const Tensor& f_p) const {
    if (f_p.rank() != 1 || f_p.numel() != dim()) {
        throw DimensionError("adapter_forward: expected feature of length " + std::to_string(dim()) + ", got " +
                             shape_str(f_p.shape()));
    }
    const Tensor masked = ops::mul(mask(), f_p);
    const Tensor row = ops::reshape(masked, {1, dim()});
    const Tensor h = ops::relu(ops::add(ops::matmul_nt(row, w1), b1));
    const Tensor mlp = ops::add(ops::matmul_nt(h, w2), b2);
    return ops::add(masked, ops::reshape(mlp, {dim()}));
}

NamedTensors MaskAdapter::parameters() const {
    return {{"adapter.m_raw", m_raw},
            {"adapter.mlp.w1", w1},
            {"adapter.mlp.b1", b1},
            {"adapter.mlp.w2", w2},
            {"adapter.mlp.b2", b2}};
}

std::int64_t MaskAdapter::param_count() const {
    const auto d = dim();
    return d + 2 * (d * d + d);
}

Tensor adapter_forward(const MaskAdapter& adapter, const Tensor& f_p) { return adapter.forward(f_p); }

std::int64_t trainable_param_count(const LoraRegistry& registry, const MaskAdapter* adapter) {
    return lora_param_count(registry) + (adapter != nullptr ? adapter->param_count() : 0);
}

}  // namespace disentune::adaptation
