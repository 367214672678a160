#include "disentune/adaptation/lora.hpp"

#include <algorithm>

#include "disentune/core/ops.hpp"
#include "disentune/core/random.hpp"

namespace disentune::adaptation {

LoraLayer init_lora(const Tensor& w0, int rank, std::uint64_t seed) {
    if (w0.rank() != 2) {
        throw DimensionError("init_lora: base weight must be 2-D, got " + shape_str(w0.shape()));
    }
    const auto d = w0.dim(0);
    const auto k = w0.dim(1);
    if (rank < 1 || rank > std::min(d, k)) {
        throw ConfigError("init_lora: rank " + std::to_string(rank) + " invalid for a " + std::to_string(d) + "x" +
                          std::to_string(k) + " map");
    }
    Rng rng(seed);
    LoraLayer layer;
    layer.w0 = w0;
    layer.rank = rank;
    layer.a = randn({rank, k}, rng, kLoraInitStd, w0.dtype());
    layer.a.set_requires_grad(true);
    layer.b = Tensor::zeros({d, rank}, w0.dtype());
    layer.b.set_requires_grad(true);
    return layer;
}

Tensor lora_forward(const LoraLayer& layer, const Tensor& x) {
    const auto k = layer.in_features();
    if (x.rank() < 1 || x.dim(-1) != k) {
        throw DimensionError("lora_forward: input " + shape_str(x.shape()) + " does not end in " +
                             std::to_string(k));
    }
    const Tensor effective = ops::add(layer.w0, ops::matmul(layer.b, layer.a));
    const Tensor rows = ops::reshape(x, {x.numel() / k, k});
    const Tensor y = ops::matmul_nt(rows, effective);
    Shape out_shape = x.shape();
    out_shape.back() = layer.out_features();
    return ops::reshape(y, out_shape);
}

Tensor AdaptableLinear::forward(const Tensor& x) const {
    if (lora_) {
        return lora_forward(*lora_, x);
    }
    const auto k = weight_.dim(1);
    if (x.rank() < 1 || x.dim(-1) != k) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not end in " + std::to_string(k));
    }
    const Tensor rows = ops::reshape(x, {x.numel() / k, k});
    const Tensor y = ops::matmul_nt(rows, weight_);
    Shape out_shape = x.shape();
    out_shape.back() = weight_.dim(0);
    return ops::reshape(y, out_shape);
}

void AdaptableLinear::attach(LoraLayer layer) {
    if (!layer.w0.same_storage(weight_)) {
        throw ContractError("LoRA layer must wrap this map's own weight");
    }
    lora_ = std::move(layer);
}

void inject_lora(LoraRegistry& registry, int rank, std::uint64_t seed) {
    std::uint64_t index = 0;
    for (auto& [name, map] : registry) {
        if (map->lora()) {
            throw ConfigError("inject_lora: '" + name + "' is already wrapped");
        }
        std::uint64_t name_hash = 1469598103934665603ULL;
        for (char c : name) {
            name_hash = (name_hash ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
        }
        map->attach(init_lora(map->weight(), rank, derive_seed(seed, name_hash, index++)));
    }
}

NamedTensors lora_parameters(const LoraRegistry& registry) {
    NamedTensors out;
    for (const auto& [name, map] : registry) {
        if (!map->lora()) {
            continue;
        }
        out.push_back({name + ".lora_a", map->lora()->a});
        out.push_back({name + ".lora_b", map->lora()->b});
    }
    return out;
}

std::int64_t lora_param_count(const LoraRegistry& registry) {
    std::int64_t n = 0;
    for (const auto& [name, map] : registry) {
        if (const auto& l = map->lora()) {
            n += (l->out_features() + l->in_features()) * l->rank;
        }
    }
    return n;
}

}  // namespace disentune::adaptation
