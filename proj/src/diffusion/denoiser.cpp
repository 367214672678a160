#include "disentune/diffusion/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "disentune/core/ops.hpp"
#include "disentune/core/random.hpp"

namespace disentune::diffusion {

void DenoiserConfig::validate() const {
    if (channels < 1 || height < 1 || width < 1 || cond_dim < 1 || cond_len < 1 || base_channels < 1 ||
        depth < 1 || time_embed_dim < 2 || time_embed_dim % 2 != 0 || timesteps < 2) {
        throw ConfigError("denoiser config: all extents must be >= 1 (time_embed_dim even)");
    }
    const std::int64_t f = std::int64_t{1} << depth;
    if (height % f != 0 || width % f != 0) {
        throw ConfigError("denoiser config: height/width must be divisible by 2^depth = " + std::to_string(f));
    }
}

std::int64_t DenoiserConfig::stage_channels(int level) const { return base_channels << std::min(level, 2); }

int DenoiserConfig::norm_groups(std::int64_t ch) const {
    for (int g : {8, 4, 2}) {
        if (ch % g == 0 && ch / g >= 2) {
            return g;
        }
    }
    return 1;
}

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed, DType dt)
    : config_(config), dtype_(dt), seed_(seed) {
    config_.validate();
    const auto c0 = config_.stage_channels(0);
    const auto td = config_.time_embed_dim;

    in_w_ = make_param("in.w", {c0, config_.channels, 3, 3}, std::sqrt(2.0 / (9.0 * config_.channels)));
    in_b_ = make_param("in.b", {c0, 1, 1}, 0.0);
    temb1_w_ = make_param("temb.w1", {td, td}, std::sqrt(1.0 / td));
    temb1_b_ = make_param("temb.b1", {td}, 0.0);
    temb2_w_ = make_param("temb.w2", {td, td}, std::sqrt(1.0 / td));
    temb2_b_ = make_param("temb.b2", {td}, 0.0);

    for (int l = 0; l < config_.depth; ++l) {
        const auto c = config_.stage_channels(l);
        const auto cn = config_.stage_channels(l + 1);
        down_blocks_.push_back(make_block("down" + std::to_string(l), c));
        down_w_.push_back(make_param("down" + std::to_string(l) + ".pool.w", {cn, c, 3, 3}, std::sqrt(2.0 / (9.0 * c))));
        down_b_.push_back(make_param("down" + std::to_string(l) + ".pool.b", {cn, 1, 1}, 0.0));
    }
    const auto cm = config_.stage_channels(config_.depth);
    mid1_ = make_block("mid0", cm);
    attn_.dim = cm;
    attn_.q = adaptation::AdaptableLinear(make_param("mid.attn.q", {cm, cm}, std::sqrt(1.0 / cm)));
    attn_.k = adaptation::AdaptableLinear(
        make_param("mid.attn.k", {cm, config_.cond_dim}, std::sqrt(1.0 / config_.cond_dim)));
    attn_.v = adaptation::AdaptableLinear(
        make_param("mid.attn.v", {cm, config_.cond_dim}, std::sqrt(1.0 / config_.cond_dim)));
    attn_.o = adaptation::AdaptableLinear(make_param("mid.attn.o", {cm, cm}, 0.1 * std::sqrt(1.0 / cm)));
    mid2_ = make_block("mid1", cm);

    up_blocks_.resize(static_cast<std::size_t>(config_.depth));
    merge_w_.resize(static_cast<std::size_t>(config_.depth));
    merge_b_.resize(static_cast<std::size_t>(config_.depth));
    for (int l = config_.depth - 1; l >= 0; --l) {
        const auto c = config_.stage_channels(l);
        const auto cn = config_.stage_channels(l + 1);
        const auto li = static_cast<std::size_t>(l);
        merge_w_[li] = make_param("up" + std::to_string(l) + ".merge.w", {c, cn + c, 3, 3},
                                  std::sqrt(2.0 / (9.0 * static_cast<double>(cn + c))));
        merge_b_[li] = make_param("up" + std::to_string(l) + ".merge.b", {c, 1, 1}, 0.0);
        up_blocks_[li] = make_block("up" + std::to_string(l), c);
    }
    out_w_ = make_param("out.w", {config_.channels, c0, 3, 3}, 0.1 * std::sqrt(1.0 / (9.0 * c0)));
    out_b_ = make_param("out.b", {config_.channels, 1, 1}, 0.0);

    // Registry holds pointers into members; the class is pinned (non-movable).
    for (int l = 0; l < config_.depth; ++l) {
        register_map("down" + std::to_string(l) + ".cond_proj", down_blocks_[static_cast<std::size_t>(l)].cond_proj);
    }
    register_map("mid0.cond_proj", mid1_.cond_proj);
    register_map("mid1.cond_proj", mid2_.cond_proj);
    register_map("mid.attn.q", attn_.q);
    register_map("mid.attn.k", attn_.k);
    register_map("mid.attn.v", attn_.v);
    register_map("mid.attn.o", attn_.o);
    for (int l = 0; l < config_.depth; ++l) {
        register_map("up" + std::to_string(l) + ".cond_proj", up_blocks_[static_cast<std::size_t>(l)].cond_proj);
    }
    set_trainable(false);
}

Tensor Denoiser::make_param(const std::string& name, Shape shape, double stddev) {
    Rng rng(derive_seed(seed_, param_counter_++));
    Tensor t = stddev > 0 ? randn(shape, rng, stddev, dtype_) : Tensor::zeros(shape, dtype_);
    params_.push_back({name, t});
    return t;
}

Denoiser::ResBlock Denoiser::make_block(const std::string& name, std::int64_t ch) {
    ResBlock b;
    b.ch = ch;
    const double conv_std = std::sqrt(2.0 / (9.0 * static_cast<double>(ch)));
    b.conv1_w = make_param(name + ".conv1.w", {ch, ch, 3, 3}, conv_std);
    b.conv1_b = make_param(name + ".conv1.b", {ch, 1, 1}, 0.0);
    b.time_w = make_param(name + ".time.w", {2 * ch, config_.time_embed_dim},
                          0.5 * std::sqrt(1.0 / static_cast<double>(config_.time_embed_dim)));
    b.time_b = make_param(name + ".time.b", {2 * ch}, 0.0);
    b.cond_proj = adaptation::AdaptableLinear(make_param(
        name + ".cond_proj", {2 * ch, config_.cond_dim}, 0.5 * std::sqrt(1.0 / static_cast<double>(config_.cond_dim))));
    // Small second conv keeps a freshly built block close to the identity.
    b.conv2_w = make_param(name + ".conv2.w", {ch, ch, 3, 3}, 0.1 * conv_std);
    b.conv2_b = make_param(name + ".conv2.b", {ch, 1, 1}, 0.0);
    return b;
}

void Denoiser::register_map(const std::string& name, adaptation::AdaptableLinear& map) {
    if (registry_.contains(name)) {
        throw ContractError("duplicate LoRA-eligible map '" + name + "'");
    }
    registry_.emplace(name, &map);
}

void Denoiser::set_trainable(bool trainable) {
    for (auto& p : params_) {
        p.tensor.set_requires_grad(trainable);
    }
}

std::vector<std::string> Denoiser::condition_projection_names() const {
    std::vector<std::string> names;
    for (int l = 0; l < config_.depth; ++l) names.push_back("down" + std::to_string(l) + ".cond_proj");
    names.push_back("mid0.cond_proj");
    names.push_back("mid1.cond_proj");
    for (int l = config_.depth - 1; l >= 0; --l) names.push_back("up" + std::to_string(l) + ".cond_proj");
    return names;
}

Tensor Denoiser::time_features(int t) const {
    const auto half = config_.time_embed_dim / 2;
    std::vector<double> v(static_cast<std::size_t>(config_.time_embed_dim));
    // Timesteps are rescaled to a 0..1000 range before the usual sinusoid.
    const double pos = 1000.0 * static_cast<double>(t) / static_cast<double>(config_.timesteps);
    for (std::int64_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        v[static_cast<std::size_t>(i)] = std::sin(pos * freq);
        v[static_cast<std::size_t>(i + half)] = std::cos(pos * freq);
    }
    return Tensor::from_values({1, config_.time_embed_dim}, v, dtype_);
}

Tensor Denoiser::run_block(const ResBlock& b, const Tensor& h, const Tensor& temb, const Tensor& pooled) const {
    const int groups = config_.norm_groups(b.ch);
    Tensor r = ops::add(ops::conv2d(ops::silu(ops::group_normalize(h, groups)), b.conv1_w), b.conv1_b);
    const Tensor film = ops::add(ops::add(ops::matmul_nt(temb, b.time_w), b.time_b), b.cond_proj.forward(pooled));
    const Tensor pair = ops::reshape(film, {2, b.ch});
    const Tensor scale = ops::reshape(ops::slice(pair, 0, 1), {b.ch, 1, 1});
    const Tensor shift = ops::reshape(ops::slice(pair, 1, 2), {b.ch, 1, 1});
    r = ops::add(ops::mul(r, ops::add_scalar(scale, 1.0)), shift);
    r = ops::add(ops::conv2d(ops::silu(ops::group_normalize(r, groups)), b.conv2_w), b.conv2_b);
    return ops::add(h, r);
}

Tensor Denoiser::run_attention(const Tensor& h, const Tensor& cond) const {
    const auto c = h.dim(0);
    const auto hw = h.dim(1) * h.dim(2);
    const Tensor xn = ops::group_normalize(h, config_.norm_groups(c));
    const Tensor tokens = ops::transpose(ops::reshape(xn, {c, hw}));  // [hw, c]
    const Tensor q = attn_.q.forward(tokens);                         // [hw, a]
    const Tensor k = attn_.k.forward(cond);                           // [L, a]
    const Tensor v = attn_.v.forward(cond);                           // [L, a]
    const Tensor scores = ops::scale(ops::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(attn_.dim)));
    const Tensor attended = ops::matmul(ops::softmax(scores, -1), v);  // [hw, a]
    const Tensor out = attn_.o.forward(attended);                     // [hw, c]
    return ops::add(h, ops::reshape(ops::transpose(out), h.shape()));
}

Tensor Denoiser::predict_noise(const Tensor& z_t, int t, const Tensor& cond) const {
    const Shape latent{config_.channels, config_.height, config_.width};
    if (z_t.shape() != latent) {
        throw DimensionError("predict_noise: latent " + shape_str(z_t.shape()) + " does not match " +
                             shape_str(latent));
    }
    if (cond.shape() != Shape{config_.cond_len, config_.cond_dim}) {
        throw DimensionError("predict_noise: condition " + shape_str(cond.shape()) + " does not match " +
                             shape_str({config_.cond_len, config_.cond_dim}));
    }
    if (z_t.dtype() != dtype_ || cond.dtype() != dtype_) {
        throw DimensionError("predict_noise: dtype mismatch with model weights");
    }
    Tensor temb = ops::add(ops::matmul_nt(time_features(t), temb1_w_), temb1_b_);
    temb = ops::add(ops::matmul_nt(ops::silu(temb), temb2_w_), temb2_b_);
    const Tensor temb_act = ops::silu(temb);
    const Tensor pooled = ops::reshape(ops::mean_axis(cond, 0), {1, config_.cond_dim});

    Tensor h = ops::add(ops::conv2d(z_t, in_w_), in_b_);
    std::vector<Tensor> skips;
    for (int l = 0; l < config_.depth; ++l) {
        const auto li = static_cast<std::size_t>(l);
        h = run_block(down_blocks_[li], h, temb_act, pooled);
        skips.push_back(h);
        h = ops::add(ops::conv2d(h, down_w_[li], 2), down_b_[li]);
    }
    h = run_block(mid1_, h, temb_act, pooled);
    h = run_attention(h, cond);
    h = run_block(mid2_, h, temb_act, pooled);
    for (int l = config_.depth - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        h = ops::upsample_nearest(h, 2);
        h = ops::add(ops::conv2d(ops::concat({h, skips[li]}), merge_w_[li]), merge_b_[li]);
        h = run_block(up_blocks_[li], h, temb_act, pooled);
    }
    h = ops::silu(ops::group_normalize(h, config_.norm_groups(h.dim(0))));
    return ops::add(ops::conv2d(h, out_w_), out_b_);
}

}  // namespace disentune::diffusion
