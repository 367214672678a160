#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "disentune/core/optim.hpp"
#include "disentune/core/tensor.hpp"

namespace disentune::encoders {

// Seeds for the frozen feature maps; fixed so every run sees the same encoders.
inline constexpr std::uint64_t kTextEncoderSeed = 0x7e47;
inline constexpr std::uint64_t kImageEncoderSeed = 0x1a6e;

// Frozen toy text encoder: token embedding table followed by one token-MLP
// block that mixes each token with its predecessor, then per-token
// normalization. Output [L, d].
class TextEncoder {
public:
    TextEncoder(int vocab_size, std::int64_t dim, std::int64_t length, std::uint64_t seed = kTextEncoderSeed,
                DType dt = default_dtype());

    Tensor encode(std::span<const int> ids) const;

    std::int64_t dim() const { return dim_; }
    std::int64_t length() const { return length_; }
    NamedTensors weights() const;

private:
    std::int64_t dim_;
    std::int64_t length_;
    Tensor table_;   // [V, d]
    Tensor w_cur_;   // [2d, d]
    Tensor w_prev_;  // [2d, d]
    Tensor b1_;      // [2d]
    Tensor w2_;      // [d, 2d]
};

// Frozen toy image encoder: three stride-2 conv stages with ReLU, global
// average pooling, then normalization of the pooled vector. Output [d].
class ImageEncoder {
public:
    ImageEncoder(std::int64_t dim, std::int64_t height, std::int64_t width, std::uint64_t seed = kImageEncoderSeed,
                 DType dt = default_dtype());

    // x: [3, H, W] with values in [-1, 1]; InputError otherwise.
    Tensor encode(const Tensor& x) const;

    std::int64_t dim() const { return dim_; }
    NamedTensors weights() const;

private:
    std::int64_t dim_;
    std::int64_t height_;
    std::int64_t width_;
    std::vector<Tensor> conv_w_;
    std::vector<Tensor> conv_b_;
};

// Latent codec. Pixel-space diffusion uses the identity map.
class IdentityCodec {
public:
    Tensor encode(const Tensor& x) const { return x.clone(); }
    Tensor decode(const Tensor& z) const { return z.clone(); }
};

}  // namespace disentune::encoders
