#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "disentune/adaptation/lora.hpp"
#include "disentune/core/optim.hpp"
#include "disentune/core/tensor.hpp"

namespace disentune::diffusion {

struct DenoiserConfig {
    std::int64_t channels = 3;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t cond_dim = 32;
    std::int64_t cond_len = 8;
    std::int64_t base_channels = 32;
    int depth = 2;
    std::int64_t time_embed_dim = 32;
    int timesteps = 100;  // scale for the sinusoidal timestep features

    void validate() const;
    std::int64_t stage_channels(int level) const;
    int norm_groups(std::int64_t ch) const;
};

// Toy conditional U-Net predicting the injected noise. Every resolution stage
// receives the condition through a FiLM projection of the mean-pooled token
// sequence; the bottleneck additionally cross-attends to the tokens.
class Denoiser {
public:
    Denoiser(const DenoiserConfig& config, std::uint64_t seed, DType dt = default_dtype());

    Denoiser(const Denoiser&) = delete;
    Denoiser& operator=(const Denoiser&) = delete;
    Denoiser(Denoiser&&) = delete;
    Denoiser& operator=(Denoiser&&) = delete;

    // z_t: [C,H,W], cond: [L, d_c]. Returns the noise estimate, shape of z_t.
    Tensor predict_noise(const Tensor& z_t, int t, const Tensor& cond) const;

    const DenoiserConfig& config() const { return config_; }

    // Base weights in a fixed order, including the W0 of every LoRA-eligible map.
    const NamedTensors& parameters() const { return params_; }
    void set_trainable(bool trainable);

    adaptation::LoraRegistry& lora_registry() { return registry_; }
    const adaptation::LoraRegistry& lora_registry() const { return registry_; }

    // Names of the per-stage condition projections, in stage order.
    std::vector<std::string> condition_projection_names() const;

private:
    struct ResBlock {
        std::int64_t ch = 0;
        Tensor conv1_w, conv1_b, conv2_w, conv2_b;
        Tensor time_w, time_b;
        adaptation::AdaptableLinear cond_proj;
    };
    struct Attention {
        adaptation::AdaptableLinear q, k, v, o;
        std::int64_t dim = 0;
    };

    Tensor make_param(const std::string& name, Shape shape, double stddev);
    ResBlock make_block(const std::string& name, std::int64_t ch);
    void register_map(const std::string& name, adaptation::AdaptableLinear& map);

    Tensor run_block(const ResBlock& block, const Tensor& h, const Tensor& temb, const Tensor& pooled) const;
    Tensor run_attention(const Tensor& h, const Tensor& cond) const;
    Tensor time_features(int t) const;

    DenoiserConfig config_;
    DType dtype_;
    std::uint64_t seed_;
    std::uint64_t param_counter_ = 0;
    NamedTensors params_;
    adaptation::LoraRegistry registry_;

    Tensor in_w_, in_b_;
    Tensor temb1_w_, temb1_b_, temb2_w_, temb2_b_;
    std::vector<ResBlock> down_blocks_;
    std::vector<Tensor> down_w_, down_b_;
    ResBlock mid1_, mid2_;
    Attention attn_;
    std::vector<Tensor> merge_w_, merge_b_;
    std::vector<ResBlock> up_blocks_;
    Tensor out_w_, out_b_;
};

}  // namespace disentune::diffusion
