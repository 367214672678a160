#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "disentune/core/optim.hpp"
#include "disentune/core/tensor.hpp"
#include "disentune/synthbench/dataset.hpp"

namespace disentune::synthbench {

struct ProbeHead {
    std::string name;
    int classes = 0;
};

// Small classifier: three conv stages with ReLU (the first at full
// resolution, then two stride-2), global max pooling (the embedding), and one
// linear head per factor.
class ProbeNet {
public:
    ProbeNet(std::vector<ProbeHead> heads, std::uint64_t seed, DType dt = DType::f32);

    // x: [3, H, W]. Returns the pooled embedding [E].
    Tensor embed(const Tensor& x) const;
    // One [1, classes] logit row per head.
    std::vector<Tensor> logits(const Tensor& x) const;
    // Per head, log-softmax values.
    std::vector<std::vector<double>> log_probs(const Tensor& x) const;
    std::vector<int> predict(const Tensor& x) const;

    const std::vector<ProbeHead>& heads() const { return heads_; }
    const NamedTensors& parameters() const { return params_; }
    std::int64_t embedding_dim() const { return kWidths[2]; }

    static constexpr std::int64_t kWidths[3] = {32, 64, 64};

private:
    Tensor features(const Tensor& x) const;

    std::vector<ProbeHead> heads_;
    NamedTensors params_;
    std::vector<Tensor> conv_w_, conv_b_;
    std::vector<Tensor> head_w_, head_b_;
};

inline constexpr double kProbeAccuracyFloor = 0.9;

struct ProbeTrainOptions {
    int steps = 3000;
    int batch = 16;
    double lr = 2e-3;
    double max_noise = 0.35;
    int image_size = 32;
};

struct ProbeLabels {
    // Subject probe targets in head order: shape, fill, marker.
    static std::vector<int> subject(const FactorLabels& f);
    // Background probe targets in head order: color, texture.
    static std::vector<int> background(const FactorLabels& f);
};

class ProbeSet {
public:
    explicit ProbeSet(std::uint64_t seed);

    ProbeNet subject;
    ProbeNet background;
    std::uint64_t seed = 0;
    double subject_accuracy = 0.0;
    double background_accuracy = 0.0;

    // Trains both probes on random full-factor renders with additive noise,
    // then measures joint-head accuracy on the four benchmark subjects crossed
    // with every compatible scene. BenchmarkQualityError if either accuracy is
    // below kProbeAccuracyFloor.
    static ProbeSet train(std::uint64_t seed, const ProbeTrainOptions& options = {});
    // Same training and measurement without the accuracy floor.
    static ProbeSet fit(std::uint64_t seed, const ProbeTrainOptions& options = {});

    void save(const std::filesystem::path& path) const;
    static ProbeSet load(const std::filesystem::path& path);

    std::uint64_t checksum() const;
};

// Held-out grid used for probe accuracy: benchmark subjects x compatible scenes.
std::vector<FactorLabels> probe_holdout_grid();

}  // namespace disentune::synthbench
