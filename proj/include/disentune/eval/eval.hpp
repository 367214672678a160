#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "disentune/diffusion/sampler.hpp"
#include "disentune/synthbench/probes.hpp"
#include "disentune/tuning/tuning.hpp"

namespace disentune::eval {

struct SamplingOptions {
    int ddim_steps = 50;
    std::uint64_t seed = 0;
    diffusion::DdimOptions ddim;
};

// Condition for inference: f'_s with eta * f_i added to every token.
Tensor compose_condition(const Tensor& f_s, const Tensor& f_i, double eta);

// One DDIM sample under `cond` from the tuned model. The sample index selects
// an independent starting noise.
Tensor generate(const tuning::TuningState& state, const Tensor& cond, const SamplingOptions& options,
                std::uint64_t sample_index);

// Index into benchmark_subjects() maximizing the summed log-probabilities of
// the subject probe's heads.
int predict_benchmark_subject(const synthbench::ProbeSet& probes, const Tensor& image);

// Mean cosine over all (generated, real) pairs of subject-probe embeddings.
double identity_score(const std::vector<Tensor>& generated, const std::vector<Tensor>& real,
                      const synthbench::ProbeSet& probes);
// Same on precomputed embeddings.
double mean_pairwise_cosine(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);
std::vector<double> subject_embedding(const synthbench::ProbeSet& probes, const Tensor& image);

// Fraction of the prompt's scene factors (color, texture) recovered by the
// background probe, averaged over images. InputError if the prompt names no
// scene factors.
double prompt_fidelity(const std::vector<Tensor>& generated, const std::string& prompt,
                       const synthbench::ProbeSet& probes);

struct ProbeAccuracy {
    double subject = 0.0;
    double background = 0.0;  // fs_only: (color, texture) of any training image; fi_only: own color
    double background_texture = 0.0;  // fi_only only
    int n = 0;
    std::vector<Tensor> images;
};

// Samples n images from f_s alone.
ProbeAccuracy fs_only_probe(const tuning::TuningState& state, const synthbench::SubjectSet& set,
                            const synthbench::ProbeSet& probes, int n, const SamplingOptions& options);

// Samples per_image images for each training image from a zero text condition
// plus its broadcast f_i.
ProbeAccuracy fi_only_probe(const tuning::TuningState& state, const synthbench::SubjectSet& set,
                            const synthbench::ProbeSet& probes, int per_image, const SamplingOptions& options);

struct EtaPoint {
    double eta = 0.0;
    double cosine = 0.0;
    Tensor image;
};

inline const std::vector<double> kDefaultEtas = {0.0, 0.2, 0.4, 0.6, 0.8};

// One generation per eta under f'_s + eta * f_i(reference), all from the same
// starting noise. etas must start at 0 and increase strictly.
std::vector<EtaPoint> eta_sweep(const tuning::TuningState& state, const std::string& prompt, const Tensor& reference,
                                const std::vector<double>& etas, const synthbench::ProbeSet& probes,
                                const SamplingOptions& options);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct EvalRow {
    std::string name;
    double value = 0.0;
    std::uint64_t seed = 0;
    int n = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;

    void add(std::string name, double value, std::uint64_t seed, int n) {
        rows.push_back({std::move(name), value, seed, n});
    }
    std::string csv() const;  // header name,value,seed,n
};

enum class Variant { full, no_l2, no_l3, no_adapter };
const char* variant_name(Variant v);
tuning::TrainConfig variant_config(const tuning::TrainConfig& base, Variant v);

using DenoiserFactory = std::function<std::unique_ptr<diffusion::Denoiser>()>;

struct AblationResult {
    Variant variant;
    std::uint64_t seed = 0;
    std::uint64_t config_digest = 0;
    ProbeAccuracy fs_only;
    bool ok = true;
    std::string error;
};

// Trains and evaluates the four variants with identical seeds. A failing
// variant is reported and the others continue.
std::vector<AblationResult> run_ablations(const DenoiserFactory& make_base, const tuning::Encoders& encoders,
                                          const diffusion::NoiseSchedule& schedule,
                                          const synthbench::SubjectSet& set, const tuning::TrainConfig& base,
                                          const synthbench::ProbeSet& probes, int n_samples,
                                          const SamplingOptions& sampling);

}  // namespace disentune::eval
