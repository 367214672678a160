#include "disentune/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "disentune/core/ops.hpp"

namespace disentune::eval {

namespace {

int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na * nb) + ops::kCosineStabilizer);
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

Tensor compose_condition(const Tensor& f_s, const Tensor& f_i, double eta) {
    NoGradGuard guard;
    const auto d = f_s.dim(1);
    return ops::add(f_s, ops::reshape(ops::scale(f_i.detach(), eta), {1, d}));
}

Tensor generate(const tuning::TuningState& state, const Tensor& cond, const SamplingOptions& options,
                std::uint64_t sample_index) {
    return diffusion::ddim_sample(state.model(), cond, state.schedule(), options.ddim_steps,
                                  derive_seed(options.seed, 0x5a, sample_index), options.ddim);
}

int predict_benchmark_subject(const synthbench::ProbeSet& probes, const Tensor& image) {
    const auto lp = probes.subject.log_probs(image);
    std::vector<double> score;
    for (const auto& s : synthbench::benchmark_subjects()) {
        const auto labels = synthbench::ProbeLabels::subject({s.spec, {}});
        double v = 0.0;
        for (std::size_t h = 0; h < labels.size(); ++h) v += lp[h][static_cast<std::size_t>(labels[h])];
        score.push_back(v);
    }
    return argmax(score);
}

std::vector<double> subject_embedding(const synthbench::ProbeSet& probes, const Tensor& image) {
    NoGradGuard guard;
    return probes.subject.embed(image.to(DType::f32)).to_vector();
}

double mean_pairwise_cosine(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    if (a.empty() || b.empty()) {
        throw InputError("identity_score: both image sets must be non-empty");
    }
    double total = 0.0;
    for (const auto& x : a) {
        for (const auto& y : b) total += cosine(x, y);
    }
    return total / static_cast<double>(a.size() * b.size());
}

double identity_score(const std::vector<Tensor>& generated, const std::vector<Tensor>& real,
                      const synthbench::ProbeSet& probes) {
    if (generated.empty() || real.empty()) {
        throw InputError("identity_score: both image sets must be non-empty");
    }
    std::vector<std::vector<double>> a, b;
    for (const auto& g : generated) a.push_back(subject_embedding(probes, g));
    for (const auto& r : real) b.push_back(subject_embedding(probes, r));
    return mean_pairwise_cosine(a, b);
}

double prompt_fidelity(const std::vector<Tensor>& generated, const std::string& prompt,
                       const synthbench::ProbeSet& probes) {
    const auto factors = synthbench::parse_prompt(prompt);
    if (!factors.background || !factors.texture) {
        throw InputError("prompt_fidelity: prompt '" + prompt + "' names no scene factors");
    }
    if (generated.empty()) {
        throw InputError("prompt_fidelity: no images");
    }
    double total = 0.0;
    for (const auto& img : generated) {
        const auto pred = probes.background.predict(img.to(DType::f32));
        total += 0.5 * ((pred[0] == static_cast<int>(*factors.background)) +
                        (pred[1] == static_cast<int>(*factors.texture)));
    }
    return total / static_cast<double>(generated.size());
}

ProbeAccuracy fs_only_probe(const tuning::TuningState& state, const synthbench::SubjectSet& set,
                            const synthbench::ProbeSet& probes, int n, const SamplingOptions& options) {
    const auto& subjects = synthbench::benchmark_subjects();
    int truth = -1;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        if (subjects[i].spec == set.subject) truth = static_cast<int>(i);
    }
    ProbeAccuracy acc;
    acc.n = n;
    int subj = 0, bg = 0;
    for (int k = 0; k < n; ++k) {
        Tensor img = generate(state, state.subject_condition(), options, static_cast<std::uint64_t>(k));
        subj += predict_benchmark_subject(probes, img) == truth;
        const auto pred = probes.background.predict(img.to(DType::f32));
        bool seen = false;
        for (const auto& l : set.labels) {
            seen = seen || (pred == synthbench::ProbeLabels::background(l));
        }
        bg += seen;
        acc.images.push_back(img);
    }
    acc.subject = static_cast<double>(subj) / n;
    acc.background = static_cast<double>(bg) / n;
    return acc;
}

ProbeAccuracy fi_only_probe(const tuning::TuningState& state, const synthbench::SubjectSet& set,
                            const synthbench::ProbeSet& probes, int per_image, const SamplingOptions& options) {
    const auto& subjects = synthbench::benchmark_subjects();
    int truth = -1;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        if (subjects[i].spec == set.subject) truth = static_cast<int>(i);
    }
    const Tensor zero_text = Tensor::zeros(state.subject_condition().shape(), state.subject_condition().dtype());
    ProbeAccuracy acc;
    int subj = 0, color = 0, texture = 0;
    std::uint64_t index = 0;
    for (std::size_t i = 0; i < set.images.size(); ++i) {
        Tensor f_i;
        {
            NoGradGuard guard;
            f_i = state.identity_irrelevant(state.image_feature(set.images[i]));
        }
        const Tensor cond = compose_condition(zero_text, f_i, 1.0);
        for (int k = 0; k < per_image; ++k) {
            Tensor img = generate(state, cond, options, index++);
            subj += predict_benchmark_subject(probes, img) == truth;
            const auto pred = probes.background.predict(img.to(DType::f32));
            color += pred[0] == static_cast<int>(set.labels[i].scene.background);
            texture += pred[1] == static_cast<int>(set.labels[i].scene.texture);
            acc.images.push_back(img);
        }
    }
    acc.n = static_cast<int>(index);
    acc.subject = static_cast<double>(subj) / acc.n;
    acc.background = static_cast<double>(color) / acc.n;
    acc.background_texture = static_cast<double>(texture) / acc.n;
    return acc;
}

std::vector<EtaPoint> eta_sweep(const tuning::TuningState& state, const std::string& prompt, const Tensor& reference,
                                const std::vector<double>& etas, const synthbench::ProbeSet& probes,
                                const SamplingOptions& options) {
    if (etas.empty() || etas.front() != 0.0) {
        throw InputError("eta_sweep: the eta grid must start at 0");
    }
    for (std::size_t i = 1; i < etas.size(); ++i) {
        if (!(etas[i] > etas[i - 1])) throw InputError("eta_sweep: eta values must increase strictly");
    }
    Tensor f_s, f_i;
    {
        NoGradGuard guard;
        f_s = state.encoders().encode_prompt(prompt).to(state.subject_condition().dtype());
        f_i = state.identity_irrelevant(state.image_feature(reference));
    }
    const auto ref_emb = subject_embedding(probes, reference);
    std::vector<EtaPoint> out;
    for (double eta : etas) {
        EtaPoint p;
        p.eta = eta;
        p.image = generate(state, compose_condition(f_s, f_i, eta), options, 0);
        p.cosine = cosine(subject_embedding(probes, p.image), ref_emb);
        out.push_back(p);
    }
    return out;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw InputError("spearman: need two equal-length series of at least 2 values");
    }
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = (n + 1) / 2;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - mx);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - mx) * (ry[i] - mx);
    }
    if (sxx == 0.0 || syy == 0.0) {
        return 0.0;
    }
    return sxy / std::sqrt(sxx * syy);
}

std::string EvalReport::csv() const {
    std::string out = "name,value,seed,n\n";
    for (const auto& r : rows) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9g", r.value);
        out += r.name + "," + buf + "," + std::to_string(r.seed) + "," + std::to_string(r.n) + "\n";
    }
    return out;
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_l2: return "no_l2";
        case Variant::no_l3: return "no_l3";
        case Variant::no_adapter: return "no_adapter";
    }
    return "?";
}

tuning::TrainConfig variant_config(const tuning::TrainConfig& base, Variant v) {
    tuning::TrainConfig c = base;
    if (v == Variant::no_l2) c.lambda2 = 0.0;
    if (v == Variant::no_l3) c.lambda3 = 0.0;
    if (v == Variant::no_adapter) c.use_adapter = false;
    return c;
}

std::vector<AblationResult> run_ablations(const DenoiserFactory& make_base, const tuning::Encoders& encoders,
                                          const diffusion::NoiseSchedule& schedule,
                                          const synthbench::SubjectSet& set, const tuning::TrainConfig& base,
                                          const synthbench::ProbeSet& probes, int n_samples,
                                          const SamplingOptions& sampling) {
    std::vector<AblationResult> out;
    for (Variant v : {Variant::full, Variant::no_l2, Variant::no_l3, Variant::no_adapter}) {
        AblationResult r;
        r.variant = v;
        r.seed = base.seed;
        const auto cfg = variant_config(base, v);
        r.config_digest = cfg.digest();
        try {
            auto model = make_base();
            tuning::TuningState state(*model, encoders, schedule, cfg, set.prompt);
            tuning::train(state, set);
            r.fs_only = fs_only_probe(state, set, probes, n_samples, sampling);
        } catch (const Error& e) {
            r.ok = false;
            r.error = e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace disentune::eval
