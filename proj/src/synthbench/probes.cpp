#include "disentune/synthbench/probes.hpp"

#include <cmath>

#include "disentune/core/ops.hpp"
#include "disentune/core/random.hpp"
#include "disentune/io/checkpoint.hpp"

namespace disentune::synthbench {

namespace {

const std::vector<ProbeHead> kSubjectHeads = {{"shape", kNumShapes}, {"fill", kNumColors}, {"marker", kNumMarkers}};
const std::vector<ProbeHead> kBackgroundHeads = {{"color", kNumColors}, {"texture", kNumTextures}};

bool all_match(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

Tensor augment(const Tensor& x, Rng& rng, double max_noise) {
    const double s = rng.uniform() * max_noise;
    Tensor out = x.clone();
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        out.set(i, out.at(i) + s * rng.normal());
    }
    return out;
}

double train_one(ProbeNet& net, bool subject_probe, std::uint64_t seed, const ProbeTrainOptions& opt) {
    AdamW optim(net.parameters(), AdamWConfig{opt.lr, 0.9, 0.999, 1e-8, 0.0});
    Rng rng(derive_seed(seed, subject_probe ? 1 : 2));
    for (int step = 0; step < opt.steps; ++step) {
        const int heads = static_cast<int>(net.heads().size());
        std::vector<std::vector<Tensor>> rows(static_cast<std::size_t>(heads));
        std::vector<std::vector<int>> targets(static_cast<std::size_t>(heads));
        for (int b = 0; b < opt.batch; ++b) {
            const FactorLabels f = random_factors(rng);
            const Tensor x = augment(render(f.subject, f.scene, opt.image_size), rng, opt.max_noise);
            const auto labels = subject_probe ? ProbeLabels::subject(f) : ProbeLabels::background(f);
            auto logits = net.logits(x);
            for (int h = 0; h < heads; ++h) {
                rows[static_cast<std::size_t>(h)].push_back(logits[static_cast<std::size_t>(h)]);
                targets[static_cast<std::size_t>(h)].push_back(labels[static_cast<std::size_t>(h)]);
            }
        }
        Tensor loss;
        for (int h = 0; h < heads; ++h) {
            Tensor ce = ops::cross_entropy(ops::concat(rows[static_cast<std::size_t>(h)]),
                                           targets[static_cast<std::size_t>(h)]);
            loss = loss ? ops::add(loss, ce) : ce;
        }
        // Cosine decay keeps the final weights stable.
        optim.config().lr = opt.lr * 0.5 * (1.0 + std::cos(M_PI * step / opt.steps));
        backward(loss);
        current_tape().clear();
        optim.step();
    }
    for (auto& [name, t] : net.parameters()) {
        Tensor(t).set_requires_grad(false);
    }
    std::size_t correct = 0;
    const auto grid = probe_holdout_grid();
    for (const auto& f : grid) {
        const auto pred = net.predict(render(f.subject, f.scene, opt.image_size));
        correct += all_match(pred, subject_probe ? ProbeLabels::subject(f) : ProbeLabels::background(f));
    }
    return static_cast<double>(correct) / static_cast<double>(grid.size());
}

}  // namespace

ProbeNet::ProbeNet(std::vector<ProbeHead> heads, std::uint64_t seed, DType dt) : heads_(std::move(heads)) {
    Rng rng(seed);
    std::int64_t in = 3;
    for (int s = 0; s < 3; ++s) {
        const auto out = kWidths[s];
        conv_w_.push_back(randn({out, in, 3, 3}, rng, std::sqrt(2.0 / (9.0 * static_cast<double>(in))), dt));
        conv_b_.push_back(Tensor::zeros({out, 1, 1}, dt));
        params_.push_back({"conv" + std::to_string(s) + ".w", conv_w_.back()});
        params_.push_back({"conv" + std::to_string(s) + ".b", conv_b_.back()});
        in = out;
    }
    for (const auto& h : heads_) {
        head_w_.push_back(randn({in, h.classes}, rng, 1.0 / std::sqrt(static_cast<double>(in)), dt));
        head_b_.push_back(Tensor::zeros({1, h.classes}, dt));
        params_.push_back({"head." + h.name + ".w", head_w_.back()});
        params_.push_back({"head." + h.name + ".b", head_b_.back()});
    }
    for (auto& [name, t] : params_) {
        Tensor(t).set_requires_grad(true);
    }
}

Tensor ProbeNet::features(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t s = 0; s < conv_w_.size(); ++s) {
        h = ops::relu(ops::add(ops::conv2d(h, conv_w_[s], s == 0 ? 1 : 2), conv_b_[s]));
    }
    return h;
}

Tensor ProbeNet::embed(const Tensor& x) const {
    Tensor h = features(x);
    const auto c = h.dim(0);
    return ops::max_axis(ops::reshape(h, {c, h.dim(1) * h.dim(2)}), 1);
}

std::vector<Tensor> ProbeNet::logits(const Tensor& x) const {
    Tensor e = ops::reshape(embed(x), {1, kWidths[2]});
    std::vector<Tensor> out;
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        out.push_back(ops::add(ops::matmul(e, head_w_[h]), head_b_[h]));
    }
    return out;
}

std::vector<std::vector<double>> ProbeNet::log_probs(const Tensor& x) const {
    NoGradGuard guard;
    std::vector<std::vector<double>> out;
    for (const Tensor& l : logits(x)) {
        auto v = l.to_vector();
        double mx = -INFINITY;
        for (double z : v) mx = std::max(mx, z);
        double sum = 0.0;
        for (double z : v) sum += std::exp(z - mx);
        const double lse = mx + std::log(sum);
        for (double& z : v) z -= lse;
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<int> ProbeNet::predict(const Tensor& x) const {
    std::vector<int> out;
    for (const auto& lp : log_probs(x)) {
        int best = 0;
        for (std::size_t k = 1; k < lp.size(); ++k) {
            if (lp[k] > lp[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
        }
        out.push_back(best);
    }
    return out;
}

std::vector<int> ProbeLabels::subject(const FactorLabels& f) {
    return {static_cast<int>(f.subject.shape), static_cast<int>(f.subject.fill), f.subject.markers};
}

std::vector<int> ProbeLabels::background(const FactorLabels& f) {
    return {static_cast<int>(f.scene.background), static_cast<int>(f.scene.texture)};
}

ProbeSet::ProbeSet(std::uint64_t seed_)
    : subject(kSubjectHeads, derive_seed(seed_, 0x5b)), background(kBackgroundHeads, derive_seed(seed_, 0xb6)),
      seed(seed_) {}

ProbeSet ProbeSet::fit(std::uint64_t seed, const ProbeTrainOptions& options) {
    ProbeSet set(seed);
    set.subject_accuracy = train_one(set.subject, true, seed, options);
    set.background_accuracy = train_one(set.background, false, seed, options);
    return set;
}

ProbeSet ProbeSet::train(std::uint64_t seed, const ProbeTrainOptions& options) {
    ProbeSet set = fit(seed, options);
    if (set.subject_accuracy < kProbeAccuracyFloor || set.background_accuracy < kProbeAccuracyFloor) {
        throw BenchmarkQualityError("probe held-out accuracy below " + std::to_string(kProbeAccuracyFloor) +
                                    ": subject " + std::to_string(set.subject_accuracy) + ", background " +
                                    std::to_string(set.background_accuracy));
    }
    return set;
}

void ProbeSet::save(const std::filesystem::path& path) const {
    io::Checkpoint ckpt;
    for (const auto& [name, t] : subject.parameters()) ckpt.entries.push_back({"subject." + name, t});
    for (const auto& [name, t] : background.parameters()) ckpt.entries.push_back({"background." + name, t});
    ckpt.entries.push_back({"meta.accuracy", Tensor::from_values({2}, {subject_accuracy, background_accuracy},
                                                                 DType::f64)});
    ckpt.config_digest = seed;
    io::save_checkpoint(path, ckpt);
}

ProbeSet ProbeSet::load(const std::filesystem::path& path) {
    const auto ckpt = io::load_checkpoint(path);
    ProbeSet set(ckpt.config_digest);
    NamedTensors s, b;
    for (const auto& [name, t] : set.subject.parameters()) s.push_back({"subject." + name, t});
    for (const auto& [name, t] : set.background.parameters()) b.push_back({"background." + name, t});
    io::restore_into(ckpt, s);
    io::restore_into(ckpt, b);
    for (const auto& nt : s) Tensor(nt.tensor).set_requires_grad(false);
    for (const auto& nt : b) Tensor(nt.tensor).set_requires_grad(false);
    const Tensor acc = ckpt.require("meta.accuracy");
    set.subject_accuracy = acc.at(0);
    set.background_accuracy = acc.at(1);
    return set;
}

std::uint64_t ProbeSet::checksum() const {
    std::uint64_t h = 0;
    for (const auto& [name, t] : subject.parameters()) h = derive_seed(h, disentune::checksum(t));
    for (const auto& [name, t] : background.parameters()) h = derive_seed(h, disentune::checksum(t));
    return h;
}

std::vector<FactorLabels> probe_holdout_grid() {
    std::vector<FactorLabels> grid;
    for (const auto& s : benchmark_subjects()) {
        for (const auto& scene : compatible_scenes(s.spec)) {
            grid.push_back({s.spec, scene});
        }
    }
    return grid;
}

}  // namespace disentune::synthbench
