#include "disentune/cli/workspace.hpp"

#include "disentune/io/checkpoint.hpp"
#include "disentune/io/files.hpp"

namespace disentune::cli {

namespace {

template <class E>
E lookup(std::string_view word, int count, std::string_view (*name)(E), const char* what) {
    for (int i = 0; i < count; ++i) {
        if (name(static_cast<E>(i)) == word) return static_cast<E>(i);
    }
    throw FormatError(std::string("manifest: unknown ") + what + " '" + std::string(word) + "'");
}

int to_int(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw FormatError(std::string("manifest: bad ") + what + " '" + s + "'");
}

}  // namespace

diffusion::DenoiserConfig denoiser_config(const io::RunConfig& rc) {
    diffusion::DenoiserConfig c;
    c.height = rc.image_size;
    c.width = rc.image_size;
    c.cond_dim = rc.cond_dim;
    c.cond_len = rc.cond_len;
    c.base_channels = kBaseChannels;
    c.timesteps = rc.timesteps;
    return c;
}

tuning::TrainConfig train_config(const io::RunConfig& rc) {
    tuning::TrainConfig c;
    c.lambda2 = rc.lambda2;
    c.lambda3 = rc.lambda3;
    c.lr = rc.lr;
    c.iterations = rc.iterations;
    c.batch = rc.batch;
    c.seed = rc.seed;
    c.lora_rank = rc.lora_rank;
    return c;
}

tuning::Encoders make_encoders(const io::RunConfig& rc) {
    return tuning::make_encoders(rc.cond_dim, rc.cond_len, rc.image_size);
}

std::uint64_t base_digest(const io::RunConfig& rc, const BaseOptions& options) {
    const auto c = denoiser_config(rc);
    const std::string key = "base;size=" + std::to_string(c.height) + ";cond=" + std::to_string(c.cond_dim) + "x" +
                            std::to_string(c.cond_len) + ";ch=" + std::to_string(c.base_channels) +
                            ";T=" + std::to_string(c.timesteps) + ";steps=" + std::to_string(options.steps) +
                            ";seed=" + std::to_string(options.seed);
    return io::fnv1a(key);
}

std::unique_ptr<diffusion::Denoiser> load_base_model(const Workspace& ws, const io::RunConfig& rc,
                                                     const BaseOptions& options) {
    if (!std::filesystem::exists(ws.base())) {
        throw DependencyError("no pretrained base in '" + ws.dir.string() + "'; run gen-data first");
    }
    const auto ckpt = io::load_checkpoint(ws.base());
    if (ckpt.config_digest != base_digest(rc, options)) {
        throw DependencyError("base in '" + ws.dir.string() +
                              "' was pretrained for another configuration; rerun gen-data");
    }
    auto model = std::make_unique<diffusion::Denoiser>(denoiser_config(rc), derive_seed(options.seed, 0xba5e));
    tuning::load_base(*model, ckpt);
    return model;
}

void ensure_base(const Workspace& ws, const io::RunConfig& rc, const BaseOptions& options, const Log& log) {
    const auto digest = base_digest(rc, options);
    if (std::filesystem::exists(ws.base())) {
        try {
            if (io::load_checkpoint(ws.base()).config_digest == digest) {
                log("base: cached " + ws.base().string());
                return;
            }
        } catch (const FormatError&) {
        }
    }
    diffusion::Denoiser model(denoiser_config(rc), derive_seed(options.seed, 0xba5e));
    const auto encoders = make_encoders(rc);
    tuning::PretrainOptions po;
    po.steps = options.steps;
    po.seed = options.seed;
    po.progress_every = 1000;
    po.progress = [&](int step, double loss) {
        log("base: step " + std::to_string(step) + "/" + std::to_string(options.steps) + " loss " +
            std::to_string(loss));
    };
    tuning::pretrain_base(model, encoders, diffusion::make_schedule(rc.timesteps), po);
    io::save_checkpoint(ws.base(), tuning::base_checkpoint(model, digest));
    log("base: saved " + ws.base().string());
}

synthbench::ProbeSet ensure_probes(const Workspace& ws, std::uint64_t seed,
                                   const synthbench::ProbeTrainOptions& options, const Log& log) {
    if (std::filesystem::exists(ws.probes())) {
        try {
            auto cached = synthbench::ProbeSet::load(ws.probes());
            if (cached.seed == seed) {
                log("probes: cached " + ws.probes().string());
                return cached;
            }
        } catch (const FormatError&) {
        }
    }
    log("probes: training at seed " + std::to_string(seed));
    auto probes = synthbench::ProbeSet::train(seed, options);
    probes.save(ws.probes());
    return probes;
}

synthbench::ProbeSet load_probes(const Workspace& ws) {
    if (!std::filesystem::exists(ws.probes())) {
        throw DependencyError("no probes in '" + ws.dir.string() + "'; run gen-data first");
    }
    return synthbench::ProbeSet::load(ws.probes());
}

synthbench::SubjectSet benchmark_set(const io::RunConfig& rc, const std::string& subject_id) {
    const auto& b = synthbench::benchmark_subject(subject_id);
    return synthbench::make_subject_set(b.id, b.spec, rc.k_images, rc.seed, rc.image_size);
}

int write_benchmark(const Workspace& ws, const io::RunConfig& rc) {
    io::ensure_directory(ws.images());
    std::string manifest = synthbench::manifest_header() + "\n";
    int written = 0;
    for (const auto& b : synthbench::benchmark_subjects()) {
        const auto set = benchmark_set(rc, b.id);
        for (std::size_t i = 0; i < set.size(); ++i) {
            const std::string rel = "images/" + b.id + "_" + std::to_string(i) + ".ppm";
            io::write_ppm(ws.dir / rel, set.images[i]);
            manifest += synthbench::manifest_line({rel, b.id, set.labels[i]}) + "\n";
            ++written;
        }
    }
    io::write_file(ws.manifest(), manifest);
    return written;
}

synthbench::SubjectSet read_subject_set(const Workspace& ws, const std::string& subject_id) {
    using namespace synthbench;
    if (!std::filesystem::exists(ws.manifest())) {
        throw DependencyError("no manifest in '" + ws.dir.string() + "'; run gen-data first");
    }
    const auto& b = benchmark_subject(subject_id);
    const auto rows = io::parse_csv(io::read_file(ws.manifest()));
    SubjectSet set;
    set.subject_id = b.id;
    set.subject = b.spec;
    set.prompt = subject_prompt(b.spec.shape);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& f = rows[r];
        if (f.size() != 9) {
            throw FormatError("manifest: row " + std::to_string(r + 1) + " has " + std::to_string(f.size()) +
                              " fields");
        }
        if (f[1] != subject_id) continue;
        FactorLabels l;
        l.subject.shape = lookup<ShapeKind>(f[2], kNumShapes, shape_word, "shape");
        l.subject.fill = lookup<Color>(f[3], kNumColors, color_word, "color");
        l.subject.markers = to_int(f[4], "marker");
        l.scene.background = lookup<Color>(f[5], kNumColors, color_word, "color");
        l.scene.texture = lookup<Texture>(f[6], kNumTextures, texture_word, "texture");
        l.scene.position = to_int(f[7], "position");
        l.scene.scale = lookup<Scale>(f[8], kNumScales, scale_word, "scale");
        if (!(l.subject == b.spec)) {
            throw FormatError("manifest: row " + std::to_string(r + 1) + " does not match subject " + subject_id);
        }
        set.images.push_back(io::read_ppm(ws.dir / f[0]));
        set.labels.push_back(l);
    }
    if (set.images.empty()) {
        throw InputError("manifest has no images for subject '" + subject_id + "'");
    }
    return set;
}

}  // namespace disentune::cli
