#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "disentune/cli/workspace.hpp"
#include "disentune/core/tape.hpp"
#include "disentune/eval/eval.hpp"
#include "disentune/io/files.hpp"

using namespace disentune;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

void log_line(const std::string& s) {
    std::fprintf(stderr, "%s\n", s.c_str());
    std::fflush(stderr);
}

io::RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
    io::RunConfig rc = path.empty() ? io::RunConfig{} : io::RunConfig::load(path);
    if (seed) rc.seed = *seed;
    rc.validate();
    return rc;
}

fs::path workspace_meta(const cli::Workspace& ws) { return ws.dir / "workspace.json"; }

cli::BaseOptions read_base_options(const cli::Workspace& ws) {
    if (!fs::exists(workspace_meta(ws))) {
        throw DependencyError("'" + ws.dir.string() + "' is not a gen-data workspace; run gen-data first");
    }
    const auto j = json::parse(io::read_file(workspace_meta(ws)));
    cli::BaseOptions b;
    b.steps = j.at("pretrain_steps").get<int>();
    b.seed = j.at("base_seed").get<std::uint64_t>();
    return b;
}

// A tuned subject checkpoint together with everything needed to sample from it.
struct Tuned {
    io::RunConfig rc;
    tuning::TrainConfig tc;
    cli::Workspace ws;
    std::string subject;
    std::unique_ptr<tuning::Encoders> encoders;
    std::unique_ptr<diffusion::Denoiser> model;
    std::unique_ptr<tuning::TuningState> state;
};

fs::path sidecar(const fs::path& ckpt) { return fs::path(ckpt.string() + ".json"); }

Tuned load_tuned(const fs::path& ckpt_path) {
    if (!fs::exists(sidecar(ckpt_path))) {
        throw DependencyError("checkpoint sidecar '" + sidecar(ckpt_path).string() + "' is missing");
    }
    const auto meta = json::parse(io::read_file(sidecar(ckpt_path)));
    Tuned t;
    t.rc = io::RunConfig::parse(meta.at("config").get<std::string>());
    t.ws.dir = meta.at("data").get<std::string>();
    t.subject = meta.at("subject").get<std::string>();
    t.tc = cli::train_config(t.rc);
    t.tc.lambda2 = meta.at("lambda2").get<double>();
    t.tc.lambda3 = meta.at("lambda3").get<double>();
    t.tc.use_adapter = meta.at("adapter").get<bool>();
    t.encoders = std::make_unique<tuning::Encoders>(cli::make_encoders(t.rc));
    t.model = cli::load_base_model(t.ws, t.rc, read_base_options(t.ws));
    t.state = std::make_unique<tuning::TuningState>(
        *t.model, *t.encoders, diffusion::make_schedule(t.rc.timesteps), t.tc,
        synthbench::subject_prompt(synthbench::benchmark_subject(t.subject).spec.shape));
    t.state->restore(io::load_checkpoint(ckpt_path));
    return t;
}

void write_grid(const fs::path& path, const std::vector<Tensor>& images, int cols) {
    if (!images.empty()) io::write_ppm(path, io::image_grid(images, cols));
}

int cmd_gen_data(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed,
                 int pretrain_steps, std::uint64_t base_seed, int probe_steps) {
    const auto rc = load_config(config, seed);
    cli::Workspace ws{out.empty() ? fs::path(rc.out_dir) : fs::path(out)};
    io::ensure_directory(ws.dir);
    io::write_file(ws.config(), rc.serialize());
    const int n = cli::write_benchmark(ws, rc);
    std::printf("images: %d written to %s\n", n, ws.images().string().c_str());

    synthbench::ProbeTrainOptions po;
    po.steps = probe_steps;
    po.image_size = rc.image_size;
    const auto probes = cli::ensure_probes(ws, rc.seed, po, log_line);
    std::printf("probe accuracy: subject %.4f background %.4f\n", probes.subject_accuracy,
                probes.background_accuracy);

    const cli::BaseOptions bo{pretrain_steps, base_seed};
    cli::ensure_base(ws, rc, bo, log_line);
    json meta;
    meta["pretrain_steps"] = bo.steps;
    meta["base_seed"] = bo.seed;
    meta["probe_seed"] = rc.seed;
    io::write_file(workspace_meta(ws), meta.dump(2) + "\n");
    std::printf("workspace: %s\n", ws.dir.string().c_str());
    return 0;
}

int cmd_train(const std::string& config, const std::string& subject, const std::string& out,
              const std::string& data, std::optional<std::uint64_t> seed, std::optional<double> lambda2,
              std::optional<double> lambda3, std::optional<int> iterations, bool no_adapter) {
    auto rc = load_config(config, seed);
    if (lambda2) rc.lambda2 = *lambda2;
    if (lambda3) rc.lambda3 = *lambda3;
    if (iterations) rc.iterations = *iterations;
    rc.validate();
    cli::Workspace ws{data.empty() ? fs::path(rc.out_dir) : fs::path(data)};
    const auto set = cli::read_subject_set(ws, subject);
    auto tc = cli::train_config(rc);
    tc.use_adapter = !no_adapter;
    const auto encoders = cli::make_encoders(rc);
    auto model = cli::load_base_model(ws, rc, read_base_options(ws));
    tuning::TuningState state(*model, encoders, diffusion::make_schedule(rc.timesteps), tc, set.prompt);
    std::printf("trainable parameters: %lld of %lld total\n", static_cast<long long>(state.trainable_count()),
                static_cast<long long>(state.total_count()));

    const fs::path ckpt(out);
    if (ckpt.has_parent_path()) io::ensure_directory(ckpt.parent_path());
    tuning::TrainHooks hooks;
    hooks.step_log = fs::path(out + ".steps.csv");
    hooks.checkpoint_path = ckpt;
    hooks.on_step = [&](const tuning::StepRecord& r) {
        if ((r.iteration + 1) % 500 == 0) {
            log_line("train: iteration " + std::to_string(r.iteration + 1) + "/" + std::to_string(tc.iterations) +
                     " L " + std::to_string(r.l));
        }
    };
    tuning::train(state, set, hooks);

    json meta;
    meta["config"] = rc.serialize();
    meta["subject"] = subject;
    meta["data"] = fs::absolute(ws.dir).string();
    meta["lambda2"] = tc.lambda2;
    meta["lambda3"] = tc.lambda3;
    meta["adapter"] = tc.use_adapter;
    meta["trainable_parameters"] = state.trainable_count();
    meta["total_parameters"] = state.total_count();
    meta["config_digest"] = tc.digest();
    io::write_file(sidecar(ckpt), meta.dump(2) + "\n");
    std::printf("checkpoint: %s\n", out.c_str());
    return 0;
}

int cmd_sample(const std::string& ckpt, const std::string& prompt, const std::string& ref, double eta,
               const std::string& out, int n, std::optional<std::uint64_t> seed) {
    if (eta < 0.0) throw UsageError("--eta must be >= 0");
    if (eta > 0.0 && ref.empty()) throw UsageError("--eta > 0 requires --ref");
    if (n < 1) throw UsageError("--n must be >= 1");
    Tuned t = load_tuned(ckpt);
    eval::SamplingOptions so;
    so.ddim_steps = t.rc.ddim_steps;
    so.seed = seed.value_or(t.rc.seed);
    Tensor cond;
    {
        NoGradGuard guard;
        cond = t.encoders->encode_prompt(prompt).to(t.state->subject_condition().dtype());
        if (!ref.empty()) {
            const Tensor f_i = t.state->identity_irrelevant(t.state->image_feature(io::read_ppm(ref)));
            cond = eval::compose_condition(cond, f_i, eta);
        }
    }
    io::ensure_directory(out);
    std::vector<Tensor> images;
    for (int k = 0; k < n; ++k) {
        images.push_back(eval::generate(*t.state, cond, so, static_cast<std::uint64_t>(k)));
        io::write_ppm(fs::path(out) / ("sample_" + std::to_string(k) + ".ppm"), images.back());
    }
    write_grid(fs::path(out) / "grid.ppm", images, 8);
    json prov;
    prov["checkpoint"] = ckpt;
    prov["prompt"] = prompt;
    prov["eta"] = eta;
    prov["ref"] = ref.empty() ? json(nullptr) : json(ref);
    prov["seed"] = so.seed;
    prov["n"] = n;
    prov["ddim_steps"] = so.ddim_steps;
    io::write_file(fs::path(out) / "provenance.json", prov.dump(2) + "\n");
    std::printf("samples: %d written to %s\n", n, out.c_str());
    return 0;
}

// Scene prompts used for prompt fidelity; each names a background absent
// from every benchmark subject's fill.
const std::vector<std::string>& fidelity_prompts() {
    static const std::vector<std::string> p = {
        synthbench::prompt_for(synthbench::ShapeKind::square, synthbench::Color::cyan, synthbench::Texture::plain),
        synthbench::prompt_for(synthbench::ShapeKind::square, synthbench::Color::magenta, synthbench::Texture::stripes),
        synthbench::prompt_for(synthbench::ShapeKind::square, synthbench::Color::white, synthbench::Texture::checker),
        synthbench::prompt_for(synthbench::ShapeKind::square, synthbench::Color::black, synthbench::Texture::plain),
    };
    return p;
}

int cmd_eval(const std::string& ckpt, const std::string& suite, const std::string& out, int n,
             std::optional<std::uint64_t> seed) {
    if (suite != "metrics" && suite != "probes" && suite != "sweep" && suite != "ablate") {
        throw UsageError("unknown suite '" + suite + "' (metrics, probes, sweep, ablate)");
    }
    if (n < 1) throw UsageError("--n must be >= 1");
    Tuned t = load_tuned(ckpt);
    const auto probes = cli::load_probes(t.ws);
    const auto set = cli::read_subject_set(t.ws, t.subject);
    eval::SamplingOptions so;
    so.ddim_steps = t.rc.ddim_steps;
    so.seed = seed.value_or(t.rc.seed);
    io::ensure_directory(out);
    const fs::path dir(out);
    eval::EvalReport report;

    if (suite == "metrics") {
        const auto fs_only = eval::fs_only_probe(*t.state, set, probes, n, so);
        report.add("identity_score", eval::identity_score(fs_only.images, set.images, probes), so.seed, n);
        std::vector<Tensor> prompted;
        double fidelity = 0.0;
        const auto& prompts = fidelity_prompts();
        const int per_prompt = std::max(1, n / static_cast<int>(prompts.size()));
        for (std::size_t p = 0; p < prompts.size(); ++p) {
            const Tensor cond = t.encoders->encode_prompt(prompts[p]).to(t.state->subject_condition().dtype());
            std::vector<Tensor> imgs;
            for (int k = 0; k < per_prompt; ++k) {
                imgs.push_back(eval::generate(*t.state, cond, so, p * 1000 + static_cast<std::uint64_t>(k)));
            }
            fidelity += eval::prompt_fidelity(imgs, prompts[p], probes);
            prompted.insert(prompted.end(), imgs.begin(), imgs.end());
        }
        report.add("prompt_fidelity", fidelity / static_cast<double>(prompts.size()), so.seed,
                   per_prompt * static_cast<int>(prompts.size()));
        write_grid(dir / "fs_only.ppm", fs_only.images, 8);
        write_grid(dir / "prompts.ppm", prompted, per_prompt);
    } else if (suite == "probes") {
        const auto fs_only = eval::fs_only_probe(*t.state, set, probes, n, so);
        const int per_image = std::max(1, n / static_cast<int>(set.size()));
        const auto fi_only = eval::fi_only_probe(*t.state, set, probes, per_image, so);
        report.add("fs_only_subject", fs_only.subject, so.seed, fs_only.n);
        report.add("fs_only_background", fs_only.background, so.seed, fs_only.n);
        report.add("fi_only_subject", fi_only.subject, so.seed, fi_only.n);
        report.add("fi_only_background_color", fi_only.background, so.seed, fi_only.n);
        report.add("fi_only_background_texture", fi_only.background_texture, so.seed, fi_only.n);
        write_grid(dir / "fs_only.ppm", fs_only.images, 8);
        write_grid(dir / "fi_only.ppm", fi_only.images, per_image);
    } else if (suite == "sweep") {
        const std::string prompt = fidelity_prompts().front();
        const auto curve = eval::eta_sweep(*t.state, prompt, set.images.front(), eval::kDefaultEtas, probes, so);
        std::vector<double> etas, cosines;
        std::vector<Tensor> images{set.images.front()};
        for (const auto& p : curve) {
            char name[32];
            std::snprintf(name, sizeof name, "eta_cosine_%.1f", p.eta);
            report.add(name, p.cosine, so.seed, 1);
            etas.push_back(p.eta);
            cosines.push_back(p.cosine);
            images.push_back(p.image);
        }
        report.add("eta_spearman", eval::spearman(etas, cosines), so.seed, static_cast<int>(curve.size()));
        write_grid(dir / "sweep.ppm", images, static_cast<int>(images.size()));
    } else {
        const auto base = read_base_options(t.ws);
        const auto rows = eval::run_ablations([&] { return cli::load_base_model(t.ws, t.rc, base); }, *t.encoders,
                                              diffusion::make_schedule(t.rc.timesteps), set,
                                              cli::train_config(t.rc), probes, n, so);
        for (const auto& r : rows) {
            const std::string name = std::string(eval::variant_name(r.variant));
            if (!r.ok) {
                log_line("ablate: " + name + " failed: " + r.error);
                report.add(name + "_fs_only_subject", std::nan(""), r.seed, 0);
                continue;
            }
            report.add(name + "_fs_only_subject", r.fs_only.subject, r.seed, r.fs_only.n);
            write_grid(dir / ("ablate_" + name + ".ppm"), r.fs_only.images, 8);
        }
    }
    io::write_file(dir / "report.csv", report.csv());
    std::printf("%s", report.csv().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Identity-preserving disentangled subject tuning on a synthetic benchmark"};
    app.require_subcommand(1);
    std::optional<std::uint64_t> seed;
    std::string config;

    auto* gen = app.add_subcommand("gen-data", "Render the benchmark, train probes and pretrain the base denoiser");
    std::string gen_out;
    int pretrain_steps = cli::kDefaultPretrainSteps;
    std::uint64_t base_seed = cli::kDefaultBaseSeed;
    int probe_steps = synthbench::ProbeTrainOptions{}.steps;
    gen->add_option("--config", config, "Run configuration file");
    gen->add_option("--out", gen_out, "Workspace directory (default: out_dir)");
    gen->add_option("--seed", seed, "Override the configured seed");
    gen->add_option("--pretrain-steps", pretrain_steps, "Base denoiser pretraining steps")->check(CLI::PositiveNumber);
    gen->add_option("--base-seed", base_seed, "Base denoiser seed");
    gen->add_option("--probe-steps", probe_steps, "Probe training steps")->check(CLI::PositiveNumber);

    auto* train = app.add_subcommand("train", "Tune one benchmark subject");
    std::string subject, train_out, data;
    std::optional<double> lambda2, lambda3;
    std::optional<int> iterations;
    bool no_adapter = false;
    train->add_option("--config", config, "Run configuration file");
    train->add_option("--subject", subject, "Benchmark subject id (s0..s3)")->required();
    train->add_option("--out", train_out, "Checkpoint path")->required();
    train->add_option("--data", data, "gen-data workspace (default: out_dir)");
    train->add_option("--seed", seed, "Override the configured seed");
    train->add_option("--lambda2", lambda2, "Weak denoising weight");
    train->add_option("--lambda3", lambda3, "Contrastive weight");
    train->add_option("--iterations", iterations, "Override the configured iteration count");
    train->add_flag("--no-adapter", no_adapter, "Replace the mask adapter by a frozen projection");

    auto* sample = app.add_subcommand("sample", "Generate images from a tuned checkpoint");
    std::string ckpt, prompt, ref, sample_out;
    double eta = 0.0;
    int n_sample = 4;
    sample->add_option("--ckpt", ckpt, "Tuned checkpoint")->required();
    sample->add_option("--prompt", prompt, "Prompt, e.g. \"a S* square on red checker\"")->required();
    sample->add_option("--ref", ref, "Reference image (P6) supplying f_i");
    sample->add_option("--eta", eta, "Weight of the reference feature");
    sample->add_option("--out", sample_out, "Output directory")->required();
    sample->add_option("--n", n_sample, "Number of images");
    sample->add_option("--seed", seed, "Sampling seed (default: configured seed)");

    auto* evalc = app.add_subcommand("eval", "Evaluate a tuned checkpoint");
    std::string suite, eval_out;
    int n_eval = 32;
    evalc->add_option("--ckpt", ckpt, "Tuned checkpoint")->required();
    evalc->add_option("--suite", suite, "metrics | probes | sweep | ablate")->required();
    evalc->add_option("--out", eval_out, "Output directory")->required();
    evalc->add_option("--n", n_eval, "Samples per probe");
    evalc->add_option("--seed", seed, "Sampling seed (default: configured seed)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*gen) return cmd_gen_data(config, gen_out, seed, pretrain_steps, base_seed, probe_steps);
        if (*train) {
            return cmd_train(config, subject, train_out, data, seed, lambda2, lambda3, iterations, no_adapter);
        }
        if (*sample) return cmd_sample(ckpt, prompt, ref, eta, sample_out, n_sample, seed);
        if (*evalc) return cmd_eval(ckpt, suite, eval_out, n_eval, seed);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
