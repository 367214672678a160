#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "disentune/diffusion/denoiser.hpp"
#include "disentune/io/run_config.hpp"
#include "disentune/synthbench/probes.hpp"
#include "disentune/tuning/pretrain.hpp"
#include "disentune/tuning/tuning.hpp"

namespace disentune::cli {

using Log = std::function<void(const std::string&)>;

// Width of the base denoiser's first stage.
inline constexpr std::int64_t kBaseChannels = 32;
inline constexpr int kDefaultPretrainSteps = 20000;
inline constexpr std::uint64_t kDefaultBaseSeed = 0;

// Files written by gen-data and read by every later command.
struct Workspace {
    std::filesystem::path dir;

    std::filesystem::path images() const { return dir / "images"; }
    std::filesystem::path manifest() const { return dir / "manifest.csv"; }
    std::filesystem::path probes() const { return dir / "probes.ckpt"; }
    std::filesystem::path base() const { return dir / "base.ckpt"; }
    std::filesystem::path config() const { return dir / "run.cfg"; }
};

diffusion::DenoiserConfig denoiser_config(const io::RunConfig& rc);
tuning::TrainConfig train_config(const io::RunConfig& rc);
tuning::Encoders make_encoders(const io::RunConfig& rc);

struct BaseOptions {
    int steps = kDefaultPretrainSteps;
    std::uint64_t seed = kDefaultBaseSeed;
};

// Identifies a pretrained base: denoiser shape, schedule length and
// pretraining options.
std::uint64_t base_digest(const io::RunConfig& rc, const BaseOptions& options);

// Builds a denoiser and loads the cached base weights; DependencyError if the
// workspace has no base or it was trained for another configuration.
std::unique_ptr<diffusion::Denoiser> load_base_model(const Workspace& ws, const io::RunConfig& rc,
                                                     const BaseOptions& options);

// Loads the cached base if its digest matches, otherwise pretrains and saves it.
void ensure_base(const Workspace& ws, const io::RunConfig& rc, const BaseOptions& options, const Log& log);

// Loads cached probes trained at `seed`, otherwise trains (floor enforced) and saves.
synthbench::ProbeSet ensure_probes(const Workspace& ws, std::uint64_t seed,
                                   const synthbench::ProbeTrainOptions& options, const Log& log);

// DependencyError naming gen-data when the probes are missing.
synthbench::ProbeSet load_probes(const Workspace& ws);

// The benchmark subject sets drawn from the run seed.
synthbench::SubjectSet benchmark_set(const io::RunConfig& rc, const std::string& subject_id);

// Renders every benchmark subject set to P6 files and writes the manifest.
// Returns the number of images written.
int write_benchmark(const Workspace& ws, const io::RunConfig& rc);

// Reads one subject's images back from the manifest; DependencyError if the
// manifest is absent, InputError if the subject has no rows.
synthbench::SubjectSet read_subject_set(const Workspace& ws, const std::string& subject_id);

}  // namespace disentune::cli
