#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace disentune::io {

// Line-oriented "key = value" run configuration. '#' starts a comment; blank
// lines are ignored. Unknown keys, duplicate keys and invalid values raise
// ConfigError naming the line.
struct RunConfig {
    std::uint64_t seed = 0;
    int image_size = 32;
    int cond_dim = 32;
    int cond_len = 8;
    int timesteps = 100;
    int ddim_steps = 50;
    int lora_rank = 4;
    double lambda2 = 0.01;
    double lambda3 = 0.001;
    double lr = 1e-4;
    int iterations = 3000;
    int batch = 1;
    int k_images = 4;
    std::string out_dir = "out";
    bool deterministic = true;

    void validate() const;
    // Canonical text, one key per line in the order above.
    std::string serialize() const;
    std::uint64_t digest() const;

    static RunConfig parse(std::string_view text);
    static RunConfig load(const std::filesystem::path& path);
};

}  // namespace disentune::io
