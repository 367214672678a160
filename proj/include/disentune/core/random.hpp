#pragma once

#include <cstdint>
#include <random>

#include "disentune/core/tensor.hpp"

namespace disentune {

// Seeded generator with platform-independent draws: the engine is the
// standard mt19937_64 and the distributions below are implemented here rather
// than taken from <random>, whose distributions vary across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stateless mixing of a seed with stream identifiers (splitmix64 finalizer);
// used to derive independent per-purpose seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0, DType dt = default_dtype());

}  // namespace disentune
