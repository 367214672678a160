#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "disentune/core/optim.hpp"

namespace disentune::io {

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'N', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    NamedTensors entries;
    std::uint64_t config_digest = 0;

    // Undefined tensor if absent.
    Tensor find(const std::string& name) const;
    Tensor require(const std::string& name) const;  // FormatError if absent
};

// Layout, all integers little-endian:
//   "DSNB" | u32 version | u32 count |
//   count x (u32 name_len | name | u8 dtype | u32 rank | rank x u64 dim | payload) |
//   u64 config_digest
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies each named entry into the tensor of the same name in `targets`.
// Missing entries or shape mismatches raise FormatError.
void restore_into(const Checkpoint& ckpt, const NamedTensors& targets);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace disentune::io
