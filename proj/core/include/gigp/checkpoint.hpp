#pragma once

// Binary checkpoint container, little-endian throughout:
//   "GIGPCKPT" | u32 version | u32 len + config text | u64 iteration |
//   u32 blob count | per blob: u32 len + name, u32 rank, u64 dims[rank],
//   f64 values[prod dims]
// Identical state serializes to identical bytes.

#include "gigp/parameters.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace gigp {

inline constexpr char kCheckpointMagic[] = "GIGPCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    std::string config_text;
    std::uint64_t iteration = 0;
    std::vector<std::pair<std::string, Tensor>> blobs;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Appends every parameter of `set` as "<prefix><name>".
void append_blobs(Checkpoint& checkpoint, const std::string& prefix, const ParameterSet& set);

// Copies blobs "<prefix><name>" into the matching parameters of `set`;
// missing names or shape disagreements throw CheckpointError.
void restore_blobs(const Checkpoint& checkpoint, const std::string& prefix, ParameterSet& set);

}  // namespace gigp
