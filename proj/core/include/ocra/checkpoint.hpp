#pragma once

// Checkpoint layout, little-endian:
//   "OCKP" | u32 version | u64 config hash | u32 tensor count
//   per tensor: u32 name length | name | u32 rank | u64 extents[rank] | f32 values

#include <cstdint>
#include <string>

#include "ocra/params.hpp"

namespace ocra {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  uint32_t version = 0;
  uint64_t config_hash = 0;
  uint32_t tensors = 0;
};

template <typename T>
void save_checkpoint(const ParameterSet<T>& params, uint64_t config_hash, const std::string& path);

// Overwrites params in place. Throws FormatError on a hash, name or shape
// mismatch; the message carries both hashes.
template <typename T>
void load_checkpoint(ParameterSet<T>& params, uint64_t config_hash, const std::string& path);

CheckpointInfo read_checkpoint_info(const std::string& path);

}  // namespace ocra
