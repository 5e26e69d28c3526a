#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "evc/tensor.hpp"

namespace evc {

// Named-tensor container file ("EVCK"): little-endian, f32 payloads.
// Layout: magic, version u32, variant string, config-hash string, record
// count u32, then per record: name length u32, name bytes, rank u32,
// extents u32 each, raw f32 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointFile {
  std::string variant;
  std::string config_hash;
  std::vector<std::pair<std::string, Tensor>> records;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

}  // namespace evc
