#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "concner/corpus.hpp"
#include "concner/encoder.hpp"

namespace concner {

// Self-describing model snapshot: parameters plus everything needed to apply
// them to raw text.
struct Checkpoint {
  ModelParams params;
  LabelSet label_set;
  Vocabulary vocab;
  std::uint64_t step = 0;
  double dev_f1 = 0.0;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

// Layout (little-endian):
//   "CNER1\0"  u16 version
//   u64 manifest length, manifest (key=value lines)
//   u64 tensor count, then per tensor:
//     u32 name length, name, u8 dtype (1 = f64), u32 rank, u64 dims[rank], f64 data
std::string serialize_checkpoint(const Checkpoint& ckpt);

// Throws BadCheckpoint on malformed bytes, ArchitectureMismatch when tensor
// names/shapes disagree with the recorded encoder config.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace concner
