#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "UATF"                      4 magic bytes
//   u32 version                 currently 1
//   u64 header_length
//   header                      UTF-8 JSON: architecture, vocabulary,
//                               layer-norm epsilon, tie flags, training
//                               metadata, array manifest (name/shape/offset)
//   blob                        f32 arrays concatenated in manifest order
//
// Offsets in the manifest are byte offsets from the start of the blob.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uat/mlm.hpp"

namespace uat {

inline constexpr char kCheckpointMagic[4] = {'U', 'A', 'T', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const MlmModel& model);
MlmModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

// Writes via a temporary file and rename.
void save_checkpoint(const MlmModel& model, const std::filesystem::path& path);
MlmModel load_checkpoint(const std::filesystem::path& path);

// Shared helpers for atomic output.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace uat
