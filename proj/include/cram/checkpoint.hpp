#pragma once

// Trained-model snapshots and their binary file format:
//   "CRAM" | u32 version | u64 metadata length | metadata JSON | u32 tensor count |
//   per tensor: u32 name length | name | u8 dtype (0 f64, 1 f32) | u8 rank | u64 dims | values
// All integers and values are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "cram/model.hpp"
#include "cram/optimizers.hpp"

namespace cram {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

struct Checkpoint {
  nn::ModelConfig model_config;
  ParamSet params;
  nn::BNState bn;
  optim::OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  std::uint64_t dataset_fingerprint = 0;
  std::string library_version = kLibraryVersion;
  /// Free-form records: dataset description, applied compression, BNT notes.
  nlohmann::json extra = nlohmann::json::object();

  nn::Model model() const { return {model_config, params, bn}; }
};

/// Same configs, metadata and bitwise-equal tensors.
bool operator==(const Checkpoint& a, const Checkpoint& b);

/// Writes atomically through a temporary file. With `as_f32` every tensor is
/// stored as 32-bit floats.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path, bool as_f32 = false);

/// Throws IoError if unreadable, FormatError (with byte offset) if malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& c, bool as_f32 = false);
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Writes `contents` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace cram
