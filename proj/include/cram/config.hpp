#pragma once

// Experiment configuration and the JSON forms of the library's config types.
// Parsing is strict: unknown keys and wrongly typed values are InputErrors that
// name the offending field.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cram/compression.hpp"
#include "cram/dataset.hpp"
#include "cram/model.hpp"
#include "cram/optimizers.hpp"

namespace cram::config {

using Json = nlohmann::json;

enum class ScheduleKind { constant, cosine, linear_warmup };
std::string_view schedule_name(ScheduleKind k);
ScheduleKind parse_schedule(std::string_view s);

struct Schedule {
  ScheduleKind kind = ScheduleKind::constant;
  /// Linear ramp length for linear_warmup, then cosine decay.
  std::size_t warmup_steps = 0;

  /// Learning rate at 0-based `step` of `total_steps`.
  double lr(double base, std::size_t step, std::size_t total_steps) const;
  bool operator==(const Schedule&) const = default;
};

struct DatasetSection {
  data::Provenance kind = data::Provenance::synthetic_two_spirals;
  std::size_t n = 1000;
  int num_classes = 2;
  double noise = 0.1;
  std::size_t dim = 2;
  double test_fraction = 0.2;
  /// Unset: the run's master seed.
  std::optional<std::uint64_t> seed;
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t max_train = 10000;
  bool operator==(const DatasetSection&) const = default;
};

struct TrainingSection {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  Schedule schedule;
  bool operator==(const TrainingSection&) const = default;
};

struct SweepSection {
  std::vector<compress::CompressionSpec> specs;
  std::size_t trials = 10;
  std::size_t calibration_size = 100;
  std::size_t bnt_batches = 100;
  std::size_t bnt_batch_size = 32;
  bool operator==(const SweepSection&) const = default;
};

struct OutputSection {
  std::string checkpoint;
  std::string log;
  std::string report;
  bool operator==(const OutputSection&) const = default;
};

struct RunConfig {
  DatasetSection dataset;
  nn::ModelConfig model;
  optim::OptimizerConfig optimizer;
  TrainingSection training;
  SweepSection sweep;
  OutputSection output;
  std::uint64_t seed = 0;

  /// Cross-section checks (input width, class count) on top of each section's own.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

Json to_json(const nn::ModelConfig& c);
Json to_json(const optim::OptimizerConfig& c);
Json to_json(const DatasetSection& c);
Json to_json(const TrainingSection& c);
Json to_json(const SweepSection& c);
Json to_json(const RunConfig& c);

nn::ModelConfig model_from_json(const Json& j, const std::string& where = "model");
optim::OptimizerConfig optimizer_from_json(const Json& j, const std::string& where = "optimizer");
DatasetSection dataset_from_json(const Json& j, const std::string& where = "dataset");
TrainingSection training_from_json(const Json& j, const std::string& where = "training");
SweepSection sweep_from_json(const Json& j, const std::string& where = "sweep");
RunConfig run_config_from_json(const Json& j);

/// Reads, parses and validates. Errors carry the path.
RunConfig load_run_config(const std::filesystem::path& path);

/// Builds the dataset a section describes.
data::Dataset make_dataset(const DatasetSection& section, std::uint64_t master_seed);

}  // namespace cram::config
