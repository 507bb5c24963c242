#pragma once

// Experiment engine: training loop, one-shot compression, batch-norm tuning and
// sparsity sweeps with repeated calibration.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cram/checkpoint.hpp"
#include "cram/compression.hpp"
#include "cram/config.hpp"
#include "cram/dataset.hpp"
#include "cram/errors.hpp"
#include "cram/optimizers.hpp"

namespace cram::harness {

using Json = nlohmann::json;

/// Sub-streams derived from a master seed with Rng::derive.
enum Stream : std::uint64_t { kInit = 0, kShuffle = 1, kOptimizer = 2, kCalibration = 3, kBntOrder = 4 };

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  config::Schedule schedule;
  /// Master seed: initialization, data order and the optimizer's stream.
  std::uint64_t seed = 0;
  /// Evaluate train/test accuracy after every epoch (otherwise only after the last).
  bool evaluate_every_epoch = true;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t steps = 0;
  std::size_t aborted_steps = 0;
  std::size_t plain_steps = 0;
  double final_lr = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::vector<optim::MaskDiffEntry> mask_diff;
  std::size_t steps = 0;
  std::size_t passes = 0;
  std::size_t mask_computations = 0;
  std::vector<std::string> events;
};

Json to_json(const TrainingLog& log);

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, TrainingLog log) : Error(what), log_(std::move(log)) {}
  const TrainingLog& log() const { return log_; }

 private:
  TrainingLog log_;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainingLog log;
};

/// Mini-batch training on the train split. Batch-norm statistics follow the
/// dense passes only. Throws TrainingDiverged when more than half of an
/// epoch's steps were aborted on non-finite values.
TrainResult train(const nn::ModelConfig& model_config, const optim::OptimizerConfig& optimizer_config,
                  const data::Dataset& dataset, const TrainOptions& options);

/// Compresses the parameters once; BN statistics are copied unchanged.
Checkpoint one_shot_compress(const Checkpoint& checkpoint, const compress::CompressionSpec& spec);

/// Resets the BN running statistics and re-estimates them from `num_batches`
/// train-mode forward passes over batches drawn from `calibration` rows.
/// Trainable parameters are untouched. Without BN layers this is a no-op that
/// records a warning in `extra`.
Checkpoint bnt(const Checkpoint& checkpoint, const data::Dataset& dataset, std::span<const std::size_t> calibration,
               std::size_t num_batches, std::size_t batch_size, std::uint64_t seed);

/// Test-split accuracy (train split when there is no test split).
double accuracy(const Checkpoint& checkpoint, const data::Dataset& dataset);

struct SweepOptions {
  std::size_t trials = 10;
  std::size_t calibration_size = 100;
  std::size_t bnt_batches = 100;
  std::size_t bnt_batch_size = 32;
  std::uint64_t seed = 0;
};

struct SweepPoint {
  compress::CompressionSpec spec;
  double sparsity = 0.0;           // nominal
  double achieved_sparsity = 0.0;  // over prunable entries
  double pre_bnt = 0.0;
  double post_bnt_mean = 0.0;
  double post_bnt_std = 0.0;  // population standard deviation over trials
  std::vector<double> trials;
};

struct MaskStability {
  std::string spec;
  std::size_t entries = 0;
  double mean = 0.0;
  double max = 0.0;
};

inline constexpr int kReportSchemaVersion = 1;

struct SweepReport {
  double dense_accuracy = 0.0;
  std::vector<SweepPoint> points;
  std::vector<MaskStability> mask_stability;
  Json metadata = Json::object();
};

Json to_json(const SweepReport& report);
Json to_json(std::span<const MaskStability> stability);

/// For each spec: compress, measure, then `trials` independent BNT runs on
/// freshly sampled class-balanced calibration sets. Trials run concurrently;
/// results are merged in (spec, trial) order so the report is deterministic.
SweepReport sweep(const Checkpoint& checkpoint, const data::Dataset& dataset,
                  std::span<const compress::CompressionSpec> specs, const SweepOptions& options);

/// Mean and maximum consecutive mask difference per spec, in first-seen order.
std::vector<MaskStability> mask_stability_report(std::span<const optim::MaskDiffEntry> log);

}  // namespace cram::harness
