#pragma once

// Feed-forward classifier: dense layers, optional batch normalization on the
// hidden layers, relu, and a softmax cross-entropy loss.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cram/autodiff.hpp"
#include "cram/param_set.hpp"
#include "cram/tensor.hpp"

namespace cram::nn {

struct ModelConfig {
  std::vector<std::size_t> layer_widths;  // input, hidden..., output
  bool use_batchnorm = true;
  double label_smoothing = 0.0;
  double weight_decay = 0.0;
  /// Marks the first and last dense weights non-prunable.
  bool keep_first_last_dense = false;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  /// Throws ContractError describing the first violated constraint.
  void validate() const;
  std::size_t num_layers() const { return layer_widths.size() - 1; }
  bool operator==(const ModelConfig&) const = default;
};

enum class BNMode { train_tracking, frozen, tuning };
std::string_view bn_mode_name(BNMode m);
BNMode parse_bn_mode(std::string_view s);

struct BNLayerStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool operator==(const BNLayerStats&) const = default;
};

/// Running statistics of every batch-norm layer. In `frozen` mode no forward
/// pass modifies them; `tuning` tracks like `train_tracking` and marks BNT.
struct BNState {
  std::vector<BNLayerStats> layers;
  double momentum = 0.1;
  double eps = 1e-5;
  BNMode mode = BNMode::train_tracking;

  /// Running mean 0, running variance 1.
  void reset();
  bool operator==(const BNState&) const = default;
};

enum class Mode { train, eval };

struct Model {
  ModelConfig config;
  ParamSet params;
  BNState bn;
};

/// Glorot-uniform weights from `seed`, zero biases/shifts, unit BN scales.
Model init_model(const ModelConfig& config, std::uint64_t seed);
BNState init_bn(const ModelConfig& config);

/// Records the forward pass. `params` holds one tape variable per entry of
/// the model's ParamSet. In train mode the batch statistics normalize and, when
/// the BN mode tracks, update the running statistics. If `relu_margin` is set
/// it receives the smallest |input| over every relu evaluation.
ad::Var forward(ad::Tape& tape, const ModelConfig& config, const ParamSet& layout, std::span<const ad::Var> params,
                BNState& bn, const Tensor& batch, Mode mode, double* relu_margin = nullptr);

/// Mean label-smoothed cross-entropy plus (weight_decay / 2) * sum of squared weights.
ad::Var loss(ad::Tape& tape, ad::Var logits, std::span<const int> labels, double label_smoothing,
             const ParamSet& layout, std::span<const ad::Var> params, double weight_decay);

struct Batch {
  Tensor features;
  std::vector<int> labels;
};

struct LossAndGrad {
  double loss = 0.0;
  ParamSet grad;
};

/// One train-mode forward/backward pass on `params`. With `track_bn` false
/// the BN statistics are left untouched regardless of `bn.mode`.
LossAndGrad loss_and_grad(const ModelConfig& config, const ParamSet& params, BNState& bn, const Batch& batch,
                          bool track_bn);

/// Eval-mode logits; pure.
Tensor predict(const Model& model, const Tensor& features);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double evaluate(const Model& model, const Tensor& features, std::span<const int> labels);

}  // namespace cram::nn
