#pragma once

// SGD, SAM and the compression-aware family (CrAM, CrAM+, their multi-operator
// variants, C-SAM, Top-K+). Every algorithm ends in the same momentum/weight
// decay update, applied to the algorithm's final direction.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cram/compression.hpp"
#include "cram/param_set.hpp"
#include "cram/rng.hpp"

namespace cram::optim {

enum class Algorithm { sgd, sam, cram, cram_plus, c_sam, top_k_plus };

std::string_view algorithm_name(Algorithm a);
/// Throws InputError for unknown names.
Algorithm parse_algorithm(std::string_view name);

struct OptimizerConfig {
  Algorithm algorithm = Algorithm::sgd;
  double learning_rate = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double rho = 0.05;
  std::vector<compress::CompressionSpec> operator_set;
  /// Mask-project the gradient taken at the compressed point.
  bool sparse_perturbed_grad = false;
  /// Steps (of the same operator) a cached mask is reused; 1 recomputes every time.
  std::size_t mask_refresh_period = 1;
  /// Probability of a plain SGD step instead of the configured algorithm.
  double p_plain_step = 0.0;
  /// Normalize the CrAM ascent to length rho (off: fixed step rho * g).
  bool normalize_ascent = false;
  std::uint64_t seed = 0;

  /// Throws ContractError for out-of-range fields or a missing operator set.
  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

/// Dense passes track batch-norm statistics; perturbed passes must not.
enum class PassKind { dense, perturbed };

struct Evaluation {
  double loss = 0.0;
  ParamSet grad;
};

/// Loss and gradient at the given parameters for the current mini-batch.
using Objective = std::function<Evaluation(const ParamSet&, PassKind)>;

struct MaskDiffEntry {
  std::size_t step = 0;
  std::string spec;
  double fraction = 0.0;
};

struct CachedMask {
  compress::Mask mask;
  std::size_t uses = 0;
  std::size_t created_step = 0;
};

struct OptimizerState {
  explicit OptimizerState(std::uint64_t seed = 0) : rng(seed) {}

  ParamSet momentum_buffers;  // allocated on the first update
  std::size_t step = 0;
  std::map<std::string, CachedMask> cached_masks;
  Rng rng;
  std::vector<MaskDiffEntry> mask_diff_log;
  std::size_t passes = 0;
  std::size_t mask_computations = 0;
  std::size_t aborted_steps = 0;
  std::size_t plain_steps = 0;
  std::vector<std::string> events;
};

enum class StepKind { plain, compression_aware, aborted };

struct StepResult {
  StepKind kind = StepKind::plain;
  double loss = 0.0;
  std::optional<compress::CompressionSpec> spec;
};

/// buffer <- momentum * buffer + direction + weight_decay * w;  w <- w - lr * buffer.
/// Throws NumericError and leaves params and state untouched on non-finite values.
void sgd_step(ParamSet& params, OptimizerState& state, const ParamSet& direction, const OptimizerConfig& cfg,
              double lr);

/// One dense pass followed by sgd_step.
StepResult plain_step(const Objective& objective, ParamSet& params, OptimizerState& state,
                      const OptimizerConfig& cfg, double lr);
StepResult sam_step(const Objective& objective, ParamSet& params, OptimizerState& state, const OptimizerConfig& cfg,
                    double lr);
StepResult cram_step(const Objective& objective, ParamSet& params, OptimizerState& state, const OptimizerConfig& cfg,
                     double lr);
StepResult cram_plus_step(const Objective& objective, ParamSet& params, OptimizerState& state,
                          const OptimizerConfig& cfg, double lr);
StepResult c_sam_step(const Objective& objective, ParamSet& params, OptimizerState& state,
                      const OptimizerConfig& cfg, double lr);
StepResult top_k_plus_step(const Objective& objective, ParamSet& params, OptimizerState& state,
                           const OptimizerConfig& cfg, double lr);

/// With probability p_plain_step a plain step, otherwise the configured algorithm.
StepResult mixed_step(const Objective& objective, ParamSet& params, OptimizerState& state,
                      const OptimizerConfig& cfg, double lr);

/// Returns the cached mask for `spec` while it has served fewer than `period`
/// requests; otherwise recomputes from `candidate`, logs the fraction of
/// changed entries against the previous mask, and caches the new one.
compress::Mask resolve_mask(OptimizerState& state, const compress::CompressionSpec& spec, const ParamSet& candidate,
                            std::size_t period);

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  StepResult step(const Objective& objective, ParamSet& params, double lr) {
    return mixed_step(objective, params, state_, cfg_, lr);
  }
  StepResult step(const Objective& objective, ParamSet& params) { return step(objective, params, cfg_.learning_rate); }

  const OptimizerConfig& config() const { return cfg_; }
  const OptimizerState& state() const { return state_; }
  OptimizerState& state() { return state_; }

 private:
  OptimizerConfig cfg_;
  OptimizerState state_;
};

}  // namespace cram::optim
