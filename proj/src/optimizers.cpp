#include "cram/optimizers.hpp"

#include <cmath>

#include "cram/errors.hpp"

namespace cram::optim {
namespace {

using compress::CompressionSpec;
using compress::Mask;

Evaluation run_pass(const Objective& objective, const ParamSet& params, PassKind kind, OptimizerState& state) {
  ++state.passes;
  Evaluation e = objective(params, kind);
  require_same_layout(params, e.grad, "objective gradient");
  if (!std::isfinite(e.loss) || !all_finite(e.grad)) {
    throw NumericError(std::string(kind == PassKind::dense ? "dense" : "perturbed") +
                       " pass produced a non-finite loss or gradient");
  }
  return e;
}

// w + scale * g over every entry.
ParamSet ascend(const ParamSet& w, const ParamSet& g, double scale) {
  ParamSet out = w;
  axpy(scale, g, out);
  if (!all_finite(out)) throw NumericError("perturbed point is not finite");
  return out;
}

// Runs `body`, turning numeric failures into an aborted step that leaves the
// parameters untouched.
template <class Body>
StepResult guarded(OptimizerState& state, Body&& body) {
  try {
    StepResult r = body();
    ++state.step;
    return r;
  } catch (const NumericError& e) {
    ++state.aborted_steps;
    ++state.step;
    state.events.push_back("step " + std::to_string(state.step - 1) + " aborted: " + e.what());
    return StepResult{StepKind::aborted, std::nan(""), std::nullopt};
  }
}

struct Compression {
  ParamSet point;
  std::optional<Mask> mask;
};

// C(x): for mask kinds the (possibly cached) mask is returned alongside.
Compression compress_point(OptimizerState& state, const CompressionSpec& spec, const ParamSet& x, bool use_cache,
                           std::size_t period) {
  if (!spec.is_mask_kind()) return {compress::quantize_symmetric(x, spec.bits, spec.respect_prunable_flags), {}};
  Mask mask = use_cache ? resolve_mask(state, spec, x, period) : compress::compute_mask(x, spec);
  return {compress::apply_mask(x, mask), std::move(mask)};
}

StepResult cram_family(const Objective& objective, ParamSet& params, OptimizerState& state,
                       const OptimizerConfig& cfg, double lr, bool plus) {
  const CompressionSpec spec = compress::sample_operator(cfg.operator_set, state.rng);
  return guarded(state, [&] {
    const Evaluation dense = run_pass(objective, params, PassKind::dense, state);
    double step = cfg.rho;
    if (cfg.normalize_ascent) {
      const double norm = l2_norm(dense.grad);
      step = norm > 0.0 ? cfg.rho / norm : 0.0;
    }
    const ParamSet phi = ascend(params, dense.grad, step);
    const Compression c = compress_point(state, spec, phi, true, cfg.mask_refresh_period);
    Evaluation perturbed = run_pass(objective, c.point, PassKind::perturbed, state);
    if (cfg.sparse_perturbed_grad && c.mask) compress::apply_mask_in_place(perturbed.grad, *c.mask);
    if (plus) axpy(1.0, dense.grad, perturbed.grad);
    sgd_step(params, state, perturbed.grad, cfg, lr);
    return StepResult{StepKind::compression_aware, dense.loss, spec};
  });
}

}  // namespace

std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::sgd: return "sgd";
    case Algorithm::sam: return "sam";
    case Algorithm::cram: return "cram";
    case Algorithm::cram_plus: return "cram_plus";
    case Algorithm::c_sam: return "c_sam";
    case Algorithm::top_k_plus: return "top_k_plus";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
  for (Algorithm a : {Algorithm::sgd, Algorithm::sam, Algorithm::cram, Algorithm::cram_plus, Algorithm::c_sam,
                      Algorithm::top_k_plus}) {
    if (algorithm_name(a) == name) return a;
  }
  throw InputError("unknown optimizer algorithm '" + std::string(name) + "'");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be non-negative");
  if (!(rho >= 0.0)) throw ContractError("rho must be non-negative");
  if (mask_refresh_period < 1) throw ContractError("mask_refresh_period must be at least 1");
  if (!(p_plain_step >= 0.0 && p_plain_step <= 1.0)) throw ContractError("p_plain_step must be in [0,1]");
  const bool compressing = algorithm == Algorithm::cram || algorithm == Algorithm::cram_plus ||
                           algorithm == Algorithm::c_sam || algorithm == Algorithm::top_k_plus;
  if (compressing && operator_set.empty()) {
    throw ContractError(std::string(algorithm_name(algorithm)) + " needs a non-empty operator set");
  }
  for (const auto& spec : operator_set) {
    spec.validate();
    if (algorithm == Algorithm::top_k_plus && !spec.is_mask_kind()) {
      throw ContractError("top_k_plus needs mask-inducing operators, got " + spec.to_string());
    }
  }
}

void sgd_step(ParamSet& params, OptimizerState& state, const ParamSet& direction, const OptimizerConfig& cfg,
              double lr) {
  require_same_layout(params, direction, "sgd_step");
  if (!all_finite(direction)) throw NumericError("sgd_step: non-finite update direction");
  ParamSet buffer = state.momentum_buffers.empty() ? params.zeros_like() : state.momentum_buffers;
  ParamSet next = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& b = buffer[i].tensor.data;
    auto& w = next[i].tensor.data;
    const auto& d = direction[i].tensor.data;
    for (std::size_t j = 0; j < w.size(); ++j) {
      b[j] = cfg.momentum * b[j] + d[j] + cfg.weight_decay * w[j];
      w[j] -= lr * b[j];
    }
  }
  if (!all_finite(buffer) || !all_finite(next)) throw NumericError("sgd_step: update produced non-finite values");
  state.momentum_buffers = std::move(buffer);
  params = std::move(next);
}

StepResult plain_step(const Objective& objective, ParamSet& params, OptimizerState& state,
                      const OptimizerConfig& cfg, double lr) {
  return guarded(state, [&] {
    const Evaluation dense = run_pass(objective, params, PassKind::dense, state);
    sgd_step(params, state, dense.grad, cfg, lr);
    ++state.plain_steps;
    return StepResult{StepKind::plain, dense.loss, std::nullopt};
  });
}

StepResult sam_step(const Objective& objective, ParamSet& params, OptimizerState& state, const OptimizerConfig& cfg,
                    double lr) {
  return guarded(state, [&] {
    const Evaluation dense = run_pass(objective, params, PassKind::dense, state);
    const double norm = l2_norm(dense.grad);
    if (norm == 0.0) {
      state.events.push_back("step " + std::to_string(state.step) + ": zero gradient norm, plain step taken");
      sgd_step(params, state, dense.grad, cfg, lr);
      return StepResult{StepKind::plain, dense.loss, std::nullopt};
    }
    const ParamSet perturbed_point = ascend(params, dense.grad, cfg.rho / norm);
    const Evaluation perturbed = run_pass(objective, perturbed_point, PassKind::perturbed, state);
    sgd_step(params, state, perturbed.grad, cfg, lr);
    return StepResult{StepKind::compression_aware, dense.loss, std::nullopt};
  });
}

StepResult cram_step(const Objective& objective, ParamSet& params, OptimizerState& state, const OptimizerConfig& cfg,
                     double lr) {
  return cram_family(objective, params, state, cfg, lr, false);
}

StepResult cram_plus_step(const Objective& objective, ParamSet& params, OptimizerState& state,
                          const OptimizerConfig& cfg, double lr) {
  return cram_family(objective, params, state, cfg, lr, true);
}

StepResult c_sam_step(const Objective& objective, ParamSet& params, OptimizerState& state,
                      const OptimizerConfig& cfg, double lr) {
  const CompressionSpec spec = compress::sample_operator(cfg.operator_set, state.rng);
  return guarded(state, [&] {
    const Compression at_w = compress_point(state, spec, params, false, 1);
    Evaluation compressed = run_pass(objective, at_w.point, PassKind::dense, state);
    if (cfg.sparse_perturbed_grad && at_w.mask) compress::apply_mask_in_place(compressed.grad, *at_w.mask);
    const double norm = l2_norm(compressed.grad);
    if (norm == 0.0) {
      state.events.push_back("step " + std::to_string(state.step) + ": zero compressed gradient norm, plain step taken");
      sgd_step(params, state, compressed.grad, cfg, lr);
      return StepResult{StepKind::plain, compressed.loss, spec};
    }
    const ParamSet phi = ascend(params, compressed.grad, cfg.rho / norm);
    const Compression at_phi = compress_point(state, spec, phi, false, 1);
    Evaluation perturbed = run_pass(objective, at_phi.point, PassKind::perturbed, state);
    if (cfg.sparse_perturbed_grad && at_phi.mask) compress::apply_mask_in_place(perturbed.grad, *at_phi.mask);
    sgd_step(params, state, perturbed.grad, cfg, lr);
    return StepResult{StepKind::compression_aware, compressed.loss, spec};
  });
}

StepResult top_k_plus_step(const Objective& objective, ParamSet& params, OptimizerState& state,
                           const OptimizerConfig& cfg, double lr) {
  const CompressionSpec spec = compress::sample_operator(cfg.operator_set, state.rng);
  if (!spec.is_mask_kind()) throw ContractError("top_k_plus_step needs a mask-inducing operator");
  return guarded(state, [&] {
    const Evaluation dense = run_pass(objective, params, PassKind::dense, state);
    const Mask mask = compress::compute_mask(params, spec);
    Evaluation compressed = run_pass(objective, compress::apply_mask(params, mask), PassKind::perturbed, state);
    compress::apply_mask_in_place(compressed.grad, mask);
    axpy(1.0, dense.grad, compressed.grad);
    sgd_step(params, state, compressed.grad, cfg, lr);
    return StepResult{StepKind::compression_aware, dense.loss, spec};
  });
}

StepResult mixed_step(const Objective& objective, ParamSet& params, OptimizerState& state,
                      const OptimizerConfig& cfg, double lr) {
  if (cfg.p_plain_step > 0.0 && state.rng.bernoulli(cfg.p_plain_step)) {
    return plain_step(objective, params, state, cfg, lr);
  }
  switch (cfg.algorithm) {
    case Algorithm::sgd: return plain_step(objective, params, state, cfg, lr);
    case Algorithm::sam: return sam_step(objective, params, state, cfg, lr);
    case Algorithm::cram: return cram_step(objective, params, state, cfg, lr);
    case Algorithm::cram_plus: return cram_plus_step(objective, params, state, cfg, lr);
    case Algorithm::c_sam: return c_sam_step(objective, params, state, cfg, lr);
    case Algorithm::top_k_plus: return top_k_plus_step(objective, params, state, cfg, lr);
  }
  throw ContractError("unhandled optimizer algorithm");
}

compress::Mask resolve_mask(OptimizerState& state, const CompressionSpec& spec, const ParamSet& candidate,
                            std::size_t period) {
  if (!spec.is_mask_kind()) throw ContractError("resolve_mask: " + spec.to_string() + " does not induce a mask");
  const std::string key = spec.to_string() + (spec.respect_prunable_flags ? "" : "+all");
  auto it = state.cached_masks.find(key);
  if (it != state.cached_masks.end() && it->second.uses < period) {
    ++it->second.uses;
    return it->second.mask;
  }
  Mask fresh = compress::compute_mask(candidate, spec);
  ++state.mask_computations;
  if (it != state.cached_masks.end()) {
    state.mask_diff_log.push_back({state.step, key, compress::mask_difference(it->second.mask, fresh)});
    it->second = CachedMask{fresh, 1, state.step};
  } else {
    state.cached_masks.emplace(key, CachedMask{fresh, 1, state.step});
  }
  return fresh;
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)), state_(cfg_.seed) { cfg_.validate(); }

}  // namespace cram::optim
