#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cram/autodiff.hpp"
#include "cram/param_set.hpp"

namespace cram::ad {

/// Builds a scalar loss from one tape variable per ParamSet entry (same order).
using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  /// Coordinates where the one-sided differences disagree at two step sizes,
  /// i.e. the function is not differentiable there. Excluded from pass/fail.
  std::vector<std::size_t> kinks;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t flagged = 0;
  double tolerance = 0.0;
  bool passed = false;
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

/// Value of the graph on a frozen tape.
double evaluate(const GraphFn& f, const ParamSet& params);
/// Autodiff gradient, returned with the layout of `params`.
ParamSet gradient(const GraphFn& f, const ParamSet& params);

/// Compares autodiff against central differences (f(w+eps e_i) - f(w-eps e_i)) / 2eps
/// coordinate by coordinate. Throws DeterminismError when two evaluations at
/// the same point differ and ContractError when epsilon <= 0.
GradCheckReport grad_check(const GraphFn& f, const ParamSet& params, double epsilon, double tolerance);

}  // namespace cram::ad
