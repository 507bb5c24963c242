#pragma once

// Define-by-run reverse-mode differentiation. A Tape owns every value it
// produces; `Var` is a handle into it. Build a fresh tape per step.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cram/tensor.hpp"

namespace cram::ad {

enum class Primitive {
  leaf,
  matmul,
  add,
  mul,
  relu,
  sub,
  scale,
  sum,
  mean,
  variance,
  sqrt,
  div,
  log_softmax,
  gather,
};

std::string_view primitive_name(Primitive p);

/// Reduction axis for mean/variance: everything (scalar result) or over the
/// rows of a matrix (one value per column).
enum class Axis { all, rows };

struct OpArgs {
  double factor = 1.0;        // scale
  Axis axis = Axis::all;      // mean, variance
  bool transpose_b = false;   // matmul: A * B^T
  std::vector<int> indices;   // gather: one column index per row
};

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  /// A frozen tape evaluates values but records no backward rules.
  explicit Tape(bool frozen = false) : frozen_(frozen) {}

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Applies a primitive and records it. Shape rules:
  ///  matmul: [m,k] x [k,n] (or [n,k] with transpose_b) -> [m,n]
  ///  add/sub/mul/div: rhs has lhs's shape, is a row vector [cols] broadcast over rows, or is a scalar
  ///  sum/mean/variance: Axis::all -> scalar; Axis::rows on [r,c] -> [c]
  ///  log_softmax: row-wise on [r,c]; gather: [r,c] with r indices -> [r]
  Var apply(Primitive op, std::span<const Var> inputs, const OpArgs& args = {});

  Var matmul(Var a, Var b, bool transpose_b = false);
  Var add(Var a, Var b) { return binary(Primitive::add, a, b); }
  Var sub(Var a, Var b) { return binary(Primitive::sub, a, b); }
  Var mul(Var a, Var b) { return binary(Primitive::mul, a, b); }
  Var div(Var a, Var b) { return binary(Primitive::div, a, b); }
  Var relu(Var a) { return unary(Primitive::relu, a); }
  Var sqrt(Var a) { return unary(Primitive::sqrt, a); }
  Var scale(Var a, double factor);
  Var sum(Var a) { return unary(Primitive::sum, a); }
  Var mean(Var a, Axis axis = Axis::all);
  Var variance(Var a, Axis axis = Axis::all);
  Var log_softmax(Var a) { return unary(Primitive::log_softmax, a); }
  Var gather(Var a, std::vector<int> indices);

  /// Fills gradients of every grad-requiring node reachable from `loss`.
  /// Gradients accumulate, so call once per tape.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward pass; empty when the node was not reached
  /// or does not require gradients.
  std::optional<std::span<const double>> grad(Var v) const;
  /// Copy of the value with its grad slot populated when available.
  Tensor tensor_with_grad(Var v) const;

  bool frozen() const { return frozen_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Primitive op = Primitive::leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    OpArgs args;
  };

  Var binary(Primitive op, Var a, Var b);
  Var unary(Primitive op, Var a);
  const Node& node(Var v) const;
  std::vector<double>& grad_slot(std::size_t id);
  void backward_node(const Node& n, std::span<const double> upstream);

  std::vector<Node> nodes_;
  bool frozen_;
};

namespace testing {
/// Scales the backward rule of one primitive by 1.5 to build negative controls
/// for the gradient checker. Pass std::nullopt to restore correct rules.
void inject_backward_fault(std::optional<Primitive> p);
}  // namespace testing

}  // namespace cram::ad
