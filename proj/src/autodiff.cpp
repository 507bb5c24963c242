#include "cram/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "cram/errors.hpp"
#include "cram/kernels.hpp"

namespace cram::ad {
namespace {

std::atomic<int> g_faulty_primitive{-1};

enum class Broadcast { same, row, scalar };

Broadcast classify(Primitive op, const Tensor& a, const Tensor& b) {
  if (a.shape == b.shape) return Broadcast::same;
  if (b.size() == 1 && b.rank() <= 1) return Broadcast::scalar;
  if (a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.shape[1]) return Broadcast::row;
  throw ShapeError(std::string(primitive_name(op)) + ": cannot combine " + shape_string(a.shape) + " with " +
                   shape_string(b.shape));
}

inline std::size_t rhs_index(Broadcast bc, std::size_t i, std::size_t cols) {
  switch (bc) {
    case Broadcast::same: return i;
    case Broadcast::row: return i % cols;
    case Broadcast::scalar: return 0;
  }
  return i;
}

void require_finite(Primitive op, const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw NumericError(std::string(primitive_name(op)) + ": non-finite " + what + " of shape " +
                       shape_string(t.shape));
  }
}

void require_matrix(Primitive op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(primitive_name(op)) + ": expected a matrix, got " + shape_string(t.shape));
  }
}

}  // namespace

std::string_view primitive_name(Primitive p) {
  switch (p) {
    case Primitive::leaf: return "leaf";
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::mul: return "mul";
    case Primitive::relu: return "relu";
    case Primitive::sub: return "sub";
    case Primitive::scale: return "scale";
    case Primitive::sum: return "sum";
    case Primitive::mean: return "mean";
    case Primitive::variance: return "variance";
    case Primitive::sqrt: return "sqrt";
    case Primitive::div: return "div";
    case Primitive::log_softmax: return "log_softmax";
    case Primitive::gather: return "gather";
  }
  return "unknown";
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite value of shape " + shape_string(value.shape));
  value.grad.reset();
  Node n;
  n.op = Primitive::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad && !frozen_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::matmul(Var a, Var b, bool transpose_b) {
  OpArgs args;
  args.transpose_b = transpose_b;
  const Var in[] = {a, b};
  return apply(Primitive::matmul, in, args);
}

Var Tape::scale(Var a, double factor) {
  OpArgs args;
  args.factor = factor;
  const Var in[] = {a};
  return apply(Primitive::scale, in, args);
}

Var Tape::mean(Var a, Axis axis) {
  OpArgs args;
  args.axis = axis;
  const Var in[] = {a};
  return apply(Primitive::mean, in, args);
}

Var Tape::variance(Var a, Axis axis) {
  OpArgs args;
  args.axis = axis;
  const Var in[] = {a};
  return apply(Primitive::variance, in, args);
}

Var Tape::gather(Var a, std::vector<int> indices) {
  OpArgs args;
  args.indices = std::move(indices);
  const Var in[] = {a};
  return apply(Primitive::gather, in, args);
}

Var Tape::binary(Primitive op, Var a, Var b) {
  const Var in[] = {a, b};
  return apply(op, in);
}

Var Tape::unary(Primitive op, Var a) {
  const Var in[] = {a};
  return apply(op, in);
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

std::optional<std::span<const double>> Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.requires_grad || n.grad.empty()) return std::nullopt;
  return std::span<const double>(n.grad);
}

Tensor Tape::tensor_with_grad(Var v) const {
  Tensor t = node(v).value;
  if (auto g = grad(v)) t.grad = std::vector<double>(g->begin(), g->end());
  return t;
}

std::vector<double>& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Var Tape::apply(Primitive op, std::span<const Var> inputs, const OpArgs& args) {
  const std::size_t arity = (op == Primitive::matmul || op == Primitive::add || op == Primitive::sub ||
                             op == Primitive::mul || op == Primitive::div)
                                ? 2
                                : 1;
  if (op == Primitive::leaf) throw ContractError("use Tape::leaf to create leaves");
  if (inputs.size() != arity) {
    throw ContractError(std::string(primitive_name(op)) + ": expected " + std::to_string(arity) + " inputs");
  }
  for (Var v : inputs) require_finite(op, node(v).value, "input");

  const Tensor& a = node(inputs[0]).value;
  Tensor out;
  switch (op) {
    case Primitive::matmul: {
      const Tensor& b = node(inputs[1]).value;
      require_matrix(op, a);
      require_matrix(op, b);
      const std::size_t m = a.shape[0], k = a.shape[1];
      const std::size_t bk = args.transpose_b ? b.shape[1] : b.shape[0];
      const std::size_t n = args.transpose_b ? b.shape[0] : b.shape[1];
      if (bk != k) {
        throw ShapeError("matmul: inner dimensions differ for " + shape_string(a.shape) + " and " +
                         shape_string(b.shape) + (args.transpose_b ? " (transposed)" : ""));
      }
      out = Tensor::zeros({m, n});
      kernels::gemm({m, n, k, kernels::Trans::no, args.transpose_b ? kernels::Trans::yes : kernels::Trans::no},
                    a.data, b.data, out.data);
      break;
    }
    case Primitive::add:
    case Primitive::sub:
    case Primitive::mul:
    case Primitive::div: {
      const Tensor& b = node(inputs[1]).value;
      const Broadcast bc = classify(op, a, b);
      out = Tensor::zeros(a.shape);
      const std::size_t cols = a.cols();
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.data[i];
        const double y = b.data[rhs_index(bc, i, cols)];
        switch (op) {
          case Primitive::add: out.data[i] = x + y; break;
          case Primitive::sub: out.data[i] = x - y; break;
          case Primitive::mul: out.data[i] = x * y; break;
          default: out.data[i] = x / y; break;
        }
      }
      break;
    }
    case Primitive::relu:
      out = a;
      for (double& v : out.data) v = v > 0.0 ? v : 0.0;
      break;
    case Primitive::scale:
      out = a;
      for (double& v : out.data) v *= args.factor;
      break;
    case Primitive::sqrt:
      out = a;
      for (double& v : out.data) {
        if (v < 0.0) throw NumericError("sqrt: negative input " + std::to_string(v));
        v = std::sqrt(v);
      }
      break;
    case Primitive::sum: {
      double s = 0.0;
      for (double v : a.data) s += v;
      out = Tensor::scalar(s);
      break;
    }
    case Primitive::mean:
    case Primitive::variance: {
      if (args.axis == Axis::all) {
        double s = 0.0;
        for (double v : a.data) s += v;
        const double mu = s / static_cast<double>(a.size());
        if (op == Primitive::mean) {
          out = Tensor::scalar(mu);
        } else {
          double sq = 0.0;
          for (double v : a.data) sq += (v - mu) * (v - mu);
          out = Tensor::scalar(sq / static_cast<double>(a.size()));
        }
      } else {
        require_matrix(op, a);
        const std::size_t r = a.shape[0], c = a.shape[1];
        std::vector<double> mu(c), var(c);
        kernels::column_stats(r, c, a.data, {mu, var});
        out = Tensor::vector(op == Primitive::mean ? std::move(mu) : std::move(var));
      }
      break;
    }
    case Primitive::log_softmax: {
      require_matrix(op, a);
      const std::size_t r = a.shape[0], c = a.shape[1];
      out = Tensor::zeros(a.shape);
      for (std::size_t i = 0; i < r; ++i) {
        const double* row = a.data.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = row[j] - lse;
      }
      break;
    }
    case Primitive::gather: {
      require_matrix(op, a);
      const std::size_t r = a.shape[0], c = a.shape[1];
      if (args.indices.size() != r) {
        throw ShapeError("gather: " + std::to_string(args.indices.size()) + " indices for " + shape_string(a.shape));
      }
      std::vector<double> picked(r);
      for (std::size_t i = 0; i < r; ++i) {
        const int j = args.indices[i];
        if (j < 0 || static_cast<std::size_t>(j) >= c) {
          throw InputError("gather: index " + std::to_string(j) + " out of range for " + std::to_string(c) +
                           " columns");
        }
        picked[i] = a.data[i * c + static_cast<std::size_t>(j)];
      }
      out = Tensor::vector(std::move(picked));
      break;
    }
    case Primitive::leaf: break;
  }
  require_finite(op, out, "output");

  Node n;
  n.op = op;
  n.value = std::move(out);
  if (!frozen_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](Var v) { return node(v).requires_grad; });
    if (n.requires_grad) {
      n.args = args;
      n.inputs.reserve(inputs.size());
      for (Var v : inputs) n.inputs.push_back(v.id);
    }
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (frozen_) throw ContractError("backward on a frozen tape");
  const Node& root = node(loss);
  if (!root.value.is_scalar()) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(root.value.shape));
  }
  if (!root.requires_grad) return;
  grad_slot(loss.id)[0] += 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.op == Primitive::leaf || !n.requires_grad || n.grad.empty()) continue;
    if (g_faulty_primitive.load() == static_cast<int>(n.op)) {
      std::vector<double> scaled = n.grad;
      for (double& v : scaled) v *= 1.5;
      backward_node(n, scaled);
    } else {
      backward_node(n, n.grad);
    }
  }
}

void Tape::backward_node(const Node& n, std::span<const double> d) {
  auto wants = [&](std::size_t slot) { return nodes_[n.inputs[slot]].requires_grad; };
  const Tensor& a = nodes_[n.inputs[0]].value;

  switch (n.op) {
    case Primitive::matmul: {
      const Tensor& b = nodes_[n.inputs[1]].value;
      const std::size_t m = a.shape[0], k = a.shape[1];
      const std::size_t cols = n.value.shape[1];
      using kernels::Trans;
      if (wants(0)) {
        std::vector<double> da(m * k);
        // dA = dC * op(B)^T
        kernels::gemm({m, k, cols, Trans::no, n.args.transpose_b ? Trans::no : Trans::yes}, d, b.data, da);
        auto& ga = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < da.size(); ++i) ga[i] += da[i];
      }
      if (wants(1)) {
        std::vector<double> db(b.size());
        if (n.args.transpose_b) {
          kernels::gemm({cols, k, m, Trans::yes, Trans::no}, d, a.data, db);  // dB = dC^T * A
        } else {
          kernels::gemm({k, cols, m, Trans::yes, Trans::no}, a.data, d, db);  // dB = A^T * dC
        }
        auto& gb = grad_slot(n.inputs[1]);
        for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
      }
      break;
    }
    case Primitive::add:
    case Primitive::sub:
    case Primitive::mul:
    case Primitive::div: {
      const Tensor& b = nodes_[n.inputs[1]].value;
      const Broadcast bc = classify(n.op, a, b);
      const std::size_t cols = a.cols();
      if (wants(0)) {
        auto& ga = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double y = b.data[rhs_index(bc, i, cols)];
          switch (n.op) {
            case Primitive::mul: ga[i] += d[i] * y; break;
            case Primitive::div: ga[i] += d[i] / y; break;
            default: ga[i] += d[i]; break;
          }
        }
      }
      if (wants(1)) {
        auto& gb = grad_slot(n.inputs[1]);
        for (std::size_t i = 0; i < a.size(); ++i) {
          const std::size_t j = rhs_index(bc, i, cols);
          const double y = b.data[j];
          switch (n.op) {
            case Primitive::add: gb[j] += d[i]; break;
            case Primitive::sub: gb[j] -= d[i]; break;
            case Primitive::mul: gb[j] += d[i] * a.data[i]; break;
            default: gb[j] -= d[i] * a.data[i] / (y * y); break;
          }
        }
      }
      break;
    }
    case Primitive::relu: {
      auto& ga = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] += a.data[i] > 0.0 ? d[i] : 0.0;
      break;
    }
    case Primitive::scale: {
      auto& ga = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] += d[i] * n.args.factor;
      break;
    }
    case Primitive::sqrt: {
      auto& ga = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] += d[i] / (2.0 * n.value.data[i]);
      break;
    }
    case Primitive::sum: {
      auto& ga = grad_slot(n.inputs[0]);
      for (double& g : ga) g += d[0];
      break;
    }
    case Primitive::mean: {
      auto& ga = grad_slot(n.inputs[0]);
      if (n.args.axis == Axis::all) {
        const double w = d[0] / static_cast<double>(a.size());
        for (double& g : ga) g += w;
      } else {
        const std::size_t r = a.shape[0], c = a.shape[1];
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += d[j] / static_cast<double>(r);
        }
      }
      break;
    }
    case Primitive::variance: {
      auto& ga = grad_slot(n.inputs[0]);
      if (n.args.axis == Axis::all) {
        double s = 0.0;
        for (double v : a.data) s += v;
        const double count = static_cast<double>(a.size());
        const double mu = s / count;
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += d[0] * 2.0 * (a.data[i] - mu) / count;
      } else {
        const std::size_t r = a.shape[0], c = a.shape[1];
        std::vector<double> mu(c), var(c);
        kernels::column_stats(r, c, a.data, {mu, var});
        const double count = static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += d[j] * 2.0 * (a.data[i * c + j] - mu[j]) / count;
        }
      }
      break;
    }
    case Primitive::log_softmax: {
      auto& ga = grad_slot(n.inputs[0]);
      const std::size_t r = a.shape[0], c = a.shape[1];
      for (std::size_t i = 0; i < r; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += d[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          ga[i * c + j] += d[i * c + j] - std::exp(n.value.data[i * c + j]) * total;
        }
      }
      break;
    }
    case Primitive::gather: {
      auto& ga = grad_slot(n.inputs[0]);
      const std::size_t c = a.shape[1];
      for (std::size_t i = 0; i < n.args.indices.size(); ++i) {
        ga[i * c + static_cast<std::size_t>(n.args.indices[i])] += d[i];
      }
      break;
    }
    case Primitive::leaf: break;
  }
}

namespace testing {
void inject_backward_fault(std::optional<Primitive> p) {
  g_faulty_primitive.store(p ? static_cast<int>(*p) : -1);
}
}  // namespace testing

}  // namespace cram::ad
