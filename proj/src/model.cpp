#include "cram/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cram/errors.hpp"
#include "cram/rng.hpp"

namespace cram::nn {
namespace {

std::string layer_name(const char* prefix, std::size_t l, const char* suffix) {
  return std::string(prefix) + std::to_string(l) + "." + suffix;
}

bool has_bias(const ModelConfig& c, std::size_t layer) {
  // Hidden layers followed by batch norm get their offset from the BN shift.
  return !c.use_batchnorm || layer + 1 == c.num_layers();
}

class BNModeGuard {
 public:
  BNModeGuard(BNState& bn, BNMode mode) : bn_(bn), saved_(bn.mode) { bn_.mode = mode; }
  ~BNModeGuard() { bn_.mode = saved_; }
  BNModeGuard(const BNModeGuard&) = delete;
  BNModeGuard& operator=(const BNModeGuard&) = delete;

 private:
  BNState& bn_;
  BNMode saved_;
};

}  // namespace

void ModelConfig::validate() const {
  if (layer_widths.size() < 3) throw ContractError("model needs at least one hidden layer");
  for (auto w : layer_widths) {
    if (w == 0) throw ContractError("layer widths must be positive");
  }
  if (layer_widths.back() < 2) throw ContractError("output width must be at least 2");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ContractError("label_smoothing must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be non-negative");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ContractError("bn_momentum must be in (0,1)");
  if (!(bn_eps > 0.0)) throw ContractError("bn_eps must be positive");
}

std::string_view bn_mode_name(BNMode m) {
  switch (m) {
    case BNMode::train_tracking: return "train_tracking";
    case BNMode::frozen: return "frozen";
    case BNMode::tuning: return "tuning";
  }
  return "unknown";
}

BNMode parse_bn_mode(std::string_view s) {
  if (s == "train_tracking") return BNMode::train_tracking;
  if (s == "frozen") return BNMode::frozen;
  if (s == "tuning") return BNMode::tuning;
  throw InputError("unknown batch-norm mode '" + std::string(s) + "'");
}

void BNState::reset() {
  for (auto& l : layers) {
    std::fill(l.running_mean.begin(), l.running_mean.end(), 0.0);
    std::fill(l.running_var.begin(), l.running_var.end(), 1.0);
  }
}

BNState init_bn(const ModelConfig& config) {
  BNState bn;
  bn.momentum = config.bn_momentum;
  bn.eps = config.bn_eps;
  if (config.use_batchnorm) {
    for (std::size_t l = 0; l + 1 < config.num_layers(); ++l) {
      const std::size_t width = config.layer_widths[l + 1];
      bn.layers.push_back({std::vector<double>(width, 0.0), std::vector<double>(width, 1.0)});
    }
  }
  return bn;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model model;
  model.config = config;
  model.bn = init_bn(config);
  Rng rng(seed);
  const std::size_t layers = config.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = config.layer_widths[l];
    const std::size_t out = config.layer_widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w = Tensor::zeros({out, in});
    for (double& v : w.data) v = rng.uniform(-limit, limit);

    const bool first = l == 0;
    const bool last = l + 1 == layers;
    ParamEntry weight{layer_name("fc", l, "weight"), std::move(w), true, ParamRole::weight, first, last};
    if (config.keep_first_last_dense && (first || last)) weight.prunable = false;
    model.params.add(std::move(weight));
    if (has_bias(config, l)) {
      model.params.add({layer_name("fc", l, "bias"), Tensor::zeros({out}), false, ParamRole::bias, first, last});
    }
    if (config.use_batchnorm && !last) {
      model.params.add({layer_name("bn", l, "scale"), Tensor::filled({out}, 1.0), false, ParamRole::bn_scale});
      model.params.add({layer_name("bn", l, "shift"), Tensor::zeros({out}), false, ParamRole::bn_shift});
    }
  }
  return model;
}

ad::Var forward(ad::Tape& tape, const ModelConfig& config, const ParamSet& layout, std::span<const ad::Var> params,
                BNState& bn, const Tensor& batch, Mode mode, double* relu_margin) {
  if (params.size() != layout.size()) throw ContractError("forward: one variable per parameter expected");
  if (batch.rank() != 2 || batch.shape[1] != config.layer_widths.front()) {
    throw ShapeError("forward: batch of shape " + shape_string(batch.shape) + " for input width " +
                     std::to_string(config.layer_widths.front()));
  }
  auto var = [&](const std::string& name) { return params[*layout.find(name)]; };

  ad::Var h = tape.constant(batch);
  const std::size_t layers = config.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    ad::Var z = tape.matmul(h, var(layer_name("fc", l, "weight")), /*transpose_b=*/true);
    const bool last = l + 1 == layers;
    if (has_bias(config, l)) z = tape.add(z, var(layer_name("fc", l, "bias")));
    if (last) return z;

    if (config.use_batchnorm) {
      BNLayerStats& stats = bn.layers.at(l);
      ad::Var normalized;
      const ad::Var eps = tape.constant(Tensor::scalar(bn.eps));
      if (mode == Mode::train) {
        const ad::Var mu = tape.mean(z, ad::Axis::rows);
        const ad::Var var_ = tape.variance(z, ad::Axis::rows);
        if (bn.mode != BNMode::frozen) {
          const auto& bm = tape.value(mu).data;
          const auto& bv = tape.value(var_).data;
          for (std::size_t j = 0; j < bm.size(); ++j) {
            stats.running_mean[j] = (1.0 - bn.momentum) * stats.running_mean[j] + bn.momentum * bm[j];
            stats.running_var[j] = (1.0 - bn.momentum) * stats.running_var[j] + bn.momentum * bv[j];
          }
        }
        normalized = tape.div(tape.sub(z, mu), tape.sqrt(tape.add(var_, eps)));
      } else {
        const ad::Var mu = tape.constant(Tensor::vector(stats.running_mean));
        const ad::Var var_ = tape.constant(Tensor::vector(stats.running_var));
        normalized = tape.div(tape.sub(z, mu), tape.sqrt(tape.add(var_, eps)));
      }
      z = tape.add(tape.mul(normalized, var(layer_name("bn", l, "scale"))), var(layer_name("bn", l, "shift")));
    }
    if (relu_margin) {
      if (l == 0) *relu_margin = std::numeric_limits<double>::infinity();
      for (double v : tape.value(z).data) *relu_margin = std::min(*relu_margin, std::abs(v));
    }
    h = tape.relu(z);
  }
  return h;
}

ad::Var loss(ad::Tape& tape, ad::Var logits, std::span<const int> labels, double label_smoothing,
             const ParamSet& layout, std::span<const ad::Var> params, double weight_decay) {
  const Tensor& lv = tape.value(logits);
  if (lv.rank() != 2) throw ShapeError("loss: logits must be a matrix, got " + shape_string(lv.shape));
  const std::size_t rows = lv.shape[0], classes = lv.shape[1];
  if (labels.size() != rows) {
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InputError("loss: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const ad::Var logp = tape.log_softmax(logits);
  ad::Var total =
      tape.scale(tape.mean(tape.gather(logp, std::vector<int>(labels.begin(), labels.end()))), -1.0);
  if (label_smoothing > 0.0) {
    const ad::Var uniform = tape.scale(tape.sum(logp), -1.0 / static_cast<double>(rows * classes));
    total = tape.add(tape.scale(total, 1.0 - label_smoothing), tape.scale(uniform, label_smoothing));
  }
  if (weight_decay > 0.0) {
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (layout[i].role != ParamRole::weight) continue;
      const ad::Var sq = tape.sum(tape.mul(params[i], params[i]));
      total = tape.add(total, tape.scale(sq, weight_decay / 2.0));
    }
  }
  return total;
}

LossAndGrad loss_and_grad(const ModelConfig& config, const ParamSet& params, BNState& bn, const Batch& batch,
                          bool track_bn) {
  BNModeGuard guard(bn, track_bn ? bn.mode : BNMode::frozen);
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(params.size());
  for (const auto& e : params) vars.push_back(tape.leaf(e.tensor, true));
  const ad::Var logits = forward(tape, config, params, vars, bn, batch.features, Mode::train);
  const ad::Var l = loss(tape, logits, batch.labels, config.label_smoothing, params, vars, config.weight_decay);
  tape.backward(l);

  LossAndGrad out{tape.value(l).item(), params.zeros_like()};
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (auto g = tape.grad(vars[i])) std::copy(g->begin(), g->end(), out.grad[i].tensor.data.begin());
  }
  return out;
}

Tensor predict(const Model& model, const Tensor& features) {
  ad::Tape tape(/*frozen=*/true);
  std::vector<ad::Var> vars;
  for (const auto& e : model.params) vars.push_back(tape.leaf(e.tensor, false));
  BNState bn = model.bn;
  return tape.value(forward(tape, model.config, model.params, vars, bn, features, Mode::eval));
}

double evaluate(const Model& model, const Tensor& features, std::span<const int> labels) {
  if (features.rank() != 2) throw ShapeError("evaluate: features must be a matrix");
  const std::size_t n = features.shape[0], d = features.shape[1];
  if (labels.size() != n) throw ShapeError("evaluate: label count does not match rows");
  if (n == 0) throw ContractError("evaluate: empty dataset");
  constexpr std::size_t kChunk = 1024;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t rows = std::min(kChunk, n - start);
    Tensor chunk({rows, d}, std::vector<double>(features.data.begin() + static_cast<std::ptrdiff_t>(start * d),
                                                features.data.begin() + static_cast<std::ptrdiff_t>((start + rows) * d)));
    const Tensor logits = predict(model, chunk);
    const std::size_t c = logits.shape[1];
    for (std::size_t i = 0; i < rows; ++i) {
      const double* row = logits.data.data() + i * c;
      const auto best = static_cast<std::size_t>(std::max_element(row, row + c) - row);
      if (static_cast<int>(best) == labels[start + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace cram::nn
