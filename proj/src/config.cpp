#include "cram/config.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "cram/errors.hpp"

namespace cram::config {
namespace {

// Reads fields of one JSON object and rejects any key nobody asked for.
class Section {
 public:
  Section(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InputError(where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const Json::exception&) {
      throw InputError(field(key) + ": wrong type");
    }
  }

  template <class T>
  void get_unsigned(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_unsigned()) throw InputError(field(key) + ": expected a non-negative integer");
    out = it->template get<T>();
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw InputError(where_ + "." + it.key() + ": unknown key");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

// Runs `validate` and prefixes its message with the section name.
template <class F>
void checked(const std::string& where, F&& validate) {
  try {
    validate();
  } catch (const ContractError& e) {
    throw InputError(where + ": " + e.what());
  }
}

std::vector<compress::CompressionSpec> specs_from(const Json& j, const std::string& where) {
  try {
    if (j.is_string()) return compress::parse_spec_list(j.get<std::string>());
    if (!j.is_array()) throw InputError("expected a spec string or array of spec strings");
    std::vector<compress::CompressionSpec> out;
    for (const auto& item : j) {
      if (!item.is_string()) throw InputError("expected spec strings");
      for (auto& s : compress::parse_spec_list(item.get<std::string>())) out.push_back(s);
    }
    return out;
  } catch (const Error& e) {
    throw InputError(where + ": " + e.what());
  }
}

Json specs_to_json(const std::vector<compress::CompressionSpec>& specs) {
  Json a = Json::array();
  for (const auto& s : specs) a.push_back(s.to_string());
  return a;
}

}  // namespace

std::string_view schedule_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::linear_warmup: return "linear_warmup";
  }
  return "unknown";
}

ScheduleKind parse_schedule(std::string_view s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "linear_warmup") return ScheduleKind::linear_warmup;
  throw InputError("unknown schedule '" + std::string(s) + "'");
}

double Schedule::lr(double base, std::size_t step, std::size_t total_steps) const {
  if (kind == ScheduleKind::constant || total_steps == 0) return base;
  std::size_t warm = kind == ScheduleKind::linear_warmup ? std::min(warmup_steps, total_steps) : 0;
  if (step < warm) return base * static_cast<double>(step + 1) / static_cast<double>(warm);
  const double span = static_cast<double>(total_steps - warm);
  const double t = span > 0.0 ? static_cast<double>(step - warm) / span : 0.0;
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * std::min(t, 1.0)));
}

Json to_json(const nn::ModelConfig& c) {
  return Json{{"layer_widths", c.layer_widths},
              {"use_batchnorm", c.use_batchnorm},
              {"label_smoothing", c.label_smoothing},
              {"weight_decay", c.weight_decay},
              {"keep_first_last_dense", c.keep_first_last_dense},
              {"bn_momentum", c.bn_momentum},
              {"bn_eps", c.bn_eps}};
}

Json to_json(const optim::OptimizerConfig& c) {
  return Json{{"algorithm", std::string(optim::algorithm_name(c.algorithm))},
              {"learning_rate", c.learning_rate},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"rho", c.rho},
              {"operator_set", specs_to_json(c.operator_set)},
              {"sparse_perturbed_grad", c.sparse_perturbed_grad},
              {"mask_refresh_period", c.mask_refresh_period},
              {"p_plain_step", c.p_plain_step},
              {"normalize_ascent", c.normalize_ascent},
              {"seed", c.seed}};
}

Json to_json(const DatasetSection& c) {
  Json j{{"kind", std::string(data::provenance_name(c.kind))},
         {"n", c.n},
         {"num_classes", c.num_classes},
         {"noise", c.noise},
         {"dim", c.dim},
         {"test_fraction", c.test_fraction}};
  if (c.seed) j["seed"] = *c.seed;
  if (c.kind == data::Provenance::mnist_idx) {
    j["train_images"] = c.train_images;
    j["train_labels"] = c.train_labels;
    j["test_images"] = c.test_images;
    j["test_labels"] = c.test_labels;
    j["max_train"] = c.max_train;
  }
  return j;
}

Json to_json(const TrainingSection& c) {
  return Json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"schedule", std::string(schedule_name(c.schedule.kind))},
              {"warmup_steps", c.schedule.warmup_steps}};
}

Json to_json(const SweepSection& c) {
  return Json{{"specs", specs_to_json(c.specs)},
              {"trials", c.trials},
              {"calibration_size", c.calibration_size},
              {"bnt_batches", c.bnt_batches},
              {"bnt_batch_size", c.bnt_batch_size}};
}

Json to_json(const RunConfig& c) {
  return Json{{"dataset", to_json(c.dataset)},
              {"model", to_json(c.model)},
              {"optimizer", to_json(c.optimizer)},
              {"training", to_json(c.training)},
              {"sweep", to_json(c.sweep)},
              {"output", Json{{"checkpoint", c.output.checkpoint}, {"log", c.output.log}, {"report", c.output.report}}},
              {"seed", c.seed}};
}

nn::ModelConfig model_from_json(const Json& j, const std::string& where) {
  Section s(j, where);
  nn::ModelConfig c;
  s.get("layer_widths", c.layer_widths);
  s.get("use_batchnorm", c.use_batchnorm);
  s.get("label_smoothing", c.label_smoothing);
  s.get("weight_decay", c.weight_decay);
  s.get("keep_first_last_dense", c.keep_first_last_dense);
  s.get("bn_momentum", c.bn_momentum);
  s.get("bn_eps", c.bn_eps);
  s.finish();
  checked(where, [&] { c.validate(); });
  return c;
}

optim::OptimizerConfig optimizer_from_json(const Json& j, const std::string& where) {
  Section s(j, where);
  optim::OptimizerConfig c;
  std::string algorithm = std::string(optim::algorithm_name(c.algorithm));
  s.get("algorithm", algorithm);
  try {
    c.algorithm = optim::parse_algorithm(algorithm);
  } catch (const InputError& e) {
    throw InputError(s.field("algorithm") + ": " + e.what());
  }
  s.get("learning_rate", c.learning_rate);
  s.get("momentum", c.momentum);
  s.get("weight_decay", c.weight_decay);
  s.get("rho", c.rho);
  if (const Json* ops = s.child("operator_set")) c.operator_set = specs_from(*ops, s.field("operator_set"));
  s.get("sparse_perturbed_grad", c.sparse_perturbed_grad);
  s.get_unsigned("mask_refresh_period", c.mask_refresh_period);
  s.get("p_plain_step", c.p_plain_step);
  s.get("normalize_ascent", c.normalize_ascent);
  s.get_unsigned("seed", c.seed);
  s.finish();
  checked(where, [&] { c.validate(); });
  return c;
}

DatasetSection dataset_from_json(const Json& j, const std::string& where) {
  Section s(j, where);
  DatasetSection c;
  std::string kind = std::string(data::provenance_name(c.kind));
  s.get("kind", kind);
  try {
    c.kind = data::parse_provenance(kind);
  } catch (const InputError& e) {
    throw InputError(s.field("kind") + ": " + e.what());
  }
  s.get_unsigned("n", c.n);
  s.get("num_classes", c.num_classes);
  s.get("noise", c.noise);
  s.get_unsigned("dim", c.dim);
  s.get("test_fraction", c.test_fraction);
  if (const Json* seed = s.child("seed")) {
    if (!seed->is_number_unsigned()) throw InputError(s.field("seed") + ": expected a non-negative integer");
    c.seed = seed->get<std::uint64_t>();
  }
  s.get("train_images", c.train_images);
  s.get("train_labels", c.train_labels);
  s.get("test_images", c.test_images);
  s.get("test_labels", c.test_labels);
  s.get_unsigned("max_train", c.max_train);
  s.finish();
  if (c.num_classes < 2) throw InputError(s.field("num_classes") + ": need at least two classes");
  if (!(c.noise >= 0.0)) throw InputError(s.field("noise") + ": must be non-negative");
  if (!(c.test_fraction >= 0.0 && c.test_fraction < 1.0)) throw InputError(s.field("test_fraction") + ": must be in [0,1)");
  if (c.kind == data::Provenance::mnist_idx) {
    if (c.train_images.empty() || c.train_labels.empty() || c.test_images.empty() || c.test_labels.empty()) {
      throw InputError(where + ": mnist_idx needs train_images, train_labels, test_images and test_labels");
    }
  } else if (c.n < static_cast<std::size_t>(c.num_classes) * 10) {
    throw InputError(s.field("n") + ": need at least 10 rows per class");
  }
  return c;
}

TrainingSection training_from_json(const Json& j, const std::string& where) {
  Section s(j, where);
  TrainingSection c;
  s.get_unsigned("epochs", c.epochs);
  s.get_unsigned("batch_size", c.batch_size);
  std::string schedule = std::string(schedule_name(c.schedule.kind));
  s.get("schedule", schedule);
  try {
    c.schedule.kind = parse_schedule(schedule);
  } catch (const InputError& e) {
    throw InputError(s.field("schedule") + ": " + e.what());
  }
  s.get_unsigned("warmup_steps", c.schedule.warmup_steps);
  s.finish();
  if (c.batch_size == 0) throw InputError(s.field("batch_size") + ": must be positive");
  return c;
}

SweepSection sweep_from_json(const Json& j, const std::string& where) {
  Section s(j, where);
  SweepSection c;
  if (const Json* specs = s.child("specs")) c.specs = specs_from(*specs, s.field("specs"));
  s.get_unsigned("trials", c.trials);
  s.get_unsigned("calibration_size", c.calibration_size);
  s.get_unsigned("bnt_batches", c.bnt_batches);
  s.get_unsigned("bnt_batch_size", c.bnt_batch_size);
  s.finish();
  if (c.trials == 0) throw InputError(s.field("trials") + ": must be at least 1");
  if (c.calibration_size == 0) throw InputError(s.field("calibration_size") + ": must be positive");
  if (c.bnt_batch_size == 0) throw InputError(s.field("bnt_batch_size") + ": must be positive");
  return c;
}

void RunConfig::validate() const {
  checked("model", [&] { model.validate(); });
  checked("optimizer", [&] { optimizer.validate(); });
  if (dataset.kind != data::Provenance::mnist_idx) {
    const std::size_t in = dataset.kind == data::Provenance::synthetic_two_spirals ? 2 : dataset.dim;
    if (model.layer_widths.front() != in) {
      throw InputError("model.layer_widths: input width " + std::to_string(model.layer_widths.front()) +
                       " does not match the dataset's " + std::to_string(in) + " features");
    }
    if (model.layer_widths.back() != static_cast<std::size_t>(dataset.num_classes)) {
      throw InputError("model.layer_widths: output width does not match dataset.num_classes");
    }
  }
}

RunConfig run_config_from_json(const Json& j) {
  Section s(j, "config");
  RunConfig c;
  const Json* model = s.child("model");
  if (!model) throw InputError("config.model: required");
  c.model = model_from_json(*model);
  if (const Json* d = s.child("dataset")) c.dataset = dataset_from_json(*d);
  if (const Json* o = s.child("optimizer")) c.optimizer = optimizer_from_json(*o);
  if (const Json* t = s.child("training")) c.training = training_from_json(*t);
  if (const Json* w = s.child("sweep")) c.sweep = sweep_from_json(*w);
  if (const Json* out = s.child("output")) {
    Section o(*out, "output");
    o.get("checkpoint", c.output.checkpoint);
    o.get("log", c.output.log);
    o.get("report", c.output.report);
    o.finish();
  }
  s.get_unsigned("seed", c.seed);
  s.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open config");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

data::Dataset make_dataset(const DatasetSection& section, std::uint64_t master_seed) {
  if (section.kind == data::Provenance::mnist_idx) {
    return data::load_mnist_train_test(section.train_images, section.train_labels, section.test_images,
                                       section.test_labels, section.max_train);
  }
  data::SyntheticOptions o;
  o.kind = section.kind;
  o.n = section.n;
  o.num_classes = section.num_classes;
  o.noise = section.noise;
  o.seed = section.seed.value_or(master_seed);
  o.dim = section.dim;
  o.test_fraction = section.test_fraction;
  return data::make_synthetic(o);
}

}  // namespace cram::config
