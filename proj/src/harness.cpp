#include "cram/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "cram/kernels.hpp"
#include "cram/rng.hpp"

#if defined(CRAM_HAS_OPENMP)
#include <omp.h>
#endif

namespace cram::harness {
namespace {

Json epoch_json(const EpochRecord& e) {
  return Json{{"epoch", e.epoch},
              {"mean_loss", e.mean_loss},
              {"train_accuracy", e.train_accuracy},
              {"test_accuracy", e.test_accuracy},
              {"steps", e.steps},
              {"aborted_steps", e.aborted_steps},
              {"plain_steps", e.plain_steps},
              {"final_lr", e.final_lr}};
}

double population_std(std::span<const double> xs, double mean) {
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace

Json to_json(const TrainingLog& log) {
  Json epochs = Json::array();
  for (const auto& e : log.epochs) epochs.push_back(epoch_json(e));
  Json diffs = Json::array();
  for (const auto& d : log.mask_diff) diffs.push_back(Json{{"step", d.step}, {"spec", d.spec}, {"fraction", d.fraction}});
  const auto stability = mask_stability_report(log.mask_diff);
  return Json{{"epochs", epochs},
              {"steps", log.steps},
              {"passes", log.passes},
              {"mask_computations", log.mask_computations},
              {"mask_diff", diffs},
              {"mask_stability", to_json(std::span<const MaskStability>(stability))},
              {"events", log.events}};
}

Json to_json(std::span<const MaskStability> stability) {
  Json out = Json::array();
  for (const auto& m : stability) {
    out.push_back(Json{{"spec", m.spec}, {"entries", m.entries}, {"mean", m.mean}, {"max", m.max}});
  }
  return out;
}

Json to_json(const SweepReport& report) {
  Json points = Json::array();
  for (const auto& p : report.points) {
    points.push_back(Json{{"spec", p.spec.to_string()},
                          {"sparsity", p.sparsity},
                          {"achieved_sparsity", p.achieved_sparsity},
                          {"pre_bnt", p.pre_bnt},
                          {"post_bnt_mean", p.post_bnt_mean},
                          {"post_bnt_std", p.post_bnt_std},
                          {"trials", p.trials}});
  }
  return Json{{"schema_version", kReportSchemaVersion},
              {"dense_accuracy", report.dense_accuracy},
              {"points", points},
              {"mask_stability", to_json(std::span<const MaskStability>(report.mask_stability))},
              {"metadata", report.metadata}};
}

std::vector<MaskStability> mask_stability_report(std::span<const optim::MaskDiffEntry> log) {
  std::vector<MaskStability> out;
  std::map<std::string, std::size_t> slot;
  for (const auto& e : log) {
    auto [it, inserted] = slot.try_emplace(e.spec, out.size());
    if (inserted) out.push_back({e.spec, 0, 0.0, 0.0});
    MaskStability& m = out[it->second];
    ++m.entries;
    m.mean += e.fraction;
    m.max = std::max(m.max, e.fraction);
  }
  for (auto& m : out) m.mean /= static_cast<double>(m.entries);
  return out;
}

TrainResult train(const nn::ModelConfig& model_config, const optim::OptimizerConfig& optimizer_config,
                  const data::Dataset& dataset, const TrainOptions& options) {
  dataset.validate();
  if (dataset.train.empty()) throw ContractError("train: dataset has no train split");
  if (options.batch_size == 0) throw ContractError("train: batch_size must be positive");
  if (model_config.layer_widths.front() != dataset.dim()) {
    throw ShapeError("train: model input width " + std::to_string(model_config.layer_widths.front()) +
                     " but dataset has " + std::to_string(dataset.dim()) + " features");
  }
  if (model_config.layer_widths.back() != static_cast<std::size_t>(dataset.num_classes)) {
    throw ShapeError("train: model output width does not match the number of classes");
  }

  nn::Model model = nn::init_model(model_config, Rng::derive(options.seed, kInit));
  optim::OptimizerConfig oc = optimizer_config;
  oc.seed = Rng::derive(options.seed, kOptimizer + optimizer_config.seed);
  optim::Optimizer opt(oc);

  const nn::Batch train_all = dataset.gather(dataset.train);
  const std::optional<nn::Batch> test_all =
      dataset.test.empty() ? std::nullopt : std::optional<nn::Batch>(dataset.gather(dataset.test));

  const std::size_t n = dataset.train.size();
  const std::size_t per_epoch = (n + options.batch_size - 1) / options.batch_size;
  const std::size_t total_steps = per_epoch * options.epochs;
  TrainingLog log;
  std::vector<std::size_t> order = dataset.train;
  std::size_t global_step = 0;

  auto sync_log = [&] {
    const auto& st = opt.state();
    log.mask_diff = st.mask_diff_log;
    log.steps = st.step;
    log.passes = st.passes;
    log.mask_computations = st.mask_computations;
    log.events = st.events;
  };

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    Rng shuffle_rng(Rng::derive(Rng::derive(options.seed, kShuffle), epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    EpochRecord rec;
    rec.epoch = epoch;
    const std::size_t aborted_before = opt.state().aborted_steps;
    const std::size_t plain_before = opt.state().plain_steps;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;

    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t rows = std::min(options.batch_size, n - start);
      const nn::Batch batch = dataset.gather(std::span<const std::size_t>(order).subspan(start, rows));
      const optim::Objective objective = [&](const ParamSet& p, optim::PassKind kind) {
        nn::LossAndGrad r = nn::loss_and_grad(model.config, p, model.bn, batch, kind == optim::PassKind::dense);
        return optim::Evaluation{r.loss, std::move(r.grad)};
      };
      rec.final_lr = options.schedule.lr(oc.learning_rate, global_step, total_steps);
      const optim::StepResult res = opt.step(objective, model.params, rec.final_lr);
      if (res.kind != optim::StepKind::aborted) {
        loss_sum += res.loss;
        ++loss_count;
      }
      ++rec.steps;
      ++global_step;
    }
    rec.aborted_steps = opt.state().aborted_steps - aborted_before;
    rec.plain_steps = opt.state().plain_steps - plain_before;
    rec.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : std::nan("");
    const bool diverged = 2 * rec.aborted_steps > rec.steps;
    if (!diverged && (options.evaluate_every_epoch || epoch + 1 == options.epochs)) {
      rec.train_accuracy = nn::evaluate(model, train_all.features, train_all.labels);
      rec.test_accuracy = test_all ? nn::evaluate(model, test_all->features, test_all->labels) : rec.train_accuracy;
    }
    log.epochs.push_back(rec);
    if (diverged) {
      sync_log();
      throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " +
                                 std::to_string(rec.aborted_steps) + " of " + std::to_string(rec.steps) +
                                 " steps aborted on non-finite values",
                             std::move(log));
    }
  }
  sync_log();

  Checkpoint c;
  c.model_config = model.config;
  c.params = std::move(model.params);
  c.bn = std::move(model.bn);
  c.bn.mode = nn::BNMode::train_tracking;
  c.optimizer = optimizer_config;
  c.seed = options.seed;
  c.step = log.steps;
  c.dataset_fingerprint = dataset.fingerprint();
  c.extra["training"] = Json{{"epochs", options.epochs},
                             {"batch_size", options.batch_size},
                             {"schedule", std::string(config::schedule_name(options.schedule.kind))},
                             {"warmup_steps", options.schedule.warmup_steps},
                             {"passes", log.passes}};
  const auto stability = mask_stability_report(log.mask_diff);
  c.extra["mask_stability"] = to_json(std::span<const MaskStability>(stability));
  return {std::move(c), std::move(log)};
}

Checkpoint one_shot_compress(const Checkpoint& checkpoint, const compress::CompressionSpec& spec) {
  spec.validate();
  Checkpoint out = checkpoint;
  out.params = compress::compress(checkpoint.params, spec).params;
  out.extra["compression"] = spec.to_string();
  return out;
}

Checkpoint bnt(const Checkpoint& checkpoint, const data::Dataset& dataset, std::span<const std::size_t> calibration,
               std::size_t num_batches, std::size_t batch_size, std::uint64_t seed) {
  Checkpoint out = checkpoint;
  if (out.bn.layers.empty()) {
    out.extra["bnt"] = Json{{"warning", "model has no batch-norm layers; nothing to tune"}};
    return out;
  }
  if (calibration.empty()) throw ContractError("bnt: empty calibration set");
  if (batch_size == 0) throw ContractError("bnt: batch_size must be positive");
  out.bn.reset();
  out.bn.mode = nn::BNMode::tuning;
  std::vector<std::size_t> order(calibration.begin(), calibration.end());
  const std::size_t bs = std::min(batch_size, order.size());
  Rng rng(Rng::derive(seed, kBntOrder));
  std::size_t cursor = order.size();
  std::vector<ad::Var> vars;
  for (std::size_t b = 0; b < num_batches; ++b) {
    std::vector<std::size_t> rows;
    rows.reserve(bs);
    while (rows.size() < bs) {
      if (cursor == order.size()) {
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      rows.push_back(order[cursor++]);
    }
    const nn::Batch batch = dataset.gather(rows);
    // Cumulative average of the batch statistics rather than the training momentum.
    out.bn.momentum = 1.0 / static_cast<double>(b + 1);
    ad::Tape tape(/*frozen=*/true);
    vars.clear();
    for (const auto& e : out.params) vars.push_back(tape.leaf(e.tensor, false));
    nn::forward(tape, out.model_config, out.params, vars, out.bn, batch.features, nn::Mode::train);
  }
  out.bn.mode = nn::BNMode::train_tracking;
  out.bn.momentum = checkpoint.bn.momentum;
  out.extra["bnt"] = Json{{"batches", num_batches}, {"batch_size", bs}, {"calibration_size", calibration.size()}};
  if (num_batches == 0) out.extra["bnt"]["prior_only"] = true;
  return out;
}

double accuracy(const Checkpoint& checkpoint, const data::Dataset& dataset) {
  const auto& rows = dataset.test.empty() ? dataset.train : dataset.test;
  const nn::Batch b = dataset.gather(rows);
  return nn::evaluate(checkpoint.model(), b.features, b.labels);
}

SweepReport sweep(const Checkpoint& checkpoint, const data::Dataset& dataset,
                  std::span<const compress::CompressionSpec> specs, const SweepOptions& options) {
  if (options.trials == 0) throw ContractError("sweep: need at least one calibration trial");
  if (options.calibration_size > dataset.calibration.size()) {
    throw ContractError("sweep: calibration_size " + std::to_string(options.calibration_size) + " exceeds the " +
                        std::to_string(dataset.calibration.size()) + " train rows");
  }
  for (const auto& s : specs) s.validate();

  const nn::Batch eval = dataset.gather(dataset.test.empty() ? dataset.train : dataset.test);
  SweepReport report;
  report.dense_accuracy = nn::evaluate(checkpoint.model(), eval.features, eval.labels);

  std::vector<Checkpoint> compressed;
  compressed.reserve(specs.size());
  for (const auto& s : specs) compressed.push_back(one_shot_compress(checkpoint, s));

  // Job j < specs.size() * (trials + 1): spec j / (trials + 1), trial j % (trials + 1) - 1 (-1 = pre-BNT).
  const std::size_t per_spec = options.trials + 1;
  const std::size_t jobs = specs.size() * per_spec;
  std::vector<double> results(jobs, 0.0);
  std::vector<std::string> errors(jobs);

  auto run_job = [&](std::size_t j) {
    const std::size_t si = j / per_spec;
    const std::size_t slot = j % per_spec;
    try {
      if (slot == 0) {
        results[j] = nn::evaluate(compressed[si].model(), eval.features, eval.labels);
        return;
      }
      const std::uint64_t trial_seed = Rng::derive(Rng::derive(options.seed, si), slot - 1);
      const auto calib = data::sample_class_balanced(dataset, options.calibration_size,
                                                     Rng::derive(trial_seed, kCalibration));
      const Checkpoint tuned =
          bnt(compressed[si], dataset, calib, options.bnt_batches, options.bnt_batch_size, trial_seed);
      results[j] = nn::evaluate(tuned.model(), eval.features, eval.labels);
    } catch (const std::exception& e) {
      errors[j] = e.what();
    }
  };

#if defined(CRAM_HAS_OPENMP)
  const int threads = static_cast<int>(std::min<std::size_t>(kernels::num_threads(), std::max<std::size_t>(jobs, 1)));
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(jobs); ++j) run_job(static_cast<std::size_t>(j));
#else
  for (std::size_t j = 0; j < jobs; ++j) run_job(j);
#endif
  for (const auto& e : errors) {
    if (!e.empty()) throw Error("sweep: " + e);
  }

  for (std::size_t si = 0; si < specs.size(); ++si) {
    SweepPoint p;
    p.spec = specs[si];
    p.sparsity = specs[si].nominal_sparsity();
    p.achieved_sparsity = compress::achieved_sparsity(compressed[si].params, specs[si].respect_prunable_flags);
    p.pre_bnt = results[si * per_spec];
    p.trials.assign(results.begin() + static_cast<std::ptrdiff_t>(si * per_spec + 1),
                    results.begin() + static_cast<std::ptrdiff_t>((si + 1) * per_spec));
    p.post_bnt_mean = std::accumulate(p.trials.begin(), p.trials.end(), 0.0) / static_cast<double>(p.trials.size());
    p.post_bnt_std = population_std(p.trials, p.post_bnt_mean);
    report.points.push_back(std::move(p));
  }

  if (auto it = checkpoint.extra.find("mask_stability"); it != checkpoint.extra.end()) {
    for (const auto& m : *it) {
      report.mask_stability.push_back(
          {m.at("spec").get<std::string>(), m.at("entries").get<std::size_t>(), m.at("mean").get<double>(),
           m.at("max").get<double>()});
    }
  }
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(dataset.fingerprint()));
  report.metadata = Json{{"seed", options.seed},
                         {"trials", options.trials},
                         {"calibration_size", options.calibration_size},
                         {"bnt_batches", options.bnt_batches},
                         {"bnt_batch_size", options.bnt_batch_size},
                         {"checkpoint_seed", checkpoint.seed},
                         {"checkpoint_step", checkpoint.step},
                         {"algorithm", std::string(optim::algorithm_name(checkpoint.optimizer.algorithm))},
                         {"dataset", std::string(data::provenance_name(dataset.provenance))},
                         {"dataset_fingerprint", fp},
                         {"library_version", kLibraryVersion}};
  if (checkpoint.bn.layers.empty()) report.metadata["warning"] = "model has no batch-norm layers; BNT skipped";
  return report;
}

}  // namespace cram::harness
