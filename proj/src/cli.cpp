#include "cram/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "cram/checkpoint.hpp"
#include "cram/config.hpp"
#include "cram/descent_check.hpp"
#include "cram/errors.hpp"
#include "cram/gradcheck.hpp"
#include "cram/harness.hpp"
#include "cram/rng.hpp"

namespace cram::cli {
namespace {

using Json = nlohmann::json;

std::string format(const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

std::optional<ad::Primitive> parse_primitive(const std::string& name) {
  for (int p = 0; p <= static_cast<int>(ad::Primitive::gather); ++p) {
    const auto prim = static_cast<ad::Primitive>(p);
    if (ad::primitive_name(prim) == name) return prim;
  }
  throw InputError("--inject-fault: unknown primitive '" + name + "'");
}

// Clears an injected backward fault when the command returns.
struct FaultGuard {
  ~FaultGuard() { ad::testing::inject_backward_fault(std::nullopt); }
};

struct TrainArgs {
  std::string config;
  std::string out;
  std::string log;
  bool f32 = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  config::RunConfig rc;
  try {
    rc = config::load_run_config(a.config);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
  const std::string ckpt_path = !a.out.empty() ? a.out : rc.output.checkpoint;
  if (ckpt_path.empty()) {
    err << "error: " << a.config << ": no checkpoint path (use --out or output.checkpoint)\n";
    return kConfigError;
  }
  const std::string log_path =
      !a.log.empty() ? a.log : (!rc.output.log.empty() ? rc.output.log : ckpt_path + ".log.json");

  const data::Dataset ds = config::make_dataset(rc.dataset, rc.seed);
  harness::TrainOptions opts;
  opts.epochs = rc.training.epochs;
  opts.batch_size = rc.training.batch_size;
  opts.schedule = rc.training.schedule;
  opts.seed = rc.seed;
  try {
    harness::TrainResult r = harness::train(rc.model, rc.optimizer, ds, opts);
    config::DatasetSection resolved = rc.dataset;
    resolved.seed = rc.dataset.seed.value_or(rc.seed);
    r.checkpoint.extra["dataset"] = config::to_json(resolved);
    save_checkpoint(r.checkpoint, ckpt_path, a.f32);
    write_file_atomic(log_path, harness::to_json(r.log).dump(2) + "\n");
    const auto& last = r.log.epochs.empty() ? harness::EpochRecord{} : r.log.epochs.back();
    out << "trained " << r.log.steps << " steps (" << r.log.passes << " passes)";
    if (!r.log.epochs.empty()) out << format(", train accuracy %.4f, test accuracy %.4f", last.train_accuracy, last.test_accuracy);
    out << "\ncheckpoint: " << ckpt_path << "\nlog: " << log_path << "\n";
    return kOk;
  } catch (const harness::TrainingDiverged& e) {
    err << "error: " << a.config << ": " << e.what() << "\n";
    try {
      write_file_atomic(log_path, harness::to_json(e.log()).dump(2) + "\n");
    } catch (const IoError&) {
    }
    return kDiverged;
  }
}

struct SweepArgs {
  std::string checkpoint;
  std::string specs;
  std::size_t trials = 10;
  std::size_t calibration_size = 100;
  std::size_t bnt_batches = 100;
  std::size_t bnt_batch_size = 32;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<compress::CompressionSpec> specs;
  try {
    specs = compress::parse_spec_list(a.specs);
    if (specs.empty()) throw InputError("no specs given");
  } catch (const Error& e) {
    err << "error: --specs: " << e.what() << "\n";
    return kConfigError;
  }
  if (a.trials == 0) {
    err << "error: --trials must be at least 1\n";
    return kConfigError;
  }
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(a.checkpoint);
  } catch (const Error& e) {
    err << "error: " << a.checkpoint << ": " << e.what() << "\n";
    return kIoError;
  }
  if (!ckpt.extra.contains("dataset")) {
    err << "error: " << a.checkpoint << ": checkpoint does not describe its dataset\n";
    return kIoError;
  }
  data::Dataset ds;
  try {
    ds = config::make_dataset(config::dataset_from_json(ckpt.extra["dataset"], "checkpoint.dataset"), ckpt.seed);
  } catch (const InputError& e) {
    err << "error: " << a.checkpoint << ": " << e.what() << "\n";
    return kConfigError;
  }
  if (ds.fingerprint() != ckpt.dataset_fingerprint) {
    err << "error: " << a.checkpoint << ": regenerated dataset does not match the training fingerprint\n";
    return kIoError;
  }
  harness::SweepOptions opts;
  opts.trials = a.trials;
  opts.calibration_size = a.calibration_size;
  opts.bnt_batches = a.bnt_batches;
  opts.bnt_batch_size = a.bnt_batch_size;
  opts.seed = a.seed.value_or(ckpt.seed);
  harness::SweepReport report;
  try {
    report = harness::sweep(ckpt, ds, specs, opts);
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
  write_file_atomic(a.out, harness::to_json(report).dump(2) + "\n");

  out << format("dense accuracy %.4f\n", report.dense_accuracy);
  out << format("%-20s %9s %9s %19s\n", "spec", "sparsity", "pre-BNT", "post-BNT");
  for (const auto& p : report.points) {
    out << format("%-20s %9.4f %9.4f %9.4f +- %6.4f\n", p.spec.to_string().c_str(), p.sparsity, p.pre_bnt,
                  p.post_bnt_mean, p.post_bnt_std);
  }
  out << "report: " << a.out << "\n";
  return kOk;
}

constexpr double kReluMargin = 1e-3;
constexpr std::size_t kBatchAttempts = 1000;

struct GradcheckArgs {
  std::string config;
  double tolerance = 1e-5;
  double epsilon = 1e-5;
  std::size_t seeds = 3;
  std::size_t batch = 16;
  std::string inject_fault;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  config::RunConfig rc;
  try {
    rc = config::load_run_config(a.config);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
  FaultGuard guard;
  if (!a.inject_fault.empty()) {
    try {
      ad::testing::inject_backward_fault(parse_primitive(a.inject_fault));
    } catch (const InputError& e) {
      err << "error: " << e.what() << "\n";
      return kConfigError;
    }
    err << "warning: backward rule of '" << a.inject_fault << "' deliberately perturbed\n";
  }
  const data::Dataset ds = config::make_dataset(rc.dataset, rc.seed);
  const std::size_t rows = std::min(a.batch, ds.calibration.size());

  bool ok = true;
  double worst = 0.0;
  std::string worst_name;
  for (std::size_t s = 0; s < a.seeds; ++s) {
    const std::uint64_t seed = Rng::derive(rc.seed, s);
    nn::Model model = nn::init_model(rc.model, seed);
    // Non-trivial BN affine parameters so their gradients are exercised.
    Rng jitter(seed ^ 0x5eed);
    for (auto& e : model.params) {
      if (e.role != ParamRole::weight) {
        for (double& v : e.tensor.data) v += jitter.uniform(-0.2, 0.2);
      }
    }
    // Finite differences are only meaningful away from relu kinks: draw
    // batches until every relu input clears the margin.
    nn::Batch batch;
    double margin = 0.0;
    for (std::size_t attempt = 0; attempt < kBatchAttempts && !(margin > kReluMargin); ++attempt) {
      batch = ds.gather(data::sample_class_balanced(ds, rows, Rng::derive(seed, attempt)));
      ad::Tape probe(/*frozen=*/true);
      std::vector<ad::Var> vars;
      for (const auto& e : model.params) vars.push_back(probe.leaf(e.tensor, false));
      nn::BNState bn = model.bn;
      bn.mode = nn::BNMode::frozen;
      nn::forward(probe, model.config, model.params, vars, bn, batch.features, nn::Mode::train, &margin);
    }
    if (!(margin > kReluMargin)) {
      err << format("warning: seed %zu: no batch keeps every relu input above %.0e (best %.2e)\n", s, kReluMargin,
                    margin);
    }
    const ParamSet layout = model.params;
    const nn::ModelConfig mc = model.config;
    const nn::BNState bn0 = model.bn;
    const ad::GraphFn f = [&](ad::Tape& tape, std::span<const ad::Var> vars) {
      nn::BNState bn = bn0;
      bn.mode = nn::BNMode::frozen;
      const ad::Var logits = nn::forward(tape, mc, layout, vars, bn, batch.features, nn::Mode::train);
      return nn::loss(tape, logits, batch.labels, mc.label_smoothing, layout, vars, mc.weight_decay);
    };
    const ad::GradCheckReport r = ad::grad_check(f, model.params, a.epsilon, a.tolerance);
    out << format("seed %zu: max relative error %.3e in %s (%zu kink coordinates excluded) %s\n", s,
                  r.max_rel_error, r.worst_param.c_str(), r.flagged, r.passed ? "ok" : "FAIL");
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.worst_param;
    }
    ok = ok && r.passed;
  }
  out << format("max relative error %.3e (tolerance %.1e)\n", worst, a.tolerance);
  if (!ok) {
    err << "gradient check failed: worst parameter " << worst_name << format(" (relative error %.3e)\n", worst);
    return kVerificationFailed;
  }
  return kOk;
}

struct DanskinArgs {
  std::size_t dim = 2;
  double rho = 0.1;
  std::size_t grid = 41;
  std::size_t points = 50;
  std::uint64_t seed = 0;
};

int cmd_danskin(const DanskinArgs& a, std::ostream& out, std::ostream& err) {
  if (a.dim < 2 || a.dim > 4) {
    err << "error: --dim must be between 2 and 4\n";
    return kConfigError;
  }
  if (!(a.rho >= 0.0)) {
    err << "error: --rho must be non-negative\n";
    return kConfigError;
  }
  if (a.rho > 0.0 && a.grid < optim::kCoarseGrid) {
    err << "warning: grid of " << a.grid << " points per axis is coarse; the maximizer is approximate\n";
  }
  // Identity, keep d - 1, keep 1.
  std::vector<compress::CompressionSpec> specs;
  for (std::size_t keep : {a.dim, a.dim - 1, std::size_t{1}}) {
    const double sparsity = static_cast<double>(a.dim - keep) / static_cast<double>(a.dim);
    if (specs.empty() || compress::keep_count(a.dim, specs.back().sparsity) != keep) {
      specs.push_back(compress::CompressionSpec::top_k_global(sparsity));
    }
  }
  const auto points = optim::sample_points(a.dim, a.points, a.seed);
  std::size_t violations = 0;
  for (const auto& obj : optim::objective_zoo(a.dim)) {
    for (auto spec : specs) {
      spec.respect_prunable_flags = false;
      const auto r = optim::danskin_descent_check(obj, spec, a.rho, a.grid, points);
      const std::size_t kept = compress::keep_count(a.dim, spec.sparsity);
      out << format("%-22s top-%zu of %zu: %3zu points, %3zu articulation, %zu violations  %s\n", obj.name.c_str(),
                    kept, a.dim, r.points, r.excluded, r.violations, r.violations == 0 ? "pass" : "FAIL");
      for (const auto& p : r.details) {
        if (!p.violation) continue;
        std::string w;
        for (double v : p.w) w += format(" %.6f", v);
        out << format("  violation at w =%s: F(w) = %.12g, F(w - t h) = %.12g\n", w.c_str(), p.value, p.value_after);
      }
      violations += r.violations;
    }
  }
  if (violations > 0) {
    err << "descent check failed: " << violations << " violations at non-articulation points\n";
    return kVerificationFailed;
  }
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compression-aware training toolkit"};
  app.name("cram");
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model from a JSON config and write a checkpoint");
  train->add_option("config", ta.config, "Run config (JSON)")->required();
  train->add_option("--out", ta.out, "Checkpoint path (default: output.checkpoint)");
  train->add_option("--log", ta.log, "Training log path (default: output.log or <out>.log.json)");
  train->add_flag("--f32", ta.f32, "Store tensors as 32-bit floats");

  SweepArgs sa;
  std::uint64_t sweep_seed = 0;
  auto* sweep = app.add_subcommand("sweep", "One-shot compress a checkpoint at several specs, with BNT");
  sweep->add_option("checkpoint", sa.checkpoint, "Checkpoint written by 'train'")->required();
  sweep->add_option("--specs", sa.specs, "Comma-separated specs, e.g. topk_global:0.5,0.7 or nm:2:4 or quant:4")
      ->required();
  sweep->add_option("--trials", sa.trials, "BNT trials per spec")->capture_default_str();
  sweep->add_option("--calibration-size", sa.calibration_size, "Calibration rows per trial")->capture_default_str();
  sweep->add_option("--bnt-batches", sa.bnt_batches, "BNT forward passes per trial")->capture_default_str();
  sweep->add_option("--bnt-batch-size", sa.bnt_batch_size, "BNT batch size")->capture_default_str();
  auto* seed_opt = sweep->add_option("--seed", sweep_seed, "Sweep seed (default: the checkpoint's seed)");
  sweep->add_option("--out", sa.out, "Report path (JSON)")->required();

  GradcheckArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the model gradient");
  gradcheck->add_option("config", ga.config, "Run config (JSON)")->required();
  gradcheck->add_option("--tolerance", ga.tolerance, "Maximum relative error")->capture_default_str();
  gradcheck->add_option("--epsilon", ga.epsilon, "Central-difference step")->capture_default_str();
  gradcheck->add_option("--seeds", ga.seeds, "Number of initializations checked")->capture_default_str();
  gradcheck->add_option("--batch", ga.batch, "Rows in the check batch")->capture_default_str();
  gradcheck->add_option("--inject-fault", ga.inject_fault,
                        "Testing aid: scale the backward rule of this primitive (e.g. relu, matmul) by 1.5");

  DanskinArgs da;
  auto* danskin = app.add_subcommand("danskin", "Brute-force descent-direction check on analytic objectives");
  danskin->add_option("--dim", da.dim, "Dimension (2-4)")->capture_default_str();
  danskin->add_option("--rho", da.rho, "Perturbation radius")->capture_default_str();
  danskin->add_option("--grid", da.grid, "Grid points per axis")->capture_default_str();
  danskin->add_option("--points", da.points, "Test points per objective")->capture_default_str();
  danskin->add_option("--seed", da.seed, "Seed for the test points")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigError;
  }

  try {
    if (*train) return cmd_train(ta, out, err);
    if (*sweep) {
      if (*seed_opt) sa.seed = sweep_seed;
      return cmd_sweep(sa, out, err);
    }
    if (*gradcheck) return cmd_gradcheck(ga, out, err);
    if (*danskin) return cmd_danskin(da, out, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DeterminismError& e) {
    err << "error: " << e.what() << "\n";
    return kVerificationFailed;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const Error& e) {
    err << "internal error: " << e.what() << "\n";
    return 1;
  }
  return kConfigError;
}

}  // namespace cram::cli
