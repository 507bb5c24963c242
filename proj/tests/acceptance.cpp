// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
// Criteria 6-9 train on the two_spirals fallback (no MNIST files are shipped)
// using configs/spirals_sgd.json and configs/spirals_cram_multi.json at seeds 1-3.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cram/checkpoint.hpp"
#include "cram/cli.hpp"
#include "cram/compression.hpp"
#include "cram/config.hpp"
#include "cram/errors.hpp"
#include "cram/harness.hpp"
#include "cram/kernels.hpp"
#include "cram/optimizers.hpp"

using namespace cram;
namespace fs = std::filesystem;
using compress::CompressionSpec;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

int failures = 0;

void report(int id, bool pass, double secs, const std::string& what) {
  std::printf("criterion %2d: %s  (%.1f s)  %s\n", id, pass ? "PASS" : "FAIL", secs, what.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void note(const std::string& line) {
  std::printf("    %s\n", line.c_str());
  std::fflush(stdout);
}

std::string config_path(const std::string& name) { return (fs::path(CRAM_CONFIG_DIR) / name).string(); }

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string last_line(const std::string& s) {
  std::string t = s;
  while (!t.empty() && t.back() == '\n') t.pop_back();
  const auto p = t.rfind('\n');
  return p == std::string::npos ? t : t.substr(p + 1);
}

// ---------------------------------------------------------------- criterion 1

void gradient_oracle() {
  const auto t0 = Clock::now();
  const CliRun r = cli_run({"gradcheck", config_path("gradcheck.json"), "--seeds", "3"});
  const double secs = seconds_since(t0);
  std::istringstream lines(r.out);
  for (std::string l; std::getline(lines, l);) note(l);
  report(1, r.code == 0 && secs < 30.0, secs, "gradcheck on a 2-hidden-layer BN model, 3 seeds: " + last_line(r.out));
}

// ---------------------------------------------------------------- criterion 2

ParamSet random_params(Rng& rng, bool with_ties) {
  ParamSet p;
  const std::size_t rows = 1 + rng.index(4), cols = 4 * (1 + rng.index(3));
  for (int l = 0; l < 2; ++l) {
    ParamEntry e;
    e.name = "fc" + std::to_string(l) + ".weight";
    e.tensor = Tensor::zeros({rows + static_cast<std::size_t>(l), cols});
    e.prunable = true;
    for (double& v : e.tensor.data) {
      v = with_ties ? static_cast<double>(static_cast<int>(rng.index(5)) - 2) : rng.normal();
    }
    p.add(std::move(e));
  }
  ParamEntry b;
  b.name = "fc1.bias";
  b.role = ParamRole::bias;
  b.tensor = Tensor::filled({rows + 1}, 0.5);
  p.add(std::move(b));
  return p;
}

// Exhaustive oracle: stable sort of indices by decreasing magnitude.
std::vector<std::uint8_t> sorted_top_k(const std::vector<double>& v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(v[a]) > std::abs(v[b]); });
  std::vector<std::uint8_t> keep(v.size(), 0);
  for (std::size_t i = 0; i < k; ++i) keep[idx[i]] = 1;
  return keep;
}

void operator_properties() {
  const auto t0 = Clock::now();
  std::size_t checks = 0, failed = 0;
  auto expect = [&](bool ok) {
    ++checks;
    failed += !ok;
  };
  Rng rng(2024);
  const std::vector<double> sparsities{0.0, 0.25, 0.5, 0.7, 0.9};
  for (int trial = 0; trial < 300; ++trial) {
    const ParamSet p = random_params(rng, trial % 3 == 0);
    std::vector<CompressionSpec> specs;
    for (double s : sparsities) {
      specs.push_back(CompressionSpec::top_k_global(s));
      specs.push_back(CompressionSpec::top_k_uniform(s));
    }
    specs.push_back(CompressionSpec::n_m(1, 4));
    specs.push_back(CompressionSpec::n_m(2, 4));
    specs.push_back(CompressionSpec::n_m(3, 4));
    for (int bits : {2, 3, 4, 8}) specs.push_back(CompressionSpec::quantize(bits));

    for (const auto& spec : specs) {
      compress::Compressed once;
      try {
        once = compress::compress(p, spec);
      } catch (const ContractError&) {
        continue;  // uniform Top-K leaving a tensor empty
      }
      // idempotence
      expect(compress::compress(once.params, spec).params.same_values(once.params));
      // non-prunable entries untouched
      expect(once.params.at("fc1.bias").tensor.data == p.at("fc1.bias").tensor.data);
      if (spec.is_mask_kind()) {
        // mask-linearity
        expect(once.params.same_values(compress::apply_mask(p, *once.mask)));
        const auto& m = *once.mask;
        if (spec.kind == compress::Kind::top_k_global) {
          expect(m.kept() == compress::keep_count(p.prunable_size(), spec.sparsity));
        } else if (spec.kind == compress::Kind::top_k_uniform) {
          for (std::size_t i = 0; i < 2; ++i) {
            const auto kept = static_cast<std::size_t>(std::count(m.keep[i].begin(), m.keep[i].end(), 1));
            expect(kept == compress::keep_count(p[i].tensor.size(), spec.sparsity));
          }
        } else {
          for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t s = 0; s < m.keep[i].size(); s += 4) {
              expect(std::accumulate(m.keep[i].begin() + static_cast<std::ptrdiff_t>(s),
                                     m.keep[i].begin() + static_cast<std::ptrdiff_t>(s + 4), 0) == spec.n);
            }
          }
        }
      } else {
        // |q - w| <= s_c / 2 for every entry (no entry is clamped: |w| <= max|w|)
        const double levels = std::ldexp(1.0, spec.bits - 1) - 1.0;
        for (std::size_t i = 0; i < 2; ++i) {
          const auto& t = p[i].tensor;
          const std::size_t cols = t.shape[1];
          for (std::size_t r = 0; r < t.shape[0]; ++r) {
            double mx = 0.0;
            for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, std::abs(t.data[r * cols + c]));
            for (std::size_t c = 0; c < cols; ++c) {
              const double err = std::abs(once.params[i].tensor.data[r * cols + c] - t.data[r * cols + c]);
              expect(err <= mx / levels / 2 * (1 + 1e-12));
            }
          }
        }
      }
    }
  }
  // brute force on tensors of up to 12 entries, every K
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 1 + rng.index(12);
    std::vector<double> v(n);
    for (double& x : v) x = trial % 2 ? rng.normal() : static_cast<double>(static_cast<int>(rng.index(5)) - 2);
    for (std::size_t k = 0; k <= n; ++k) {
      std::vector<std::uint8_t> keep(n, 0);
      compress::select_top_k(v, k, keep);
      expect(keep == sorted_top_k(v, k));
      if (k == 0) continue;
      ParamSet p;
      ParamEntry e;
      e.name = "w";
      e.tensor = Tensor::vector(v);
      e.prunable = true;
      p.add(std::move(e));
      // the sparsity whose keep count is exactly k
      const double s = 1.0 - static_cast<double>(k) / static_cast<double>(n);
      if (compress::keep_count(n, s) == k) expect(compress::top_k_mask_global(p, s).keep[0] == sorted_top_k(v, k));
    }
  }
  const double secs = seconds_since(t0);
  report(2, failed == 0 && secs < 10.0, secs,
         format("operator properties: %zu checks, %zu failed", checks, failed));
}

// ---------------------------------------------------------------- criterion 3

struct ModelObjective {
  nn::ModelConfig config;
  nn::BNState bn;
  std::vector<nn::Batch> batches;
  std::size_t cursor = 0;

  optim::Objective next() {
    const nn::Batch* b = &batches[cursor++ % batches.size()];
    return [this, b](const ParamSet& p, optim::PassKind kind) {
      auto r = nn::loss_and_grad(config, p, bn, *b, kind == optim::PassKind::dense);
      return optim::Evaluation{r.loss, std::move(r.grad)};
    };
  }
};

void reduction_lattice() {
  const auto t0 = Clock::now();
  data::SyntheticOptions so;
  so.kind = data::Provenance::synthetic_two_spirals;
  so.n = 600;
  so.num_classes = 3;
  so.noise = 0.05;
  so.seed = 5;
  const data::Dataset ds = data::make_synthetic(so);
  nn::ModelConfig mc;
  mc.layer_widths = {2, 16, 16, 3};
  const nn::Model init = nn::init_model(mc, 11);
  std::vector<nn::Batch> batches;
  for (std::size_t s = 0; s + 32 <= ds.train.size(); s += 32) {
    batches.push_back(ds.gather(std::span<const std::size_t>(ds.train).subspan(s, 32)));
  }

  optim::OptimizerConfig base;
  base.learning_rate = 0.05;
  base.momentum = 0.9;
  base.weight_decay = 1e-4;
  auto with = [&](optim::Algorithm a, double rho) {
    optim::OptimizerConfig c = base;
    c.algorithm = a;
    c.rho = rho;
    c.operator_set = {CompressionSpec::top_k_global(0.0)};
    return c;
  };

  struct Run {
    ModelObjective obj;
    ParamSet w;
    optim::OptimizerState st;
  };
  auto fresh = [&] { return Run{ModelObjective{mc, init.bn, batches}, init.params, optim::OptimizerState{}}; };

  Run sgd = fresh(), cram = fresh(), plus = fresh(), twice = fresh(), sam = fresh(), csam = fresh();
  for (int step = 0; step < 100; ++step) {
    optim::plain_step(sgd.obj.next(), sgd.w, sgd.st, base, base.learning_rate);
    optim::cram_step(cram.obj.next(), cram.w, cram.st, with(optim::Algorithm::cram, 0.0), base.learning_rate);
    optim::cram_plus_step(plus.obj.next(), plus.w, plus.st, with(optim::Algorithm::cram_plus, 0.0),
                          base.learning_rate);
    {
      // sgd_step with direction 2g
      ParamSet g = twice.obj.next()(twice.w, optim::PassKind::dense).grad;
      axpy(1.0, g, g);
      optim::sgd_step(twice.w, twice.st, g, base, base.learning_rate);
    }
    optim::sam_step(sam.obj.next(), sam.w, sam.st, with(optim::Algorithm::sam, 0.05), base.learning_rate);
    optim::c_sam_step(csam.obj.next(), csam.w, csam.st, with(optim::Algorithm::c_sam, 0.05), base.learning_rate);
  }
  const bool a = cram.w.same_values(sgd.w) && cram.obj.bn.layers == sgd.obj.bn.layers;
  const bool b = plus.w.same_values(twice.w) && plus.obj.bn.layers == twice.obj.bn.layers;
  const bool c = csam.w.same_values(sam.w) && csam.obj.bn.layers == sam.obj.bn.layers;
  note(format("cram(identity, rho=0) == sgd: %s", a ? "bitwise" : "differs"));
  note(format("cram_plus(identity, rho=0) == sgd with 2g: %s", b ? "bitwise" : "differs"));
  note(format("c_sam(identity) == sam: %s", c ? "bitwise" : "differs"));
  report(3, a && b && c, seconds_since(t0), "reduction lattice, 100 steps on a [2,16,16,3] BN model");
}

// ---------------------------------------------------------------- criterion 4

ParamSet vec(std::vector<double> v) {
  ParamSet p;
  ParamEntry e;
  e.name = "w";
  e.tensor = Tensor::vector(std::move(v));
  e.prunable = true;
  p.add(std::move(e));
  return p;
}

const optim::Objective kHalfNormSq = [](const ParamSet& w, optim::PassKind) {
  optim::Evaluation e{0.0, w};
  for (double v : w[0].tensor.data) e.loss += 0.5 * v * v;
  return e;
};

void hand_traces() {
  const auto t0 = Clock::now();
  using StepFn = optim::StepResult (*)(const optim::Objective&, ParamSet&, optim::OptimizerState&,
                                       const optim::OptimizerConfig&, double);
  struct Trace {
    const char* name;
    StepFn fn;
    optim::Algorithm algo;
    double rho;
    std::vector<double> w0, expect;
  };
  const std::vector<Trace> traces{
      {"sam_step", optim::sam_step, optim::Algorithm::sam, 0.05, {3, 4}, {2.697, 3.596}},
      {"cram_step", optim::cram_step, optim::Algorithm::cram, 0.1, {1, 2}, {1.0, 1.78}},
      {"cram_plus_step", optim::cram_plus_step, optim::Algorithm::cram_plus, 0.1, {1, 2}, {0.9, 1.58}},
      {"c_sam_step", optim::c_sam_step, optim::Algorithm::c_sam, 0.1, {3, 4}, {3.0, 3.59}},
      {"top_k_plus_step", optim::top_k_plus_step, optim::Algorithm::top_k_plus, 0.0, {1, 2}, {0.9, 1.6}},
  };
  bool ok = true;
  for (const auto& t : traces) {
    optim::OptimizerConfig cfg;
    cfg.algorithm = t.algo;
    cfg.learning_rate = 0.1;
    cfg.rho = t.rho;
    if (t.algo != optim::Algorithm::sam) cfg.operator_set = {CompressionSpec::top_k_global(0.5)};
    cfg.sparse_perturbed_grad = t.algo == optim::Algorithm::c_sam;
    ParamSet w = vec(t.w0);
    optim::OptimizerState st;
    t.fn(kHalfNormSq, w, st, cfg, 0.1);
    double err = 0.0;
    for (std::size_t i = 0; i < t.expect.size(); ++i) err = std::max(err, std::abs(w[0].tensor.data[i] - t.expect[i]));
    note(format("%-16s w' = [%.15g, %.15g], max abs error %.2e", t.name, w[0].tensor.data[0], w[0].tensor.data[1], err));
    ok = ok && err <= 1e-12;
  }
  report(4, ok, seconds_since(t0), "hand-traced optimizer steps within 1e-12");
}

// ---------------------------------------------------------------- criterion 5

void danskin() {
  const auto t0 = Clock::now();
  bool ok = true;
  for (const auto& [dim, points] : std::vector<std::pair<int, int>>{{2, 50}, {3, 50}, {4, 20}}) {
    const auto td = Clock::now();
    const CliRun r = cli_run({"danskin", "--dim", std::to_string(dim), "--rho", "0.1", "--grid", "41", "--points",
                              std::to_string(points), "--seed", "0"});
    std::size_t excluded = 0, lines = 0;
    std::istringstream in(r.out);
    for (std::string l; std::getline(in, l);) {
      std::size_t a = 0;
      const auto pos = l.find("points,");
      if (pos != std::string::npos && std::sscanf(l.c_str() + pos + 7, "%zu", &a) == 1) {
        excluded += a;
        ++lines;
      }
    }
    note(format("dim %d, grid 41, %d points: %zu checks, %zu articulation points excluded, exit %d (%.1f s)", dim,
                points, lines, excluded, r.code, seconds_since(td)));
    ok = ok && r.code == 0;
  }
  const double secs = seconds_since(t0);
  report(5, ok && secs < 120.0, secs, "descent check on the analytic zoo, dims 2-4, zero violations");
}

// ---------------------------------------------------------------- criteria 6-10

struct Experiment {
  config::RunConfig rc;
  data::Dataset ds;
  harness::TrainResult trained;
  harness::SweepReport report;
};

harness::SweepOptions sweep_options(const config::RunConfig& rc) {
  harness::SweepOptions o;
  o.trials = rc.sweep.trials;
  o.calibration_size = rc.sweep.calibration_size;
  o.bnt_batches = rc.sweep.bnt_batches;
  o.bnt_batch_size = rc.sweep.bnt_batch_size;
  o.seed = rc.seed;
  return o;
}

Experiment run_experiment(config::RunConfig rc, std::uint64_t seed, const std::vector<CompressionSpec>& specs) {
  rc.seed = seed;
  Experiment e{rc, config::make_dataset(rc.dataset, seed), {}, {}};
  harness::TrainOptions t;
  t.epochs = rc.training.epochs;
  t.batch_size = rc.training.batch_size;
  t.schedule = rc.training.schedule;
  t.seed = seed;
  t.evaluate_every_epoch = false;
  e.trained = harness::train(rc.model, rc.optimizer, e.ds, t);
  e.report = harness::sweep(e.trained.checkpoint, e.ds, specs, sweep_options(rc));
  return e;
}

const harness::SweepPoint& at(const harness::SweepReport& r, double sparsity) {
  for (const auto& p : r.points) {
    if (std::abs(p.sparsity - sparsity) < 1e-9) return p;
  }
  throw ContractError(format("no sweep point at sparsity %.2f", sparsity));
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

void experiments() {
  const config::RunConfig sgd_cfg = config::load_run_config(config_path("spirals_sgd.json"));
  const config::RunConfig cram_cfg = config::load_run_config(config_path("spirals_cram_multi.json"));
  const auto specs = cram_cfg.sweep.specs;

  // 6 and 7
  auto t0 = Clock::now();
  std::map<std::uint64_t, Experiment> sgd, cram;
  bool ok6 = true, ok7 = true;
  for (auto s : kSeeds) {
    sgd.emplace(s, run_experiment(sgd_cfg, s, specs));
    cram.emplace(s, run_experiment(cram_cfg, s, specs));
    const auto& S = sgd.at(s);
    const auto& C = cram.at(s);
    const double gap7 = 100 * (at(C.report, 0.7).post_bnt_mean - at(S.report, 0.7).post_bnt_mean);
    const double gap9 = 100 * (at(C.report, 0.9).post_bnt_mean - at(S.report, 0.9).post_bnt_mean);
    const double drop7 = 100 * (C.report.dense_accuracy - at(C.report, 0.7).post_bnt_mean);
    const bool pass = gap7 >= 5.0 && gap9 >= 5.0 && drop7 <= 2.0;
    note(format("seed %llu: passes sgd %zu cram+ %zu; dense sgd %.4f cram+ %.4f; post-BNT 0.7 sgd %.4f cram+ %.4f; "
                "0.9 sgd %.4f cram+ %.4f; gap7 %+.1f gap9 %+.1f drop7 %.1f %s",
                static_cast<unsigned long long>(s), S.trained.log.passes, C.trained.log.passes,
                S.report.dense_accuracy, C.report.dense_accuracy, at(S.report, 0.7).post_bnt_mean,
                at(C.report, 0.7).post_bnt_mean, at(S.report, 0.9).post_bnt_mean, at(C.report, 0.9).post_bnt_mean,
                gap7, gap9, drop7, pass ? "ok" : "FAIL"));
    ok6 = ok6 && pass && S.trained.log.passes == C.trained.log.passes;

    const auto& p9 = at(C.report, 0.9);
    const bool bnt_ok = p9.post_bnt_mean > p9.pre_bnt && 100 * p9.post_bnt_std <= 1.0;
    ok7 = ok7 && bnt_ok;
  }
  report(6, ok6 && seconds_since(t0) < 900.0, seconds_since(t0),
         "CrAM+-Multi vs SGD at matched passes: post-BNT gap >= 5 points at 0.7 and 0.9, dense drop at 0.7 <= 2, "
         "every seed");
  for (auto s : kSeeds) {
    const auto& p9 = at(cram.at(s).report, 0.9);
    note(format("seed %llu: 0.9 sparsity pre-BNT %.4f, post-BNT %.4f +- %.4f over %zu trials",
                static_cast<unsigned long long>(s), p9.pre_bnt, p9.post_bnt_mean, p9.post_bnt_std, p9.trials.size()));
  }
  report(7, ok7, 0.0, "BNT raises CrAM+-Multi accuracy at 0.9 sparsity with trial std <= 1 point, every seed");

  // 8
  t0 = Clock::now();
  bool ok8 = true;
  const std::vector<CompressionSpec> at80{CompressionSpec::top_k_global(0.8)};
  for (auto s : kSeeds) {
    config::RunConfig k70 = cram_cfg;
    k70.optimizer.operator_set = {CompressionSpec::top_k_global(0.7)};
    k70.optimizer.sparse_perturbed_grad = true;
    const double sparse = at(run_experiment(k70, s, at80).report, 0.8).post_bnt_mean;
    k70.optimizer.sparse_perturbed_grad = false;
    const double dense = at(run_experiment(k70, s, at80).report, 0.8).post_bnt_mean;
    note(format("seed %llu: one-shot 0.8 post-BNT sparse-grad %.4f dense-grad %.4f",
                static_cast<unsigned long long>(s), sparse, dense));
    ok8 = ok8 && sparse >= dense - 0.01;
  }
  report(8, ok8, seconds_since(t0), "CrAM+-k70 sparse perturbed gradients within 1 point of dense ones, every seed");

  // 9: tau = 1 is the criterion-6 CrAM+-Multi run
  t0 = Clock::now();
  std::map<double, double> mean1, mean20;
  for (auto s : kSeeds) {
    config::RunConfig slow = cram_cfg;
    slow.optimizer.mask_refresh_period = 20;
    const Experiment e = run_experiment(slow, s, specs);
    std::string line = format("seed %llu:", static_cast<unsigned long long>(s));
    for (const auto& spec : specs) {
      const double a = at(cram.at(s).report, spec.sparsity).post_bnt_mean;
      const double b = at(e.report, spec.sparsity).post_bnt_mean;
      mean1[spec.sparsity] += a / static_cast<double>(kSeeds.size());
      mean20[spec.sparsity] += b / static_cast<double>(kSeeds.size());
      line += format("  %.1f tau1 %.4f tau20 %.4f", spec.sparsity, a, b);
    }
    note(line + format("  (%zu vs %zu mask computations)", cram.at(s).trained.log.mask_computations,
                       e.trained.log.mask_computations));
  }
  bool ok9 = true;
  std::string summary;
  for (const auto& [sp, m1] : mean1) {
    const double diff = 100 * (mean20[sp] - m1);
    summary += format("  %.1f: %+.2f", sp, diff);
    ok9 = ok9 && std::abs(diff) <= 2.0;
  }
  note("3-seed mean difference tau20 - tau1 (points):" + summary);
  report(9, ok9, seconds_since(t0), "tau=20 sweep points within 2 points of tau=1 at 0.5/0.7/0.9 (3-seed means)");

  // 10
  t0 = Clock::now();
  const fs::path dir = fs::path(CRAM_TEST_DATA_DIR);
  fs::create_directories(dir);
  bool ok10 = true;
  for (const auto* runs : {&sgd, &cram}) {
    for (const auto& [s, e] : *runs) {
      for (bool f32 : {false, true}) {
        const fs::path p = dir / format("seed%llu%s.ckpt", static_cast<unsigned long long>(s), f32 ? "_f32" : "");
        save_checkpoint(e.trained.checkpoint, p, f32);
        const Checkpoint back = load_checkpoint(p);
        if (!f32) {
          ok10 = ok10 && back == e.trained.checkpoint;
        } else {
          // a second f32 save reproduces the file exactly
          ok10 = ok10 && serialize_checkpoint(back, true) == serialize_checkpoint(e.trained.checkpoint, true);
        }
      }
    }
  }
  note(std::string("checkpoint round trip (f64 bitwise, f32 re-save byte-identical): ") + (ok10 ? "ok" : "FAIL"));

  // retrain from scratch with the same (seed, config, dataset), sweep under a different thread count
  const int threads = kernels::num_threads();
  kernels::set_num_threads(threads == 1 ? 4 : 1);
  const Experiment again = run_experiment(cram_cfg, 1, specs);
  kernels::set_num_threads(threads);
  const std::string first = harness::to_json(cram.at(1).report).dump(2);
  const std::string second = harness::to_json(again.report).dump(2);
  const bool same_report = first == second;
  const bool same_ckpt = serialize_checkpoint(again.trained.checkpoint) == serialize_checkpoint(cram.at(1).trained.checkpoint);
  note(format("retrained checkpoint byte-identical: %s; SweepReport JSON byte-identical (%zu bytes): %s",
              same_ckpt ? "yes" : "no", first.size(), same_report ? "yes" : "no"));
  report(10, ok10 && same_report && same_ckpt, seconds_since(t0), "persistence and determinism");
}

}  // namespace

int main() {
  kernels::configure_from_env();
  std::printf("acceptance suite (%d worker threads)\n", kernels::num_threads());
  const auto t0 = Clock::now();
  try {
    gradient_oracle();
    operator_properties();
    reduction_lattice();
    hand_traces();
    danskin();
    experiments();
  } catch (const std::exception& e) {
    std::printf("acceptance suite aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d criteria failed; total %.1f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
