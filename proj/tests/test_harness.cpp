#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cram/checkpoint.hpp"
#include "cram/dataset.hpp"
#include "cram/errors.hpp"
#include "cram/harness.hpp"

using namespace cram;
using namespace cram::harness;
using compress::CompressionSpec;

namespace {

data::Dataset mixture(std::uint64_t seed = 1, double noise = 0.3, std::size_t n = 400) {
  data::SyntheticOptions o;
  o.kind = data::Provenance::synthetic_gaussian_mixture;
  o.n = n;
  o.num_classes = 3;
  o.noise = noise;
  o.seed = seed;
  return data::make_synthetic(o);
}

nn::ModelConfig mlp(std::size_t in, std::size_t hidden, std::size_t out, bool bn = true) {
  nn::ModelConfig c;
  c.layer_widths = {in, hidden, hidden, out};
  c.use_batchnorm = bn;
  return c;
}

optim::OptimizerConfig sgd(double lr = 0.05) {
  optim::OptimizerConfig c;
  c.algorithm = optim::Algorithm::sgd;
  c.learning_rate = lr;
  c.momentum = 0.9;
  return c;
}

TrainOptions options(std::size_t epochs, std::uint64_t seed = 3) {
  TrainOptions t;
  t.epochs = epochs;
  t.batch_size = 32;
  t.seed = seed;
  return t;
}

const TrainResult& trained_mixture() {
  static const TrainResult r = [] {
    optim::OptimizerConfig c = sgd();
    c.algorithm = optim::Algorithm::cram_plus;
    c.operator_set = compress::parse_spec_list("topk_global:0.5,0.7");
    c.sparse_perturbed_grad = true;
    return train(mlp(2, 16, 3), c, mixture(), options(8));
  }();
  return r;
}

std::filesystem::path temp_dir() {
  auto p = std::filesystem::temp_directory_path() / "cram_harness_tests";
  std::filesystem::create_directories(p);
  return p;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

// Linear softmax classifier by full-batch gradient descent.
double linear_probe_accuracy(const data::Dataset& ds) {
  const std::size_t d = ds.dim(), k = static_cast<std::size_t>(ds.num_classes);
  std::vector<double> w(k * (d + 1), 0.0);
  auto logits = [&](std::size_t row, std::vector<double>& z) {
    for (std::size_t c = 0; c < k; ++c) {
      z[c] = w[c * (d + 1) + d];
      for (std::size_t j = 0; j < d; ++j) z[c] += w[c * (d + 1) + j] * ds.features.data[row * d + j];
    }
  };
  std::vector<double> z(k), grad(w.size());
  for (int it = 0; it < 2000; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t row : ds.train) {
      logits(row, z);
      const double mx = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (double& v : z) s += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < k; ++c) {
        const double p = z[c] / s - (static_cast<int>(c) == ds.labels[row] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) grad[c * (d + 1) + j] += p * ds.features.data[row * d + j];
        grad[c * (d + 1) + d] += p;
      }
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.5 * grad[i] / static_cast<double>(ds.train.size());
  }
  std::size_t correct = 0;
  for (std::size_t row : ds.test) {
    logits(row, z);
    correct += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == ds.labels[row];
  }
  return static_cast<double>(correct) / static_cast<double>(ds.test.size());
}

}  // namespace

TEST_CASE("synthetic data is deterministic and class balanced") {
  const auto a = mixture(5), b = mixture(5), c = mixture(6);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.features.data == b.features.data);
  CHECK(a.fingerprint() != c.fingerprint());
  a.validate();
  std::vector<int> counts(3, 0);
  for (int y : a.labels) ++counts[static_cast<std::size_t>(y)];
  CHECK(counts[0] - counts[2] <= 1);
  CHECK(a.train.size() + a.test.size() == a.size());
  CHECK(a.test.size() == 80);

  data::SyntheticOptions bad;
  bad.num_classes = 1;
  CHECK_THROWS_AS(data::make_synthetic(bad), ContractError);
}

TEST_CASE("noiseless gaussian mixture is separable") {
  const auto ds = mixture(2, 0.0);
  CHECK(linear_probe_accuracy(ds) == 1.0);
}

TEST_CASE("two spirals are not linearly separable") {
  data::SyntheticOptions o;
  o.kind = data::Provenance::synthetic_two_spirals;
  o.n = 600;
  o.num_classes = 2;
  o.noise = 0.0;
  o.seed = 1;
  CHECK(linear_probe_accuracy(data::make_synthetic(o)) < 0.95);
}

TEST_CASE("MNIST IDX parsing") {
  const auto dir = temp_dir();
  std::string img, lbl;
  put_u32(img, 0x00000803);
  put_u32(img, 3);
  put_u32(img, 2);
  put_u32(img, 2);
  for (int i = 0; i < 12; ++i) img.push_back(static_cast<char>(i == 0 ? 255 : i * 10));
  put_u32(lbl, 0x00000801);
  put_u32(lbl, 3);
  lbl += std::string{char(7), char(0), char(9)};
  write_bytes(dir / "img", img);
  write_bytes(dir / "lbl", lbl);
  const auto ds = data::load_mnist_idx(dir / "img", dir / "lbl");
  CHECK(ds.size() == 3);
  CHECK(ds.dim() == 4);
  CHECK(ds.features.data[0] == 1.0);
  CHECK(ds.features.data[1] == doctest::Approx(10.0 / 255.0));
  CHECK(ds.labels == std::vector<int>{7, 0, 9});
  CHECK(ds.num_classes == 10);
  CHECK(ds.train.size() == 3);

  std::string bad_magic = img;
  bad_magic[3] = 0x04;
  write_bytes(dir / "bad", bad_magic);
  try {
    data::load_mnist_idx(dir / "bad", dir / "lbl");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }

  std::string short_lbl;
  put_u32(short_lbl, 0x00000801);
  put_u32(short_lbl, 2);
  short_lbl += std::string{char(1), char(2)};
  write_bytes(dir / "short", short_lbl);
  CHECK_THROWS_AS(data::load_mnist_idx(dir / "img", dir / "short"), FormatError);
  write_bytes(dir / "trunc", img.substr(0, 20));
  CHECK_THROWS_AS(data::load_mnist_idx(dir / "trunc", dir / "lbl"), FormatError);
  CHECK_THROWS_AS(data::load_mnist_idx(dir / "missing", dir / "lbl"), IoError);
}

TEST_CASE("class-balanced calibration sampling") {
  const auto ds = mixture();
  const auto rows = data::sample_class_balanced(ds, 30, 4);
  CHECK(rows.size() == 30);
  CHECK(std::set<std::size_t>(rows.begin(), rows.end()).size() == 30);
  std::vector<int> counts(3, 0);
  for (auto r : rows) ++counts[static_cast<std::size_t>(ds.labels[r])];
  CHECK(counts == std::vector<int>{10, 10, 10});
  CHECK(rows == data::sample_class_balanced(ds, 30, 4));
  CHECK_THROWS_AS(data::sample_class_balanced(ds, ds.calibration.size() + 1, 4), ContractError);
}

TEST_CASE("zero epochs returns the initialization") {
  const auto r = train(mlp(2, 8, 3), sgd(), mixture(), options(0, 11));
  const auto init = nn::init_model(mlp(2, 8, 3), Rng::derive(11, kInit));
  CHECK(r.checkpoint.params.same_values(init.params));
  CHECK(r.log.steps == 0);
}

TEST_CASE("SGD fits a separable mixture") {
  const auto ds = mixture(1, 0.05);
  const auto r = train(mlp(2, 16, 3), sgd(), ds, options(15));
  CHECK(accuracy(r.checkpoint, ds) >= 0.99);
  CHECK(r.log.epochs.size() == 15);
  CHECK(r.log.passes == r.log.steps);
}

TEST_CASE("training is bitwise reproducible") {
  optim::OptimizerConfig c = sgd();
  c.algorithm = optim::Algorithm::cram_plus;
  c.operator_set = compress::parse_spec_list("topk_global:0.5,0.7");
  c.sparse_perturbed_grad = true;
  c.p_plain_step = 0.2;
  const auto a = train(mlp(2, 8, 3), c, mixture(), options(2));
  const auto b = train(mlp(2, 8, 3), c, mixture(), options(2));
  CHECK(a.checkpoint == b.checkpoint);
  CHECK(to_json(a.log).dump() == to_json(b.log).dump());
  CHECK(a.log.passes == 2 * a.log.steps - a.log.epochs[0].plain_steps - a.log.epochs[1].plain_steps);
}

TEST_CASE("one-shot compression") {
  const auto& r = trained_mixture();
  const auto spec = CompressionSpec::top_k_global(0.7);
  const Checkpoint once = one_shot_compress(r.checkpoint, spec);
  CHECK(compress::achieved_sparsity(once.params) == doctest::Approx(0.7).epsilon(0.01));
  CHECK(one_shot_compress(once, spec).params.same_values(once.params));
  CHECK(once.extra["compression"] == "topk_global:0.7");
}

TEST_CASE("BNT re-estimates statistics and nothing else") {
  const auto& r = trained_mixture();
  const auto ds = mixture();
  const Checkpoint sparse = one_shot_compress(r.checkpoint, CompressionSpec::top_k_global(0.7));
  const auto calib = data::sample_class_balanced(ds, 60, 1);
  const Checkpoint tuned = bnt(sparse, ds, calib, 20, 16, 2);
  CHECK(tuned.params.same_values(sparse.params));
  CHECK(tuned.bn.layers[0].running_mean != sparse.bn.layers[0].running_mean);
  CHECK(tuned.bn.momentum == sparse.bn.momentum);
  CHECK(bnt(sparse, ds, calib, 20, 16, 2) == tuned);

  const Checkpoint prior = bnt(sparse, ds, calib, 0, 16, 2);
  CHECK(prior.extra["bnt"]["prior_only"] == true);
  for (double v : prior.bn.layers[0].running_mean) CHECK(v == 0.0);
  for (double v : prior.bn.layers[0].running_var) CHECK(v == 1.0);

  const auto no_bn = train(mlp(2, 8, 3, false), sgd(), ds, options(1));
  const Checkpoint same = bnt(no_bn.checkpoint, ds, calib, 5, 16, 2);
  CHECK(same.params.same_values(no_bn.checkpoint.params));
  CHECK(same.extra["bnt"].contains("warning"));
}

TEST_CASE("sweep reports") {
  const auto& r = trained_mixture();
  const auto ds = mixture();
  SweepOptions o;
  o.trials = 1;
  o.calibration_size = 30;
  o.bnt_batches = 10;
  o.bnt_batch_size = 16;
  o.seed = 5;
  const std::vector<CompressionSpec> specs{CompressionSpec::top_k_global(0.0), CompressionSpec::top_k_global(0.7)};
  const auto one = sweep(r.checkpoint, ds, specs, o);
  REQUIRE(one.points.size() == 2);
  CHECK(one.points[0].post_bnt_std == 0.0);
  CHECK(one.points[0].pre_bnt == one.dense_accuracy);
  CHECK(one.dense_accuracy == accuracy(r.checkpoint, ds));
  CHECK(one.points[1].achieved_sparsity == doctest::Approx(0.7).epsilon(0.01));

  o.trials = 4;
  const auto a = sweep(r.checkpoint, ds, specs, o);
  const auto b = sweep(r.checkpoint, ds, specs, o);
  CHECK(to_json(a).dump() == to_json(b).dump());
  const auto& t = a.points[1].trials;
  REQUIRE(t.size() == 4);
  double mean = 0.0, var = 0.0;
  for (double x : t) mean += x / 4;
  for (double x : t) var += (x - mean) * (x - mean) / 4;
  CHECK(a.points[1].post_bnt_mean == doctest::Approx(mean));
  CHECK(a.points[1].post_bnt_std == doctest::Approx(std::sqrt(var)));
  CHECK(to_json(a)["schema_version"] == kReportSchemaVersion);
  CHECK(a.mask_stability.size() == 2);

  o.calibration_size = ds.calibration.size() + 1;
  CHECK_THROWS_AS(sweep(r.checkpoint, ds, specs, o), ContractError);
}

TEST_CASE("mask stability summary") {
  const std::vector<optim::MaskDiffEntry> log{{1, "a", 0.01}, {2, "b", 0.5}, {3, "a", 0.03}};
  const auto s = mask_stability_report(log);
  REQUIRE(s.size() == 2);
  CHECK(s[0].spec == "a");
  CHECK(s[0].entries == 2);
  CHECK(s[0].mean == doctest::Approx(0.02));
  CHECK(s[0].max == 0.03);
}

TEST_CASE("checkpoint round trip") {
  const auto& r = trained_mixture();
  const auto path = temp_dir() / "model.ckpt";
  save_checkpoint(r.checkpoint, path);
  CHECK(load_checkpoint(path) == r.checkpoint);
  CHECK(serialize_checkpoint(load_checkpoint(path)) == serialize_checkpoint(r.checkpoint));

  save_checkpoint(r.checkpoint, path, true);
  const Checkpoint f32 = load_checkpoint(path);
  for (std::size_t i = 0; i < f32.params.size(); ++i) {
    for (std::size_t j = 0; j < f32.params[i].tensor.size(); ++j) {
      const double v = r.checkpoint.params[i].tensor.data[j];
      CHECK(f32.params[i].tensor.data[j] == static_cast<double>(static_cast<float>(v)));
    }
  }

  std::string bytes = serialize_checkpoint(r.checkpoint);
  std::string wrong = bytes;
  wrong[0] = 'X';
  try {
    deserialize_checkpoint(wrong);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(temp_dir() / "absent.ckpt"), IoError);
}

TEST_CASE("divergence is reported") {
  optim::OptimizerConfig c = sgd(1e200);
  c.weight_decay = 0.1;
  try {
    train(mlp(2, 8, 3), c, mixture(), options(3));
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    REQUIRE(e.log().epochs.size() == 1);
    CHECK(2 * e.log().epochs[0].aborted_steps > e.log().epochs[0].steps);
    CHECK_FALSE(e.log().events.empty());
  }
}
