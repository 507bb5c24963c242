#include "cram/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "cram/errors.hpp"
#include "cram/rng.hpp"

namespace cram::data {
namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv(std::uint64_t& h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

void fnv_u64(std::uint64_t& h, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  fnv(h, b, 8);
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& file) {
  if (buf.size() < offset + 4) throw FormatError(file + ": truncated header", offset);
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void split_train_test(Dataset& ds, double test_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(order.size())));
  ds.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  ds.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.test.begin(), ds.test.end());
  ds.calibration = ds.train;
}

}  // namespace

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::synthetic_gaussian_mixture: return "synthetic_gaussian_mixture";
    case Provenance::synthetic_two_spirals: return "synthetic_two_spirals";
    case Provenance::mnist_idx: return "mnist_idx";
  }
  return "unknown";
}

Provenance parse_provenance(std::string_view s) {
  if (s == "gaussian_mixture" || s == "synthetic_gaussian_mixture") return Provenance::synthetic_gaussian_mixture;
  if (s == "two_spirals" || s == "spirals" || s == "synthetic_two_spirals") return Provenance::synthetic_two_spirals;
  if (s == "mnist" || s == "mnist_idx") return Provenance::mnist_idx;
  throw InputError("unknown dataset kind '" + std::string(s) + "'");
}

void Dataset::validate() const {
  if (features.rank() != 2 || features.shape[0] != labels.size()) {
    throw ContractError("dataset: features must be [N, D] with one label per row");
  }
  if (num_classes < 2) throw ContractError("dataset: need at least two classes");
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ContractError("dataset: label " + std::to_string(y) + " out of range");
  }
  std::vector<std::uint8_t> tag(size(), 0);
  for (auto i : train) {
    if (i >= size()) throw ContractError("dataset: train index out of range");
    tag[i] |= 1;
  }
  for (auto i : test) {
    if (i >= size()) throw ContractError("dataset: test index out of range");
    if (tag[i] & 1) throw ContractError("dataset: row " + std::to_string(i) + " is in both train and test");
    tag[i] |= 2;
  }
  for (auto i : calibration) {
    if (i >= size() || !(tag[i] & 1)) throw ContractError("dataset: calibration row outside train split");
  }
}

std::uint64_t Dataset::fingerprint() const {
  std::uint64_t h = kFnvOffset;
  for (auto d : features.shape) fnv_u64(h, d);
  fnv(h, features.data.data(), features.data.size() * sizeof(double));
  for (int y : labels) fnv_u64(h, static_cast<std::uint64_t>(y));
  fnv_u64(h, static_cast<std::uint64_t>(num_classes));
  for (const auto* part : {&train, &test, &calibration}) {
    fnv_u64(h, part->size());
    for (auto i : *part) fnv_u64(h, i);
  }
  return h;
}

nn::Batch Dataset::gather(std::span<const std::size_t> rows) const {
  const std::size_t d = dim();
  if (rows.empty()) throw ContractError("dataset: empty batch");
  nn::Batch b{Tensor::zeros({rows.size(), d}), {}};
  b.labels.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= size()) throw ContractError("dataset: row index out of range");
    std::copy_n(features.data.begin() + static_cast<std::ptrdiff_t>(rows[r] * d), d,
                b.features.data.begin() + static_cast<std::ptrdiff_t>(r * d));
    b.labels.push_back(labels[rows[r]]);
  }
  return b;
}

Dataset make_synthetic(const SyntheticOptions& o) {
  if (o.num_classes < 2) throw ContractError("make_synthetic: need at least two classes");
  if (o.n < static_cast<std::size_t>(o.num_classes) * 10) {
    throw ContractError("make_synthetic: n must be at least 10 per class");
  }
  if (!(o.noise >= 0.0)) throw ContractError("make_synthetic: noise must be non-negative");
  if (!(o.test_fraction >= 0.0 && o.test_fraction < 1.0)) throw ContractError("make_synthetic: test_fraction in [0,1)");
  const auto k = static_cast<std::size_t>(o.num_classes);
  Dataset ds;
  ds.num_classes = o.num_classes;
  ds.provenance = o.kind;
  ds.labels.resize(o.n);
  Rng rng(Rng::derive(o.seed, 0));

  if (o.kind == Provenance::synthetic_gaussian_mixture) {
    if (o.dim == 0) throw ContractError("make_synthetic: dim must be positive");
    std::vector<double> means(k * o.dim);
    for (double& m : means) m = 3.0 * rng.normal();
    ds.features = Tensor::zeros({o.n, o.dim});
    for (std::size_t i = 0; i < o.n; ++i) {
      const std::size_t c = i % k;
      ds.labels[i] = static_cast<int>(c);
      for (std::size_t j = 0; j < o.dim; ++j) ds.features.data[i * o.dim + j] = means[c * o.dim + j] + o.noise * rng.normal();
    }
  } else if (o.kind == Provenance::synthetic_two_spirals) {
    // Arm c: radius r in (0, 1], angle 3 pi r + 2 pi c / k.
    ds.features = Tensor::zeros({o.n, 2});
    const std::size_t per_arm = (o.n + k - 1) / k;
    for (std::size_t i = 0; i < o.n; ++i) {
      const std::size_t c = i % k;
      const std::size_t j = i / k;
      const double r = 0.05 + 0.95 * static_cast<double>(j) / static_cast<double>(std::max<std::size_t>(per_arm - 1, 1));
      const double theta = 3.0 * std::numbers::pi * r + 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
      ds.labels[i] = static_cast<int>(c);
      ds.features.data[2 * i] = r * std::cos(theta) + o.noise * rng.normal();
      ds.features.data[2 * i + 1] = r * std::sin(theta) + o.noise * rng.normal();
    }
  } else {
    throw ContractError("make_synthetic: mnist_idx is not a synthetic kind");
  }
  split_train_test(ds, o.test_fraction, Rng::derive(o.seed, 1));
  return ds;
}

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lbl = read_file(labels);
  const std::string iname = images.string(), lname = labels.string();
  if (const auto magic = read_be32(img, 0, iname); magic != 0x00000803) {
    throw FormatError(iname + ": bad image magic " + std::to_string(magic), 0);
  }
  if (const auto magic = read_be32(lbl, 0, lname); magic != 0x00000801) {
    throw FormatError(lname + ": bad label magic " + std::to_string(magic), 0);
  }
  const std::size_t n = read_be32(img, 4, iname);
  const std::size_t rows = read_be32(img, 8, iname);
  const std::size_t cols = read_be32(img, 12, iname);
  const std::size_t n_labels = read_be32(lbl, 4, lname);
  if (n != n_labels) {
    throw FormatError("image count " + std::to_string(n) + " does not match label count " + std::to_string(n_labels), 4);
  }
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(iname + ": empty image set", 4);
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n * d) throw FormatError(iname + ": truncated pixel data", img.size());
  if (lbl.size() < 8 + n) throw FormatError(lname + ": truncated label data", lbl.size());

  Dataset ds;
  ds.provenance = Provenance::mnist_idx;
  ds.features = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n * d; ++i) ds.features.data[i] = static_cast<double>(img[16 + i]) / 255.0;
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lbl[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = std::max(max_label + 1, 2);
  ds.train.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.train[i] = i;
  ds.calibration = ds.train;
  return ds;
}

Dataset load_mnist_train_test(const std::filesystem::path& train_images, const std::filesystem::path& train_labels,
                              const std::filesystem::path& test_images, const std::filesystem::path& test_labels,
                              std::size_t max_train) {
  Dataset tr = load_mnist_idx(train_images, train_labels);
  const Dataset te = load_mnist_idx(test_images, test_labels);
  if (tr.dim() != te.dim()) throw FormatError("train and test images differ in size", 8);
  const std::size_t n_train = std::min(max_train, tr.size());
  const std::size_t d = tr.dim();
  Dataset ds;
  ds.provenance = Provenance::mnist_idx;
  ds.num_classes = std::max(tr.num_classes, te.num_classes);
  ds.features = Tensor::zeros({n_train + te.size(), d});
  std::copy_n(tr.features.data.begin(), n_train * d, ds.features.data.begin());
  std::copy(te.features.data.begin(), te.features.data.end(), ds.features.data.begin() + static_cast<std::ptrdiff_t>(n_train * d));
  ds.labels.assign(tr.labels.begin(), tr.labels.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.labels.insert(ds.labels.end(), te.labels.begin(), te.labels.end());
  for (std::size_t i = 0; i < ds.size(); ++i) (i < n_train ? ds.train : ds.test).push_back(i);
  ds.calibration = ds.train;
  return ds;
}

std::vector<std::size_t> sample_class_balanced(const Dataset& ds, std::size_t count, std::uint64_t seed) {
  if (count > ds.calibration.size()) {
    throw ContractError("calibration size " + std::to_string(count) + " exceeds the " +
                        std::to_string(ds.calibration.size()) + " available train rows");
  }
  const auto k = static_cast<std::size_t>(ds.num_classes);
  std::vector<std::vector<std::size_t>> by_class(k);
  for (auto i : ds.calibration) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  Rng rng(seed);
  for (auto& rows : by_class) rng.shuffle(rows.begin(), rows.end());
  // Round-robin over classes until `count` rows are taken.
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t round = 0; out.size() < count; ++round) {
    for (std::size_t c = 0; c < k && out.size() < count; ++c) {
      if (round < by_class[c].size()) out.push_back(by_class[c][round]);
    }
  }
  return out;
}

}  // namespace cram::data
