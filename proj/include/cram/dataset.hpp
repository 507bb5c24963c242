#pragma once

// In-memory classification datasets: synthetic generators and MNIST IDX files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cram/model.hpp"
#include "cram/tensor.hpp"

namespace cram::data {

enum class Provenance { synthetic_gaussian_mixture, synthetic_two_spirals, mnist_idx };

std::string_view provenance_name(Provenance p);
/// Accepts "gaussian_mixture", "two_spirals", "mnist_idx" and the full names.
Provenance parse_provenance(std::string_view s);

struct Dataset {
  Tensor features;  // [N, D]
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  /// Pool calibration sets are drawn from; a subset of `train`.
  std::vector<std::size_t> calibration;
  Provenance provenance = Provenance::synthetic_gaussian_mixture;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.shape.size() == 2 ? features.shape[1] : 0; }

  /// Throws ContractError if labels or splits break the dataset invariants.
  void validate() const;

  /// FNV-1a over features, labels and splits.
  std::uint64_t fingerprint() const;

  nn::Batch gather(std::span<const std::size_t> rows) const;
  nn::Batch split(std::span<const std::size_t> rows) const { return gather(rows); }
};

struct SyntheticOptions {
  Provenance kind = Provenance::synthetic_gaussian_mixture;
  std::size_t n = 1000;
  int num_classes = 2;
  double noise = 0.1;
  std::uint64_t seed = 0;
  /// Feature dimension of the Gaussian mixture; spirals are always 2-D.
  std::size_t dim = 2;
  double test_fraction = 0.2;
  bool operator==(const SyntheticOptions&) const = default;
};

/// Deterministic for a fixed seed; labels are balanced within one.
Dataset make_synthetic(const SyntheticOptions& options);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1]. Every row lands in the train split.
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Train rows from one IDX pair (at most `max_train`), test rows from another.
Dataset load_mnist_train_test(const std::filesystem::path& train_images, const std::filesystem::path& train_labels,
                              const std::filesystem::path& test_images, const std::filesystem::path& test_labels,
                              std::size_t max_train);

/// `count` train rows sampled without replacement, as even across classes as
/// the pool allows.
std::vector<std::size_t> sample_class_balanced(const Dataset& ds, std::size_t count, std::uint64_t seed);

}  // namespace cram::data
