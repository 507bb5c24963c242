#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cram/tensor.hpp"

namespace cram {

enum class ParamRole { weight, bias, bn_scale, bn_shift };

std::string_view role_name(ParamRole role);

struct ParamEntry {
  std::string name;
  Tensor tensor;
  bool prunable = false;
  ParamRole role = ParamRole::weight;
  bool first_layer = false;
  bool last_layer = false;
};

/// Named, ordered parameters. Also used as the container for gradients and
/// optimizer buffers, which share the layout of the parameters they belong to.
class ParamSet {
 public:
  ParamSet() = default;

  /// Throws ContractError on duplicate names or a prunable bias/BN entry.
  void add(ParamEntry entry);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  ParamEntry& operator[](std::size_t i) { return entries_[i]; }
  const ParamEntry& operator[](std::size_t i) const { return entries_[i]; }
  std::span<ParamEntry> entries() { return entries_; }
  std::span<const ParamEntry> entries() const { return entries_; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::optional<std::size_t> find(std::string_view name) const;
  const ParamEntry& at(std::string_view name) const;
  ParamEntry& at(std::string_view name);

  std::size_t total_size() const;
  std::size_t prunable_size() const;

  std::vector<double> flatten() const;
  /// Inverse of flatten; throws ShapeError on a length mismatch.
  void unflatten(std::span<const double> flat);

  /// Same names, shapes and flags with every value set to `value`.
  ParamSet filled_like(double value) const;
  ParamSet zeros_like() const { return filled_like(0.0); }

  bool same_layout(const ParamSet& other) const;
  /// Bitwise comparison of all values (layouts must match).
  bool same_values(const ParamSet& other) const;

 private:
  std::vector<ParamEntry> entries_;
};

/// y += alpha * x
void axpy(double alpha, const ParamSet& x, ParamSet& y);
double dot(const ParamSet& a, const ParamSet& b);
double l2_norm(const ParamSet& p);
bool all_finite(const ParamSet& p);
/// Throws ShapeError naming the first mismatching entry.
void require_same_layout(const ParamSet& a, const ParamSet& b, std::string_view context);

}  // namespace cram
