#include "cram/param_set.hpp"

#include <algorithm>
#include <cmath>

#include "cram/errors.hpp"

namespace cram {

std::string_view role_name(ParamRole role) {
  switch (role) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::bn_scale: return "bn_scale";
    case ParamRole::bn_shift: return "bn_shift";
  }
  return "unknown";
}

void ParamSet::add(ParamEntry entry) {
  if (find(entry.name)) throw ContractError("duplicate parameter name '" + entry.name + "'");
  if (entry.prunable && entry.role != ParamRole::weight) {
    throw ContractError("parameter '" + entry.name + "' with role " + std::string(role_name(entry.role)) +
                        " cannot be prunable");
  }
  entry.tensor.grad.reset();
  entries_.push_back(std::move(entry));
}

std::optional<std::size_t> ParamSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

const ParamEntry& ParamSet::at(std::string_view name) const {
  if (auto i = find(name)) return entries_[*i];
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

ParamEntry& ParamSet::at(std::string_view name) {
  if (auto i = find(name)) return entries_[*i];
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

std::size_t ParamSet::prunable_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.prunable) n += e.tensor.size();
  }
  return n;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const auto& e : entries_) flat.insert(flat.end(), e.tensor.data.begin(), e.tensor.data.end());
  return flat;
}

void ParamSet::unflatten(std::span<const double> flat) {
  if (flat.size() != total_size()) {
    throw ShapeError("unflatten: expected " + std::to_string(total_size()) + " values, got " +
                     std::to_string(flat.size()));
  }
  std::size_t offset = 0;
  for (auto& e : entries_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), e.tensor.size(), e.tensor.data.begin());
    offset += e.tensor.size();
  }
}

ParamSet ParamSet::filled_like(double value) const {
  ParamSet out = *this;
  for (auto& e : out.entries_) {
    std::fill(e.tensor.data.begin(), e.tensor.data.end(), value);
    e.tensor.grad.reset();
  }
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || entries_[i].tensor.shape != other.entries_[i].tensor.shape) {
      return false;
    }
  }
  return true;
}

bool ParamSet::same_values(const ParamSet& other) const {
  if (!same_layout(other)) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].tensor.data != other.entries_[i].tensor.data) return false;
  }
  return true;
}

void require_same_layout(const ParamSet& a, const ParamSet& b, std::string_view context) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(context) + ": " + std::to_string(a.size()) + " entries vs " +
                     std::to_string(b.size()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].tensor.shape != b[i].tensor.shape) {
      throw ShapeError(std::string(context) + ": entry '" + a[i].name + "' has shape " +
                       shape_string(a[i].tensor.shape) + " vs " + shape_string(b[i].tensor.shape));
    }
  }
}

void axpy(double alpha, const ParamSet& x, ParamSet& y) {
  require_same_layout(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto& xs = x[i].tensor.data;
    auto& ys = y[i].tensor.data;
    for (std::size_t j = 0; j < xs.size(); ++j) ys[j] += alpha * xs[j];
  }
}

double dot(const ParamSet& a, const ParamSet& b) {
  require_same_layout(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& xs = a[i].tensor.data;
    const auto& ys = b[i].tensor.data;
    for (std::size_t j = 0; j < xs.size(); ++j) s += xs[j] * ys[j];
  }
  return s;
}

double l2_norm(const ParamSet& p) { return std::sqrt(dot(p, p)); }

bool all_finite(const ParamSet& p) {
  for (const auto& e : p) {
    if (!e.tensor.all_finite()) return false;
  }
  return true;
}

}  // namespace cram
