#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cram {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient slot.
/// Rank 0 is a scalar holding one value.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::optional<std::vector<double>> grad;

  Tensor() : data(1, 0.0) {}
  /// Throws ShapeError when the element count does not match the shape.
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return shape.empty(); }
  /// Row/column view for rank-2 tensors; rank-1 tensors are one row.
  std::size_t rows() const;
  std::size_t cols() const;
  double item() const;

  std::span<double> values() { return data; }
  std::span<const double> values() const { return data; }

  bool all_finite() const;
  bool same_values(const Tensor& other) const { return shape == other.shape && data == other.data; }
};

bool all_finite(std::span<const double> values);

}  // namespace cram
