#pragma once

// Brute-force verification that the mask-projected gradient at the worst-case
// compressed perturbation is a descent direction for
//   F(w) = max_{|delta| <= rho} L(C(w + delta)),
// with the maximum taken over a fixed grid of perturbations.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cram/compression.hpp"

namespace cram::optim {

struct AnalyticObjective {
  std::string name;
  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, std::span<double>)> gradient;
};

/// Smooth test functions of the given dimension (<= 4).
std::vector<AnalyticObjective> objective_zoo(std::size_t dim);

/// Grid of `resolution` points per axis on [-rho, rho]^d restricted to the ball.
std::vector<std::vector<double>> perturbation_grid(std::size_t dim, double rho, std::size_t resolution);

struct DescentPoint {
  std::vector<double> w;
  std::vector<double> delta_star;
  double value = 0.0;        // F(w)
  double value_after = 0.0;  // F(w - t h)
  double step = 0.0;         // t
  bool excluded = false;
  std::string reason;        // why the point was excluded
  bool violation = false;
};

struct DescentReport {
  std::string objective;
  std::string spec;
  std::size_t dim = 0;
  std::size_t grid_size = 0;
  std::size_t points = 0;
  std::size_t excluded = 0;
  std::size_t violations = 0;
  bool coarse_grid = false;
  std::vector<DescentPoint> details;
};

/// Grid resolutions below this produce a warning about a coarse maximizer.
inline constexpr std::size_t kCoarseGrid = 11;

/// Runs the check at each point. `spec` must be a Top-K kind; its sparsity is
/// applied to the d coordinates. Points where the maximizer is not unique or the
/// mask is not locally constant are excluded and reported, not failed.
DescentReport danskin_descent_check(const AnalyticObjective& objective, const compress::CompressionSpec& spec,
                                    double rho, std::size_t grid_resolution,
                                    std::span<const std::vector<double>> points);

/// Seeded test points in [-1.5, 1.5]^d.
std::vector<std::vector<double>> sample_points(std::size_t dim, std::size_t count, std::uint64_t seed);

}  // namespace cram::optim
