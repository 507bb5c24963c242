#include "cram/descent_check.hpp"

#include <algorithm>
#include <cmath>

#include "cram/errors.hpp"
#include "cram/kernels.hpp"
#include "cram/rng.hpp"

namespace cram::optim {
namespace {

constexpr std::size_t kMaxDim = 4;

using Vec = std::vector<double>;

// Rank-based Top-K on at most kMaxDim entries; same tie rule as select_top_k.
void small_top_k(std::span<const double> x, std::size_t k, std::span<std::uint8_t> keep) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t ahead = 0;
    const double mi = std::abs(x[i]);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double mj = std::abs(x[j]);
      if (mj > mi || (mj == mi && j < i)) ++ahead;
    }
    keep[i] = ahead < k ? 1 : 0;
  }
}

struct Problem {
  const AnalyticObjective& objective;
  std::size_t dim;
  std::size_t keep;
  const std::vector<Vec>& grid;

  // L(C(x)) plus the mask of x.
  double compressed_value(std::span<const double> x, std::span<std::uint8_t> mask) const {
    double buf[kMaxDim];
    small_top_k(x, keep, mask);
    for (std::size_t i = 0; i < dim; ++i) buf[i] = mask[i] ? x[i] : 0.0;
    return objective.value(std::span<const double>(buf, dim));
  }

  kernels::ArgMax maximize(std::span<const double> w) const {
    return kernels::argmax(grid.size(), [&](std::size_t g) {
      double x[kMaxDim];
      std::uint8_t mask[kMaxDim];
      for (std::size_t i = 0; i < dim; ++i) x[i] = w[i] + grid[g][i];
      return compressed_value(std::span<const double>(x, dim), std::span<std::uint8_t>(mask, dim));
    });
  }

  // Mask-projected gradient M * grad L(M x) at x = w + delta.
  Vec projected_gradient(std::span<const double> w, const Vec& delta, std::vector<std::uint8_t>& mask) const {
    Vec x(dim), cx(dim), g(dim);
    mask.assign(dim, 0);
    for (std::size_t i = 0; i < dim; ++i) x[i] = w[i] + delta[i];
    small_top_k(x, keep, mask);
    for (std::size_t i = 0; i < dim; ++i) cx[i] = mask[i] ? x[i] : 0.0;
    objective.gradient(cx, g);
    for (std::size_t i = 0; i < dim; ++i) g[i] = mask[i] ? g[i] : 0.0;
    return g;
  }

  std::vector<std::uint8_t> mask_at(std::span<const double> w, const Vec& delta) const {
    Vec x(dim);
    std::vector<std::uint8_t> mask(dim);
    for (std::size_t i = 0; i < dim; ++i) x[i] = w[i] + delta[i];
    small_top_k(x, keep, mask);
    return mask;
  }
};

double norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::vector<AnalyticObjective> objective_zoo(std::size_t dim) {
  if (dim == 0 || dim > kMaxDim) throw ContractError("objective_zoo: dimension must be in [1, 4]");
  const Vec center{1.0, -0.5, 0.25, -0.125};
  const Vec curvature{1.0, 3.0, 0.5, 2.0};
  const Vec slopes{1.0, -2.0, 0.5, 1.5};
  std::vector<AnalyticObjective> zoo;
  zoo.push_back({"quadratic",
                 [](std::span<const double> x) {
                   double s = 0.0;
                   for (double v : x) s += 0.5 * v * v;
                   return s;
                 },
                 [](std::span<const double> x, std::span<double> g) { std::copy(x.begin(), x.end(), g.begin()); }});
  zoo.push_back({"shifted_quadratic",
                 [center](std::span<const double> x) {
                   double s = 0.0;
                   for (std::size_t i = 0; i < x.size(); ++i) s += 0.5 * (x[i] - center[i]) * (x[i] - center[i]);
                   return s;
                 },
                 [center](std::span<const double> x, std::span<double> g) {
                   for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] - center[i];
                 }});
  zoo.push_back({"anisotropic_quadratic",
                 [curvature](std::span<const double> x) {
                   double s = 0.0;
                   for (std::size_t i = 0; i < x.size(); ++i) s += 0.5 * curvature[i] * x[i] * x[i];
                   return s;
                 },
                 [curvature](std::span<const double> x, std::span<double> g) {
                   for (std::size_t i = 0; i < x.size(); ++i) g[i] = curvature[i] * x[i];
                 }});
  zoo.push_back({"log_sum_exp",
                 [slopes](std::span<const double> x) {
                   double s = 0.0;
                   for (std::size_t i = 0; i < x.size(); ++i) s += std::exp(slopes[i] * x[i]);
                   return std::log(s);
                 },
                 [slopes](std::span<const double> x, std::span<double> g) {
                   double s = 0.0;
                   for (std::size_t i = 0; i < x.size(); ++i) s += std::exp(slopes[i] * x[i]);
                   for (std::size_t i = 0; i < x.size(); ++i) g[i] = slopes[i] * std::exp(slopes[i] * x[i]) / s;
                 }});
  zoo.push_back({"quartic",
                 [](std::span<const double> x) {
                   double s = 0.0;
                   for (double v : x) s += 0.25 * v * v * v * v + 0.5 * v * v;
                   return s;
                 },
                 [](std::span<const double> x, std::span<double> g) {
                   for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] * x[i] * x[i] + x[i];
                 }});
  return zoo;
}

std::vector<Vec> perturbation_grid(std::size_t dim, double rho, std::size_t resolution) {
  if (dim == 0 || dim > kMaxDim) throw ContractError("perturbation_grid: dimension must be in [1, 4]");
  if (rho < 0.0) throw ContractError("perturbation_grid: rho must be non-negative");
  if (rho == 0.0 || resolution < 2) return {Vec(dim, 0.0)};
  std::vector<double> axis(resolution);
  for (std::size_t i = 0; i < resolution; ++i) {
    axis[i] = -rho + 2.0 * rho * static_cast<double>(i) / static_cast<double>(resolution - 1);
  }
  std::vector<Vec> grid;
  std::vector<std::size_t> idx(dim, 0);
  const double limit = rho * rho * (1.0 + 1e-12);
  while (true) {
    Vec d(dim);
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      d[i] = axis[idx[i]];
      sq += d[i] * d[i];
    }
    if (sq <= limit) grid.push_back(std::move(d));
    std::size_t k = 0;
    while (k < dim && ++idx[k] == resolution) idx[k++] = 0;
    if (k == dim) break;
  }
  // even resolutions skip the origin, which L^CrAM must always consider
  if (resolution % 2 == 0) grid.push_back(Vec(dim, 0.0));
  return grid;
}

std::vector<Vec> sample_points(std::size_t dim, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec> points(count, Vec(dim));
  for (auto& p : points) {
    for (double& v : p) v = rng.uniform(-1.5, 1.5);
  }
  return points;
}

DescentReport danskin_descent_check(const AnalyticObjective& objective, const compress::CompressionSpec& spec,
                                    double rho, std::size_t grid_resolution, std::span<const Vec> points) {
  if (spec.kind != compress::Kind::top_k_global && spec.kind != compress::Kind::top_k_uniform) {
    throw ContractError("danskin_descent_check: needs a Top-K spec, got " + spec.to_string());
  }
  spec.validate();
  DescentReport report;
  report.objective = objective.name;
  report.spec = spec.to_string();
  report.coarse_grid = rho > 0.0 && grid_resolution < kCoarseGrid;
  if (points.empty()) return report;
  const std::size_t dim = points.front().size();
  const auto grid = perturbation_grid(dim, rho, grid_resolution);
  report.dim = dim;
  report.grid_size = grid.size();
  const Problem problem{objective, dim, compress::keep_count(dim, spec.sparsity), grid};
  const double spacing = grid_resolution > 1 ? 2.0 * rho / static_cast<double>(grid_resolution - 1) : 0.0;

  for (const Vec& w : points) {
    if (w.size() != dim) throw ShapeError("danskin_descent_check: points must share one dimension");
    DescentPoint pt;
    pt.w = w;
    const kernels::ArgMax best = problem.maximize(w);
    pt.value = best.value;
    pt.delta_star = grid[best.index];
    std::vector<std::uint8_t> mask_star;
    const Vec h = problem.projected_gradient(w, pt.delta_star, mask_star);
    const double hn = norm(h);
    ++report.points;

    auto exclude = [&](std::string why) {
      pt.excluded = true;
      pt.reason = std::move(why);
      ++report.excluded;
    };

    if (hn == 0.0) {
      exclude("stationary: zero projected gradient");
      report.details.push_back(std::move(pt));
      continue;
    }
    // Mask not locally constant around the maximizer.
    const double probe = std::max(spacing, 1e-9);
    bool mask_moves = false;
    for (std::size_t i = 0; i < dim && !mask_moves; ++i) {
      for (double sign : {-1.0, 1.0}) {
        Vec d = pt.delta_star;
        d[i] += sign * probe;
        if (problem.mask_at(w, d) != mask_star) mask_moves = true;
      }
    }
    if (mask_moves) {
      exclude("articulation: mask changes within one grid step of the maximizer");
      report.details.push_back(std::move(pt));
      continue;
    }

    pt.step = 1e-4 * std::max(rho, 1e-2) / hn;
    // Competing maximizers whose gradients disagree with h make F non-differentiable at w.
    const double band = 4.0 * pt.step * hn * (hn + 10.0);
    bool competing = false;
    for (std::size_t g = 0; g < grid.size() && !competing; ++g) {
      double x[kMaxDim];
      std::uint8_t m[kMaxDim];
      for (std::size_t i = 0; i < dim; ++i) x[i] = w[i] + grid[g][i];
      const double v = problem.compressed_value(std::span<const double>(x, dim), std::span<std::uint8_t>(m, dim));
      if (v < best.value - band) continue;
      std::vector<std::uint8_t> mg;
      if (dot(h, problem.projected_gradient(w, grid[g], mg)) <= 0.0) competing = true;
    }
    if (competing) {
      exclude("articulation: competing maximizer with a non-aligned gradient");
      report.details.push_back(std::move(pt));
      continue;
    }

    Vec moved(dim);
    for (std::size_t i = 0; i < dim; ++i) moved[i] = w[i] - pt.step * h[i];
    const kernels::ArgMax after = problem.maximize(moved);
    pt.value_after = after.value;
    if (!(after.value < best.value)) {
      // A mask switch at the new maximizer is a jump of L(C(.)), not a failure of the gradient.
      if (problem.mask_at(moved, grid[after.index]) != problem.mask_at(w, grid[after.index])) {
        exclude("articulation: mask switches along the step");
      } else {
        pt.violation = true;
        ++report.violations;
      }
    }
    report.details.push_back(std::move(pt));
  }
  return report;
}

}  // namespace cram::optim
