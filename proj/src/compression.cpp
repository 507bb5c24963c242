#include "cram/compression.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "cram/errors.hpp"

namespace cram::compress {
namespace {

bool is_target(const ParamEntry& e, bool respect) { return respect ? e.prunable : true; }

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_number(std::string_view s, std::string_view context) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InputError("invalid number '" + std::string(s) + "' in spec '" + std::string(context) + "'");
  }
  return v;
}

int parse_int(std::string_view s, std::string_view context) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InputError("invalid integer '" + std::string(s) + "' in spec '" + std::string(context) + "'");
  }
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

void check_layout(const ParamSet& params, const Mask& mask) {
  if (mask.keep.size() != params.size()) {
    throw ShapeError("mask has " + std::to_string(mask.keep.size()) + " entries, parameters have " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask.keep[i].empty() && mask.keep[i].size() != params[i].tensor.size()) {
      throw ShapeError("mask for '" + params[i].name + "' has " + std::to_string(mask.keep[i].size()) +
                       " flags for " + std::to_string(params[i].tensor.size()) + " values");
    }
  }
}

// Magnitude gap between the k-th and (k+1)-th largest |values|.
double boundary_gap(std::span<const double> values, std::size_t k) {
  if (k >= values.size() || k == 0) return std::numeric_limits<double>::infinity();
  std::vector<double> mags(values.size());
  std::transform(values.begin(), values.end(), mags.begin(), [](double v) { return std::abs(v); });
  std::sort(mags.begin(), mags.end(), std::greater<>());
  return mags[k - 1] - mags[k];
}

}  // namespace

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::top_k_global: return "top_k_global";
    case Kind::top_k_uniform: return "top_k_uniform";
    case Kind::n_m: return "n_m";
    case Kind::quantize_symmetric: return "quantize_symmetric";
  }
  return "unknown";
}

CompressionSpec CompressionSpec::top_k_global(double sparsity) {
  CompressionSpec s;
  s.kind = Kind::top_k_global;
  s.sparsity = sparsity;
  return s;
}

CompressionSpec CompressionSpec::top_k_uniform(double sparsity) {
  CompressionSpec s;
  s.kind = Kind::top_k_uniform;
  s.sparsity = sparsity;
  return s;
}

CompressionSpec CompressionSpec::n_m(int n, int m) {
  CompressionSpec s;
  s.kind = Kind::n_m;
  s.n = n;
  s.m = m;
  return s;
}

CompressionSpec CompressionSpec::quantize(int bits) {
  CompressionSpec s;
  s.kind = Kind::quantize_symmetric;
  s.bits = bits;
  return s;
}

double CompressionSpec::nominal_sparsity() const {
  switch (kind) {
    case Kind::top_k_global:
    case Kind::top_k_uniform: return sparsity;
    case Kind::n_m: return 1.0 - static_cast<double>(n) / static_cast<double>(m);
    case Kind::quantize_symmetric: return 0.0;
  }
  return 0.0;
}

void CompressionSpec::validate() const {
  switch (kind) {
    case Kind::top_k_global:
    case Kind::top_k_uniform:
      if (!(sparsity >= 0.0 && sparsity < 1.0)) {
        throw ContractError("sparsity must be in [0,1), got " + format_number(sparsity));
      }
      break;
    case Kind::n_m:
      if (!(n > 0 && n < m)) {
        throw ContractError("N:M pattern needs 0 < n < m, got " + std::to_string(n) + ":" + std::to_string(m));
      }
      break;
    case Kind::quantize_symmetric:
      if (bits < 2) throw ContractError("quantization needs at least 2 bits, got " + std::to_string(bits));
      break;
  }
}

std::string CompressionSpec::to_string() const {
  switch (kind) {
    case Kind::top_k_global: return "topk_global:" + format_number(sparsity);
    case Kind::top_k_uniform: return "topk_uniform:" + format_number(sparsity);
    case Kind::n_m: return "nm:" + std::to_string(n) + ":" + std::to_string(m);
    case Kind::quantize_symmetric: return "quant:" + std::to_string(bits);
  }
  return "unknown";
}

CompressionSpec parse_spec(std::string_view text) {
  const auto specs = parse_spec_list(text);
  if (specs.size() != 1) throw InputError("expected exactly one compression spec in '" + std::string(text) + "'");
  return specs.front();
}

std::vector<CompressionSpec> parse_spec_list(std::string_view text) {
  std::vector<CompressionSpec> out;
  std::optional<Kind> last_top_k;
  for (std::string_view token : split(text, ',')) {
    if (token.empty()) throw InputError("empty entry in spec list '" + std::string(text) + "'");
    const auto fields = split(token, ':');
    CompressionSpec spec;
    if (fields.size() == 1) {
      if (!last_top_k) throw InputError("spec '" + std::string(token) + "' has no kind");
      spec.kind = *last_top_k;
      spec.sparsity = parse_number(fields[0], token);
    } else if (fields[0] == "topk_global" || fields[0] == "topk_uniform") {
      if (fields.size() != 2) throw InputError("spec '" + std::string(token) + "' expects kind:sparsity");
      spec.kind = fields[0] == "topk_global" ? Kind::top_k_global : Kind::top_k_uniform;
      spec.sparsity = parse_number(fields[1], token);
    } else if (fields[0] == "nm") {
      if (fields.size() != 3) throw InputError("spec '" + std::string(token) + "' expects nm:n:m");
      spec.kind = Kind::n_m;
      spec.n = parse_int(fields[1], token);
      spec.m = parse_int(fields[2], token);
    } else if (fields[0] == "quant") {
      if (fields.size() != 2) throw InputError("spec '" + std::string(token) + "' expects quant:bits");
      spec.kind = Kind::quantize_symmetric;
      spec.bits = parse_int(fields[1], token);
    } else {
      throw InputError("unknown compression kind '" + std::string(fields[0]) + "'");
    }
    try {
      spec.validate();
    } catch (const ContractError& e) {
      throw InputError("spec '" + std::string(token) + "': " + e.what());
    }
    last_top_k = (spec.kind == Kind::top_k_global || spec.kind == Kind::top_k_uniform)
                      ? std::optional<Kind>(spec.kind)
                      : std::nullopt;
    out.push_back(spec);
  }
  return out;
}

double Mask::coverage() const {
  const std::size_t t = targets();
  return t == 0 ? 1.0 : static_cast<double>(kept()) / static_cast<double>(t);
}

std::size_t Mask::kept() const {
  std::size_t n = 0;
  for (const auto& k : keep) n += static_cast<std::size_t>(std::count(k.begin(), k.end(), std::uint8_t{1}));
  return n;
}

std::size_t Mask::targets() const {
  std::size_t n = 0;
  for (const auto& k : keep) n += k.size();
  return n;
}

std::size_t keep_count(std::size_t n, double sparsity) {
  const double k = std::round((1.0 - sparsity) * static_cast<double>(n));
  return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(n)));
}

void select_top_k(std::span<const double> values, std::size_t k, std::span<std::uint8_t> keep) {
  const std::size_t n = values.size();
  std::fill(keep.begin(), keep.end(), std::uint8_t{0});
  if (k >= n) {
    std::fill(keep.begin(), keep.end(), std::uint8_t{1});
    return;
  }
  if (k == 0) return;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(values[a]), mb = std::abs(values[b]);
    return ma > mb || (ma == mb && a < b);
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), before);
  for (std::size_t i = 0; i < k; ++i) keep[order[i]] = 1;
}

Mask top_k_mask_global(const ParamSet& params, double sparsity, bool respect) {
  CompressionSpec::top_k_global(sparsity).validate();
  std::vector<double> flat;
  for (const auto& e : params) {
    if (is_target(e, respect)) flat.insert(flat.end(), e.tensor.data.begin(), e.tensor.data.end());
  }
  if (flat.empty()) throw ContractError("top_k_mask_global: no prunable parameters");
  std::vector<std::uint8_t> keep_flat(flat.size());
  select_top_k(flat, keep_count(flat.size(), sparsity), keep_flat);

  Mask mask;
  mask.keep.resize(params.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!is_target(params[i], respect)) continue;
    const std::size_t n = params[i].tensor.size();
    mask.keep[i].assign(keep_flat.begin() + static_cast<std::ptrdiff_t>(offset),
                        keep_flat.begin() + static_cast<std::ptrdiff_t>(offset + n));
    offset += n;
  }
  return mask;
}

Mask top_k_mask_uniform(const ParamSet& params, double sparsity, bool respect) {
  CompressionSpec::top_k_uniform(sparsity).validate();
  Mask mask;
  mask.keep.resize(params.size());
  bool any = false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!is_target(params[i], respect)) continue;
    any = true;
    const auto& data = params[i].tensor.data;
    const std::size_t k = keep_count(data.size(), sparsity);
    if (k < 1) {
      throw ContractError("top_k_mask_uniform: tensor '" + params[i].name + "' keeps no entries at sparsity " +
                          format_number(sparsity));
    }
    mask.keep[i].resize(data.size());
    select_top_k(data, k, mask.keep[i]);
  }
  if (!any) throw ContractError("top_k_mask_uniform: no prunable parameters");
  return mask;
}

Mask n_m_mask(const ParamSet& params, int n, int m, bool respect) {
  CompressionSpec::n_m(n, m).validate();
  const auto block = static_cast<std::size_t>(m);
  Mask mask;
  mask.keep.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!is_target(params[i], respect)) continue;
    const Tensor& t = params[i].tensor;
    const std::size_t last = t.shape.empty() ? 1 : t.shape.back();
    if (last % block != 0) {
      throw ShapeError("N:M " + std::to_string(n) + ":" + std::to_string(m) + " needs the last dimension of '" +
                       params[i].name + "' " + shape_string(t.shape) + " to be divisible by " + std::to_string(m));
    }
    mask.keep[i].resize(t.size());
    for (std::size_t start = 0; start < t.size(); start += block) {
      select_top_k(std::span<const double>(t.data).subspan(start, block), static_cast<std::size_t>(n),
                   std::span<std::uint8_t>(mask.keep[i]).subspan(start, block));
    }
  }
  return mask;
}

Mask compute_mask(const ParamSet& params, const CompressionSpec& spec) {
  switch (spec.kind) {
    case Kind::top_k_global: return top_k_mask_global(params, spec.sparsity, spec.respect_prunable_flags);
    case Kind::top_k_uniform: return top_k_mask_uniform(params, spec.sparsity, spec.respect_prunable_flags);
    case Kind::n_m: return n_m_mask(params, spec.n, spec.m, spec.respect_prunable_flags);
    case Kind::quantize_symmetric: break;
  }
  throw ContractError("quantization does not induce a mask");
}

void apply_mask_in_place(ParamSet& params, const Mask& mask) {
  check_layout(params, mask);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (mask.keep[i].empty()) continue;
    auto& data = params[i].tensor.data;
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (!mask.keep[i][j]) data[j] = 0.0;
    }
  }
}

ParamSet apply_mask(const ParamSet& params, const Mask& mask) {
  ParamSet out = params;
  apply_mask_in_place(out, mask);
  return out;
}

ParamSet quantize_symmetric(const ParamSet& params, int bits, bool respect) {
  CompressionSpec::quantize(bits).validate();
  const double qmax = std::ldexp(1.0, bits - 1) - 1.0;
  ParamSet out = params;
  for (auto& e : out) {
    if (!is_target(e, respect)) continue;
    auto& data = e.tensor.data;
    const std::size_t channels = e.tensor.shape.empty() ? 1 : e.tensor.shape.front();
    const std::size_t width = data.size() / channels;
    for (std::size_t c = 0; c < channels; ++c) {
      double* row = data.data() + c * width;
      double peak = 0.0;
      for (std::size_t j = 0; j < width; ++j) peak = std::max(peak, std::abs(row[j]));
      if (peak == 0.0) continue;
      const double scale = peak / qmax;
      for (std::size_t j = 0; j < width; ++j) {
        row[j] = std::clamp(std::round(row[j] / scale), -qmax, qmax) * scale;
      }
    }
  }
  return out;
}

Compressed compress(const ParamSet& params, const CompressionSpec& spec) {
  spec.validate();
  if (spec.kind == Kind::quantize_symmetric) {
    return {quantize_symmetric(params, spec.bits, spec.respect_prunable_flags), std::nullopt};
  }
  Mask mask = compute_mask(params, spec);
  ParamSet out = apply_mask(params, mask);
  return {std::move(out), std::move(mask)};
}

double mask_difference(const Mask& a, const Mask& b) {
  if (a.keep.size() != b.keep.size()) throw ShapeError("mask_difference: masks cover different parameter sets");
  std::size_t changed = 0, total = 0;
  for (std::size_t i = 0; i < a.keep.size(); ++i) {
    if (a.keep[i].size() != b.keep[i].size()) throw ShapeError("mask_difference: mask layouts differ");
    for (std::size_t j = 0; j < a.keep[i].size(); ++j) changed += a.keep[i][j] != b.keep[i][j];
    total += a.keep[i].size();
  }
  return total == 0 ? 0.0 : static_cast<double>(changed) / static_cast<double>(total);
}

double achieved_sparsity(const ParamSet& params, bool respect) {
  std::size_t zeros = 0, total = 0;
  for (const auto& e : params) {
    if (!is_target(e, respect)) continue;
    zeros += static_cast<std::size_t>(std::count(e.tensor.data.begin(), e.tensor.data.end(), 0.0));
    total += e.tensor.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

const CompressionSpec& sample_operator(std::span<const CompressionSpec> set, Rng& rng) {
  if (set.empty()) throw ContractError("sample_operator: empty operator set");
  return set[rng.index(set.size())];
}

ProjectiveRegionReport check_projective_region(const ParamSet& params, const CompressionSpec& spec,
                                               double perturbation_scale, std::size_t trials, Rng& rng) {
  if (!spec.is_mask_kind()) throw ContractError("check_projective_region: needs a mask-inducing spec");
  const bool respect = spec.respect_prunable_flags;
  const Mask reference = compute_mask(params, spec);

  ProjectiveRegionReport report;
  report.trials = trials;
  std::size_t targets = 0;
  double gap = std::numeric_limits<double>::infinity();
  std::vector<double> flat;
  for (const auto& e : params) {
    if (!is_target(e, respect)) continue;
    targets += e.tensor.size();
    if (spec.kind == Kind::top_k_global) {
      flat.insert(flat.end(), e.tensor.data.begin(), e.tensor.data.end());
    } else if (spec.kind == Kind::top_k_uniform) {
      gap = std::min(gap, boundary_gap(e.tensor.data, keep_count(e.tensor.size(), spec.sparsity)));
    } else {
      const auto block = static_cast<std::size_t>(spec.m);
      for (std::size_t s = 0; s + block <= e.tensor.size(); s += block) {
        gap = std::min(gap, boundary_gap(std::span<const double>(e.tensor.data).subspan(s, block),
                                         static_cast<std::size_t>(spec.n)));
      }
    }
  }
  if (spec.kind == Kind::top_k_global) gap = boundary_gap(flat, keep_count(flat.size(), spec.sparsity));
  report.gap = gap;
  report.gap_threshold = 2.0 * perturbation_scale * std::sqrt(static_cast<double>(targets));
  report.gap_condition = gap > report.gap_threshold;

  for (std::size_t t = 0; t < trials; ++t) {
    ParamSet noisy = params;
    for (auto& e : noisy) {
      if (!is_target(e, respect)) continue;
      for (double& v : e.tensor.data) v += rng.uniform(-perturbation_scale, perturbation_scale);
    }
    if (compute_mask(noisy, spec) == reference) ++report.equal;
  }
  report.equal_fraction = trials == 0 ? 1.0 : static_cast<double>(report.equal) / static_cast<double>(trials);
  report.violated = report.gap_condition && report.equal != trials;
  return report;
}

}  // namespace cram::compress
