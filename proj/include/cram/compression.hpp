#pragma once

// Compression operators and the masks they induce: global and per-tensor
// Top-K, N:M semi-structured sparsity, symmetric per-channel quantization.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cram/param_set.hpp"
#include "cram/rng.hpp"

namespace cram::compress {

enum class Kind { top_k_global, top_k_uniform, n_m, quantize_symmetric };

std::string_view kind_name(Kind k);

struct CompressionSpec {
  Kind kind = Kind::top_k_global;
  double sparsity = 0.0;  // top-K kinds
  int n = 0;              // n_m: keep n of every m
  int m = 0;
  int bits = 0;           // quantize_symmetric
  /// When false every tensor is a target, including biases and BN parameters.
  bool respect_prunable_flags = true;

  static CompressionSpec top_k_global(double sparsity);
  static CompressionSpec top_k_uniform(double sparsity);
  static CompressionSpec n_m(int n, int m);
  static CompressionSpec quantize(int bits);

  /// Top-K and N:M produce a mask; quantization does not.
  bool is_mask_kind() const { return kind != Kind::quantize_symmetric; }
  /// Fraction of target entries zeroed by the pattern (0 for quantization).
  double nominal_sparsity() const;
  /// Throws ContractError when the kind's fields are out of range.
  void validate() const;
  /// Canonical short form, e.g. "topk_global:0.5", "nm:2:4", "quant:4".
  std::string to_string() const;

  bool operator==(const CompressionSpec&) const = default;
};

/// Parses the comma-separated spec grammar: "topk_global:0.5,0.7,0.9",
/// "topk_uniform:0.7", "nm:2:4", "quant:4". A bare number after a Top-K
/// entry adds another sparsity of the same kind. Throws InputError.
std::vector<CompressionSpec> parse_spec_list(std::string_view text);
CompressionSpec parse_spec(std::string_view text);

/// Per-entry keep flags. Entries that are not targets hold an empty vector,
/// meaning "keep everything".
struct Mask {
  std::vector<std::vector<std::uint8_t>> keep;

  bool is_dense(std::size_t entry) const { return keep[entry].empty(); }
  /// Kept target entries / target entries.
  double coverage() const;
  std::size_t kept() const;
  std::size_t targets() const;
  bool operator==(const Mask&) const = default;
};

/// Number of entries kept at a given sparsity: round-half-away((1 - s) * n).
std::size_t keep_count(std::size_t n, double sparsity);

/// Marks the k largest |values| (ties to the lower index) in `keep`.
void select_top_k(std::span<const double> values, std::size_t k, std::span<std::uint8_t> keep);

Mask top_k_mask_global(const ParamSet& params, double sparsity, bool respect_prunable_flags = true);
Mask top_k_mask_uniform(const ParamSet& params, double sparsity, bool respect_prunable_flags = true);
Mask n_m_mask(const ParamSet& params, int n, int m, bool respect_prunable_flags = true);
Mask compute_mask(const ParamSet& params, const CompressionSpec& spec);

ParamSet apply_mask(const ParamSet& params, const Mask& mask);
void apply_mask_in_place(ParamSet& params, const Mask& mask);

/// Per output channel (first axis): s = max|w| / (2^(bits-1) - 1),
/// w -> clamp(round(w / s)) * s. All-zero channels pass through.
ParamSet quantize_symmetric(const ParamSet& params, int bits, bool respect_prunable_flags = true);

struct Compressed {
  ParamSet params;
  std::optional<Mask> mask;
};

Compressed compress(const ParamSet& params, const CompressionSpec& spec);

/// Fraction of target entries whose keep flag differs.
double mask_difference(const Mask& a, const Mask& b);

/// Zero fraction over target entries.
double achieved_sparsity(const ParamSet& params, bool respect_prunable_flags = true);

/// Uniform choice; throws ContractError on an empty set.
const CompressionSpec& sample_operator(std::span<const CompressionSpec> set, Rng& rng);

struct ProjectiveRegionReport {
  std::size_t trials = 0;
  std::size_t equal = 0;
  double equal_fraction = 1.0;
  /// Smallest magnitude gap between the last kept and first dropped entry.
  double gap = 0.0;
  /// 2 * perturbation_scale * sqrt(N)
  double gap_threshold = 0.0;
  bool gap_condition = false;
  /// Gap condition held but some trial changed the mask.
  bool violated = false;
};

/// Perturbs each target entry by uniform noise in [-scale, scale] and counts
/// trials whose Top-K mask matches the unperturbed one.
ProjectiveRegionReport check_projective_region(const ParamSet& params, const CompressionSpec& spec,
                                               double perturbation_scale, std::size_t trials, Rng& rng);

}  // namespace cram::compress
