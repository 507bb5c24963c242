#pragma once

// Dense numeric kernels. Every kernel has a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::parallel`; both
// evaluate each output element with the same summation order, so their
// results agree bitwise. The unqualified entry points pick one by size.

#include <cstddef>
#include <functional>
#include <span>

namespace cram::kernels {

enum class Trans { no, yes };

/// C[m x n] = op(A) * op(B) with row-major storage.
/// op(A) is m x k (A stored k x m when transposed); op(B) is k x n (B stored n x k when transposed).
struct GemmShape {
  std::size_t m, n, k;
  Trans trans_a = Trans::no;
  Trans trans_b = Trans::no;
};

/// Per-column mean and biased variance of a rows x cols matrix.
struct ColumnStats {
  std::span<double> mean;
  std::span<double> variance;
};

/// Location of the largest value; ties resolve to the lowest index.
struct ArgMax {
  std::size_t index = 0;
  double value = 0.0;
};

using IndexedValue = std::function<double(std::size_t)>;

namespace serial {
ArgMax argmax(std::size_t n, const IndexedValue& value);
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b, std::span<double> c);
void column_stats(std::size_t rows, std::size_t cols, std::span<const double> x, ColumnStats out);
}  // namespace serial

namespace parallel {
ArgMax argmax(std::size_t n, const IndexedValue& value);
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b, std::span<double> c);
void column_stats(std::size_t rows, std::size_t cols, std::span<const double> x, ColumnStats out);
}  // namespace parallel

ArgMax argmax(std::size_t n, const IndexedValue& value);
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b, std::span<double> c);
void column_stats(std::size_t rows, std::size_t cols, std::span<const double> x, ColumnStats out);

/// Worker count used by the parallel kernels (1 when built without OpenMP).
int num_threads();
void set_num_threads(int n);
/// Applies CRAM_THREADS if set; returns the resulting worker count.
int configure_from_env();
bool openmp_enabled();

}  // namespace cram::kernels
