#include "cram/kernels.hpp"

#include <cstdlib>
#include <string>
#include <vector>

#ifdef CRAM_HAS_OPENMP
#include <omp.h>
#endif

namespace cram::kernels {
namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 15;

inline double at_a(const GemmShape& s, std::span<const double> a, std::size_t i, std::size_t p) {
  return s.trans_a == Trans::no ? a[i * s.k + p] : a[p * s.m + i];
}

inline double at_b(const GemmShape& s, std::span<const double> b, std::size_t p, std::size_t j) {
  return s.trans_b == Trans::no ? b[p * s.n + j] : b[j * s.k + p];
}

// One output row, accumulated over p in ascending order for every column.
inline void gemm_row(const GemmShape& s, std::span<const double> a, std::span<const double> b, double* crow,
                     std::size_t i) {
  for (std::size_t j = 0; j < s.n; ++j) crow[j] = 0.0;
  if (s.trans_b == Trans::yes) {
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* brow = b.data() + j * s.k;
      double acc = 0.0;
      if (s.trans_a == Trans::no) {
        const double* arow = a.data() + i * s.k;
        for (std::size_t p = 0; p < s.k; ++p) acc += arow[p] * brow[p];
      } else {
        for (std::size_t p = 0; p < s.k; ++p) acc += a[p * s.m + i] * brow[p];
      }
      crow[j] = acc;
    }
    return;
  }
  for (std::size_t p = 0; p < s.k; ++p) {
    const double aip = at_a(s, a, i, p);
    const double* brow = b.data() + p * s.n;
    for (std::size_t j = 0; j < s.n; ++j) crow[j] += aip * brow[j];
  }
}

inline void column_stat(std::size_t rows, std::size_t cols, std::span<const double> x, ColumnStats out,
                        std::size_t j) {
  double sum = 0.0;
  for (std::size_t i = 0; i < rows; ++i) sum += x[i * cols + j];
  const double mean = sum / static_cast<double>(rows);
  double sq = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double d = x[i * cols + j] - mean;
    sq += d * d;
  }
  out.mean[j] = mean;
  out.variance[j] = sq / static_cast<double>(rows);
}

inline bool better(const ArgMax& a, const ArgMax& b) {
  return a.value > b.value || (a.value == b.value && a.index < b.index);
}

}  // namespace

namespace serial {

ArgMax argmax(std::size_t n, const IndexedValue& value) {
  ArgMax best{0, n ? value(0) : 0.0};
  for (std::size_t i = 1; i < n; ++i) {
    const double v = value(i);
    if (v > best.value) best = {i, v};
  }
  return best;
}

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b, std::span<double> c) {
  // Textbook triple loop: one dot product per output element.
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < s.k; ++p) acc += at_a(s, a, i, p) * at_b(s, b, p, j);
      c[i * s.n + j] = acc;
    }
  }
}

void column_stats(std::size_t rows, std::size_t cols, std::span<const double> x, ColumnStats out) {
  for (std::size_t j = 0; j < cols; ++j) column_stat(rows, cols, x, out, j);
}

}  // namespace serial

namespace parallel {

ArgMax argmax(std::size_t n, const IndexedValue& value) {
  if (n == 0) return {};
  std::vector<ArgMax> partial;
#pragma omp parallel
  {
#ifdef CRAM_HAS_OPENMP
    const auto threads = static_cast<std::size_t>(omp_get_num_threads());
    const auto me = static_cast<std::size_t>(omp_get_thread_num());
#else
    const std::size_t threads = 1, me = 0;
#endif
#pragma omp single
    partial.assign(threads, ArgMax{n, 0.0});
    // Contiguous chunks, so each chunk's first maximum is its lowest index.
    const std::size_t begin = n * me / threads, end = n * (me + 1) / threads;
    if (begin < end) {
      ArgMax best{begin, value(begin)};
      for (std::size_t i = begin + 1; i < end; ++i) {
        const double v = value(i);
        if (v > best.value) best = {i, v};
      }
      partial[me] = best;
    }
  }
  ArgMax best = partial.front();
  for (const auto& p : partial) {
    if (p.index < n && (best.index >= n || better(p, best))) best = p;
  }
  return best;
}

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b, std::span<double> c) {
  const auto m = static_cast<long long>(s.m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < m; ++i) {
    gemm_row(s, a, b, c.data() + static_cast<std::size_t>(i) * s.n, static_cast<std::size_t>(i));
  }
}

void column_stats(std::size_t rows, std::size_t cols, std::span<const double> x, ColumnStats out) {
  const auto n = static_cast<long long>(cols);
#pragma omp parallel for schedule(static)
  for (long long j = 0; j < n; ++j) column_stat(rows, cols, x, out, static_cast<std::size_t>(j));
}

}  // namespace parallel

ArgMax argmax(std::size_t n, const IndexedValue& value) {
  if (num_threads() > 1 && n >= 4096) return parallel::argmax(n, value);
  return serial::argmax(n, value);
}

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b, std::span<double> c) {
  if (num_threads() > 1 && s.m > 1 && s.m * s.n * s.k >= kParallelWork) {
    parallel::gemm(s, a, b, c);
    return;
  }
  // The row-blocked form is also the faster single-threaded loop order.
  for (std::size_t i = 0; i < s.m; ++i) gemm_row(s, a, b, c.data() + i * s.n, i);
}

void column_stats(std::size_t rows, std::size_t cols, std::span<const double> x, ColumnStats out) {
  if (num_threads() > 1 && rows * cols >= kParallelWork) {
    parallel::column_stats(rows, cols, x, out);
    return;
  }
  serial::column_stats(rows, cols, x, out);
}

int num_threads() {
#ifdef CRAM_HAS_OPENMP
  if (omp_in_parallel()) return 1;
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef CRAM_HAS_OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int configure_from_env() {
  if (const char* env = std::getenv("CRAM_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) set_num_threads(n);
    } catch (const std::exception&) {
      // Ignore malformed values; the machine default stays in effect.
    }
  }
  return num_threads();
}

bool openmp_enabled() {
#ifdef CRAM_HAS_OPENMP
  return true;
#else
  return false;
#endif
}

}  // namespace cram::kernels
