// Serial reference vs OpenMP kernels. Set CRAM_THREADS to pick the worker count.

#include <benchmark/benchmark.h>

#include <vector>

#include "cram/config.hpp"
#include "cram/harness.hpp"
#include "cram/kernels.hpp"
#include "cram/rng.hpp"

using namespace cram;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  const kernels::GemmShape s{n, n, n};
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::gemm(s, a, b, c);
    } else {
      kernels::serial::gemm(s, a, b, c);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_ColumnStats(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{256};
  const auto x = random_vector(rows * cols, 3);
  std::vector<double> mean(cols), var(cols);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::column_stats(rows, cols, x, {mean, var});
    } else {
      kernels::serial::column_stats(rows, cols, x, {mean, var});
    }
    benchmark::DoNotOptimize(mean.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * cols));
}

template <bool Parallel>
void BM_ArgMax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto v = random_vector(n, 4);
  const kernels::IndexedValue f = [&](std::size_t i) { return v[i] * v[i]; };
  for (auto _ : state) {
    const auto r = Parallel ? kernels::parallel::argmax(n, f) : kernels::serial::argmax(n, f);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

// One epoch of CrAM+ on a small spirals problem, end to end.
void BM_TrainEpoch(benchmark::State& state) {
  config::DatasetSection dsec;
  dsec.n = 2000;
  const data::Dataset ds = config::make_dataset(dsec, 1);
  nn::ModelConfig mc;
  mc.layer_widths = {2, static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(0)), 2};
  optim::OptimizerConfig oc;
  oc.algorithm = optim::Algorithm::cram_plus;
  oc.learning_rate = 0.05;
  oc.momentum = 0.9;
  oc.rho = 0.05;
  oc.operator_set = {compress::CompressionSpec::top_k_global(0.7)};
  harness::TrainOptions t;
  t.epochs = 1;
  t.batch_size = 64;
  t.evaluate_every_epoch = false;
  for (auto _ : state) {
    auto r = harness::train(mc, oc, ds, t);
    benchmark::DoNotOptimize(r.checkpoint.params.size());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_ColumnStats<false>)->Name("column_stats/serial")->Arg(512)->Arg(8192);
BENCHMARK(BM_ColumnStats<true>)->Name("column_stats/parallel")->Arg(512)->Arg(8192);
BENCHMARK(BM_ArgMax<false>)->Name("argmax/serial")->Arg(1 << 12)->Arg(1 << 18);
BENCHMARK(BM_ArgMax<true>)->Name("argmax/parallel")->Arg(1 << 12)->Arg(1 << 18);
BENCHMARK(BM_TrainEpoch)->Name("train_epoch/cram_plus")->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  kernels::configure_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::AddCustomContext("threads", std::to_string(kernels::num_threads()));
  benchmark::AddCustomContext("openmp", kernels::openmp_enabled() ? "yes" : "no");
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
