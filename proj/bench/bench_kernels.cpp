#include <benchmark/benchmark.h>
#include <omp.h>

#include "coefflab/checks.hpp"
#include "coefflab/hull.hpp"
#include "coefflab/kernels.hpp"
#include "coefflab/random.hpp"

using namespace coefflab;

namespace {

Matrix random_square(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian(n, n, 1.0, rng);
}

void BM_MatmulReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_square(n, 1), b = random_square(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(reference::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_MatmulParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_square(n, 1), b = random_square(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_SoftmaxReference(benchmark::State& state) {
  const Matrix m = random_square(static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(reference::softmax_rows(m));
}

void BM_SoftmaxParallel(benchmark::State& state) {
  const Matrix m = random_square(static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(softmax_rows(m));
}

// Trial throughput of the property suites at 1 thread and at the machine's width.
void BM_BoundedTrials(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(verify_baseline_bounded(100, InstanceSpec{}, 0));
  state.SetItemsProcessed(state.iterations() * 100);
}

void BM_EquivalenceTrials(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(verify_three_form_equivalence(50, 0));
  state.SetItemsProcessed(state.iterations() * 50);
}

}  // namespace

BENCHMARK(BM_MatmulReference)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_MatmulParallel)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_SoftmaxReference)->Arg(128)->Arg(1024);
BENCHMARK(BM_SoftmaxParallel)->Arg(128)->Arg(1024);
BENCHMARK(BM_BoundedTrials)->Arg(1)->Arg(omp_get_max_threads())->UseRealTime();
BENCHMARK(BM_EquivalenceTrials)->Arg(1)->Arg(omp_get_max_threads())->UseRealTime();

BENCHMARK_MAIN();
