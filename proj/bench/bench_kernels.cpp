#include <benchmark/benchmark.h>

#include <numeric>

#include "subprune/greedy.hpp"
#include "subprune/linalg.hpp"
#include "subprune/network.hpp"
#include "subprune/objective.hpp"
#include "subprune/random.hpp"
#include "subprune/synth.hpp"

using namespace subprune;

namespace {

Matrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

struct ConvFixture {
  NetworkModel model;
  Matrix input;
  Shape3 shape;
  std::size_t layer = 0;
};

// First conv of lenet-toy on `n` random images.
ConvFixture conv_fixture(std::size_t n) {
  SplitMix64 rng(3);
  ConvFixture f;
  f.model = make_teacher("lenet-toy", rng);
  f.shape = layer_shapes(f.model)[0];
  f.input = gaussian(n, f.shape.c * f.shape.h * f.shape.w, 4);
  return f;
}

void BM_MatmulSerial(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix a = gaussian(n, n, 1), b = gaussian(n, n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(serial::matmul(a, b));
}

void BM_MatmulOmp(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix a = gaussian(n, n, 1), b = gaussian(n, n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(matmul(a, b));
}

void BM_ConvSerial(benchmark::State& st) {
  const auto f = conv_fixture(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(serial::conv2d_forward(f.input, f.shape, f.model.layers[f.layer]));
}

void BM_ConvOmp(benchmark::State& st) {
  const auto f = conv_fixture(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(conv2d_forward(f.input, f.shape, f.model.layers[f.layer]));
}

void BM_Im2colSerial(benchmark::State& st) {
  const auto f = conv_fixture(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(serial::im2col(f.input, f.shape, 3, 3, 1, 1));
}

void BM_Im2colOmp(benchmark::State& st) {
  const auto f = conv_fixture(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(im2col(f.input, f.shape, 3, 3, 1, 1));
}

// One candidate sweep after a few selections; n units, 256 samples.
void gain_sweep(benchmark::State& st, bool parallel) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto problem = make_symmetric(gaussian(256, n, 5), gaussian(n, 16, 6));
  IncrementalState state = init_state(problem);
  for (std::size_t g = 0; g < 4; ++g) apply_selection(state, g);
  std::vector<std::size_t> cand(n - 4);
  std::iota(cand.begin(), cand.end(), 4);
  for (auto _ : st) benchmark::DoNotOptimize(sweep_gains(state, cand, parallel));
}

void BM_GainSweepSerial(benchmark::State& st) { gain_sweep(st, false); }
void BM_GainSweepOmp(benchmark::State& st) { gain_sweep(st, true); }

}  // namespace

BENCHMARK(BM_MatmulSerial)->Arg(64)->Arg(256);
BENCHMARK(BM_MatmulOmp)->Arg(64)->Arg(256);
BENCHMARK(BM_ConvSerial)->Arg(64)->Arg(512);
BENCHMARK(BM_ConvOmp)->Arg(64)->Arg(512);
BENCHMARK(BM_Im2colSerial)->Arg(64)->Arg(512);
BENCHMARK(BM_Im2colOmp)->Arg(64)->Arg(512);
BENCHMARK(BM_GainSweepSerial)->Arg(32)->Arg(128);
BENCHMARK(BM_GainSweepOmp)->Arg(32)->Arg(128);

BENCHMARK_MAIN();
