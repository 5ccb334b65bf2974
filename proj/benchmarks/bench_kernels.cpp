#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cpn/data.hpp"
#include "cpn/detail/gemm.hpp"
#include "cpn/dic.hpp"
#include "cpn/network.hpp"
#include "cpn/ops.hpp"
#include "cpn/synth.hpp"
#include "cpn/train.hpp"

using namespace cpn;

namespace {

TensorF random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  TensorF t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<float> a(n * n, 0.5f), b(n * n, 0.25f), c(n * n);
  for (auto _ : state) {
    detail::gemm(detail::Trans::kNo, detail::Trans::kNo, n, n, n, a.data(), n, b.data(), n, c.data(), n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(256)->Arg(512);

void BM_Conv3x3(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const TensorF x = random_tensor(Shape{1, 32, side, side}, 1);
  const TensorF w = random_tensor(Shape{32, 32, 3, 3}, 2);
  const TensorF b = random_tensor(Shape{32}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_Conv3x3)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Correlate(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const TensorF f1 = random_tensor(Shape{1, 64, 64, 64}, 4);
  const TensorF f2 = random_tensor(Shape{1, 64, 64, 64}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(ops::correlate(f1, f2, 0, d));
}
BENCHMARK(BM_Correlate)->Arg(4)->Arg(10)->Unit(benchmark::kMillisecond);

data::SyntheticSpec speckle_pair_spec(std::size_t side) {
  data::SyntheticSpec s;
  s.width = s.height = side;
  s.speckle_density = 0.035;
  s.crack_path = data::vertical_crack(static_cast<double>(side) / 2 + 0.5, side);
  s.tip_rows = {static_cast<double>(side) / 2};
  s.label_size = side / 8;
  s.translation_x = 1;
  s.seed = 9;
  return s;
}

void BM_DicField(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const bool split = state.range(1) != 0;
  const auto frame = data::synth_generate(speckle_pair_spec(side))[0];
  const ImageF ref = data::to_float(frame.pair.reference), def = data::to_float(frame.pair.deformed);
  dic::SubsetConfig cfg{17, 8, 6, true, 12, split};
  for (auto _ : state) benchmark::DoNotOptimize(dic::compute_displacement_field(ref, def, cfg));
}
BENCHMARK(BM_DicField)->Args({256, 0})->Args({256, 1})->Args({512, 1})->Unit(benchmark::kMillisecond);

void BM_Inference(benchmark::State& state) {
  net::NetworkConfig cfg;
  cfg.channel_scale = 0.25;
  cfg.input_size = static_cast<std::size_t>(state.range(0));
  cfg.edge_map_size = cfg.input_size / net::kOutputStride;
  const auto weights = net::init_weights(cfg, 1);
  const TensorF ref = random_tensor(Shape{3, cfg.input_size, cfg.input_size}, 6);
  const TensorF def = random_tensor(Shape{3, cfg.input_size, cfg.input_size}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(train::predict_edges(cfg, weights, ref, def));
}
BENCHMARK(BM_Inference)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
