#include <benchmark/benchmark.h>

#include "volcnn/data.hpp"
#include "volcnn/metrics.hpp"
#include "volcnn/model.hpp"
#include "volcnn/optim.hpp"

using namespace volcnn;

namespace {

template <typename T>
Tensor<T> noise(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-1, 1));
  return t;
}

// Block 2 of the backbone at f=1: 4 -> 32 channels, k3 d2 on a 47^3 map.
void BM_Conv3dForward(benchmark::State& state) {
  const ConvSpec spec{3, 32, 0, 1, 2};
  const auto x = noise<float>({1, 4, 47, 47, 47}, 1);
  const auto w = noise<float>({32, 4, 3, 3, 3}, 2);
  const Tensor<float> b({32});
  for (auto _ : state) benchmark::DoNotOptimize(conv3d_forward(x, w, b, spec));
}
BENCHMARK(BM_Conv3dForward)->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const ConvSpec spec{3, 32, 0, 1, 2};
  const auto x = noise<float>({1, 4, 47, 47, 47}, 1);
  const auto w = noise<float>({32, 4, 3, 3, 3}, 2);
  const auto g = noise<float>({1, 32, 43, 43, 43}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d_backward(g, x, w, spec));
}
BENCHMARK(BM_Conv3dBackward)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  ModelConfig c;
  c.crop_extent = static_cast<int>(state.range(0));
  Rng rng(4);
  const auto net = build<float>(c, rng);
  const auto x = noise<float>({1, 1, std::size_t(c.crop_extent), std::size_t(c.crop_extent), std::size_t(c.crop_extent)}, 5);
  const Tensor<float> g({1, 3}, 1.f);
  for (auto _ : state) {
    auto r = forward(net, x);
    benchmark::DoNotOptimize(backward(net, r.tape, g));
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(96)->Unit(benchmark::kMillisecond);

void BM_GaussianBlur96(benchmark::State& state) {
  const auto v = noise<float>({1, 96, 96, 96}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_blur(v, 1.5));
}
BENCHMARK(BM_GaussianBlur96)->Unit(benchmark::kMillisecond);

void BM_RocAuc(benchmark::State& state) {
  Rng rng(7);
  std::vector<double> s(static_cast<std::size_t>(state.range(0)));
  std::vector<int> y(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = rng.uniform(), y[i] = static_cast<int>(i % 2);
  for (auto _ : state) benchmark::DoNotOptimize(roc_auc(s, y));
}
BENCHMARK(BM_RocAuc)->Arg(1000)->Arg(100000);

void BM_Bootstrap(benchmark::State& state) {
  Rng rng(8);
  std::vector<SampleRecord> recs(300);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].label = static_cast<int>(i % 3);
    const double a = rng.uniform(), b = rng.uniform() * (1 - a);
    recs[i].probs = {a, b, 1 - a - b};
    recs[i].pred = static_cast<int>(std::max_element(recs[i].probs.begin(), recs[i].probs.end()) - recs[i].probs.begin());
  }
  BootstrapOptions o;
  o.n_resamples = 200;
  for (auto _ : state) benchmark::DoNotOptimize(make_report(recs, "test", o, Rng(1)));
}
BENCHMARK(BM_Bootstrap)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
