// Optimized (im2col + GEMM, OpenMP) kernels against the serial reference,
// on the layer shapes of CNN-M, plus a full CNN-M training step.

#include <benchmark/benchmark.h>

#include <random>

#include "facever/architecture.hpp"
#include "facever/kernels.hpp"
#include "facever/network.hpp"

using namespace facever;

namespace {

struct ConvCase {
  std::size_t h, cin, cout, k, stride;
};

// conv1..conv3 of CNN-M on a colour input.
constexpr ConvCase kCases[] = {{58, 3, 16, 5, 1}, {27, 16, 32, 4, 1}, {12, 32, 48, 3, 2}};

Tensor<float> random_tensor(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor<float> t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

template <bool Optimized>
void BM_ConvForward(benchmark::State& state) {
  const auto& c = kCases[state.range(0)];
  const std::size_t batch = state.range(1);
  const auto x = random_tensor({batch, c.h, c.h, c.cin}, 1);
  const auto w = random_tensor({c.cout, c.k, c.k, c.cin}, 2);
  const auto b = random_tensor({c.cout}, 3);
  for (auto _ : state) {
    auto y = Optimized ? kernels::conv2d_forward(x, w, b, c.stride, 0)
                       : kernels::reference::conv2d_forward(x, w, b, c.stride, 0);
    benchmark::DoNotOptimize(y.raw());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

template <bool Optimized>
void BM_ConvBackward(benchmark::State& state) {
  const auto& c = kCases[state.range(0)];
  const std::size_t batch = state.range(1);
  const auto x = random_tensor({batch, c.h, c.h, c.cin}, 1);
  const auto w = random_tensor({c.cout, c.k, c.k, c.cin}, 2);
  const std::size_t o = kernels::conv_output_extent(c.h, c.k, c.stride, 0);
  const auto g = random_tensor({batch, o, o, c.cout}, 4);
  Tensor<float> gw(w.shape()), gb({c.cout});
  for (auto _ : state) {
    auto gx = Optimized ? kernels::conv2d_backward(x, w, g, c.stride, 0, gw, gb)
                        : kernels::reference::conv2d_backward(x, w, g, c.stride, 0, gw, gb);
    benchmark::DoNotOptimize(gx.raw());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void BM_TrainStepCnnM(benchmark::State& state) {
  const std::size_t batch = state.range(0);
  Network<float> net(build_arch("CNN-M", 3, 100));
  net.initialize({InitScheme::he, 0.0}, 1);
  const auto x = random_tensor({batch, 58, 58, 3}, 5);
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % 100);
  for (auto _ : state) {
    auto r = net.forward_backward(x, labels);
    benchmark::DoNotOptimize(r.loss);
    net.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

}  // namespace

BENCHMARK(BM_ConvForward<true>)->ArgsProduct({{0, 1, 2}, {16}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<false>)->ArgsProduct({{0, 1, 2}, {16}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->ArgsProduct({{0, 1, 2}, {16}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->ArgsProduct({{0, 1, 2}, {16}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStepCnnM)->Arg(100)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
