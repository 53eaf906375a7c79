#include <benchmark/benchmark.h>

#include "ocra/capsules.hpp"
#include "ocra/glimpse.hpp"
#include "ocra/lstm.hpp"
#include "ocra/ops.hpp"
#include "ocra/rng.hpp"

using namespace ocra;

namespace {

Tensor<float> random_tensor(Shape shape, uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return Tensor<float>(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto a = random_tensor({128, n}, 1);
  auto b = random_tensor({n, 4 * n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * 128 * n * 4 * n);
}
BENCHMARK(BM_Matmul)->Arg(512);

void BM_LstmStepForwardBackward(benchmark::State& state) {
  const int64_t batch = 128, in = state.range(0), hidden = 512;
  LstmWeights<float> w{random_tensor({in, 4 * hidden}, 1, true),
                       random_tensor({hidden, 4 * hidden}, 2, true),
                       random_tensor({4 * hidden}, 3, true)};
  auto x = random_tensor({batch, in}, 4);
  LstmState<float> s{random_tensor({batch, hidden}, 5), random_tensor({batch, hidden}, 6)};
  for (auto _ : state) {
    auto next = lstm_step(x, s, w);
    sum(next.h).backward();
  }
}
BENCHMARK(BM_LstmStepForwardBackward)->Arg(512)->Arg(160);

void BM_EncoderConvForwardBackward(benchmark::State& state) {
  auto x = random_tensor({128, 1, 18, 18}, 1);
  auto k1 = random_tensor({32, 1, 5, 5}, 2, true);
  auto b1 = random_tensor({32}, 3, true);
  auto k2 = random_tensor({32, 32, 3, 3}, 4, true);
  auto b2 = random_tensor({32}, 5, true);
  for (auto _ : state) {
    auto h = maxpool2(relu(conv2d(x, k1, b1, 2)));
    sum(maxpool2(relu(conv2d(h, k2, b2, 1)))).backward();
  }
}
BENCHMARK(BM_EncoderConvForwardBackward);

void BM_ReadGlimpse(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  auto image = random_tensor({128, side, side}, 1);
  auto raw = random_tensor({128, 4}, 2, true);
  for (auto _ : state) {
    auto fb = build_filterbanks(decode_attention(raw, side, side, 18), 18, {side, side});
    sum(read_glimpse(image, fb)).backward();
  }
}
BENCHMARK(BM_ReadGlimpse)->Arg(36)->Arg(100);

void BM_Routing(benchmark::State& state) {
  auto primary = random_tensor({128, 40, 8}, 1, true);
  auto w = random_tensor({40, 10, 16, 8}, 2, true);
  RoutingOptions opt;
  for (auto _ : state) {
    auto bundle = dynamic_routing(primary, w, opt);
    sum(capsule_scores(bundle.objects)).backward();
  }
}
BENCHMARK(BM_Routing);

}  // namespace
