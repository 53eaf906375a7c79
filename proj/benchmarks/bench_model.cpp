#include <benchmark/benchmark.h>

#include "ocra/adam.hpp"
#include "ocra/model.hpp"
#include "ocra/rng.hpp"

using namespace ocra;

namespace {

void BM_TrainStep(benchmark::State& state, const char* preset_name) {
  RunConfig config = preset(preset_name);
  OcraModel<float> model(config);
  const int64_t batch = 128;
  Rng rng(3);
  std::vector<float> px(static_cast<size_t>(batch * config.image_width * config.image_height));
  for (auto& v : px) v = rng.uniform() < 0.2 ? static_cast<float>(rng.uniform()) : 0.0f;
  Tensor<float> images({batch, config.image_height, config.image_width}, std::move(px));
  std::vector<std::vector<int>> labels(static_cast<size_t>(batch), std::vector<int>{1, 7});
  auto targets = target_counts<float>(labels, config.num_classes);
  auto params = model.parameters().tensors();
  AdamState<float> adam;
  for (auto _ : state) {
    auto out = model.run_episode(images);
    auto terms = model.loss(out, images, targets);
    terms.total.backward();
    adam_update(std::span<Tensor<float>>(params), adam);
    model.parameters().zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK_CAPTURE(BM_TrainStep, multimnist_3glimpse, "multimnist-3glimpse")
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainStep, multimnist_10glimpse, "multimnist-10glimpse")
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainStep, cluttered_5glimpse, "cluttered-5glimpse")
    ->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
