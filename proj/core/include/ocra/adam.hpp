#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ocra/tensor.hpp"

namespace ocra {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  int64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

// One bias-corrected Adam update of every parameter from its accumulated
// grad (a parameter without a grad is treated as having a zero grad). The
// moment buffers are sized on first use and must keep matching afterwards.
template <typename T>
void adam_update(std::span<Tensor<T>> params, AdamState<T>& state);

}  // namespace ocra
