#pragma once

#include "ocra/tensor.hpp"

namespace ocra {

// Gate blocks along the 4H axis are laid out (input, forget, cell, output).
template <typename T>
struct LstmWeights {
  Tensor<T> w_ih;  // [I,4H]
  Tensor<T> w_hh;  // [H,4H]; undefined for a cell without recurrence
  Tensor<T> bias;  // [4H]
};

template <typename T>
struct LstmState {
  Tensor<T> h;  // [B,H]
  Tensor<T> c;  // [B,H]
};

template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const LstmState<T>& state,
                       const LstmWeights<T>& weights);

}  // namespace ocra
