#include "ocra/lstm.hpp"

#include "ocra/error.hpp"
#include "ocra/ops.hpp"

namespace ocra {

template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const LstmState<T>& state,
                       const LstmWeights<T>& weights) {
  const int64_t hidden = weights.w_ih.dim(1) / 4;
  if (weights.w_ih.dim(1) != 4 * hidden) {
    throw DimensionError("lstm_step: w_ih " + shape_str(weights.w_ih.shape()) +
                         " is not [I,4H]");
  }
  if (state.h.shape() != state.c.shape() || state.h.rank() != 2 || state.h.dim(1) != hidden ||
      state.h.dim(0) != x.dim(0)) {
    throw DimensionError("lstm_step: hidden " + shape_str(state.h.shape()) + " / cell " +
                         shape_str(state.c.shape()) + " do not match batch " +
                         std::to_string(x.dim(0)) + " and hidden size " +
                         std::to_string(hidden));
  }
  Tensor<T> gates = linear(x, weights.w_ih, weights.bias);
  if (weights.w_hh.defined()) gates = add(gates, matmul(state.h, weights.w_hh));

  auto in_gate = sigmoid(slice_last(gates, 0, hidden));
  auto forget_gate = sigmoid(slice_last(gates, hidden, hidden));
  auto candidate = tanh(slice_last(gates, 2 * hidden, hidden));
  auto out_gate = sigmoid(slice_last(gates, 3 * hidden, hidden));

  auto c = add(mul(forget_gate, state.c), mul(in_gate, candidate));
  auto h = mul(out_gate, tanh(c));
  return {h, c};
}

template LstmState<float> lstm_step(const Tensor<float>&, const LstmState<float>&,
                                    const LstmWeights<float>&);
template LstmState<double> lstm_step(const Tensor<double>&, const LstmState<double>&,
                                     const LstmWeights<double>&);

}  // namespace ocra
