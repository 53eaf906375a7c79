#include "ocra/adam.hpp"

#include <cmath>

#include "ocra/error.hpp"

namespace ocra {

template <typename T>
void adam_update(std::span<Tensor<T>> params, AdamState<T>& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(static_cast<size_t>(p.numel()), T(0));
      state.second_moment.emplace_back(static_cast<size_t>(p.numel()), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_update: optimizer state tracks " +
                         std::to_string(state.first_moment.size()) + " tensors, got " +
                         std::to_string(params.size()));
  }
  ++state.step;
  const auto& o = state.options;
  const double correction1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);

  for (size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    auto& m = state.first_moment[t];
    auto& v = state.second_moment[t];
    if (m.size() != static_cast<size_t>(p.numel())) {
      throw DimensionError("adam_update: moment size does not match parameter " +
                           shape_str(p.shape()));
    }
    auto value = p.mutable_data();
    const bool has_grad = p.has_grad();
    const auto grad = p.grad();
    for (size_t i = 0; i < value.size(); ++i) {
      const T g = has_grad ? grad[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double m_hat = static_cast<double>(m[i]) / correction1;
      const double v_hat = static_cast<double>(v[i]) / correction2;
      value[i] -= static_cast<T>(o.lr * m_hat / (std::sqrt(v_hat) + o.epsilon));
    }
  }
}

template void adam_update(std::span<Tensor<float>>, AdamState<float>&);
template void adam_update(std::span<Tensor<double>>, AdamState<double>&);

}  // namespace ocra
