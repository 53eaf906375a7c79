#include "ocra/params.hpp"

#include <cmath>

#include "ocra/error.hpp"
#include "ocra/ops.hpp"

namespace ocra {

template <typename T>
Tensor<T> ParameterSet<T>::add(std::string name, Shape shape) {
  if (find(name)) throw ContractError("duplicate parameter name " + name);
  auto t = Tensor<T>::zeros(std::move(shape), true);
  entries_.push_back({std::move(name), t});
  return t;
}

template <typename T>
Tensor<T> ParameterSet<T>::add_uniform(std::string name, Shape shape, double bound, Rng& rng) {
  auto t = add(std::move(name), std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
std::vector<Tensor<T>> ParameterSet<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

template <typename T>
const Tensor<T>* ParameterSet<T>::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

template <typename T>
int64_t ParameterSet<T>::count() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return linear(x, weight, bias);
}

template <typename T>
Linear<T> make_linear(ParameterSet<T>& params, const std::string& name, int64_t in, int64_t out,
                      Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear<T> layer;
  layer.weight = params.add_uniform(name + ".weight", {in, out}, bound, rng);
  layer.bias = params.add_uniform(name + ".bias", {out}, bound, rng);
  return layer;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template struct Linear<float>;
template struct Linear<double>;
template Linear<float> make_linear(ParameterSet<float>&, const std::string&, int64_t, int64_t, Rng&);
template Linear<double> make_linear(ParameterSet<double>&, const std::string&, int64_t, int64_t,
                                    Rng&);

}  // namespace ocra
