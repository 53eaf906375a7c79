#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocra/rng.hpp"
#include "ocra/tensor.hpp"

namespace ocra {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

// Ordered, named collection of trainable leaves. Order is the checkpoint
// and optimizer order.
template <typename T>
class ParameterSet {
 public:
  Tensor<T> add(std::string name, Shape shape);
  Tensor<T> add_uniform(std::string name, Shape shape, double bound, Rng& rng);

  const std::vector<NamedParameter<T>>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const;
  const Tensor<T>* find(const std::string& name) const;
  int64_t count() const;
  void zero_grad();

 private:
  std::vector<NamedParameter<T>> entries_;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in,out]
  Tensor<T> bias;    // [out]

  Tensor<T> operator()(const Tensor<T>& x) const;
  int64_t in_features() const { return weight.dim(0); }
  int64_t out_features() const { return weight.dim(1); }
};

// Uniform(-1/sqrt(in), 1/sqrt(in)) weights and bias.
template <typename T>
Linear<T> make_linear(ParameterSet<T>& params, const std::string& name, int64_t in, int64_t out,
                      Rng& rng);

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace ocra
