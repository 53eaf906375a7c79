#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "ocra/tensor.hpp"

namespace ocra {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // Denominator floor for the element-wise relative error.
  double abs_floor = 1e-8;
  // Fourth-order (5-point) central stencil; false uses the 2-point one.
  bool high_order = true;
  // Check at most this many elements per input (evenly strided); 0 = all.
  int64_t max_elements_per_input = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int64_t checked = 0;
  std::string worst;  // "input[k] element i: analytic a vs numeric n"
  bool passed = false;
};

// Compares the analytic gradient of loss_fn() w.r.t. each input against
// central finite differences. Inputs must be leaf tensors with requires_grad.
GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss_fn,
                                std::span<Tensor<double>> inputs,
                                const GradCheckOptions& options = {});

}  // namespace ocra
