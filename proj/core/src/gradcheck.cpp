#include "ocra/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "ocra/error.hpp"

namespace ocra {

GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss_fn,
                                std::span<Tensor<double>> inputs,
                                const GradCheckOptions& options) {
  for (auto& in : inputs) {
    if (!in.requires_grad()) throw ContractError("check_gradients: input does not require grad");
    in.zero_grad();
  }
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    if (in.has_grad()) {
      analytic.emplace_back(in.grad().begin(), in.grad().end());
    } else {
      analytic.emplace_back(static_cast<size_t>(in.numel()), 0.0);
    }
  }

  NoGradGuard no_grad;
  auto eval_at = [&](double& slot, double original, double offset) {
    slot = original + offset;
    const double v = loss_fn().item();
    slot = original;
    return v;
  };

  GradCheckResult result;
  const double h = options.step;
  for (size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_data();
    const auto n = static_cast<int64_t>(values.size());
    int64_t stride = 1;
    if (options.max_elements_per_input > 0 && n > options.max_elements_per_input) {
      stride = (n + options.max_elements_per_input - 1) / options.max_elements_per_input;
    }
    for (int64_t i = 0; i < n; i += stride) {
      double& slot = values[static_cast<size_t>(i)];
      const double x0 = slot;
      double numeric;
      if (options.high_order) {
        const double f1 = eval_at(slot, x0, h), fm1 = eval_at(slot, x0, -h);
        const double f2 = eval_at(slot, x0, 2 * h), fm2 = eval_at(slot, x0, -2 * h);
        numeric = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h);
      } else {
        numeric = (eval_at(slot, x0, h) - eval_at(slot, x0, -h)) / (2.0 * h);
      }
      const double a = analytic[t][static_cast<size_t>(i)];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = std::max(rel, result.max_rel_error);
        if (rel >= result.max_rel_error) {
          std::ostringstream os;
          os << "input[" << t << "] element " << i << ": analytic " << a << " vs numeric "
             << numeric;
          result.worst = os.str();
        }
      }
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

}  // namespace ocra
