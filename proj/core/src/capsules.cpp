#include "ocra/capsules.hpp"

#include <string>

#include "ocra/error.hpp"
#include "ocra/ops.hpp"

namespace ocra {

template <typename T>
Tensor<T> primary_from_hidden(const Tensor<T>& h_enc, const Linear<T>& w_p, int caps, int dim) {
  if (w_p.out_features() != static_cast<int64_t>(caps) * dim) {
    throw DimensionError("primary map produces " + std::to_string(w_p.out_features()) +
                         " values for " + std::to_string(caps) + " capsules of size " +
                         std::to_string(dim));
  }
  return reshape(w_p(h_enc), {h_enc.dim(0), caps, dim});
}

template <typename T>
CapsuleBundle<T> dynamic_routing(const Tensor<T>& primary, const Tensor<T>& w_ij,
                                 const RoutingOptions& options) {
  if (options.iterations < 1) {
    throw ConfigError("routing needs at least one iteration, got " +
                      std::to_string(options.iterations));
  }
  const bool full = options.gradient == RoutingGradient::kFull;
  const T lb = static_cast<T>(options.lb), ub = static_cast<T>(options.ub);

  CapsuleBundle<T> out;
  out.primary = primary;
  out.predictions = capsule_predict(primary, w_ij);
  const int64_t batch = primary.dim(0), in_caps = primary.dim(1), out_caps = w_ij.dim(1);

  Tensor<T> logits = Tensor<T>::zeros({batch, in_caps, out_caps});
  const Tensor<T> pred_const = full ? out.predictions : out.predictions.detach();
  for (int r = 0; r < options.iterations; ++r) {
    const bool last = r + 1 == options.iterations;
    Tensor<T> couplings = maxmin_normalize(logits, lb, ub);
    out.coupling_history.push_back(couplings.detach());
    if (last) {
      out.couplings = couplings;
      out.objects = squash(capsule_mix(couplings, out.predictions));
      break;
    }
    if (full) {
      auto objects = squash(capsule_mix(couplings, out.predictions));
      logits = add(logits, agreement(out.predictions, objects));
    } else {
      NoGradGuard guard;
      auto objects = squash(capsule_mix(couplings, pred_const));
      logits = add(logits, agreement(pred_const, objects));
    }
  }
  out.logits = logits;
  return out;
}

template <typename T>
Tensor<T> capsule_scores(const Tensor<T>& objects) {
  return vector_length(objects);
}

template <typename T>
std::vector<int> select_winners(const Tensor<T>& scores) {
  if (scores.rank() != 2) {
    throw DimensionError("select_winners expects [B,J], got " + shape_str(scores.shape()));
  }
  const int64_t batch = scores.dim(0), classes = scores.dim(1);
  const auto s = scores.data();
  std::vector<int> winners(static_cast<size_t>(batch), 0);
  for (int64_t b = 0; b < batch; ++b) {
    int best = 0;
    for (int64_t j = 1; j < classes; ++j) {
      if (s[static_cast<size_t>(b * classes + j)] > s[static_cast<size_t>(b * classes + best)]) {
        best = static_cast<int>(j);
      }
    }
    winners[static_cast<size_t>(b)] = best;
  }
  return winners;
}

template <typename T>
Tensor<T> mask_winner(const Tensor<T>& objects, const std::vector<int>& winners) {
  if (objects.rank() != 3 || objects.dim(0) != static_cast<int64_t>(winners.size())) {
    throw DimensionError("mask_winner: objects " + shape_str(objects.shape()) + " for " +
                         std::to_string(winners.size()) + " winners");
  }
  const int64_t batch = objects.dim(0), caps = objects.dim(1), dim = objects.dim(2);
  std::vector<T> mask(static_cast<size_t>(batch * caps * dim), T(0));
  for (int64_t b = 0; b < batch; ++b) {
    const int w = winners[static_cast<size_t>(b)];
    if (w < 0 || w >= caps) throw ContractError("winner index out of range");
    std::fill_n(mask.begin() + (b * caps + w) * dim, dim, T(1));
  }
  auto masked = mul(objects, Tensor<T>(objects.shape(), std::move(mask)));
  return reshape(masked, {batch, caps * dim});
}

#define OCRA_INSTANTIATE_CAPSULES(T)                                                           \
  template Tensor<T> primary_from_hidden(const Tensor<T>&, const Linear<T>&, int, int);        \
  template CapsuleBundle<T> dynamic_routing(const Tensor<T>&, const Tensor<T>&,                \
                                            const RoutingOptions&);                            \
  template Tensor<T> capsule_scores(const Tensor<T>&);                                         \
  template std::vector<int> select_winners(const Tensor<T>&);                                  \
  template Tensor<T> mask_winner(const Tensor<T>&, const std::vector<int>&);

OCRA_INSTANTIATE_CAPSULES(float)
OCRA_INSTANTIATE_CAPSULES(double)

}  // namespace ocra
