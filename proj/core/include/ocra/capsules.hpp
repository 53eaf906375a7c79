#pragma once

// Primary capsules, dynamic routing with max-min normalized couplings, and
// winner masking.

#include <vector>

#include "ocra/params.hpp"
#include "ocra/tensor.hpp"

namespace ocra {

enum class RoutingGradient {
  kDetached,  // couplings are constants; gradient reaches p-hat through the final mix
  kFull,      // differentiate through every agreement update as well
};

struct RoutingOptions {
  int iterations = 3;
  RoutingGradient gradient = RoutingGradient::kDetached;
  double lb = 0.01;
  double ub = 1.0;
};

template <typename T>
struct CapsuleBundle {
  Tensor<T> primary;      // [B,I,Dp]
  Tensor<T> predictions;  // [B,I,J,Do]
  Tensor<T> logits;       // [B,I,J], last agreement-updated logits
  Tensor<T> couplings;    // [B,I,J], couplings used for the final mix
  Tensor<T> objects;      // [B,J,Do]
  // Couplings of every iteration, detached; coupling_history.back() == couplings.
  std::vector<Tensor<T>> coupling_history;
};

// h_enc [B,H] -> [B,caps,dim]
template <typename T>
Tensor<T> primary_from_hidden(const Tensor<T>& h_enc, const Linear<T>& w_p, int caps, int dim);

// iterations = R runs R rounds of
//   c = maxmin(b); d = squash(sum_i c_ij p_j|i); b += p_j|i . d_j
// with the logit update skipped in the last round, so R = 1 leaves every
// coupling at the degenerate midpoint.
template <typename T>
CapsuleBundle<T> dynamic_routing(const Tensor<T>& primary, const Tensor<T>& w_ij,
                                 const RoutingOptions& options);

// Object capsule lengths, [B,J,Do] -> [B,J].
template <typename T>
Tensor<T> capsule_scores(const Tensor<T>& objects);

// Per-row argmax of scores [B,J]; ties go to the lowest index.
template <typename T>
std::vector<int> select_winners(const Tensor<T>& scores);

// Zeroes every capsule except each row's winner, flattened to [B,J*Do].
template <typename T>
Tensor<T> mask_winner(const Tensor<T>& objects, const std::vector<int>& winners);

}  // namespace ocra
