#include "ocra/losses.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "ocra/error.hpp"
#include "ocra/ops.hpp"

namespace ocra {

template <typename T>
Tensor<T> target_counts(const std::vector<std::vector<int>>& labels, int classes) {
  const auto batch = static_cast<int64_t>(labels.size());
  std::vector<T> counts(static_cast<size_t>(batch * classes), T(0));
  for (int64_t b = 0; b < batch; ++b) {
    for (int label : labels[static_cast<size_t>(b)]) {
      if (label < 0 || label >= classes) {
        throw ContractError("label " + std::to_string(label) + " outside " +
                            std::to_string(classes) + " classes");
      }
      counts[static_cast<size_t>(b * classes + label)] += T(1);
    }
  }
  return Tensor<T>({batch, classes}, std::move(counts));
}

template <typename T>
Tensor<T> classification_loss(const Tensor<T>& scores, const Tensor<T>& targets,
                              const MarginOptions& options) {
  return margin_loss(scores, targets, static_cast<T>(options.margin),
                     static_cast<T>(options.lambda_absent));
}

template <typename T>
Tensor<T> recon_loss(const Tensor<T>& canvas, const Tensor<T>& image, const Tensor<T>& mask,
                     bool clip) {
  if (canvas.shape() != image.shape()) {
    throw DimensionError("recon_loss: canvas " + shape_str(canvas.shape()) + " vs image " +
                         shape_str(image.shape()));
  }
  Tensor<T> output = clip ? clamp(canvas, T(0), T(1)) : canvas;
  Tensor<T> target = image;
  if (mask.defined()) {
    if (mask.shape() != image.shape()) {
      throw DimensionError("recon_loss: mask " + shape_str(mask.shape()) + " vs image " +
                           shape_str(image.shape()));
    }
    target = mul(image, mask);
  }
  return mse(output, target);
}

template <typename T>
Tensor<T> build_recon_mask(const std::vector<Tensor<T>>& footprints) {
  if (footprints.empty()) throw ConfigError("reconstruction mask needs at least one step");
  Tensor<T> acc = footprints.front();
  for (size_t t = 1; t < footprints.size(); ++t) acc = add(acc, footprints[t]);
  return clamp(scale(acc, T(1) / static_cast<T>(footprints.size())), T(0), T(1));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& class_loss, const Tensor<T>& recon, double lambda_recon) {
  return add(class_loss, scale(recon, static_cast<T>(lambda_recon)));
}

std::vector<int> predict_labels(const std::vector<double>& scores, int objects) {
  if (objects < 1 || static_cast<size_t>(objects) > scores.size()) {
    throw ContractError("cannot predict " + std::to_string(objects) + " objects from " +
                        std::to_string(scores.size()) + " scores");
  }
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[static_cast<size_t>(a)] >
                                              scores[static_cast<size_t>(b)]; });
  std::vector<int> out;
  if (objects == 2 && scores[static_cast<size_t>(order[0])] > kDuplicateThreshold) {
    out = {order[0], order[0]};
  } else {
    out.assign(order.begin(), order.begin() + objects);
  }
  std::sort(out.begin(), out.end());
  return out;
}

int image_level_error(std::vector<int> predicted, std::vector<int> truth) {
  if (predicted.size() != truth.size()) {
    throw ContractError("label multisets differ in size: " + std::to_string(predicted.size()) +
                        " vs " + std::to_string(truth.size()));
  }
  std::sort(predicted.begin(), predicted.end());
  std::sort(truth.begin(), truth.end());
  return predicted == truth ? 0 : 1;
}

#define OCRA_INSTANTIATE_LOSSES(T)                                                             \
  template Tensor<T> target_counts<T>(const std::vector<std::vector<int>>&, int);              \
  template Tensor<T> classification_loss(const Tensor<T>&, const Tensor<T>&,                   \
                                         const MarginOptions&);                                \
  template Tensor<T> recon_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool);   \
  template Tensor<T> build_recon_mask(const std::vector<Tensor<T>>&);                          \
  template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, double);

OCRA_INSTANTIATE_LOSSES(float)
OCRA_INSTANTIATE_LOSSES(double)

}  // namespace ocra
