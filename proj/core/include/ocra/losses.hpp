#pragma once

#include <vector>

#include "ocra/tensor.hpp"

namespace ocra {

struct MarginOptions {
  double margin = 0.1;
  double lambda_absent = 0.5;
};

// Per-class object counts, [B,classes]. labels[b] lists the classes of
// sample b, repeated for duplicates.
template <typename T>
Tensor<T> target_counts(const std::vector<std::vector<int>>& labels, int classes);

// scores [B,J] accumulated over the episode (background excluded).
template <typename T>
Tensor<T> classification_loss(const Tensor<T>& scores, const Tensor<T>& targets,
                              const MarginOptions& options);

// Mean squared difference between the (optionally clipped) canvas and the
// image, with the image multiplied by mask when mask is defined.
template <typename T>
Tensor<T> recon_loss(const Tensor<T>& canvas, const Tensor<T>& image, const Tensor<T>& mask,
                     bool clip);

// Mean of per-step footprints, each already in [0,1], clipped to [0,1].
template <typename T>
Tensor<T> build_recon_mask(const std::vector<Tensor<T>>& footprints);

template <typename T>
Tensor<T> total_loss(const Tensor<T>& class_loss, const Tensor<T>& recon, double lambda_recon);

inline constexpr double kDuplicateThreshold = 1.8;

// Label multiset (sorted) for one score row. With objects == 2 a score
// above kDuplicateThreshold yields that class twice, otherwise the two
// highest classes. In general the top `objects` classes; ties go to the
// lower index.
std::vector<int> predict_labels(const std::vector<double>& scores, int objects);

// 0 when the two label multisets are equal, 1 otherwise.
int image_level_error(std::vector<int> predicted, std::vector<int> truth);

}  // namespace ocra
