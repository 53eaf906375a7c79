#pragma once

// Differentiable read and write attention through grids of Gaussian filters.
//
// Coordinates are 1-based pixel units: column w runs 1..image_w, row h runs
// 1..image_h. A grid of N filters per axis is centered at (g_x, g_y) with
// stride delta; filter i (1-based) sits at g + (i - N/2 - 0.5) * delta.

#include <vector>

#include "ocra/params.hpp"
#include "ocra/tensor.hpp"

namespace ocra {

struct AttentionParams {
  double g_x = 0.0;
  double g_y = 0.0;
  double delta = 0.0;
  double sigma2 = 0.0;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

template <typename T>
struct Filterbanks {
  Tensor<T> params;  // decoded [B,4] = (g_x, g_y, delta, sigma2)
  Tensor<T> fx;      // [B,N,W]
  Tensor<T> fy;      // [B,N,H]
  int grid_n = 0;
  int degenerate_rows = 0;  // rows normalized against the 1e-8 floor
};

// Linear map of the decoder state to the four raw values, then decoding.
template <typename T>
Tensor<T> decode_attention_params(const Tensor<T>& h_dec, const Linear<T>& map, ImageSize image,
                                  int grid_n);

template <typename T>
Filterbanks<T> build_filterbanks(const Tensor<T>& params, int grid_n, ImageSize image);

// image [B,H,W] -> glimpse [B,N,N] = F_Y x F_X^T
template <typename T>
Tensor<T> read_glimpse(const Tensor<T>& image, const Filterbanks<T>& fb);

// patch [B,M,M] -> [B,H,W] = F_Y^T w F_X
template <typename T>
Tensor<T> project_patch(const Tensor<T>& patch, const Filterbanks<T>& fb);

template <typename T>
struct WriteResult {
  Tensor<T> canvas_delta;  // [B,H,W]
  Tensor<T> patch;         // [B,M,M]
  Filterbanks<T> filterbanks;
};

// Write patch from W_write, placed through filterbanks decoded from a
// separate map W_write_attention.
template <typename T>
WriteResult<T> write_patch(const Tensor<T>& h_dec, const Linear<T>& patch_map,
                           const Linear<T>& attention_map, ImageSize image, int patch_size);

// Back-projection of an all-ones N x N patch, clipped to [0,1].
template <typename T>
Tensor<T> glimpse_footprint(const Filterbanks<T>& fb);

// Per-batch-item decoded parameters, for traces.
template <typename T>
std::vector<AttentionParams> attention_values(const Tensor<T>& decoded);

// Attention window rectangle (1-based pixel units): half-extent
// (N-1) * delta / 2 around the center.
struct Rect {
  double x0, y0, x1, y1;
};
Rect attention_rect(const AttentionParams& p, int grid_n);

}  // namespace ocra
