#pragma once

// The differentiable operation set. Every op records a backward closure
// when grad mode is on and at least one input requires gradients.
// Leading "batch" axes are explicit in each signature.

#include <string_view>

#include "ocra/tensor.hpp"

namespace ocra {

// ---- linear algebra --------------------------------------------------------

// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x [B,in] * w [in,out] + bias [out]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Batched product of [B,m,k] and [B,k,n] with optional per-operand transposes
// of the two trailing axes.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
              bool trans_b = false);

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T>
Tensor<T> tanh(const Tensor<T>& a);
template <typename T>
Tensor<T> exp(const Tensor<T>& a);
template <typename T>
Tensor<T> square(const Tensor<T>& a);
// Gradient passes only where lo < a < hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// ---- reductions and shape --------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Columns [begin, begin+length) of the last axis.
template <typename T>
Tensor<T> slice_last(const Tensor<T>& a, int64_t begin, int64_t length);

// ---- convolution -----------------------------------------------------------

// Stride-1 cross-correlation with zero padding. input is [C,H,W] or
// [B,C,H,W]; kernels [O,C,k,k]; bias [O] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 int padding);

// 2x2 stride-2 max pooling over the two trailing axes, floor on odd extents.
// Ties route the gradient to the first maximal element in scan order.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input);

// ---- Gaussian attention ----------------------------------------------------

// raw [B,4] = (gx~, gy~, log delta, log sigma^2) -> [B,4] = (gx, gy, delta,
// sigma^2) in 1-based pixel units of an image_w x image_h image.
template <typename T>
Tensor<T> decode_attention(const Tensor<T>& raw, int image_w, int image_h, int grid_n);

// params [B,4] decoded attention -> [B,grid_n,extent] row-normalized Gaussian
// filterbank along one image axis (axis 0: columns/X, axis 1: rows/Y).
// Rows whose normalizer falls below 1e-8 are divided by 1e-8 instead and
// counted into *degenerate_rows when given.
template <typename T>
Tensor<T> gaussian_filterbank(const Tensor<T>& params, int axis, int grid_n, int extent,
                              int* degenerate_rows = nullptr);

// ---- capsules --------------------------------------------------------------

// p [B,I,Dp], w [I,J,Do,Dp] -> predictions [B,I,J,Do]
template <typename T>
Tensor<T> capsule_predict(const Tensor<T>& primary, const Tensor<T>& weights);

// c [B,I,J], predictions [B,I,J,Do] -> [B,J,Do] = sum_i c_ij * pred_ij
template <typename T>
Tensor<T> capsule_mix(const Tensor<T>& couplings, const Tensor<T>& predictions);

// Squash over the last axis: same direction, length |v|^2 / (1 + |v|^2).
template <typename T>
Tensor<T> squash(const Tensor<T>& v);

// predictions [B,I,J,Do], d [B,J,Do] -> [B,I,J] dot products
template <typename T>
Tensor<T> agreement(const Tensor<T>& predictions, const Tensor<T>& objects);

// Affine map of each last-axis row onto [lb, ub]. Constant rows map to the
// midpoint (lb + ub) / 2.
template <typename T>
Tensor<T> maxmin_normalize(const Tensor<T>& logits, T lb = T(0.01), T ub = T(1.0));

// L2 norm over the last axis.
template <typename T>
Tensor<T> vector_length(const Tensor<T>& v);

// ---- losses ----------------------------------------------------------------

// scores/targets [B,J]; batch mean of
//   sum_j min(T,1)^+ * ((T-m) - s)^+^2 + lambda_absent * (1-T)^+ * (s-m)^+^2
template <typename T>
Tensor<T> margin_loss(const Tensor<T>& scores, const Tensor<T>& targets, T margin,
                      T lambda_absent);

// Mean of squared differences over all elements.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

// Throws NumericError naming `what` if any value is NaN or infinite.
template <typename T>
void assert_finite(const Tensor<T>& t, std::string_view what);

}  // namespace ocra
