#include "ocra/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "ocra/error.hpp"

namespace ocra {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Node = detail::Node<T>;
template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Eigen::Map<const RowMat<T>> cmat(const Buffer<T>& v, int64_t offset, int64_t rows,
                                 int64_t cols) {
  return Eigen::Map<const RowMat<T>>(v.data() + offset, rows, cols);
}

template <typename T>
Eigen::Map<RowMat<T>> mmat(Buffer<T>& v, int64_t offset, int64_t rows, int64_t cols) {
  return Eigen::Map<RowMat<T>>(v.data() + offset, rows, cols);
}

template <typename T>
bool wants(const NodePtr<T>& p) {
  if (!p || !p->requires_grad) return false;
  p->ensure_grad();
  return true;
}

// Wraps a freshly computed value into a tensor, attaching history when any
// input needs gradients.
template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> value, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto out = Tensor<T>::from_buffer(std::move(shape), std::move(value));
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& in : inputs) node.parents.push_back(in.defined() ? in.node() : nullptr);
  node.backward = std::move(backward_fn);
  return out;
}

template <typename T>
const Buffer<T>& val(const Tensor<T>& t) {
  return t.node()->value;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

std::string pair_str(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b);
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined input");
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  require_defined(a, "unary");
  const auto& x = val(a);
  Buffer<T> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result<T>(a.shape(), std::move(y), {a}, [df](Node<T>& self) {
    auto& p = self.parents[0];
    if (!wants(p)) return;
    for (size_t i = 0; i < self.grad.size(); ++i) {
      p->grad[i] += self.grad[i] * df(p->value[i], self.value[i]);
    }
  });
}

}  // namespace

// ---- linear algebra --------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          pair_str("matmul", a.shape(), b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer<T> out(static_cast<size_t>(m * n));
  mmat(out, 0, m, n).noalias() = cmat(val(a), 0, m, k) * cmat(val(b), 0, k, n);
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    auto g = cmat(self.grad, 0, m, n);
    if (wants(pa)) mmat(pa->grad, 0, m, k).noalias() += g * cmat(pb->value, 0, k, n).transpose();
    if (wants(pb)) mmat(pb->grad, 0, k, n).noalias() += cmat(pa->value, 0, m, k).transpose() * g;
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_defined(x, "linear");
  require_defined(w, "linear");
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0),
          pair_str("linear", x.shape(), w.shape()));
  const int64_t rows = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (bias.defined()) {
    require(bias.numel() == out_dim, pair_str("linear bias", w.shape(), bias.shape()));
  }
  Buffer<T> out(static_cast<size_t>(rows * out_dim));
  auto y = mmat(out, 0, rows, out_dim);
  y.noalias() = cmat(val(x), 0, rows, in) * cmat(val(w), 0, in, out_dim);
  if (bias.defined()) y.rowwise() += cmat(val(bias), 0, 1, out_dim).row(0);
  return make_result<T>({rows, out_dim}, std::move(out), {x, w, bias},
                        [rows, in, out_dim](Node<T>& self) {
                          auto& px = self.parents[0];
                          auto& pw = self.parents[1];
                          auto& pb = self.parents[2];
                          auto g = cmat(self.grad, 0, rows, out_dim);
                          if (wants(px)) {
                            mmat(px->grad, 0, rows, in).noalias() +=
                                g * cmat(pw->value, 0, in, out_dim).transpose();
                          }
                          if (wants(pw)) {
                            mmat(pw->grad, 0, in, out_dim).noalias() +=
                                cmat(px->value, 0, rows, in).transpose() * g;
                          }
                          if (wants(pb)) mmat(pb->grad, 0, 1, out_dim) += g.colwise().sum();
                        });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  require_defined(a, "bmm");
  require_defined(b, "bmm");
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0),
          pair_str("bmm", a.shape(), b.shape()));
  const int64_t batch = a.dim(0);
  const int64_t ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const int64_t m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const int64_t kb = trans_b ? bc : br, n = trans_b ? br : bc;
  require(k == kb, pair_str("bmm", a.shape(), b.shape()));
  Buffer<T> out(static_cast<size_t>(batch * m * n));
  for (int64_t s = 0; s < batch; ++s) {
    auto A = cmat(val(a), s * ar * ac, ar, ac);
    auto B = cmat(val(b), s * br * bc, br, bc);
    auto C = mmat(out, s * m * n, m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  return make_result<T>(
      {batch, m, n}, std::move(out), {a, b},
      [=](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const bool ga = wants(pa), gb = wants(pb);
        for (int64_t s = 0; s < batch; ++s) {
          auto G = cmat(self.grad, s * m * n, m, n);
          auto A = cmat(pa->value, s * ar * ac, ar, ac);
          auto B = cmat(pb->value, s * br * bc, br, bc);
          if (ga) {
            auto dA = mmat(pa->grad, s * ar * ac, ar, ac);
            if (!trans_a && !trans_b) dA.noalias() += G * B.transpose();
            else if (!trans_a && trans_b) dA.noalias() += G * B;
            else if (trans_a && !trans_b) dA.noalias() += B * G.transpose();
            else dA.noalias() += B.transpose() * G.transpose();
          }
          if (gb) {
            auto dB = mmat(pb->grad, s * br * bc, br, bc);
            if (!trans_b && !trans_a) dB.noalias() += A.transpose() * G;
            else if (!trans_b && trans_a) dB.noalias() += A * G;
            else if (trans_b && !trans_a) dB.noalias() += G.transpose() * A;
            else dB.noalias() += G.transpose() * A.transpose();
          }
        }
      });
}

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require(a.shape() == b.shape(), pair_str("add", a.shape(), b.shape()));
  Buffer<T> out(val(a));
  const auto& y = val(b);
  for (size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (int side = 0; side < 2; ++side) {
      auto& p = self.parents[static_cast<size_t>(side)];
      if (!wants(p)) continue;
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  require(a.shape() == b.shape(), pair_str("sub", a.shape(), b.shape()));
  Buffer<T> out(val(a));
  const auto& y = val(b);
  for (size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) {
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (wants(pb)) {
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  require(a.shape() == b.shape(), pair_str("mul", a.shape(), b.shape()));
  Buffer<T> out(val(a));
  const auto& y = val(b);
  for (size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) {
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
    }
    if (wants(pb)) {
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(a, [factor](T x) { return factor * x; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return unary(
      a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

// ---- reductions and shape --------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  require_defined(a, "sum");
  T total = T(0);
  for (T x : val(a)) total += x;
  return make_result<T>(Shape{}, {total}, {a}, [](Node<T>& self) {
    auto& p = self.parents[0];
    if (!wants(p)) return;
    for (auto& g : p->grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  require_defined(a, "mean");
  const auto n = static_cast<T>(a.numel());
  if (a.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), T(1) / n);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require_defined(a, "reshape");
  require(shape_numel(shape) == a.numel(), pair_str("reshape", a.shape(), shape));
  return make_result<T>(std::move(shape), val(a), {a}, [](Node<T>& self) {
    auto& p = self.parents[0];
    if (!wants(p)) return;
    for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& a, int64_t begin, int64_t length) {
  require_defined(a, "slice_last");
  require(a.rank() >= 1, "slice_last: scalar input");
  const int64_t width = a.dim(-1);
  require(begin >= 0 && length >= 0 && begin + length <= width,
          "slice_last: [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
              ") outside " + shape_str(a.shape()));
  const int64_t rows = a.numel() / std::max<int64_t>(width, 1);
  Shape shape = a.shape();
  shape.back() = length;
  Buffer<T> out(static_cast<size_t>(rows * length));
  const auto& x = val(a);
  for (int64_t r = 0; r < rows; ++r) {
    std::copy_n(x.begin() + r * width + begin, length, out.begin() + r * length);
  }
  return make_result<T>(std::move(shape), std::move(out), {a},
                        [rows, width, begin, length](Node<T>& self) {
                          auto& p = self.parents[0];
                          if (!wants(p)) return;
                          for (int64_t r = 0; r < rows; ++r) {
                            for (int64_t c = 0; c < length; ++c) {
                              p->grad[static_cast<size_t>(r * width + begin + c)] +=
                                  self.grad[static_cast<size_t>(r * length + c)];
                            }
                          }
                        });
}

// ---- convolution -----------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 int padding) {
  require_defined(input, "conv2d");
  require_defined(kernels, "conv2d");
  const bool batched = input.rank() == 4;
  require(input.rank() == 3 || batched, "conv2d: input must be [C,H,W] or [B,C,H,W], got " +
                                            shape_str(input.shape()));
  require(kernels.rank() == 4 && kernels.dim(2) == kernels.dim(3),
          "conv2d: kernels must be [O,C,k,k], got " + shape_str(kernels.shape()));
  const int64_t batch = batched ? input.dim(0) : 1;
  const int64_t channels = input.dim(-3), height = input.dim(-2), width = input.dim(-1);
  const int64_t out_ch = kernels.dim(0), k = kernels.dim(2);
  require(kernels.dim(1) == channels, pair_str("conv2d channels", input.shape(), kernels.shape()));
  if (bias.defined()) require(bias.numel() == out_ch, pair_str("conv2d bias", kernels.shape(), bias.shape()));
  if (padding < 0) throw ContractError("conv2d: negative padding");
  const int64_t oh = height + 2 * padding - k + 1, ow = width + 2 * padding - k + 1;
  require(oh > 0 && ow > 0, "conv2d: kernel larger than padded input " + shape_str(input.shape()));

  // Lowered as K [O,patch] x cols [patch, B*plane]. Each cols row is one
  // (c,ky,kx) tap, so gathering and scattering move contiguous spans.
  const int64_t patch = channels * k * k;
  const int64_t plane = oh * ow;
  const int64_t span = batch * plane;
  auto cols = std::make_shared<Buffer<T>>(static_cast<size_t>(patch * span));
  const auto& x = val(input);
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        T* row = cols->data() + ((c * k + ky) * k + kx) * span;
        // Output columns [lo, hi) read inside the image for this tap.
        const int64_t lo = std::clamp<int64_t>(padding - kx, 0, ow);
        const int64_t hi = std::clamp<int64_t>(width + padding - kx, lo, ow);
        for (int64_t b = 0; b < batch; ++b) {
          const T* src_plane = x.data() + (b * channels + c) * height * width;
          for (int64_t oy = 0; oy < oh; ++oy) {
            T* dst = row + b * plane + oy * ow;
            const int64_t iy = oy + ky - padding;
            if (iy < 0 || iy >= height) {
              std::fill(dst, dst + ow, T(0));
              continue;
            }
            const T* src = src_plane + iy * width + kx - padding;
            std::fill(dst, dst + lo, T(0));
            std::copy(src + lo, src + hi, dst + lo);
            std::fill(dst + hi, dst + ow, T(0));
          }
        }
      }
    }
  }

  RowMat<T> prod = cmat(val(kernels), 0, out_ch, patch) * cmat(*cols, 0, patch, span);
  Buffer<T> out(static_cast<size_t>(batch * out_ch * plane));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t o = 0; o < out_ch; ++o) {
      const T bo = bias.defined() ? val(bias)[static_cast<size_t>(o)] : T(0);
      const T* src = prod.data() + o * span + b * plane;
      T* dst = out.data() + (b * out_ch + o) * plane;
      for (int64_t p = 0; p < plane; ++p) dst[p] = src[p] + bo;
    }
  }

  Shape shape = batched ? Shape{batch, out_ch, oh, ow} : Shape{out_ch, oh, ow};
  return make_result<T>(
      std::move(shape), std::move(out), {input, kernels, bias},
      [=](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pk = self.parents[1];
        auto& pb = self.parents[2];
        RowMat<T> g(out_ch, span);
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t o = 0; o < out_ch; ++o) {
            const T* src = self.grad.data() + (b * out_ch + o) * plane;
            std::copy(src, src + plane, g.data() + o * span + b * plane);
          }
        }
        if (wants(pk)) mmat(pk->grad, 0, out_ch, patch).noalias() += g * cmat(*cols, 0, patch, span).transpose();
        if (wants(pb)) mmat(pb->grad, 0, out_ch, 1) += g.rowwise().sum();
        if (!wants(px)) return;
        RowMat<T> dcols = cmat(pk->value, 0, out_ch, patch).transpose() * g;
        for (int64_t c = 0; c < channels; ++c) {
          for (int64_t ky = 0; ky < k; ++ky) {
            for (int64_t kx = 0; kx < k; ++kx) {
              const T* row = dcols.data() + ((c * k + ky) * k + kx) * span;
              const int64_t lo = std::clamp<int64_t>(padding - kx, 0, ow);
              const int64_t hi = std::clamp<int64_t>(width + padding - kx, lo, ow);
              for (int64_t b = 0; b < batch; ++b) {
                T* dplane = px->grad.data() + (b * channels + c) * height * width;
                for (int64_t oy = 0; oy < oh; ++oy) {
                  const int64_t iy = oy + ky - padding;
                  if (iy < 0 || iy >= height) continue;
                  const T* src = row + b * plane + oy * ow;
                  T* dst = dplane + iy * width + kx - padding;
                  for (int64_t ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input) {
  require_defined(input, "maxpool2");
  require(input.rank() >= 2, "maxpool2: input rank < 2: " + shape_str(input.shape()));
  const int64_t height = input.dim(-2), width = input.dim(-1);
  require(height >= 2 && width >= 2, "maxpool2: spatial extent < 2: " + shape_str(input.shape()));
  const int64_t planes = input.numel() / (height * width);
  const int64_t oh = height / 2, ow = width / 2;
  Shape shape = input.shape();
  shape[shape.size() - 2] = oh;
  shape.back() = ow;
  Buffer<T> out(static_cast<size_t>(planes * oh * ow));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  const auto& x = val(input);
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * height * width;
    for (int64_t oy = 0; oy < oh; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox) {
        int64_t best = (2 * oy) * width + 2 * ox;
        for (int64_t dy = 0; dy < 2; ++dy) {
          for (int64_t dx = 0; dx < 2; ++dx) {
            const int64_t idx = (2 * oy + dy) * width + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const auto o = static_cast<size_t>((p * oh + oy) * ow + ox);
        out[o] = src[best];
        (*argmax)[o] = p * height * width + best;
      }
    }
  }
  return make_result<T>(std::move(shape), std::move(out), {input}, [argmax](Node<T>& self) {
    auto& p = self.parents[0];
    if (!wants(p)) return;
    for (size_t o = 0; o < self.grad.size(); ++o) {
      p->grad[static_cast<size_t>((*argmax)[o])] += self.grad[o];
    }
  });
}

// ---- Gaussian attention ----------------------------------------------------

template <typename T>
Tensor<T> decode_attention(const Tensor<T>& raw, int image_w, int image_h, int grid_n) {
  require_defined(raw, "decode_attention");
  require(raw.rank() == 2 && raw.dim(1) == 4,
          "decode_attention: raw parameters must be [B,4], got " + shape_str(raw.shape()));
  if (grid_n < 2 || image_w < 1 || image_h < 1) {
    throw ConfigError("decode_attention: need grid_n >= 2 and a non-empty image");
  }
  const T sx = T(image_w + 1) / T(2);
  const T sy = T(image_h + 1) / T(2);
  const T sd = T(std::max(image_w, image_h) - 1) / T(grid_n - 1);
  const int64_t batch = raw.dim(0);
  const auto& r = val(raw);
  Buffer<T> out(r.size());
  for (int64_t b = 0; b < batch; ++b) {
    const T* in = r.data() + 4 * b;
    T* o = out.data() + 4 * b;
    o[0] = sx * (in[0] + T(1));
    o[1] = sy * (in[1] + T(1));
    o[2] = sd * std::exp(in[2]);
    o[3] = std::exp(in[3]);
  }
  return make_result<T>(raw.shape(), std::move(out), {raw}, [=](Node<T>& self) {
    auto& p = self.parents[0];
    if (!wants(p)) return;
    for (int64_t b = 0; b < batch; ++b) {
      const T* g = self.grad.data() + 4 * b;
      const T* y = self.value.data() + 4 * b;
      T* d = p->grad.data() + 4 * b;
      d[0] += g[0] * sx;
      d[1] += g[1] * sy;
      d[2] += g[2] * y[2];
      d[3] += g[3] * y[3];
    }
  });
}

template <typename T>
Tensor<T> gaussian_filterbank(const Tensor<T>& params, int axis, int grid_n, int extent,
                              int* degenerate_rows) {
  require_defined(params, "gaussian_filterbank");
  require(params.rank() == 2 && params.dim(1) == 4,
          "gaussian_filterbank: params must be [B,4], got " + shape_str(params.shape()));
  if (axis != 0 && axis != 1) throw ContractError("gaussian_filterbank: axis must be 0 or 1");
  if (grid_n < 1 || extent < 1) throw ConfigError("gaussian_filterbank: empty grid or extent");
  constexpr double kZFloor = 1e-8;
  const int64_t batch = params.dim(0);
  const int64_t n = grid_n, e = extent;
  const auto& pv = val(params);
  Buffer<T> out(static_cast<size_t>(batch * n * e));
  auto norms = std::make_shared<Buffer<T>>(static_cast<size_t>(batch * n));
  auto floored = std::make_shared<std::vector<char>>(static_cast<size_t>(batch * n), 0);
  int degenerate = 0;
  const T half = T(grid_n) / T(2);
  for (int64_t b = 0; b < batch; ++b) {
    const T center = pv[static_cast<size_t>(4 * b + axis)];
    const T delta = pv[static_cast<size_t>(4 * b + 2)];
    const T var = pv[static_cast<size_t>(4 * b + 3)];
    for (int64_t i = 0; i < n; ++i) {
      const T mu = center + (T(i + 1) - half - T(0.5)) * delta;
      T* row = out.data() + (b * n + i) * e;
      T z = T(0);
      for (int64_t w = 0; w < e; ++w) {
        const T d = T(w + 1) - mu;
        row[w] = std::exp(-d * d / (T(2) * var));
        z += row[w];
      }
      const auto ri = static_cast<size_t>(b * n + i);
      if (!(z >= T(kZFloor))) {
        z = T(kZFloor);
        (*floored)[ri] = 1;
        ++degenerate;
      }
      (*norms)[ri] = z;
      for (int64_t w = 0; w < e; ++w) row[w] /= z;
    }
  }
  if (degenerate_rows) *degenerate_rows = degenerate;

  return make_result<T>(
      {batch, n, e}, std::move(out), {params},
      [=](Node<T>& self) {
        auto& p = self.parents[0];
        if (!wants(p)) return;
        for (int64_t b = 0; b < batch; ++b) {
          const T center = p->value[static_cast<size_t>(4 * b + axis)];
          const T delta = p->value[static_cast<size_t>(4 * b + 2)];
          const T var = p->value[static_cast<size_t>(4 * b + 3)];
          T d_center = 0, d_delta = 0, d_var = 0;
          for (int64_t i = 0; i < n; ++i) {
            const auto ri = static_cast<size_t>(b * n + i);
            const T offset = T(i + 1) - half - T(0.5);
            const T mu = center + offset * delta;
            const T* f = self.value.data() + ri * e;
            const T* g = self.grad.data() + ri * e;
            const T z = (*norms)[ri];
            T gf = 0;
            if (!(*floored)[ri]) {
              for (int64_t w = 0; w < e; ++w) gf += g[w] * f[w];
            }
            T d_mu = 0;
            for (int64_t w = 0; w < e; ++w) {
              // f = e / z, so the unnormalized Gaussian is f * z.
              const T de = (g[w] - gf) / z;
              const T gauss = f[w] * z;
              const T dist = T(w + 1) - mu;
              d_mu += de * gauss * dist / var;
              d_var += de * gauss * dist * dist / (T(2) * var * var);
            }
            d_center += d_mu;
            d_delta += d_mu * offset;
          }
          p->grad[static_cast<size_t>(4 * b + axis)] += d_center;
          p->grad[static_cast<size_t>(4 * b + 2)] += d_delta;
          p->grad[static_cast<size_t>(4 * b + 3)] += d_var;
        }
      });
}

// ---- capsules --------------------------------------------------------------

template <typename T>
Tensor<T> capsule_predict(const Tensor<T>& primary, const Tensor<T>& weights) {
  require_defined(primary, "capsule_predict");
  require_defined(weights, "capsule_predict");
  require(primary.rank() == 3 && weights.rank() == 4 && primary.dim(1) == weights.dim(0) &&
              primary.dim(2) == weights.dim(3),
          pair_str("capsule_predict", primary.shape(), weights.shape()));
  const int64_t batch = primary.dim(0), in_caps = primary.dim(1), in_dim = primary.dim(2);
  const int64_t out_caps = weights.dim(1), out_dim = weights.dim(2);
  const int64_t jd = out_caps * out_dim;
  using Strided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
  using MStrided = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
  Buffer<T> out(static_cast<size_t>(batch * in_caps * jd));
  for (int64_t i = 0; i < in_caps; ++i) {
    Strided p(val(primary).data() + i * in_dim, batch, in_dim, Eigen::OuterStride<>(in_caps * in_dim));
    auto w = cmat(val(weights), i * jd * in_dim, jd, in_dim);
    MStrided o(out.data() + i * jd, batch, jd, Eigen::OuterStride<>(in_caps * jd));
    o.noalias() = p * w.transpose();
  }
  return make_result<T>(
      {batch, in_caps, out_caps, out_dim}, std::move(out), {primary, weights},
      [=](Node<T>& self) {
        auto& pp = self.parents[0];
        auto& pw = self.parents[1];
        const bool gp = wants(pp), gw = wants(pw);
        for (int64_t i = 0; i < in_caps; ++i) {
          Strided g(self.grad.data() + i * jd, batch, jd, Eigen::OuterStride<>(in_caps * jd));
          if (gp) {
            MStrided dp(pp->grad.data() + i * in_dim, batch, in_dim,
                        Eigen::OuterStride<>(in_caps * in_dim));
            dp.noalias() += g * cmat(pw->value, i * jd * in_dim, jd, in_dim);
          }
          if (gw) {
            Strided p(pp->value.data() + i * in_dim, batch, in_dim,
                      Eigen::OuterStride<>(in_caps * in_dim));
            mmat(pw->grad, i * jd * in_dim, jd, in_dim).noalias() += g.transpose() * p;
          }
        }
      });
}

template <typename T>
Tensor<T> capsule_mix(const Tensor<T>& couplings, const Tensor<T>& predictions) {
  require_defined(couplings, "capsule_mix");
  require_defined(predictions, "capsule_mix");
  require(couplings.rank() == 3 && predictions.rank() == 4 &&
              couplings.dim(0) == predictions.dim(0) && couplings.dim(1) == predictions.dim(1) &&
              couplings.dim(2) == predictions.dim(2),
          pair_str("capsule_mix", couplings.shape(), predictions.shape()));
  const int64_t batch = predictions.dim(0), in_caps = predictions.dim(1);
  const int64_t out_caps = predictions.dim(2), dim = predictions.dim(3);
  const auto& c = val(couplings);
  const auto& u = val(predictions);
  Buffer<T> out(static_cast<size_t>(batch * out_caps * dim), T(0));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t i = 0; i < in_caps; ++i) {
      for (int64_t j = 0; j < out_caps; ++j) {
        const T cij = c[static_cast<size_t>((b * in_caps + i) * out_caps + j)];
        const T* src = u.data() + ((b * in_caps + i) * out_caps + j) * dim;
        T* dst = out.data() + (b * out_caps + j) * dim;
        for (int64_t k = 0; k < dim; ++k) dst[k] += cij * src[k];
      }
    }
  }
  return make_result<T>(
      {batch, out_caps, dim}, std::move(out), {couplings, predictions},
      [=](Node<T>& self) {
        auto& pc = self.parents[0];
        auto& pu = self.parents[1];
        const bool gc = wants(pc), gu = wants(pu);
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t i = 0; i < in_caps; ++i) {
            for (int64_t j = 0; j < out_caps; ++j) {
              const auto ci = static_cast<size_t>((b * in_caps + i) * out_caps + j);
              const T* g = self.grad.data() + (b * out_caps + j) * dim;
              const size_t ui = ci * static_cast<size_t>(dim);
              if (gc) {
                T dot = 0;
                for (int64_t k = 0; k < dim; ++k) dot += g[k] * pu->value[ui + k];
                pc->grad[ci] += dot;
              }
              if (gu) {
                const T cij = pc->value[ci];
                for (int64_t k = 0; k < dim; ++k) pu->grad[ui + k] += cij * g[k];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> squash(const Tensor<T>& v) {
  require_defined(v, "squash");
  require(v.rank() >= 1, "squash: scalar input");
  const int64_t dim = v.dim(-1);
  const int64_t rows = dim ? v.numel() / dim : 0;
  const auto& x = val(v);
  Buffer<T> out(x.size());
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * dim;
    T n2 = 0;
    for (int64_t k = 0; k < dim; ++k) n2 += src[k] * src[k];
    const T n = std::sqrt(n2);
    const T factor = n > T(0) ? n / (T(1) + n2) : T(0);
    for (int64_t k = 0; k < dim; ++k) out[static_cast<size_t>(r * dim + k)] = factor * src[k];
  }
  return make_result<T>(v.shape(), std::move(out), {v}, [rows, dim](Node<T>& self) {
    auto& p = self.parents[0];
    if (!wants(p)) return;
    for (int64_t r = 0; r < rows; ++r) {
      const T* src = p->value.data() + r * dim;
      const T* g = self.grad.data() + r * dim;
      T n2 = 0, vg = 0;
      for (int64_t k = 0; k < dim; ++k) {
        n2 += src[k] * src[k];
        vg += src[k] * g[k];
      }
      const T n = std::sqrt(n2);
      if (!(n > T(0))) continue;
      const T denom = T(1) + n2;
      const T f = n / denom;
      // f'(n) / n with f(n) = n / (1 + n^2)
      const T fprime_over_n = (T(1) - n2) / (denom * denom * n);
      for (int64_t k = 0; k < dim; ++k) {
        p->grad[static_cast<size_t>(r * dim + k)] += f * g[k] + fprime_over_n * vg * src[k];
      }
    }
  });
}

template <typename T>
Tensor<T> agreement(const Tensor<T>& predictions, const Tensor<T>& objects) {
  require_defined(predictions, "agreement");
  require_defined(objects, "agreement");
  require(predictions.rank() == 4 && objects.rank() == 3 &&
              predictions.dim(0) == objects.dim(0) && predictions.dim(2) == objects.dim(1) &&
              predictions.dim(3) == objects.dim(2),
          pair_str("agreement", predictions.shape(), objects.shape()));
  const int64_t batch = predictions.dim(0), in_caps = predictions.dim(1);
  const int64_t out_caps = predictions.dim(2), dim = predictions.dim(3);
  const auto& u = val(predictions);
  const auto& d = val(objects);
  Buffer<T> out(static_cast<size_t>(batch * in_caps * out_caps));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t i = 0; i < in_caps; ++i) {
      for (int64_t j = 0; j < out_caps; ++j) {
        const T* ui = u.data() + ((b * in_caps + i) * out_caps + j) * dim;
        const T* dj = d.data() + (b * out_caps + j) * dim;
        T dot = 0;
        for (int64_t k = 0; k < dim; ++k) dot += ui[k] * dj[k];
        out[static_cast<size_t>((b * in_caps + i) * out_caps + j)] = dot;
      }
    }
  }
  return make_result<T>(
      {batch, in_caps, out_caps}, std::move(out), {predictions, objects},
      [=](Node<T>& self) {
        auto& pu = self.parents[0];
        auto& pd = self.parents[1];
        const bool gu = wants(pu), gd = wants(pd);
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t i = 0; i < in_caps; ++i) {
            for (int64_t j = 0; j < out_caps; ++j) {
              const auto oi = static_cast<size_t>((b * in_caps + i) * out_caps + j);
              const T g = self.grad[oi];
              const size_t ui = oi * static_cast<size_t>(dim);
              const auto di = static_cast<size_t>((b * out_caps + j) * dim);
              for (int64_t k = 0; k < dim; ++k) {
                if (gu) pu->grad[ui + k] += g * pd->value[di + k];
                if (gd) pd->grad[di + k] += g * pu->value[ui + k];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> maxmin_normalize(const Tensor<T>& logits, T lb, T ub) {
  require_defined(logits, "maxmin_normalize");
  require(logits.rank() >= 1, "maxmin_normalize: scalar input");
  const int64_t width = logits.dim(-1);
  const int64_t rows = width ? logits.numel() / width : 0;
  const auto& x = val(logits);
  Buffer<T> out(x.size());
  const T mid = (lb + ub) / T(2);
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * width;
    T* dst = out.data() + r * width;
    const auto [lo, hi] = std::minmax_element(src, src + width);
    const T range = *hi - *lo;
    for (int64_t k = 0; k < width; ++k) {
      dst[k] = range > T(0) ? lb + (ub - lb) * (src[k] - *lo) / range : mid;
    }
  }
  return make_result<T>(logits.shape(), std::move(out), {logits},
                        [rows, width, lb, ub](Node<T>& self) {
                          auto& p = self.parents[0];
                          if (!wants(p)) return;
                          for (int64_t r = 0; r < rows; ++r) {
                            const T* src = p->value.data() + r * width;
                            const T* g = self.grad.data() + r * width;
                            T* d = p->grad.data() + r * width;
                            const auto lo = std::min_element(src, src + width);
                            const auto hi = std::max_element(src, src + width);
                            const T range = *hi - *lo;
                            if (!(range > T(0))) continue;
                            const T s = (ub - lb) / range;
                            T g_sum = 0, g_pos = 0;
                            for (int64_t k = 0; k < width; ++k) {
                              d[k] += s * g[k];
                              g_sum += g[k];
                              g_pos += g[k] * (src[k] - *lo) / range;
                            }
                            d[lo - src] += s * (g_pos - g_sum);
                            d[hi - src] -= s * g_pos;
                          }
                        });
}

template <typename T>
Tensor<T> vector_length(const Tensor<T>& v) {
  require_defined(v, "vector_length");
  require(v.rank() >= 1, "vector_length: scalar input");
  const int64_t dim = v.dim(-1);
  const int64_t rows = dim ? v.numel() / dim : 0;
  Shape shape(v.shape().begin(), v.shape().end() - 1);
  const auto& x = val(v);
  Buffer<T> out(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    T n2 = 0;
    for (int64_t k = 0; k < dim; ++k) n2 += x[static_cast<size_t>(r * dim + k)] * x[static_cast<size_t>(r * dim + k)];
    out[static_cast<size_t>(r)] = std::sqrt(n2);
  }
  return make_result<T>(std::move(shape), std::move(out), {v}, [rows, dim](Node<T>& self) {
    auto& p = self.parents[0];
    if (!wants(p)) return;
    for (int64_t r = 0; r < rows; ++r) {
      const T n = self.value[static_cast<size_t>(r)];
      if (!(n > T(0))) continue;
      const T g = self.grad[static_cast<size_t>(r)] / n;
      for (int64_t k = 0; k < dim; ++k) {
        const auto idx = static_cast<size_t>(r * dim + k);
        p->grad[idx] += g * p->value[idx];
      }
    }
  });
}

// ---- losses ----------------------------------------------------------------

template <typename T>
Tensor<T> margin_loss(const Tensor<T>& scores, const Tensor<T>& targets, T margin,
                      T lambda_absent) {
  require_defined(scores, "margin_loss");
  require_defined(targets, "margin_loss");
  require(scores.shape() == targets.shape() && scores.rank() == 2,
          pair_str("margin_loss", scores.shape(), targets.shape()));
  const int64_t batch = scores.dim(0);
  const auto& s = val(scores);
  const auto& t = val(targets);
  T total = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    const T present = std::max(T(0), std::min(t[i], T(1)));
    const T absent = std::max(T(0), T(1) - t[i]);
    const T under = std::max(T(0), (t[i] - margin) - s[i]);
    const T over = std::max(T(0), s[i] - margin);
    total += present * under * under + lambda_absent * absent * over * over;
  }
  total /= T(batch);
  return make_result<T>(Shape{}, {total}, {scores, targets},
                        [batch, margin, lambda_absent](Node<T>& self) {
                          auto& ps = self.parents[0];
                          if (!wants(ps)) return;
                          const auto& tv = self.parents[1]->value;
                          const T g = self.grad[0] / T(batch);
                          for (size_t i = 0; i < ps->value.size(); ++i) {
                            const T si = ps->value[i];
                            const T present = std::max(T(0), std::min(tv[i], T(1)));
                            const T absent = std::max(T(0), T(1) - tv[i]);
                            const T under = std::max(T(0), (tv[i] - margin) - si);
                            const T over = std::max(T(0), si - margin);
                            ps->grad[i] += g * (T(-2) * present * under +
                                                T(2) * lambda_absent * absent * over);
                          }
                        });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "mse");
  require_defined(b, "mse");
  require(a.shape() == b.shape(), pair_str("mse", a.shape(), b.shape()));
  if (a.numel() == 0) throw ContractError("mse of empty tensors");
  const auto& x = val(a);
  const auto& y = val(b);
  T total = 0;
  for (size_t i = 0; i < x.size(); ++i) total += (x[i] - y[i]) * (x[i] - y[i]);
  const T n = static_cast<T>(x.size());
  return make_result<T>(Shape{}, {total / n}, {a, b}, [n](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const T g = T(2) * self.grad[0] / n;
    const bool ga = wants(pa), gb = wants(pb);
    for (size_t i = 0; i < pa->value.size(); ++i) {
      const T diff = pa->value[i] - pb->value[i];
      if (ga) pa->grad[i] += g * diff;
      if (gb) pb->grad[i] -= g * diff;
    }
  });
}

template <typename T>
void assert_finite(const Tensor<T>& t, std::string_view what) {
  for (T x : t.data()) {
    if (!std::isfinite(x)) throw NumericError("non-finite value in " + std::string(what));
  }
}

#define OCRA_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool, bool);                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                              \
  template Tensor<T> tanh(const Tensor<T>&);                                                 \
  template Tensor<T> exp(const Tensor<T>&);                                                  \
  template Tensor<T> square(const Tensor<T>&);                                               \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                          \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> slice_last(const Tensor<T>&, int64_t, int64_t);                         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);      \
  template Tensor<T> maxpool2(const Tensor<T>&);                                             \
  template Tensor<T> decode_attention(const Tensor<T>&, int, int, int);                      \
  template Tensor<T> gaussian_filterbank(const Tensor<T>&, int, int, int, int*);             \
  template Tensor<T> capsule_predict(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> capsule_mix(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> squash(const Tensor<T>&);                                               \
  template Tensor<T> agreement(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> maxmin_normalize(const Tensor<T>&, T, T);                               \
  template Tensor<T> vector_length(const Tensor<T>&);                                        \
  template Tensor<T> margin_loss(const Tensor<T>&, const Tensor<T>&, T, T);                  \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                \
  template void assert_finite(const Tensor<T>&, std::string_view);

OCRA_INSTANTIATE_OPS(float)
OCRA_INSTANTIATE_OPS(double)

}  // namespace ocra
