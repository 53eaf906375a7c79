#include "ocra/glimpse.hpp"

#include "ocra/error.hpp"
#include "ocra/ops.hpp"

namespace ocra {

template <typename T>
Tensor<T> decode_attention_params(const Tensor<T>& h_dec, const Linear<T>& map, ImageSize image,
                                  int grid_n) {
  if (map.out_features() != 4) {
    throw DimensionError("attention map must produce 4 values, produces " +
                         std::to_string(map.out_features()));
  }
  return decode_attention(map(h_dec), image.width, image.height, grid_n);
}

template <typename T>
Filterbanks<T> build_filterbanks(const Tensor<T>& params, int grid_n, ImageSize image) {
  Filterbanks<T> fb;
  fb.params = params;
  fb.grid_n = grid_n;
  int dx = 0, dy = 0;
  fb.fx = gaussian_filterbank(params, 0, grid_n, image.width, &dx);
  fb.fy = gaussian_filterbank(params, 1, grid_n, image.height, &dy);
  fb.degenerate_rows = dx + dy;
  return fb;
}

template <typename T>
Tensor<T> read_glimpse(const Tensor<T>& image, const Filterbanks<T>& fb) {
  if (image.rank() != 3 || image.dim(1) != fb.fy.dim(2) || image.dim(2) != fb.fx.dim(2)) {
    throw DimensionError("read_glimpse: image " + shape_str(image.shape()) +
                         " does not match filterbanks " + shape_str(fb.fy.shape()) + " / " +
                         shape_str(fb.fx.shape()));
  }
  return bmm(bmm(fb.fy, image), fb.fx, false, true);
}

template <typename T>
Tensor<T> project_patch(const Tensor<T>& patch, const Filterbanks<T>& fb) {
  return bmm(bmm(fb.fy, patch, true, false), fb.fx);
}

template <typename T>
WriteResult<T> write_patch(const Tensor<T>& h_dec, const Linear<T>& patch_map,
                           const Linear<T>& attention_map, ImageSize image, int patch_size) {
  if (patch_map.out_features() != static_cast<int64_t>(patch_size) * patch_size) {
    throw DimensionError("write map produces " + std::to_string(patch_map.out_features()) +
                         " values for a " + std::to_string(patch_size) + "x" +
                         std::to_string(patch_size) + " patch");
  }
  WriteResult<T> out;
  out.patch = reshape(patch_map(h_dec), {h_dec.dim(0), patch_size, patch_size});
  out.filterbanks = build_filterbanks(
      decode_attention_params(h_dec, attention_map, image, patch_size), patch_size, image);
  out.canvas_delta = project_patch(out.patch, out.filterbanks);
  return out;
}

template <typename T>
Tensor<T> glimpse_footprint(const Filterbanks<T>& fb) {
  const int64_t batch = fb.fx.dim(0), n = fb.grid_n;
  auto ones = Tensor<T>::full({batch, n, n}, T(1));
  return clamp(project_patch(ones, fb), T(0), T(1));
}

template <typename T>
std::vector<AttentionParams> attention_values(const Tensor<T>& decoded) {
  std::vector<AttentionParams> out(static_cast<size_t>(decoded.dim(0)));
  const auto v = decoded.data();
  for (size_t b = 0; b < out.size(); ++b) {
    out[b] = {static_cast<double>(v[4 * b]), static_cast<double>(v[4 * b + 1]),
              static_cast<double>(v[4 * b + 2]), static_cast<double>(v[4 * b + 3])};
  }
  return out;
}

Rect attention_rect(const AttentionParams& p, int grid_n) {
  const double half = (grid_n - 1) * p.delta / 2.0;
  return {p.g_x - half, p.g_y - half, p.g_x + half, p.g_y + half};
}

#define OCRA_INSTANTIATE_GLIMPSE(T)                                                            \
  template Tensor<T> decode_attention_params(const Tensor<T>&, const Linear<T>&, ImageSize,   \
                                             int);                                             \
  template Filterbanks<T> build_filterbanks(const Tensor<T>&, int, ImageSize);                 \
  template Tensor<T> read_glimpse(const Tensor<T>&, const Filterbanks<T>&);                    \
  template Tensor<T> project_patch(const Tensor<T>&, const Filterbanks<T>&);                   \
  template WriteResult<T> write_patch(const Tensor<T>&, const Linear<T>&, const Linear<T>&,    \
                                      ImageSize, int);                                         \
  template Tensor<T> glimpse_footprint(const Filterbanks<T>&);                                 \
  template std::vector<AttentionParams> attention_values(const Tensor<T>&);

OCRA_INSTANTIATE_GLIMPSE(float)
OCRA_INSTANTIATE_GLIMPSE(double)

}  // namespace ocra
