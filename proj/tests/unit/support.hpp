#pragma once

#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "ocra/config.hpp"
#include "ocra/gradcheck.hpp"
#include "ocra/mnist.hpp"
#include "ocra/rng.hpp"
#include "ocra/tensor.hpp"

namespace ocra::test {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  Rng rng(seed);
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

inline Tensor<double> param(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return random_tensor<double>(std::move(shape), seed, lo, hi, true);
}

// Runs the finite-difference check and reports the worst element on failure.
inline void expect_gradients(const std::function<Tensor<double>()>& loss,
                             std::vector<Tensor<double>> inputs, double tolerance = 1e-6,
                             int64_t max_elements = 0) {
  GradCheckOptions options;
  options.tolerance = tolerance;
  options.max_elements_per_input = max_elements;
  auto result = check_gradients(loss, inputs, options);
  EXPECT_TRUE(result.passed) << "max rel err " << result.max_rel_error << " at " << result.worst;
  EXPECT_GT(result.checked, 0);
}

// Smallest full model: one glimpse, 4 primary capsules, 2 classes, hidden 16.
inline RunConfig tiny_config() {
  RunConfig c;
  c.timesteps = 1;
  c.image_width = 10;
  c.image_height = 10;
  c.read_glimpse_size = 6;
  c.write_glimpse_size = 5;
  c.conv1_filters = 2;
  c.conv2_filters = 3;
  c.lstm_size = 16;
  c.primary_capsules = 4;
  c.primary_capsule_dim = 3;
  c.object_capsule_dim = 4;
  c.num_classes = 2;
  c.objects_per_image = 1;
  c.recon_loss_weight = 2.0;
  c.clip_canvas = false;
  c.seed = 7;
  return c;
}

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

// Fake digits: a solid block of random ink per image, labels cycling 0..9.
inline MnistSet synthetic_mnist(int64_t count, uint64_t seed) {
  MnistSet s;
  s.count = count;
  s.rows = s.cols = 28;
  s.images.assign(size_t(count) * 784, 0);
  s.labels.resize(size_t(count));
  Rng rng(seed);
  for (int64_t i = 0; i < count; ++i) {
    s.labels[size_t(i)] = uint8_t(i % 10);
    const int x0 = int(rng.uniform_int(4, 10)), y0 = int(rng.uniform_int(2, 8));
    const int w = int(rng.uniform_int(8, 14)), h = int(rng.uniform_int(12, 18));
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x)
        s.images[size_t(i * 784 + y * 28 + x)] = uint8_t(rng.uniform_int(1, 255));
  }
  return s;
}

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() /
            ("ocra_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
  static inline int counter_ = 0;
};

}  // namespace ocra::test
