#pragma once

// IDX container ingestion (MNIST layout: u8 images, u8 labels, big-endian dims).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ocra {

enum class Split { kTrain, kTest };

std::string split_name(Split split);
Split parse_split(const std::string& name);

struct MnistSet {
  int64_t count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> images;  // count * rows * cols
  std::vector<uint8_t> labels;  // count, each 0..9
  Split split = Split::kTrain;

  std::span<const uint8_t> image(int64_t index) const {
    return {images.data() + index * rows * cols, static_cast<size_t>(rows * cols)};
  }
};

inline constexpr uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr uint32_t kIdxLabelsMagic = 0x00000801;

MnistSet load_mnist(const std::string& images_path, const std::string& labels_path, Split split);

// Looks for {train,t10k}-{images-idx3,labels-idx1}-ubyte under root.
MnistSet load_mnist_dir(const std::string& root, Split split);

void write_idx_images(const MnistSet& set, const std::string& path);
void write_idx_labels(const MnistSet& set, const std::string& path);

// Directory from OCRA_DATA_ROOT, else the build-time default.
std::string default_data_root();

}  // namespace ocra
