#include "ocra/mnist.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "ocra/error.hpp"

#ifndef OCRA_DEFAULT_DATA_ROOT
#define OCRA_DEFAULT_DATA_ROOT "data/mnist"
#endif

namespace ocra {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

uint32_t be32(const std::vector<uint8_t>& bytes, size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(path + ": truncated header at byte offset " + std::to_string(offset));
  }
  return (uint32_t(bytes[offset]) << 24) | (uint32_t(bytes[offset + 1]) << 16) |
         (uint32_t(bytes[offset + 2]) << 8) | uint32_t(bytes[offset + 3]);
}

void put_be32(std::ofstream& out, uint32_t v) {
  const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(b, 4);
}

}  // namespace

std::string split_name(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw ConfigError("split must be train or test, got '" + name + "'");
}

MnistSet load_mnist(const std::string& images_path, const std::string& labels_path, Split split) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (const auto m = be32(img, 0, images_path); m != kIdxImagesMagic) {
    throw FormatError(images_path + ": bad magic " + std::to_string(m) + " at byte offset 0");
  }
  if (const auto m = be32(lab, 0, labels_path); m != kIdxLabelsMagic) {
    throw FormatError(labels_path + ": bad magic " + std::to_string(m) + " at byte offset 0");
  }
  MnistSet set;
  set.split = split;
  set.count = be32(img, 4, images_path);
  set.rows = static_cast<int>(be32(img, 8, images_path));
  set.cols = static_cast<int>(be32(img, 12, images_path));
  const auto label_count = be32(lab, 4, labels_path);
  if (label_count != set.count) {
    throw FormatError(labels_path + ": " + std::to_string(label_count) + " labels for " +
                      std::to_string(set.count) + " images (byte offset 4)");
  }
  const size_t pixels = static_cast<size_t>(set.count) * set.rows * set.cols;
  if (img.size() != 16 + pixels) {
    throw FormatError(images_path + ": expected " + std::to_string(16 + pixels) +
                      " bytes, file has " + std::to_string(img.size()) + " (truncated at byte offset " +
                      std::to_string(std::min(img.size(), 16 + pixels)) + ")");
  }
  if (lab.size() != 8 + static_cast<size_t>(set.count)) {
    throw FormatError(labels_path + ": expected " + std::to_string(8 + set.count) +
                      " bytes, file has " + std::to_string(lab.size()));
  }
  set.images.assign(img.begin() + 16, img.end());
  set.labels.assign(lab.begin() + 8, lab.end());
  for (size_t i = 0; i < set.labels.size(); ++i) {
    if (set.labels[i] > 9) {
      throw FormatError(labels_path + ": label " + std::to_string(set.labels[i]) +
                        " out of range at byte offset " + std::to_string(8 + i));
    }
  }
  return set;
}

MnistSet load_mnist_dir(const std::string& root, Split split) {
  const std::string prefix = split == Split::kTrain ? "train" : "t10k";
  namespace fs = std::filesystem;
  auto pick = [&](const std::string& kind) {
    for (const char* sep : {"-", "."}) {
      fs::path p = fs::path(root) / (prefix + "-" + kind + sep + "ubyte");
      if (fs::exists(p)) return p.string();
    }
    throw IoError("no " + prefix + "-" + kind + "-ubyte under " + root +
                  " (set OCRA_DATA_ROOT or run tools/fetch_mnist.sh)");
  };
  return load_mnist(pick("images-idx3"), pick("labels-idx1"), split);
}

void write_idx_images(const MnistSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<uint32_t>(set.count));
  put_be32(out, static_cast<uint32_t>(set.rows));
  put_be32(out, static_cast<uint32_t>(set.cols));
  out.write(reinterpret_cast<const char*>(set.images.data()),
            static_cast<std::streamsize>(set.images.size()));
  if (!out) throw IoError("error writing " + path);
}

void write_idx_labels(const MnistSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<uint32_t>(set.count));
  out.write(reinterpret_cast<const char*>(set.labels.data()),
            static_cast<std::streamsize>(set.labels.size()));
  if (!out) throw IoError("error writing " + path);
}

std::string default_data_root() {
  if (const char* env = std::getenv("OCRA_DATA_ROOT"); env && *env) return env;
  return OCRA_DEFAULT_DATA_ROOT;
}

}  // namespace ocra
