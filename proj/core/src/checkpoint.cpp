#include "ocra/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "ocra/config.hpp"
#include "ocra/error.hpp"

namespace ocra {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[4] = {'O', 'C', 'K', 'P'};

template <typename V>
void put(std::ofstream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::ifstream& in, const std::string& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError(path + ": truncated checkpoint at byte " + std::to_string(in.tellg()));
  }
  return v;
}

CheckpointInfo read_header(std::ifstream& in, const std::string& path) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path + ": not a checkpoint (bad magic)");
  }
  CheckpointInfo info;
  info.version = get<uint32_t>(in, path);
  if (info.version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(info.version));
  }
  info.config_hash = get<uint64_t>(in, path);
  info.tensors = get<uint32_t>(in, path);
  return info;
}

}  // namespace

template <typename T>
void save_checkpoint(const ParameterSet<T>& params, uint64_t config_hash, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(kMagic, 4);
    put(out, kCheckpointVersion);
    put(out, config_hash);
    put(out, static_cast<uint32_t>(params.entries().size()));
    for (const auto& e : params.entries()) {
      put(out, static_cast<uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      put(out, static_cast<uint32_t>(e.tensor.rank()));
      for (int64_t d : e.tensor.shape()) put(out, static_cast<uint64_t>(d));
      std::vector<float> values(e.tensor.data().begin(), e.tensor.data().end());
      out.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(float)));
    }
    if (!out) throw IoError("error writing checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("cannot move checkpoint into place at " + path);
  }
}

template <typename T>
void load_checkpoint(ParameterSet<T>& params, uint64_t config_hash, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  const auto info = read_header(in, path);
  if (info.config_hash != config_hash) {
    throw FormatError(path + ": config hash mismatch (checkpoint " + hex64(info.config_hash) +
                      ", config " + hex64(config_hash) + ")");
  }
  if (info.tensors != params.entries().size()) {
    throw FormatError(path + ": " + std::to_string(info.tensors) + " tensors, model has " +
                      std::to_string(params.entries().size()));
  }
  for (const auto& e : params.entries()) {
    const auto len = get<uint32_t>(in, path);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError(path + ": truncated tensor name");
    if (name != e.name) throw FormatError(path + ": expected tensor " + e.name + ", found " + name);
    const auto rank = get<uint32_t>(in, path);
    Shape shape;
    for (uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int64_t>(get<uint64_t>(in, path)));
    if (shape != e.tensor.shape()) {
      throw FormatError(path + ": tensor " + name + " has shape " + shape_str(shape) +
                        ", model expects " + shape_str(e.tensor.shape()));
    }
    std::vector<float> values(static_cast<size_t>(e.tensor.numel()));
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(float)))) {
      throw FormatError(path + ": truncated values for " + name);
    }
    Tensor<T> t = e.tensor;
    auto dst = t.mutable_data();
    for (size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<T>(values[i]);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes");
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  return read_header(in, path);
}

template void save_checkpoint(const ParameterSet<float>&, uint64_t, const std::string&);
template void save_checkpoint(const ParameterSet<double>&, uint64_t, const std::string&);
template void load_checkpoint(ParameterSet<float>&, uint64_t, const std::string&);
template void load_checkpoint(ParameterSet<double>&, uint64_t, const std::string&);

}  // namespace ocra
