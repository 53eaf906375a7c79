#include "ocra/datasets.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "ocra/error.hpp"
#include "ocra/rng.hpp"

namespace ocra {

static_assert(std::endian::native == std::endian::little, "OCRD I/O assumes little-endian");

namespace {

constexpr char kMagic[4] = {'O', 'C', 'R', 'D'};
constexpr int64_t kHeaderBytes = 40;
constexpr int kDigit = 28;

// A digit image as it is placed: 28x28, or 14x14 after 2x2 averaging.
std::vector<uint8_t> digit_pixels(const MnistSet& src, int64_t index, bool half) {
  if (index < 0 || index >= src.count) {
    throw ContractError("digit index " + std::to_string(index) + " outside source set");
  }
  const auto img = src.image(index);
  if (!half) return {img.begin(), img.end()};
  const int n = src.cols / 2;
  std::vector<uint8_t> out(static_cast<size_t>(n * n));
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      int s = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) s += img[static_cast<size_t>((2 * y + dy) * src.cols + 2 * x + dx)];
      }
      out[static_cast<size_t>(y * n + x)] = static_cast<uint8_t>((s + 2) / 4);
    }
  }
  return out;
}

Box content_box(const std::vector<uint8_t>& pixels, int side, int ox, int oy) {
  int x0 = side, y0 = side, x1 = -1, y1 = -1;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      if (pixels[static_cast<size_t>(y * side + x)]) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) return {ox, oy, ox + side, oy + side};
  return {ox + x0, oy + y0, ox + x1 + 1, oy + y1 + 1};
}

void blit(std::span<uint8_t> canvas, int canvas_w, const uint8_t* src, int src_stride, int w,
          int h, int ox, int oy, Overlay overlay) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const uint8_t v = src[y * src_stride + x];
      uint8_t& dst = canvas[static_cast<size_t>((oy + y) * canvas_w + ox + x)];
      dst = overlay == Overlay::kMax ? std::max(dst, v)
                                     : static_cast<uint8_t>(std::min(255, int(dst) + int(v)));
    }
  }
}

int64_t other_index(Rng& rng, const MnistSet& src, const std::vector<int64_t>& exclude) {
  for (;;) {
    const int64_t i = rng.uniform_int(0, src.count - 1);
    if (std::find(exclude.begin(), exclude.end(), i) == exclude.end()) return i;
  }
}

SampleProvenance draw_sample(const MnistSet& src, const GenerateOptions& opt,
                             const DatasetHeader& header, int64_t index) {
  SampleProvenance p;
  p.index = index;
  p.seed = mix_seed(opt.seed, static_cast<uint64_t>(index));
  Rng rng(p.seed);
  const int w = static_cast<int>(header.width), h = static_cast<int>(header.height);

  auto place_digit = [&](int64_t digit, int ox, int oy, bool half) {
    const int side = half ? kDigit / 2 : kDigit;
    p.digit_indices.push_back(digit);
    p.labels.push_back(src.labels[static_cast<size_t>(digit)]);
    p.frame_boxes.push_back({ox, oy, ox + side, oy + side});
    p.content_boxes.push_back(content_box(digit_pixels(src, digit, half), side, ox, oy));
  };
  auto shifted = [&](int64_t digit) {
    const int base = (w - kDigit) / 2;
    const int sx = static_cast<int>(rng.uniform_int(-opt.max_shift, opt.max_shift));
    const int sy = static_cast<int>(rng.uniform_int(-opt.max_shift, opt.max_shift));
    place_digit(digit, base + sx, (h - kDigit) / 2 + sy, false);
  };

  switch (opt.kind) {
    case DatasetKind::kSingle:
      shifted(rng.uniform_int(0, src.count - 1));
      break;
    case DatasetKind::kMultiMnist: {
      const int64_t a = rng.uniform_int(0, src.count - 1);
      int64_t b;
      do {
        b = rng.uniform_int(0, src.count - 1);
      } while (src.labels[static_cast<size_t>(b)] == src.labels[static_cast<size_t>(a)]);
      shifted(a);
      shifted(b);
      break;
    }
    case DatasetKind::kCluttered: {
      for (int d = 0; d < 2; ++d) {
        const int64_t digit = other_index(rng, src, p.digit_indices);
        const int ox = static_cast<int>(rng.uniform_int(0, w - kDigit));
        const int oy = static_cast<int>(rng.uniform_int(0, h - kDigit));
        place_digit(digit, ox, oy, false);
      }
      const int c = opt.clutter_size;
      const int min_ink = static_cast<int>(std::ceil(opt.clutter_min_fill * c * c - 1e-9));
      for (int k = 0; k < opt.clutter_pieces; ++k) {
        int64_t s;
        Box crop;
        for (;;) {
          s = other_index(rng, src, p.digit_indices);
          const int cx = static_cast<int>(rng.uniform_int(0, src.cols - c));
          const int cy = static_cast<int>(rng.uniform_int(0, src.rows - c));
          crop = {cx, cy, cx + c, cy + c};
          const auto img = src.image(s);
          int ink = 0;
          for (int y = cy; y < cy + c; ++y) {
            for (int x = cx; x < cx + c; ++x) ink += img[static_cast<size_t>(y * src.cols + x)] > 0;
          }
          if (ink >= min_ink) break;
        }
        const int px = static_cast<int>(rng.uniform_int(0, w - c));
        const int py = static_cast<int>(rng.uniform_int(0, h - c));
        p.clutter_sources.push_back(s);
        p.clutter_crops.push_back(crop);
        p.clutter_boxes.push_back({px, py, px + c, py + c});
      }
      break;
    }
    case DatasetKind::kSequence: {
      const int side = kDigit / 2, step = side - 4;
      const int len = static_cast<int>(rng.uniform_int(1, opt.max_sequence));
      const int span = side + step * (len - 1);
      const int ox = static_cast<int>(rng.uniform_int(0, w - span));
      const int oy = static_cast<int>(rng.uniform_int(0, h - side));
      for (int k = 0; k < len; ++k) {
        place_digit(rng.uniform_int(0, src.count - 1), ox + k * step, oy, true);
      }
      break;
    }
  }
  return p;
}

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::istream& in, const std::string& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError(path + ": truncated OCRD header");
  }
  return v;
}

DatasetHeader parse_header(std::istream& in, const std::string& path) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path + ": not an OCRD file (bad magic)");
  }
  DatasetHeader h;
  h.version = get<uint32_t>(in, path);
  if (h.version != kDatasetVersion) {
    throw FormatError(path + ": unsupported OCRD version " + std::to_string(h.version));
  }
  h.height = get<uint32_t>(in, path);
  h.width = get<uint32_t>(in, path);
  h.count = get<uint64_t>(in, path);
  h.classes = get<uint32_t>(in, path);
  h.seed = get<uint64_t>(in, path);
  h.sequence_slots = get<uint32_t>(in, path);
  if (h.height == 0 || h.width == 0 || h.classes == 0 || h.classes > 254) {
    throw FormatError(path + ": implausible OCRD geometry");
  }
  return h;
}

int64_t record_bytes(const DatasetHeader& h) {
  return int64_t(h.height) * h.width + h.classes + h.sequence_slots;
}

std::string join_ints(const auto& values) {
  std::string s;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) s += '|';
    s += std::to_string(values[i]);
  }
  return s;
}

std::string join_boxes(const std::vector<Box>& boxes) {
  std::string s;
  for (size_t i = 0; i < boxes.size(); ++i) {
    if (i) s += '|';
    const auto& b = boxes[i];
    s += std::to_string(b.x0) + ":" + std::to_string(b.y0) + ":" + std::to_string(b.x1) + ":" +
         std::to_string(b.y1);
  }
  return s;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (s.back() == sep) out.emplace_back();
  return out;
}

template <typename I>
std::vector<I> parse_ints(const std::string& s) {
  std::vector<I> out;
  for (const auto& part : split_on(s, '|')) out.push_back(static_cast<I>(std::stoll(part)));
  return out;
}

std::vector<Box> parse_boxes(const std::string& s) {
  std::vector<Box> out;
  for (const auto& part : split_on(s, '|')) {
    const auto c = split_on(part, ':');
    if (c.size() != 4) throw FormatError("bad box '" + part + "' in provenance");
    out.push_back({std::stoi(c[0]), std::stoi(c[1]), std::stoi(c[2]), std::stoi(c[3])});
  }
  return out;
}

}  // namespace

std::string kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kMultiMnist: return "multimnist";
    case DatasetKind::kCluttered: return "cluttered";
    case DatasetKind::kSingle: return "single";
    case DatasetKind::kSequence: return "sequence";
  }
  return "?";
}

DatasetKind parse_kind(const std::string& name) {
  for (auto k : {DatasetKind::kMultiMnist, DatasetKind::kCluttered, DatasetKind::kSingle,
                 DatasetKind::kSequence}) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigError("unknown dataset kind '" + name +
                    "' (expected multimnist, cluttered, single, sequence)");
}

int intersection_area(const Box& a, const Box& b) {
  const Box i{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1),
              std::min(a.y1, b.y1)};
  return (i.x1 > i.x0 && i.y1 > i.y0) ? i.area() : 0;
}

std::span<const uint8_t> Dataset::image(int64_t i) const {
  return {pixels.data() + i * pixels_per_image(), static_cast<size_t>(pixels_per_image())};
}

std::vector<int> Dataset::labels(int64_t i) const {
  std::vector<int> out;
  for (uint32_t c = 0; c < header.classes; ++c) {
    for (int k = 0; k < counts[static_cast<size_t>(i * header.classes + c)]; ++k) {
      out.push_back(static_cast<int>(c));
    }
  }
  return out;
}

std::vector<int> Dataset::sequence(int64_t i) const {
  const auto n = header.sequence_slots;
  return {sequences.begin() + i * n, sequences.begin() + (i + 1) * n};
}

DatasetHeader header_for(DatasetKind kind, int64_t count, uint64_t seed) {
  DatasetHeader h;
  h.count = static_cast<uint64_t>(count);
  h.seed = seed;
  h.classes = 10;
  switch (kind) {
    case DatasetKind::kMultiMnist:
    case DatasetKind::kSingle:
      h.height = h.width = 36;
      break;
    case DatasetKind::kCluttered:
      h.height = h.width = 100;
      break;
    case DatasetKind::kSequence:
      h.height = h.width = 54;
      h.sequence_slots = 5;
      break;
  }
  return h;
}

void render_sample(const MnistSet& source, DatasetKind kind, const DatasetHeader& header,
                   Overlay overlay, const SampleProvenance& prov, std::span<uint8_t> pixels,
                   std::span<uint8_t> counts, std::span<uint8_t> sequence) {
  const int w = static_cast<int>(header.width);
  std::fill(pixels.begin(), pixels.end(), uint8_t(0));
  std::fill(counts.begin(), counts.end(), uint8_t(0));
  std::fill(sequence.begin(), sequence.end(), static_cast<uint8_t>(header.classes));
  const bool half = kind == DatasetKind::kSequence;
  for (size_t k = 0; k < prov.clutter_sources.size(); ++k) {
    const auto& crop = prov.clutter_crops[k];
    const auto& at = prov.clutter_boxes[k];
    const auto img = source.image(prov.clutter_sources[k]);
    blit(pixels, w, img.data() + crop.y0 * source.cols + crop.x0, source.cols, crop.x1 - crop.x0,
         crop.y1 - crop.y0, at.x0, at.y0, overlay);
  }
  for (size_t k = 0; k < prov.digit_indices.size(); ++k) {
    const auto digit = digit_pixels(source, prov.digit_indices[k], half);
    const auto& f = prov.frame_boxes[k];
    const int side = f.x1 - f.x0;
    blit(pixels, w, digit.data(), side, side, side, f.x0, f.y0, overlay);
    const int label = source.labels[static_cast<size_t>(prov.digit_indices[k])];
    counts[static_cast<size_t>(label)] += 1;
    if (k < sequence.size()) sequence[k] = static_cast<uint8_t>(label);
  }
}

Generated generate_dataset(const MnistSet& source, const GenerateOptions& options) {
  if (options.count <= 0) {
    throw ConfigError("dataset size must be positive, got " + std::to_string(options.count));
  }
  if (source.rows != kDigit || source.cols != kDigit) {
    throw ConfigError("source digits must be 28x28");
  }
  Generated g;
  auto& ds = g.dataset;
  ds.header = header_for(options.kind, options.count, options.seed);
  const auto n = static_cast<size_t>(options.count);
  ds.pixels.resize(n * static_cast<size_t>(ds.pixels_per_image()));
  ds.counts.resize(n * ds.header.classes);
  ds.sequences.resize(n * ds.header.sequence_slots);
  g.provenance.reserve(n);

  double overlap = 0, iou = 0, ink = 0;
  int64_t pairs = 0, duplicates = 0, clutter = 0;
  const auto ppi = static_cast<size_t>(ds.pixels_per_image());
  for (size_t i = 0; i < n; ++i) {
    auto prov = draw_sample(source, options, ds.header, static_cast<int64_t>(i));
    std::span<uint8_t> px(ds.pixels.data() + i * ppi, ppi);
    render_sample(source, options.kind, ds.header, options.overlay, prov, px,
                  {ds.counts.data() + i * ds.header.classes, ds.header.classes},
                  {ds.sequences.data() + i * ds.header.sequence_slots, ds.header.sequence_slots});
    if (prov.frame_boxes.size() == 2) {
      ++pairs;
      overlap += double(intersection_area(prov.frame_boxes[0], prov.frame_boxes[1])) /
                 prov.frame_boxes[0].area();
      const auto& a = prov.content_boxes[0];
      const auto& b = prov.content_boxes[1];
      const int inter = intersection_area(a, b);
      iou += double(inter) / (a.area() + b.area() - inter);
      duplicates += prov.labels[0] == prov.labels[1];
    }
    clutter += static_cast<int64_t>(prov.clutter_boxes.size());
    for (uint8_t v : px) ink += v;
    g.provenance.push_back(std::move(prov));
  }
  g.stats.samples = options.count;
  if (pairs) {
    g.stats.mean_frame_overlap = overlap / pairs;
    g.stats.mean_content_iou = iou / pairs;
    g.stats.duplicate_class_fraction = double(duplicates) / pairs;
  }
  g.stats.mean_clutter_pieces = double(clutter) / options.count;
  g.stats.mean_ink = ink / 255.0 / double(ds.pixels.size());
  return g;
}

void write_dataset(const Dataset& dataset, const std::string& path) {
  const auto& h = dataset.header;
  const auto n = static_cast<size_t>(h.count);
  if (dataset.pixels.size() != n * static_cast<size_t>(dataset.pixels_per_image()) ||
      dataset.counts.size() != n * h.classes || dataset.sequences.size() != n * h.sequence_slots) {
    throw ContractError("dataset buffers do not match header count " + std::to_string(n));
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(kMagic, 4);
    put(out, h.version);
    put(out, h.height);
    put(out, h.width);
    put(out, h.count);
    put(out, h.classes);
    put(out, h.seed);
    put(out, h.sequence_slots);
    const auto ppi = static_cast<size_t>(dataset.pixels_per_image());
    for (size_t i = 0; i < n; ++i) {
      out.write(reinterpret_cast<const char*>(dataset.pixels.data() + i * ppi),
                static_cast<std::streamsize>(ppi));
      out.write(reinterpret_cast<const char*>(dataset.counts.data() + i * h.classes), h.classes);
      out.write(reinterpret_cast<const char*>(dataset.sequences.data() + i * h.sequence_slots),
                h.sequence_slots);
    }
    if (!out) throw IoError("error writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

DatasetHeader read_dataset_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return parse_header(in, path);
}

DatasetReader::DatasetReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open " + path);
  header_ = parse_header(in_, path);
  const auto size = static_cast<int64_t>(std::filesystem::file_size(path));
  const int64_t expected = kHeaderBytes + static_cast<int64_t>(header_.count) * record_bytes(header_);
  if (size != expected) {
    throw FormatError(path + ": header sample count " + std::to_string(header_.count) +
                      " implies " + std::to_string(expected) + " bytes, file has " +
                      std::to_string(size));
  }
}

bool DatasetReader::next(std::vector<uint8_t>& pixels, std::vector<uint8_t>& counts,
                         std::vector<uint8_t>& sequence) {
  if (position_ >= static_cast<int64_t>(header_.count)) return false;
  pixels.resize(size_t(header_.height) * header_.width);
  counts.resize(header_.classes);
  sequence.resize(header_.sequence_slots);
  in_.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  in_.read(reinterpret_cast<char*>(counts.data()), static_cast<std::streamsize>(counts.size()));
  in_.read(reinterpret_cast<char*>(sequence.data()), static_cast<std::streamsize>(sequence.size()));
  if (!in_) {
    throw FormatError(path_ + ": truncated record " + std::to_string(position_));
  }
  ++position_;
  return true;
}

Dataset read_dataset(const std::string& path) {
  DatasetReader reader(path);
  Dataset ds;
  ds.header = reader.header();
  const auto n = static_cast<size_t>(ds.header.count);
  ds.pixels.reserve(n * static_cast<size_t>(ds.pixels_per_image()));
  ds.counts.reserve(n * ds.header.classes);
  ds.sequences.reserve(n * ds.header.sequence_slots);
  std::vector<uint8_t> px, c, s;
  while (reader.next(px, c, s)) {
    ds.pixels.insert(ds.pixels.end(), px.begin(), px.end());
    ds.counts.insert(ds.counts.end(), c.begin(), c.end());
    ds.sequences.insert(ds.sequences.end(), s.begin(), s.end());
  }
  return ds;
}

void write_provenance(const std::vector<SampleProvenance>& prov, Split split, DatasetKind kind,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# kind=" << kind_name(kind) << " split=" << split_name(split) << "\n";
  out << "index,seed,digit_indices,labels,frame_boxes,content_boxes,clutter_sources,"
         "clutter_crops,clutter_boxes\n";
  for (const auto& p : prov) {
    out << p.index << ',' << p.seed << ',' << join_ints(p.digit_indices) << ','
        << join_ints(p.labels) << ',' << join_boxes(p.frame_boxes) << ','
        << join_boxes(p.content_boxes) << ',' << join_ints(p.clutter_sources) << ','
        << join_boxes(p.clutter_crops) << ',' << join_boxes(p.clutter_boxes) << '\n';
  }
  if (!out) throw IoError("error writing " + path);
}

std::vector<SampleProvenance> read_provenance(const std::string& path, Split* split) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# kind=", 0) != 0) {
    throw FormatError(path + ": missing provenance preamble");
  }
  if (split) {
    const auto at = line.find("split=");
    if (at == std::string::npos) throw FormatError(path + ": preamble lacks split");
    *split = parse_split(line.substr(at + 6));
  }
  std::getline(in, line);  // column names
  std::vector<SampleProvenance> out;
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    const auto f = split_on(line, ',');
    if (f.size() != 9) {
      throw FormatError(path + ": line " + std::to_string(lineno) + " has " +
                        std::to_string(f.size()) + " fields");
    }
    SampleProvenance p;
    p.index = std::stoll(f[0]);
    p.seed = std::stoull(f[1]);
    p.digit_indices = parse_ints<int64_t>(f[2]);
    p.labels = parse_ints<int>(f[3]);
    p.frame_boxes = parse_boxes(f[4]);
    p.content_boxes = parse_boxes(f[5]);
    p.clutter_sources = parse_ints<int64_t>(f[6]);
    p.clutter_crops = parse_boxes(f[7]);
    p.clutter_boxes = parse_boxes(f[8]);
    out.push_back(std::move(p));
  }
  return out;
}

void write_manifest(const Generated& generated, const GenerateOptions& options, Split split,
                    const std::string& source, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  const auto& h = generated.dataset.header;
  const auto& s = generated.stats;
  out << "kind = " << kind_name(options.kind) << "\n"
      << "split = " << split_name(split) << "\n"
      << "source = " << source << "\n"
      << "count = " << h.count << "\n"
      << "seed = " << h.seed << "\n"
      << "height = " << h.height << "\n"
      << "width = " << h.width << "\n"
      << "classes = " << h.classes << "\n"
      << "sequence_slots = " << h.sequence_slots << "\n"
      << "overlay = " << (options.overlay == Overlay::kMax ? "max" : "add_clip") << "\n"
      << "max_shift = " << options.max_shift << "\n"
      << "clutter_pieces = " << options.clutter_pieces << "\n"
      << "clutter_size = " << options.clutter_size << "\n"
      << "clutter_min_fill = " << options.clutter_min_fill << "\n"
      << "stat.mean_frame_overlap = " << s.mean_frame_overlap << "\n"
      << "stat.mean_content_iou = " << s.mean_content_iou << "\n"
      << "stat.duplicate_class_fraction = " << s.duplicate_class_fraction << "\n"
      << "stat.mean_clutter_pieces = " << s.mean_clutter_pieces << "\n"
      << "stat.mean_ink = " << s.mean_ink << "\n";
  if (!out) throw IoError("error writing " + path);
}

}  // namespace ocra
