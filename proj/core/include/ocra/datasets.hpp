#pragma once

// Composite digit datasets and the OCRD container.
//
// OCRD layout, little-endian:
//   "OCRD" | u32 version | u32 height | u32 width | u64 count | u32 classes
//   | u64 seed | u32 sequence_slots
//   per sample: height*width pixel bytes | classes count bytes
//               | sequence_slots label bytes (classes = no digit)

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ocra/mnist.hpp"

namespace ocra {

inline constexpr uint32_t kDatasetVersion = 1;

enum class DatasetKind { kMultiMnist, kCluttered, kSingle, kSequence };
enum class Overlay { kMax, kAddClip };

std::string kind_name(DatasetKind kind);
DatasetKind parse_kind(const std::string& name);

// Half-open pixel box [x0,x1) x [y0,y1), 0-based canvas coordinates.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int area() const { return std::max(0, x1 - x0) * std::max(0, y1 - y0); }
  bool operator==(const Box&) const = default;
};
int intersection_area(const Box& a, const Box& b);

// Everything needed to re-render one sample.
struct SampleProvenance {
  int64_t index = 0;
  uint64_t seed = 0;
  std::vector<int64_t> digit_indices;
  std::vector<int> labels;
  std::vector<Box> frame_boxes;    // placed (possibly downsampled) digit frames
  std::vector<Box> content_boxes;  // tight nonzero extent inside each frame
  std::vector<int64_t> clutter_sources;
  std::vector<Box> clutter_crops;   // crop windows in source image coordinates
  std::vector<Box> clutter_boxes;   // placements on the canvas
  bool operator==(const SampleProvenance&) const = default;
};

struct DatasetHeader {
  uint32_t version = kDatasetVersion;
  uint32_t height = 0;
  uint32_t width = 0;
  uint64_t count = 0;
  uint32_t classes = 10;
  uint64_t seed = 0;
  uint32_t sequence_slots = 0;
  bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<uint8_t> pixels;
  std::vector<uint8_t> counts;
  std::vector<uint8_t> sequences;

  int64_t size() const { return static_cast<int64_t>(header.count); }
  int64_t pixels_per_image() const { return int64_t(header.height) * header.width; }
  std::span<const uint8_t> image(int64_t i) const;
  // Label multiset, ascending.
  std::vector<int> labels(int64_t i) const;
  // Per-position labels, `classes` meaning none.
  std::vector<int> sequence(int64_t i) const;
  bool operator==(const Dataset&) const = default;
};

struct GenerateOptions {
  DatasetKind kind = DatasetKind::kMultiMnist;
  int64_t count = 0;
  uint64_t seed = 1;
  Overlay overlay = Overlay::kMax;
  int max_shift = 4;         // MultiMNIST and single digit
  int clutter_pieces = 6;    // cluttered
  int clutter_size = 8;
  double clutter_min_fill = 0.1;
  int max_sequence = 5;      // sequence
};

struct GenerationStats {
  int64_t samples = 0;
  // Intersection of the two digit frames over the frame area.
  double mean_frame_overlap = 0.0;
  // Intersection over union of the tight digit boxes.
  double mean_content_iou = 0.0;
  double duplicate_class_fraction = 0.0;
  double mean_clutter_pieces = 0.0;
  double mean_ink = 0.0;  // mean pixel value in [0,1]
};

struct Generated {
  Dataset dataset;
  std::vector<SampleProvenance> provenance;
  GenerationStats stats;
};

// Canvas geometry and class layout for each kind.
DatasetHeader header_for(DatasetKind kind, int64_t count, uint64_t seed);

Generated generate_dataset(const MnistSet& source, const GenerateOptions& options);

// Re-renders pixels, counts and sequence labels from provenance alone.
void render_sample(const MnistSet& source, DatasetKind kind, const DatasetHeader& header,
                   Overlay overlay,
                   const SampleProvenance& prov, std::span<uint8_t> pixels,
                   std::span<uint8_t> counts, std::span<uint8_t> sequence);

void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);
DatasetHeader read_dataset_header(const std::string& path);

// Sequential reader that holds one sample at a time.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path);
  const DatasetHeader& header() const { return header_; }
  // False at end of data.
  bool next(std::vector<uint8_t>& pixels, std::vector<uint8_t>& counts,
            std::vector<uint8_t>& sequence);
  int64_t position() const { return position_; }

 private:
  std::string path_;
  std::ifstream in_;
  DatasetHeader header_;
  int64_t position_ = 0;
};

// CSV sidecar with one row per sample.
void write_provenance(const std::vector<SampleProvenance>& prov, Split split, DatasetKind kind,
                      const std::string& path);
std::vector<SampleProvenance> read_provenance(const std::string& path, Split* split = nullptr);

void write_manifest(const Generated& generated, const GenerateOptions& options, Split split,
                    const std::string& source, const std::string& path);

}  // namespace ocra
