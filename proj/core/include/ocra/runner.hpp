#pragma once

// Training, evaluation, visualization and ablation drivers behind the CLI verbs.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ocra/config.hpp"
#include "ocra/datasets.hpp"
#include "ocra/glimpse.hpp"
#include "ocra/model.hpp"
#include "ocra/pgm.hpp"

namespace ocra {

// A contiguous batch of samples as model inputs.
struct Batch {
  Tensor<float> images;                         // [B,H,W] in [0,1]
  std::vector<std::vector<int>> labels;         // label multisets
  std::vector<std::vector<int>> sequences;      // per-position labels
  Tensor<float> targets;                        // [B,classes] counts
};

Batch make_batch(const Dataset& dataset, const std::vector<int64_t>& indices);

// Throws ConfigError when the dataset geometry differs from what the config expects;
// the message carries both geometry hashes.
void check_geometry(const RunConfig& config, const DatasetHeader& header);

// Deterministic Fisher-Yates permutation of [0, n).
std::vector<int64_t> permutation(int64_t n, uint64_t seed);

// Train/validation index split: the validation part is the first
// floor(n * val_fraction) entries of a permutation drawn from a stream
// derived from seed (independent of the per-epoch shuffles).
struct SplitIndices {
  std::vector<int64_t> train;
  std::vector<int64_t> val;
};
SplitIndices split_indices(int64_t n, double val_fraction, uint64_t seed);

struct EpochMetrics {
  int epoch = 0;
  int64_t step = 0;
  double margin = 0, recon = 0, total = 0;
  double train_err = 0, val_err = 0;
  double wall_seconds = 0;
};

struct TrainOptions {
  std::string out_dir;
  std::string dataset_id;   // recorded in the run manifest
  int64_t max_samples = 0;  // 0 uses the whole dataset
  int eval_batch = 256;
  bool quiet = false;
  // Called after every epoch; returning false stops training.
  std::function<bool(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  double best_val_err = 1.0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string metrics_path;
  int64_t parameters = 0;
  double first_step_loss = 0;
};

TrainResult train(const RunConfig& config, const Dataset& dataset, const TrainOptions& options);

struct MaskStats {
  int64_t samples = 0;
  double digit_mean = 0;    // mean mask weight inside digit boxes
  double clutter_mean = 0;  // mean mask weight inside clutter boxes
  double overall_mean = 0;
};

struct EvalReport {
  int64_t samples = 0;
  int64_t errors = 0;
  double error_rate = 0;
  double margin = 0;
  double recon = 0;
  double total = 0;
  int classes = 10;
  std::vector<int64_t> confusion;  // classes x classes, row = truth, column = predicted
  int64_t duplicate_samples = 0;   // ground truth with a repeated class
  int64_t duplicate_errors = 0;
  std::optional<MaskStats> mask;
  int64_t degenerate_rows = 0;
};

struct EvalOptions {
  int batch = 256;
  int64_t max_samples = 0;
  std::string dump_path;  // optional per-sample predictions CSV
  // Digit and clutter boxes for mask statistics; empty skips them.
  const std::vector<SampleProvenance>* provenance = nullptr;
};

EvalReport evaluate(const OcraModel<float>& model, const Dataset& dataset,
                    const std::vector<int64_t>& indices, const EvalOptions& options);
EvalReport evaluate(const OcraModel<float>& model, const Dataset& dataset,
                    const EvalOptions& options);

std::string format_report(const EvalReport& report);

// Mean of mask over each box, averaged over boxes; 0 boxes yield NaN.
double mean_over_boxes(const std::vector<float>& mask, int width, const std::vector<Box>& boxes);

// ---- visualization ---------------------------------------------------------

struct GridLayout {
  int zoom = 1;       // input and canvas magnification
  int cell = 0;       // square cell side in pixels
  int gap = 4;
  int text_band = 12; // band above each canvas cell
  int columns = 0;
  int width = 0;
  int height = 0;
  int cell_x(int column) const { return gap + column * (cell + gap); }
  int row_y(int row) const;  // rows 0 (input), 1 (glimpse), 2 (canvas)
};

GridLayout grid_layout(int image_w, int image_h, int timesteps);

// Attention rectangle in grid pixel coordinates for a cell at (ox, oy).
struct PixelRect {
  int x0, y0, x1, y1;
};
PixelRect rect_in_cell(const Rect& rect, int zoom, int ox, int oy);

struct VisualizeOptions {
  std::string out_dir;
  std::vector<int64_t> samples;
};

// Writes sample_<index>.pgm per sample plus index.txt; returns the paths written.
std::vector<std::string> visualize(const OcraModel<float>& model, const Dataset& dataset,
                                   const VisualizeOptions& options);

// ---- ablation --------------------------------------------------------------

struct AblationRow {
  std::string name;
  RunConfig config;
  int64_t parameters = 0;
  double val_err = 0;
  double test_err = 0;
  uint64_t seed = 0;
};

// Variant names: ocra, routing1, no_capsule, recurrent_no_glimpse, feedforward.
RunConfig ablation_config(const RunConfig& base, const std::string& name);

struct AblateOptions {
  std::string out_dir;
  int repeats = 1;
  int64_t max_samples = 0;
  bool quiet = false;
};

std::vector<AblationRow> ablate(const RunConfig& base, const std::vector<std::string>& variants,
                                const Dataset& train_set, const Dataset& test_set,
                                const AblateOptions& options);
std::string format_ablation(const RunConfig& base, const std::vector<AblationRow>& rows);

// ---- run manifest ----------------------------------------------------------

void write_run_manifest(const std::string& path, const RunConfig& config,
                        const std::string& dataset_id, int64_t parameters);

// File identity for manifests: path, byte size and FNV-1a of the contents.
std::string dataset_identity(const std::string& path);

}  // namespace ocra
