#pragma once

// Run configuration as flat "key = value" text. Key names follow the
// hyperparameter table (e.g. recon_loss_weight, read_glimpse_size).

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace ocra {

enum class Variant { kOcra, kRecurrentNoGlimpse, kFeedforward, kNoCapsule };
enum class WinnerBy { kCurrent, kCumulative };

struct RunConfig {
  std::string variant = "ocra";
  int timesteps = 3;
  int epochs = 50;
  double lr = 0.001;
  int batch_size = 128;
  int read_glimpse_size = 18;
  int write_glimpse_size = 18;
  int conv1_filters = 32;
  int conv2_filters = 32;
  int lstm_size = 512;
  int primary_capsules = 40;
  int primary_capsule_dim = 8;
  int routings = 3;
  int object_capsule_dim = 16;
  int background_capsules = 0;
  double recon_loss_weight = 3.0;
  bool clip_canvas = true;
  bool use_recon_mask = false;

  int image_width = 36;
  int image_height = 36;
  int num_classes = 10;
  // Sequence readout positions; 0 disables the readout head.
  int sequence_slots = 0;
  // Objects per image for label prediction (2 enables the duplicate rule).
  int objects_per_image = 2;

  double margin = 0.1;
  double lambda_absent = 0.5;
  std::string winner_by = "current";
  std::string routing_gradient = "detached";
  double forget_bias = 1.0;
  double w_ij_init = 0.05;

  uint64_t seed = 1;
  double val_fraction = 0.1;
  // Stop after this many epochs without validation improvement; 0 disables.
  int patience = 0;

  Variant variant_kind() const;
  WinnerBy winner_kind() const;
  int object_capsules() const { return num_classes + background_capsules; }

  // Throws ConfigError on any out-of-range or inconsistent field.
  void validate() const;
};

// Ordered key/value view; the serialization order.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config);

// Sets one key from its text form. Unknown keys and unparsable values
// throw ConfigError.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

// Applies "key=value" strings in order.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string format_config(const RunConfig& config);
void save_config(const RunConfig& config, const std::string& path);

std::vector<std::string> preset_names();
RunConfig preset(const std::string& name);

// FNV-1a over the fields that define the parameter layout and the forward
// computation. Training-only fields (lr, epochs, seed...) are excluded.
uint64_t config_hash(const RunConfig& config);

// Hash of the data geometry a model expects: image size, classes, sequence slots.
uint64_t geometry_hash(int width, int height, int classes, int sequence_slots);
uint64_t geometry_hash(const RunConfig& config);

// Keys whose values differ, as (key, a, b).
std::vector<std::tuple<std::string, std::string, std::string>> config_diff(const RunConfig& a,
                                                                           const RunConfig& b);

std::string hex64(uint64_t value);

}  // namespace ocra
