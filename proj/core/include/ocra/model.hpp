#pragma once

// The recurrent episode: read, encode, route, mask, decode, write.

#include <vector>

#include "ocra/capsules.hpp"
#include "ocra/config.hpp"
#include "ocra/glimpse.hpp"
#include "ocra/lstm.hpp"
#include "ocra/losses.hpp"
#include "ocra/params.hpp"
#include "ocra/tensor.hpp"

namespace ocra {

template <typename T>
struct StepTrace {
  Tensor<T> read_params;   // [B,4] decoded; undefined for whole-image variants
  Tensor<T> write_params;  // [B,4] decoded; undefined for whole-image variants
  Tensor<T> glimpse;       // [B,N,N], or the whole image
  Tensor<T> footprint;     // [B,H,W] in [0,1]
  Tensor<T> step_scores;   // [B,J] per-step capsule lengths, background included
  std::vector<int> winners;
  std::vector<double> winner_scores;
  Tensor<T> canvas;        // [B,H,W] cumulative canvas after this step
  int degenerate_rows = 0;
};

template <typename T>
struct EpisodeState {
  LstmState<T> enc;
  LstmState<T> dec;
  Tensor<T> canvas;       // [B,H,W]
  Tensor<T> cum_scores;   // [B,num_classes]
  Tensor<T> cum_all;      // [B,J], detached; winner selection by cumulative score
  std::vector<StepTrace<T>> traces;
};

template <typename T>
struct EpisodeOutput {
  Tensor<T> cum_scores;
  Tensor<T> canvas;
  std::vector<StepTrace<T>> traces;
  // One [B,num_classes+1] tensor per sequence position when enabled.
  std::vector<Tensor<T>> sequence_scores;
};

template <typename T>
struct LossTerms {
  Tensor<T> margin;
  Tensor<T> recon;
  Tensor<T> total;
  Tensor<T> mask;  // undefined unless the config uses a reconstruction mask
};

// Encoder feature width after two conv+pool stages on an extent x extent input.
int encoder_feature_size(int filters, int height, int width);

template <typename T>
class OcraModel {
 public:
  explicit OcraModel(const RunConfig& config);

  const RunConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  int64_t parameter_count() const { return params_.count(); }

  EpisodeState<T> initial_state(int64_t batch) const;

  // images [B,1,n,n] or [B,n,n] -> [B,features]
  Tensor<T> encode_glimpse(const Tensor<T>& glimpse) const;

  EpisodeState<T> ocra_step(EpisodeState<T> state, const Tensor<T>& images) const;

  // images [B,H,W] with values in [0,1].
  EpisodeOutput<T> run_episode(const Tensor<T>& images) const;

  std::vector<Tensor<T>> sequence_readout(const std::vector<StepTrace<T>>& traces) const;

  // targets: per-class counts [B,num_classes] or, with a sequence head,
  // per-position labels in sequences (num_classes means "none").
  LossTerms<T> loss(const EpisodeOutput<T>& output, const Tensor<T>& images,
                    const Tensor<T>& class_targets,
                    const std::vector<std::vector<int>>& sequences = {}) const;

 private:
  bool uses_glimpses() const;
  ImageSize image_size() const { return {config_.image_width, config_.image_height}; }

  RunConfig config_;
  Variant variant_;
  ParameterSet<T> params_;
  Tensor<T> conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  LstmWeights<T> encoder_, decoder_;
  Linear<T> read_attention_, write_attention_, write_;
  Linear<T> primary_;
  Tensor<T> w_ij_;
  Linear<T> fc1_, fc2_, class_readout_;  // no_capsule variant
  Linear<T> sequence_head_;
};

// Builds the model for config.variant after validating the config.
template <typename T>
OcraModel<T> build_variant(const RunConfig& config);

// Sequence targets: [B,num_classes+1] one-hot per position.
template <typename T>
Tensor<T> sequence_targets(const std::vector<std::vector<int>>& sequences, int position,
                           int classes);

extern template class OcraModel<float>;
extern template class OcraModel<double>;

}  // namespace ocra
