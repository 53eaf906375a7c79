#include "ocra/model.hpp"

#include <cmath>
#include <string>

#include "ocra/error.hpp"
#include "ocra/ops.hpp"

namespace ocra {

namespace {

template <typename T>
LstmWeights<T> make_lstm(ParameterSet<T>& params, const std::string& name, int64_t in,
                         int64_t hidden, bool recurrent, double forget_bias, Rng& rng) {
  LstmWeights<T> w;
  w.w_ih = params.add_uniform(name + ".w_ih", {in, 4 * hidden}, 1.0 / std::sqrt(double(in)), rng);
  if (recurrent) {
    w.w_hh = params.add_uniform(name + ".w_hh", {hidden, 4 * hidden},
                                1.0 / std::sqrt(double(hidden)), rng);
  }
  w.bias = params.add(name + ".bias", {4 * hidden});
  auto b = w.bias.mutable_data();
  for (int64_t k = hidden; k < 2 * hidden; ++k) b[static_cast<size_t>(k)] = T(forget_bias);
  return w;
}

template <typename T>
void zero(Tensor<T>& t) {
  for (auto& v : t.mutable_data()) v = T(0);
}

}  // namespace

int encoder_feature_size(int filters, int height, int width) {
  return filters * ((height / 2) / 2) * ((width / 2) / 2);
}

template <typename T>
OcraModel<T>::OcraModel(const RunConfig& config)
    : config_(config), variant_(config.variant_kind()) {
  config_.validate();
  Rng rng(mix_seed(config_.seed, 0x1417));
  const int64_t hidden = config_.lstm_size;
  const int c1 = config_.conv1_filters, c2 = config_.conv2_filters;
  const bool glimpses = uses_glimpses();
  const int in_h = glimpses ? config_.read_glimpse_size : config_.image_height;
  const int in_w = glimpses ? config_.read_glimpse_size : config_.image_width;
  const int64_t features = encoder_feature_size(c2, in_h, in_w);
  if (features < 1) throw ConfigError("encoder input too small for two pooling stages");
  const int64_t objects = config_.object_capsules();
  const int64_t capsule_width = objects * config_.object_capsule_dim;
  const bool recurrent = variant_ != Variant::kFeedforward;

  conv1_w_ = params_.add_uniform("encoder.conv1.weight", {c1, 1, 5, 5}, 1.0 / std::sqrt(25.0), rng);
  conv1_b_ = params_.add_uniform("encoder.conv1.bias", {c1}, 1.0 / std::sqrt(25.0), rng);
  const double b2 = 1.0 / std::sqrt(9.0 * c1);
  conv2_w_ = params_.add_uniform("encoder.conv2.weight", {c2, c1, 3, 3}, b2, rng);
  conv2_b_ = params_.add_uniform("encoder.conv2.bias", {c2}, b2, rng);
  encoder_ = make_lstm(params_, "encoder.lstm", features, hidden, recurrent, config_.forget_bias, rng);

  if (variant_ == Variant::kNoCapsule) {
    fc1_ = make_linear(params_, "capsules.fc1", hidden,
                       int64_t(config_.primary_capsules) * config_.primary_capsule_dim, rng);
    fc2_ = make_linear(params_, "capsules.fc2", fc1_.out_features(), capsule_width, rng);
    class_readout_ = make_linear(params_, "capsules.readout", capsule_width, objects, rng);
  } else {
    primary_ = make_linear(params_, "capsules.primary", hidden,
                           int64_t(config_.primary_capsules) * config_.primary_capsule_dim, rng);
    w_ij_ = params_.add_uniform(
        "capsules.w_ij",
        {config_.primary_capsules, objects, config_.object_capsule_dim, config_.primary_capsule_dim},
        config_.w_ij_init, rng);
  }

  decoder_ = make_lstm(params_, "decoder.lstm", capsule_width, hidden, recurrent,
                       config_.forget_bias, rng);
  if (glimpses) {
    read_attention_ = make_linear(params_, "read.attention", hidden, 4, rng);
    zero(read_attention_.bias);
    const int m = config_.write_glimpse_size;
    write_ = make_linear(params_, "write.patch", hidden, int64_t(m) * m, rng);
    write_attention_ = make_linear(params_, "write.attention", hidden, 4, rng);
    zero(write_attention_.bias);
  } else {
    write_ = make_linear(params_, "write.patch", hidden,
                         int64_t(config_.image_width) * config_.image_height, rng);
  }
  if (config_.sequence_slots > 0) {
    sequence_head_ = make_linear(params_, "sequence.readout", config_.num_classes,
                                 config_.num_classes + 1, rng);
  }
}

template <typename T>
bool OcraModel<T>::uses_glimpses() const {
  return variant_ == Variant::kOcra || variant_ == Variant::kNoCapsule;
}

template <typename T>
EpisodeState<T> OcraModel<T>::initial_state(int64_t batch) const {
  EpisodeState<T> s;
  const int64_t h = config_.lstm_size;
  s.enc = {Tensor<T>::zeros({batch, h}), Tensor<T>::zeros({batch, h})};
  s.dec = {Tensor<T>::zeros({batch, h}), Tensor<T>::zeros({batch, h})};
  s.canvas = Tensor<T>::zeros({batch, config_.image_height, config_.image_width});
  s.cum_scores = Tensor<T>::zeros({batch, config_.num_classes});
  s.cum_all = Tensor<T>::zeros({batch, config_.object_capsules()});
  return s;
}

template <typename T>
Tensor<T> OcraModel<T>::encode_glimpse(const Tensor<T>& glimpse) const {
  Tensor<T> x = glimpse;
  if (x.rank() == 3) x = reshape(x, {x.dim(0), 1, x.dim(1), x.dim(2)});
  if (x.rank() != 4 || x.dim(1) != 1) {
    throw DimensionError("encode_glimpse expects [B,n,n] or [B,1,n,n], got " +
                         shape_str(glimpse.shape()));
  }
  auto h1 = maxpool2(relu(conv2d(x, conv1_w_, conv1_b_, 2)));
  auto h2 = maxpool2(relu(conv2d(h1, conv2_w_, conv2_b_, 1)));
  return reshape(h2, {h2.dim(0), h2.dim(1) * h2.dim(2) * h2.dim(3)});
}

template <typename T>
EpisodeState<T> OcraModel<T>::ocra_step(EpisodeState<T> state, const Tensor<T>& images) const {
  const int64_t batch = images.dim(0);
  const auto image = image_size();
  StepTrace<T> trace;

  // Read.
  if (uses_glimpses()) {
    const int n = config_.read_glimpse_size;
    trace.read_params = decode_attention_params(state.dec.h, read_attention_, image, n);
    auto fb = build_filterbanks(trace.read_params, n, image);
    trace.degenerate_rows += fb.degenerate_rows;
    trace.glimpse = read_glimpse(images, fb);
    trace.footprint = glimpse_footprint(fb);
  } else {
    trace.glimpse = images;
    trace.footprint = Tensor<T>::full(images.shape(), T(1));
  }

  // Encode.
  state.enc = lstm_step(encode_glimpse(trace.glimpse), state.enc, encoder_);

  // Capsules, score accumulation, masking.
  Tensor<T> decoder_input;
  if (variant_ == Variant::kNoCapsule) {
    auto hidden = relu(fc2_(relu(fc1_(state.enc.h))));
    trace.step_scores = sigmoid(class_readout_(hidden));
    decoder_input = hidden;
  } else {
    auto primary = primary_from_hidden(state.enc.h, primary_, config_.primary_capsules,
                                       config_.primary_capsule_dim);
    RoutingOptions routing;
    routing.iterations = config_.routings;
    routing.gradient =
        config_.routing_gradient == "full" ? RoutingGradient::kFull : RoutingGradient::kDetached;
    auto bundle = dynamic_routing(primary, w_ij_, routing);
    trace.step_scores = capsule_scores(bundle.objects);
    if (variant_ == Variant::kFeedforward) {
      decoder_input = reshape(bundle.objects, {batch, config_.object_capsules() * config_.object_capsule_dim});
    } else {
      state.cum_all = add(state.cum_all, trace.step_scores.detach());
      trace.winners = select_winners(config_.winner_kind() == WinnerBy::kCurrent
                                         ? trace.step_scores
                                         : state.cum_all);
      decoder_input = mask_winner(bundle.objects, trace.winners);
    }
  }
  const auto class_scores = config_.background_capsules > 0
                                ? slice_last(trace.step_scores, 0, config_.num_classes)
                                : trace.step_scores;
  state.cum_scores = add(state.cum_scores, class_scores);
  if (trace.winners.empty()) trace.winners = select_winners(trace.step_scores);
  {
    const auto s = trace.step_scores.data();
    const int64_t j = trace.step_scores.dim(1);
    for (int64_t b = 0; b < batch; ++b) {
      trace.winner_scores.push_back(
          static_cast<double>(s[static_cast<size_t>(b * j + trace.winners[size_t(b)])]));
    }
  }

  // Decode and write.
  state.dec = lstm_step(decoder_input, state.dec, decoder_);
  Tensor<T> delta;
  if (uses_glimpses()) {
    auto w = write_patch(state.dec.h, write_, write_attention_, image, config_.write_glimpse_size);
    trace.write_params = w.filterbanks.params;
    trace.degenerate_rows += w.filterbanks.degenerate_rows;
    delta = w.canvas_delta;
  } else {
    delta = reshape(write_(state.dec.h), {batch, config_.image_height, config_.image_width});
  }
  state.canvas = add(state.canvas, delta);
  trace.canvas = state.canvas;
  state.traces.push_back(std::move(trace));
  return state;
}

template <typename T>
EpisodeOutput<T> OcraModel<T>::run_episode(const Tensor<T>& images) const {
  if (images.rank() != 3 || images.dim(1) != config_.image_height ||
      images.dim(2) != config_.image_width) {
    throw DimensionError("run_episode: images " + shape_str(images.shape()) + " vs configured " +
                         std::to_string(config_.image_height) + "x" +
                         std::to_string(config_.image_width));
  }
  auto state = initial_state(images.dim(0));
  for (int t = 0; t < config_.timesteps; ++t) state = ocra_step(std::move(state), images);
  EpisodeOutput<T> out;
  out.cum_scores = state.cum_scores;
  out.canvas = state.canvas;
  out.traces = std::move(state.traces);
  if (config_.sequence_slots > 0) out.sequence_scores = sequence_readout(out.traces);
  return out;
}

template <typename T>
std::vector<Tensor<T>> OcraModel<T>::sequence_readout(
    const std::vector<StepTrace<T>>& traces) const {
  const int slots = config_.sequence_slots;
  if (slots < 1) throw ConfigError("sequence readout is disabled (sequence_slots = 0)");
  if (static_cast<int>(traces.size()) != 2 * slots + 2) {
    throw ConfigError("sequence readout over " + std::to_string(slots) + " positions needs " +
                      std::to_string(2 * slots + 2) + " glimpses, got " +
                      std::to_string(traces.size()));
  }
  std::vector<Tensor<T>> out;
  for (int k = 1; k <= slots; ++k) {
    // Positions read glimpses 2k+1 and 2k+2 (1-based); the first two are unused.
    const auto& a = traces[static_cast<size_t>(2 * k)].step_scores;
    const auto& b = traces[static_cast<size_t>(2 * k + 1)].step_scores;
    auto lengths = add(slice_last(a, 0, config_.num_classes), slice_last(b, 0, config_.num_classes));
    out.push_back(sequence_head_(lengths));
  }
  return out;
}

template <typename T>
Tensor<T> sequence_targets(const std::vector<std::vector<int>>& sequences, int position,
                           int classes) {
  std::vector<std::vector<int>> labels;
  labels.reserve(sequences.size());
  for (const auto& seq : sequences) {
    if (position >= static_cast<int>(seq.size())) {
      throw ContractError("sequence shorter than position " + std::to_string(position));
    }
    labels.push_back({seq[static_cast<size_t>(position)]});
  }
  return target_counts<T>(labels, classes + 1);
}

template <typename T>
LossTerms<T> OcraModel<T>::loss(const EpisodeOutput<T>& output, const Tensor<T>& images,
                                const Tensor<T>& class_targets,
                                const std::vector<std::vector<int>>& sequences) const {
  MarginOptions margin{config_.margin, config_.lambda_absent};
  LossTerms<T> terms;
  if (config_.sequence_slots > 0) {
    for (int k = 0; k < config_.sequence_slots; ++k) {
      auto term = classification_loss(output.sequence_scores[static_cast<size_t>(k)],
                                       sequence_targets<T>(sequences, k, config_.num_classes),
                                       margin);
      terms.margin = k == 0 ? term : add(terms.margin, term);
    }
  } else {
    terms.margin = classification_loss(output.cum_scores, class_targets, margin);
  }
  if (config_.use_recon_mask) {
    std::vector<Tensor<T>> footprints;
    for (const auto& t : output.traces) footprints.push_back(t.footprint);
    terms.mask = build_recon_mask(footprints);
  }
  terms.recon = recon_loss(output.canvas, images, terms.mask, config_.clip_canvas);
  terms.total = total_loss(terms.margin, terms.recon, config_.recon_loss_weight);
  return terms;
}

template <typename T>
OcraModel<T> build_variant(const RunConfig& config) {
  return OcraModel<T>(config);
}

template class OcraModel<float>;
template class OcraModel<double>;
template OcraModel<float> build_variant(const RunConfig&);
template OcraModel<double> build_variant(const RunConfig&);
template Tensor<float> sequence_targets(const std::vector<std::vector<int>>&, int, int);
template Tensor<double> sequence_targets(const std::vector<std::vector<int>>&, int, int);

}  // namespace ocra
