#include <cmath>

#include "ocra/error.hpp"
#include "ocra/model.hpp"
#include "ocra/ops.hpp"
#include "support.hpp"

namespace ocra {
namespace {

using test::random_tensor;
using test::tiny_config;
using test::values;

Tensor<double> tiny_images(const RunConfig& c, int64_t batch, uint64_t seed) {
  return random_tensor({batch, c.image_height, c.image_width}, seed, 0.0, 1.0);
}

// Finite differences on every parameter of the assembled model. The default
// 1e-4 probe avoids straddling ReLU, pooling and clamp kinks; at that step
// roundoff in an O(1) loss is ~1e-11, so near-zero gradients get a 1e-6 floor.
GradCheckOptions roundoff_limited() {
  GradCheckOptions o;
  o.step = 1e-4;
  o.abs_floor = 1e-6;
  return o;
}

void check_model_gradients(const RunConfig& config,
                           GradCheckOptions options = roundoff_limited()) {
  OcraModel<double> model(config);
  auto images = tiny_images(config, 2, 99);
  std::vector<std::vector<int>> labels{{0}, {1}};
  auto targets = target_counts<double>(labels, config.num_classes);
  std::vector<std::vector<int>> sequences;
  if (config.sequence_slots > 0) {
    for (int b = 0; b < 2; ++b) {
      std::vector<int> seq(size_t(config.sequence_slots), config.num_classes);
      seq[0] = b;
      sequences.push_back(seq);
    }
  }
  auto params = model.parameters().tensors();
  auto result = check_gradients(
      [&] { return model.loss(model.run_episode(images), images, targets, sequences).total; },
      params, options);
  EXPECT_TRUE(result.passed) << config.variant << ": max rel err " << result.max_rel_error
                             << " at " << result.worst;
  EXPECT_EQ(result.checked, model.parameter_count());
}

TEST(ModelGradients, TinyOcraOneGlimpse) {
  // Full 1e-8 floor; a one-glimpse episode has no kink within 2e-3 of this
  // seed's parameters.
  auto c = tiny_config();
  c.routing_gradient = "full";
  GradCheckOptions strict;
  strict.step = 1e-3;
  strict.abs_floor = 1e-8;
  check_model_gradients(c, strict);
}

TEST(ModelGradients, TinyOcraTwoGlimpsesWithMaskAndBackground) {
  auto c = tiny_config();
  c.routing_gradient = "full";
  c.timesteps = 2;
  c.use_recon_mask = true;
  c.background_capsules = 1;
  check_model_gradients(c);
}

TEST(ModelGradients, TinyOcraSingleRoutingDetached) {
  // One routing round has constant couplings, so the detached path is exact.
  auto c = tiny_config();
  c.routings = 1;
  c.timesteps = 2;
  check_model_gradients(c);
}

TEST(ModelGradients, TinyVariants) {
  for (const char* v : {"no_capsule", "recurrent_no_glimpse", "feedforward"}) {
    auto c = tiny_config();
    c.variant = v;
    c.routing_gradient = "full";
    c.timesteps = std::string(v) == "feedforward" ? 1 : 2;
    check_model_gradients(c);
  }
}

TEST(ModelGradients, TinySequenceHead) {
  auto c = tiny_config();
  c.routing_gradient = "full";
  c.sequence_slots = 1;
  c.timesteps = 4;
  check_model_gradients(c);
}

TEST(Model, EncoderWidths) {
  EXPECT_EQ(encoder_feature_size(32, 18, 18), 512);
  EXPECT_EQ(encoder_feature_size(64, 18, 18), 1024);
  OcraModel<float> model(preset("multimnist-3glimpse"));
  EXPECT_EQ(model.encode_glimpse(Tensor<float>::zeros({2, 18, 18})).shape(), (Shape{2, 512}));
  OcraModel<float> svhn(preset("svhn"));
  EXPECT_EQ(svhn.encode_glimpse(Tensor<float>::zeros({1, 18, 18})).shape(), (Shape{1, 1024}));
}

TEST(Model, ZeroGlimpseWithZeroBiasesGivesZeroFeatures) {
  OcraModel<double> model(tiny_config());
  for (const char* name : {"encoder.conv1.bias", "encoder.conv2.bias"}) {
    auto t = *model.parameters().find(name);
    for (auto& v : t.mutable_data()) v = 0.0;
  }
  for (double v : values(model.encode_glimpse(Tensor<double>::zeros({1, 6, 6})))) {
    EXPECT_DOUBLE_EQ(v, 0.0);
  }
}

TEST(Model, ParameterCountNearPublishedSize) {
  const double published = 3.87e6;
  for (const char* name : {"multimnist-3glimpse", "multimnist-10glimpse"}) {
    OcraModel<float> model(preset(name));
    EXPECT_EQ(model.parameter_count(), 3873260) << name;
    EXPECT_LT(std::abs(double(model.parameter_count()) - published) / published, 0.05);
  }
  auto c = preset("multimnist-3glimpse");
  c.variant = "no_capsule";
  OcraModel<float> fc(c);
  EXPECT_LT(std::abs(double(fc.parameter_count()) - published) / published, 0.05);
}

TEST(Model, ShapeContractsPerPreset) {
  {
    OcraModel<float> m(preset("multimnist-3glimpse"));
    auto out = m.run_episode(Tensor<float>::zeros({2, 36, 36}));
    EXPECT_EQ(out.cum_scores.shape(), (Shape{2, 10}));
    EXPECT_EQ(out.canvas.shape(), (Shape{2, 36, 36}));
    ASSERT_EQ(out.traces.size(), 3u);
    EXPECT_EQ(out.traces[0].glimpse.shape(), (Shape{2, 18, 18}));
    EXPECT_EQ(out.traces[0].footprint.shape(), (Shape{2, 36, 36}));
  }
  {
    auto c = preset("cluttered-5glimpse");
    c.lstm_size = 64;
    OcraModel<float> m(c);
    auto out = m.run_episode(Tensor<float>::zeros({1, 100, 100}));
    EXPECT_EQ(out.cum_scores.shape(), (Shape{1, 10}));
    EXPECT_EQ(out.traces[0].step_scores.shape(), (Shape{1, 11}));
    EXPECT_EQ(out.canvas.shape(), (Shape{1, 100, 100}));
  }
  {
    auto c = preset("svhn");
    c.lstm_size = 64;
    OcraModel<float> m(c);
    auto out = m.run_episode(Tensor<float>::zeros({1, 54, 54}));
    EXPECT_EQ(out.traces.size(), 12u);
    ASSERT_EQ(out.sequence_scores.size(), 5u);
    for (const auto& s : out.sequence_scores) EXPECT_EQ(s.shape(), (Shape{1, 11}));
  }
  auto c = preset("multimnist-3glimpse");
  c.variant = "feedforward";
  c.timesteps = 1;
  OcraModel<float> ff(c);
  EXPECT_EQ(ff.run_episode(Tensor<float>::zeros({1, 36, 36})).traces.size(), 1u);
  EXPECT_THROW(ff.run_episode(Tensor<float>::zeros({1, 30, 36})), DimensionError);
}

TEST(Model, VariantAndStepValidation) {
  auto c = tiny_config();
  c.variant = "bogus";
  EXPECT_THROW(build_variant<double>(c), ConfigError);
  c = tiny_config();
  c.timesteps = 0;
  EXPECT_THROW(build_variant<double>(c), ConfigError);
  c = tiny_config();
  c.sequence_slots = 5;
  c.timesteps = 11;
  EXPECT_THROW(build_variant<double>(c), ConfigError);
}

TEST(Model, ScoresAccumulateFromTraces) {
  auto c = tiny_config();
  c.timesteps = 4;
  c.background_capsules = 1;
  OcraModel<double> model(c);
  auto images = tiny_images(c, 3, 5);
  auto out = model.run_episode(images);
  std::vector<double> sum(3 * 2, 0.0), previous(3 * 2, 0.0);
  for (const auto& t : out.traces) {
    for (int64_t b = 0; b < 3; ++b) {
      for (int64_t j = 0; j < 2; ++j) {
        const double s = t.step_scores.at({b, j});
        EXPECT_GE(s, 0.0);
        sum[size_t(b * 2 + j)] += s;
        EXPECT_GE(sum[size_t(b * 2 + j)], previous[size_t(b * 2 + j)]);
        previous[size_t(b * 2 + j)] = sum[size_t(b * 2 + j)];
      }
    }
  }
  auto cum = values(out.cum_scores);
  for (size_t i = 0; i < cum.size(); ++i) EXPECT_NEAR(cum[i], sum[i], 1e-12);
}

TEST(Model, WinnerIsCurrentStepArgmaxIncludingBackground) {
  auto c = tiny_config();
  c.timesteps = 3;
  c.background_capsules = 1;
  OcraModel<double> model(c);
  auto out = model.run_episode(tiny_images(c, 4, 6));
  for (const auto& t : out.traces) {
    EXPECT_EQ(t.winners, select_winners(t.step_scores));
    for (size_t b = 0; b < t.winners.size(); ++b) {
      EXPECT_DOUBLE_EQ(t.winner_scores[b], t.step_scores.at({int64_t(b), t.winners[b]}));
    }
  }
}

TEST(Model, ZeroWeightsKeepCanvasEmpty) {
  auto c = tiny_config();
  c.timesteps = 3;
  OcraModel<double> model(c);
  for (auto& p : model.parameters().tensors()) {
    for (auto& v : p.mutable_data()) v = 0.0;
  }
  auto out = model.run_episode(tiny_images(c, 2, 7));
  for (double v : out.canvas.data()) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : out.cum_scores.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Model, SequencePositionReadsItsGlimpsePair) {
  auto c = tiny_config();
  c.sequence_slots = 5;
  c.timesteps = 12;
  OcraModel<double> model(c);
  auto out = model.run_episode(tiny_images(c, 2, 8));
  const auto& w = *model.parameters().find("sequence.readout.weight");
  const auto& bias = *model.parameters().find("sequence.readout.bias");
  // Position 3 (1-based) reads glimpses 7 and 8 (1-based).
  const auto& g7 = out.traces[6].step_scores;
  const auto& g8 = out.traces[7].step_scores;
  for (int64_t b = 0; b < 2; ++b) {
    for (int64_t o = 0; o < 3; ++o) {
      double want = bias.at({o});
      for (int64_t j = 0; j < 2; ++j) want += (g7.at({b, j}) + g8.at({b, j})) * w.at({j, o});
      EXPECT_NEAR(out.sequence_scores[2].at({b, o}), want, 1e-12);
    }
  }
  // Zero lengths leave only the bias.
  auto w_ij = *model.parameters().find("capsules.w_ij");
  for (auto& v : w_ij.mutable_data()) v = 0.0;
  for (const auto& pos : model.run_episode(tiny_images(c, 1, 9)).sequence_scores) {
    for (int64_t o = 0; o < 3; ++o) EXPECT_NEAR(pos.at({0, o}), bias.at({o}), 1e-15);
  }
}

TEST(Model, ReconstructionGradientReachesReadAttention) {
  auto c = tiny_config();
  c.timesteps = 2;
  OcraModel<double> model(c);
  auto images = tiny_images(c, 2, 10);
  auto out = model.run_episode(images);
  model.loss(out, images, target_counts<double>({{0}, {1}}, 2)).recon.backward();
  const auto& w = *model.parameters().find("read.attention.weight");
  double mag = 0;
  for (double g : w.grad()) mag += std::abs(g);
  EXPECT_GT(mag, 0.0);
}

TEST(Model, DeterministicForFixedSeed) {
  auto c = tiny_config();
  c.timesteps = 3;
  OcraModel<double> a(c), b(c);
  auto images = tiny_images(c, 2, 11);
  EXPECT_EQ(values(a.run_episode(images).canvas), values(b.run_episode(images).canvas));
  c.seed = 8;
  OcraModel<double> other(c);
  EXPECT_NE(values(a.run_episode(images).canvas), values(other.run_episode(images).canvas));
}

TEST(Model, FirstGlimpseCoversTheImage) {
  OcraModel<float> model(preset("multimnist-3glimpse"));
  auto out = model.run_episode(Tensor<float>::zeros({1, 36, 36}));
  auto p = attention_values(out.traces[0].read_params)[0];
  EXPECT_NEAR(p.g_x, 18.5, 1e-5);
  EXPECT_NEAR(p.g_y, 18.5, 1e-5);
  EXPECT_NEAR(p.delta, 35.0 / 17.0, 1e-5);
}

}  // namespace
}  // namespace ocra
