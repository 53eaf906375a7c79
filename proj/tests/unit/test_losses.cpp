#include <cmath>

#include "ocra/error.hpp"
#include "ocra/losses.hpp"
#include "ocra/ops.hpp"
#include "support.hpp"

namespace ocra {
namespace {

using test::expect_gradients;
using test::param;
using test::random_tensor;
using test::values;

double margin_of(std::vector<double> scores, std::vector<double> targets) {
  const auto j = int64_t(scores.size());
  return classification_loss(Tensor<double>({1, j}, scores), Tensor<double>({1, j}, targets),
                             MarginOptions{})
      .item();
}

// Per-sample margin loss written out term by term.
double margin_oracle(const std::vector<double>& s, const std::vector<double>& t, double m,
                     double lambda) {
  double loss = 0;
  for (size_t j = 0; j < s.size(); ++j) {
    const double present = std::max(0.0, std::min(t[j], 1.0));
    const double absent = std::max(0.0, 1.0 - t[j]);
    loss += present * std::pow(std::max(0.0, (t[j] - m) - s[j]), 2);
    loss += lambda * absent * std::pow(std::max(0.0, s[j] - m), 2);
  }
  return loss;
}

TEST(Margin, HandEvaluatedExamples) {
  std::vector<double> s(10, 0.05), t(10, 0.0);
  s[3] = 0.95, t[3] = 1;
  EXPECT_DOUBLE_EQ(margin_of(s, t), 0.0);

  s[3] = 1.95, t[3] = 2;
  EXPECT_DOUBLE_EQ(margin_of(s, t), 0.0);

  std::vector<double> s2(10, 0.0), t2(10, 0.0);
  s2[0] = 0.95, t2[0] = 1, s2[6] = 0.3;
  EXPECT_NEAR(margin_of(s2, t2), 0.02, 1e-15);

  std::vector<double> s3(10, 0.0), t3(10, 0.0);
  s3[1] = 0.5, t3[1] = 1;
  EXPECT_NEAR(margin_of(s3, t3), 0.16, 1e-15);
}

TEST(Margin, BatchMeanOfOracle) {
  auto s = random_tensor({4, 10}, 1, 0.0, 2.0);
  auto t = target_counts<double>({{1, 2}, {3, 3}, {0, 9}, {5}}, 10);
  for (double lambda : {0.0, 0.25, 0.5, 1.0}) {
    double want = 0;
    for (int64_t b = 0; b < 4; ++b) {
      std::vector<double> sb, tb;
      for (int64_t j = 0; j < 10; ++j) sb.push_back(s.at({b, j})), tb.push_back(t.at({b, j}));
      want += margin_oracle(sb, tb, 0.1, lambda) / 4.0;
    }
    EXPECT_NEAR(classification_loss(s, t, MarginOptions{0.1, lambda}).item(), want, 1e-12);
  }
}

TEST(Margin, ZeroExactlyWhenEveryHingeClears) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(5), t(5);
    bool clear = true;
    for (size_t j = 0; j < 5; ++j) {
      t[j] = double(rng.uniform_int(0, 2));
      s[j] = rng.uniform(0.0, 2.2);
      if (t[j] > 0 && s[j] < t[j] - 0.1) clear = false;
      if (t[j] == 0 && s[j] > 0.1) clear = false;
    }
    const double loss = margin_of(s, t);
    EXPECT_GE(loss, 0.0);
    EXPECT_EQ(loss == 0.0, clear) << "trial " << trial;
  }
}

TEST(Margin, GradientAwayFromHinges) {
  // Scores chosen at least 0.05 away from every hinge point.
  Tensor<double> s({2, 4}, {0.5, 0.3, 1.5, 0.02, 0.75, 0.6, 0.0, 1.2}, true);
  auto t = target_counts<double>({{0, 2, 2}, {1, 3}}, 4);
  expect_gradients([&] { return classification_loss(s, t, MarginOptions{}); }, {s}, 1e-6);
}

TEST(Recon, IdentityZeroMaskAndClip) {
  auto image = random_tensor({1, 4, 4}, 1, 0.0, 1.0);
  EXPECT_DOUBLE_EQ(recon_loss(image, image, Tensor<double>(), false).item(), 0.0);

  auto canvas = random_tensor({1, 4, 4}, 2, -1.0, 1.0);
  double mean_sq = 0;
  for (double v : canvas.data()) mean_sq += v * v / 16.0;
  EXPECT_NEAR(recon_loss(canvas, image, Tensor<double>::zeros({1, 4, 4}), false).item(), mean_sq,
              1e-15);

  Tensor<double> over({1, 1, 1}, {1.4}), one({1, 1, 1}, {1.0});
  EXPECT_DOUBLE_EQ(recon_loss(over, one, Tensor<double>(), true).item(), 0.0);
  EXPECT_NEAR(recon_loss(over, one, Tensor<double>(), false).item(), 0.16, 1e-15);
  EXPECT_THROW(recon_loss(over, image, Tensor<double>(), true), DimensionError);
}

TEST(Recon, ZeroMaskPixelsIgnoreTheImage) {
  auto canvas = random_tensor({1, 6, 6}, 3, 0.0, 1.0);
  auto mask = random_tensor({1, 6, 6}, 4, 0.0, 1.0);
  auto m = mask.mutable_data();
  for (size_t i = 0; i < m.size(); i += 3) m[i] = 0.0;
  auto image = random_tensor({1, 6, 6}, 5, 0.0, 1.0);
  const double before = recon_loss(canvas, image, mask, true).item();
  auto px = image.mutable_data();
  for (size_t i = 0; i < px.size(); i += 3) px[i] = 1.0 - px[i];
  EXPECT_DOUBLE_EQ(recon_loss(canvas, image, mask, true).item(), before);
}

TEST(Recon, GradientThroughCanvasAndMask) {
  auto canvas = param({1, 3, 3}, 6, 0.05, 0.95);
  auto mask = param({1, 3, 3}, 7, 0.1, 0.9);
  auto image = random_tensor({1, 3, 3}, 8, 0.0, 1.0);
  expect_gradients([&] { return recon_loss(canvas, image, mask, true); }, {canvas, mask});
}

TEST(Mask, AveragesAndClips) {
  auto ones = Tensor<double>::full({1, 2, 4}, 1.0);
  for (double v : values(build_recon_mask<double>({ones}))) EXPECT_DOUBLE_EQ(v, 1.0);
  Tensor<double> left({1, 2, 4}, {1, 1, 0, 0, 1, 1, 0, 0});
  Tensor<double> right({1, 2, 4}, {0, 0, 1, 1, 0, 0, 1, 1});
  for (double v : values(build_recon_mask<double>({left, right}))) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_THROW(build_recon_mask<double>({}), ConfigError);
  auto fp = random_tensor({2, 5, 5}, 9, 0.0, 1.0);
  for (double v : values(build_recon_mask<double>({fp, fp, Tensor<double>::full({2, 5, 5}, 1.0)}))) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Total, WeightedSum) {
  auto c = Tensor<double>::scalar(0.1), r = Tensor<double>::scalar(0.01);
  EXPECT_NEAR(total_loss(c, r, 10.0).item(), 0.2, 1e-15);
  EXPECT_DOUBLE_EQ(total_loss(c, Tensor<double>::scalar(0.0), 10.0).item(), 0.1);

  auto canvas = param({1, 2, 2}, 10);
  auto image = random_tensor({1, 2, 2}, 11, 0.0, 1.0);
  total_loss(c, recon_loss(canvas, image, Tensor<double>(), false), 0.0).backward();
  for (double g : canvas.grad()) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(Predict, DuplicateThresholdAndTopTwo) {
  std::vector<double> s(10, 0.2);
  s[5] = 1.9;
  EXPECT_EQ(predict_labels(s, 2), (std::vector<int>{5, 5}));
  std::vector<double> s2(10, 0.3);
  s2[2] = 1.2, s2[7] = 0.9;
  EXPECT_EQ(predict_labels(s2, 2), (std::vector<int>{2, 7}));
  EXPECT_EQ(predict_labels(std::vector<double>(10, 0.4), 2), (std::vector<int>{0, 1}));
}

TEST(Predict, ThresholdIsStrict) {
  std::vector<double> s(10, 0.0);
  s[4] = 1.8, s[1] = 0.5;
  EXPECT_EQ(predict_labels(s, 2), (std::vector<int>{1, 4}));
  s[4] = std::nextafter(1.8, 2.0);
  EXPECT_EQ(predict_labels(s, 2), (std::vector<int>{4, 4}));
}

TEST(Predict, SingleObjectAndBadCount) {
  EXPECT_EQ(predict_labels({0.1, 2.5, 0.3}, 1), (std::vector<int>{1}));
  EXPECT_THROW(predict_labels({0.1, 0.2}, 3), ContractError);
}

TEST(Predict, PairIsScaleInvariantBelowThreshold) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(10);
    for (auto& v : s) v = rng.uniform(0.0, 0.9);
    const double k = rng.uniform(0.1, 1.9);
    std::vector<double> scaled(s);
    for (auto& v : scaled) v *= k;
    EXPECT_EQ(predict_labels(s, 2), predict_labels(scaled, 2));
  }
}

TEST(ImageError, MultisetComparison) {
  EXPECT_EQ(image_level_error({3, 8}, {8, 3}), 0);
  EXPECT_EQ(image_level_error({3, 3}, {3, 8}), 1);
  EXPECT_EQ(image_level_error({5, 5}, {5, 5}), 0);
  EXPECT_THROW(image_level_error({1}, {1, 2}), ContractError);
}

TEST(Targets, CountsSumToObjects) {
  auto t = target_counts<double>({{2, 2}, {0, 9}}, 10);
  EXPECT_DOUBLE_EQ(t.at({0, 2}), 2.0);
  double total = 0;
  for (double v : t.data()) total += v;
  EXPECT_DOUBLE_EQ(total, 4.0);
  EXPECT_THROW(target_counts<double>({{10}}, 10), ContractError);
}

}  // namespace
}  // namespace ocra
