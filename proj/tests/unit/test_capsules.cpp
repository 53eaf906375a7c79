#include <cmath>

#include "ocra/capsules.hpp"
#include "ocra/error.hpp"
#include "ocra/ops.hpp"
#include "support.hpp"

namespace ocra {
namespace {

using test::expect_gradients;
using test::param;
using test::random_tensor;
using test::values;

using Vec = std::vector<double>;

// Plain-loop routing for a single image, following the iteration order
// c = maxmin(b); d = squash(sum_i c_ij u_j|i); b += u_j|i . d_j (skipped last).
struct RoutingOracle {
  std::vector<std::vector<Vec>> u;     // [I][J] prediction vectors
  std::vector<std::vector<Vec>> c_hist;  // per iteration [I][J] flattened rows
  std::vector<Vec> d;                  // [J]

  RoutingOracle(const Tensor<double>& primary, const Tensor<double>& w, int iterations) {
    const int64_t caps = primary.dim(1), dp = primary.dim(2), classes = w.dim(1), dout = w.dim(2);
    u.assign(size_t(caps), std::vector<Vec>(size_t(classes), Vec(size_t(dout), 0.0)));
    for (int64_t i = 0; i < caps; ++i)
      for (int64_t j = 0; j < classes; ++j)
        for (int64_t o = 0; o < dout; ++o)
          for (int64_t k = 0; k < dp; ++k)
            u[size_t(i)][size_t(j)][size_t(o)] += w.at({i, j, o, k}) * primary.at({0, i, k});
    std::vector<Vec> b(size_t(caps), Vec(size_t(classes), 0.0));
    for (int r = 0; r < iterations; ++r) {
      std::vector<Vec> c(size_t(caps), Vec(size_t(classes), 0.0));
      for (size_t i = 0; i < size_t(caps); ++i) {
        const double lo = *std::min_element(b[i].begin(), b[i].end());
        const double hi = *std::max_element(b[i].begin(), b[i].end());
        for (size_t j = 0; j < size_t(classes); ++j) {
          c[i][j] = hi > lo ? 0.01 + 0.99 * (b[i][j] - lo) / (hi - lo) : 0.505;
        }
      }
      c_hist.push_back(c);
      d.assign(size_t(classes), Vec(size_t(dout), 0.0));
      for (size_t j = 0; j < size_t(classes); ++j) {
        Vec s(size_t(dout), 0.0);
        for (size_t i = 0; i < size_t(caps); ++i)
          for (size_t o = 0; o < size_t(dout); ++o) s[o] += c[i][j] * u[i][j][o];
        double n2 = 0;
        for (double x : s) n2 += x * x;
        const double f = n2 > 0 ? std::sqrt(n2) / (1 + n2) : 0.0;
        for (size_t o = 0; o < size_t(dout); ++o) d[j][o] = f * s[o];
      }
      if (r + 1 == iterations) break;
      for (size_t i = 0; i < size_t(caps); ++i)
        for (size_t j = 0; j < size_t(classes); ++j)
          for (size_t o = 0; o < size_t(dout); ++o) b[i][j] += u[i][j][o] * d[j][o];
    }
  }
};

// Three primary capsules; the first two predict the same class-0 vector, the
// third predicts its opposite. Class 1 predictions are small and shared.
void agreement_instance(Tensor<double>& primary, Tensor<double>& w) {
  primary = Tensor<double>({1, 3, 2}, {1, 0, 1, 0, 1, 0});
  std::vector<double> wv(3 * 2 * 2 * 2, 0.0);
  auto at = [&](int i, int j, int o, int k) -> double& { return wv[size_t(((i * 2 + j) * 2 + o) * 2 + k)]; };
  at(0, 0, 0, 0) = 1.0;
  at(1, 0, 0, 0) = 1.0;
  at(2, 0, 0, 0) = -1.0;
  for (int i = 0; i < 3; ++i) at(i, 1, 1, 0) = 0.3;
  w = Tensor<double>({3, 2, 2, 2}, wv);
}

TEST(Primary, ZeroStateShapeAndGradient) {
  Linear<double> map{random_tensor({16, 320}, 1), Tensor<double>::zeros({320})};
  auto caps = primary_from_hidden(Tensor<double>::zeros({2, 16}), map, 40, 8);
  EXPECT_EQ(caps.shape(), (Shape{2, 40, 8}));
  for (double v : caps.data()) EXPECT_DOUBLE_EQ(v, 0.0);
  EXPECT_THROW(primary_from_hidden(Tensor<double>::zeros({2, 16}), map, 40, 7), DimensionError);

  auto h = param({2, 5}, 2), w = param({5, 6}, 3), b = param({6}, 4);
  auto target = random_tensor({2, 3, 2}, 5);
  expect_gradients([&] { return sum(mul(primary_from_hidden(h, Linear<double>{w, b}, 3, 2), target)); },
                   {h, w, b});
}

TEST(Squash, LengthsAndDirection) {
  EXPECT_EQ(values(squash(Tensor<double>::zeros({1, 3}))), (Vec{0, 0, 0}));
  auto one = squash(Tensor<double>({1, 2}, {0.6, 0.8}));
  EXPECT_NEAR(vector_length(one).item(), 0.5, 1e-15);
  auto three = squash(Tensor<double>({1, 3}, {0.0, 3.0, 0.0}));
  EXPECT_NEAR(three.at({0, 1}), 0.9, 1e-15);
  auto v = random_tensor({5, 4}, 6, -3, 3);
  auto s = squash(v);
  auto len_v = values(vector_length(v)), len_s = values(vector_length(s));
  for (size_t r = 0; r < 5; ++r) {
    EXPECT_NEAR(len_s[r], len_v[r] * len_v[r] / (1 + len_v[r] * len_v[r]), 1e-12);
    for (int k = 0; k < 4; ++k) {
      EXPECT_NEAR(s.at({int64_t(r), k}) / len_s[r], v.at({int64_t(r), k}) / len_v[r], 1e-12);
    }
  }
}

TEST(Squash, GradientMatchesFiniteDifferences) {
  auto v = param({4, 3}, 7, -2, 2);
  auto w = random_tensor({4, 3}, 8);
  expect_gradients([&] { return sum(mul(squash(v), w)); }, {v});
  expect_gradients([&] { return sum(mul(vector_length(v), random_tensor({4}, 9))); }, {v});
}

TEST(MaxMin, HandValuesAndDegenerateRow) {
  auto c = values(maxmin_normalize(Tensor<double>({3}, {0, 1, 2})));
  EXPECT_NEAR(c[0], 0.01, 1e-15);
  EXPECT_NEAR(c[1], 0.505, 1e-15);
  EXPECT_NEAR(c[2], 1.0, 1e-15);
  for (double x : values(maxmin_normalize(Tensor<double>({3}, {5, 5, 5})))) EXPECT_DOUBLE_EQ(x, 0.505);
}

TEST(MaxMin, MonotoneAndHitsBothBounds) {
  auto b = random_tensor({20, 7}, 10, -5, 5);
  auto c = maxmin_normalize(b);
  for (int64_t r = 0; r < 20; ++r) {
    double lo = 2, hi = -1;
    for (int64_t j = 0; j < 7; ++j) {
      lo = std::min(lo, c.at({r, j}));
      hi = std::max(hi, c.at({r, j}));
      for (int64_t k = 0; k < 7; ++k) {
        if (b.at({r, j}) < b.at({r, k})) {
          EXPECT_LT(c.at({r, j}), c.at({r, k}));
        }
      }
    }
    EXPECT_DOUBLE_EQ(lo, 0.01);
    EXPECT_DOUBLE_EQ(hi, 1.0);
  }
}

TEST(MaxMin, GradientMatchesFiniteDifferences) {
  auto b = param({3, 5}, 11, -2, 2);
  auto w = random_tensor({3, 5}, 12);
  expect_gradients([&] { return sum(mul(maxmin_normalize(b, 0.01, 1.0), w)); }, {b});
}

TEST(Routing, PredictMixAgreementGradients) {
  auto p = param({2, 3, 2}, 1), w = param({3, 4, 5, 2}, 2);
  expect_gradients([&] { return sum(mul(capsule_predict(p, w), random_tensor({2, 3, 4, 5}, 3))); },
                   {p, w});
  auto c = param({2, 3, 4}, 4), u = param({2, 3, 4, 5}, 5);
  expect_gradients([&] { return sum(mul(capsule_mix(c, u), random_tensor({2, 4, 5}, 6))); }, {c, u});
  auto d = param({2, 4, 5}, 7);
  expect_gradients([&] { return sum(mul(agreement(u, d), random_tensor({2, 3, 4}, 8))); }, {u, d});
}

TEST(Routing, RejectsZeroIterations) {
  RoutingOptions o;
  o.iterations = 0;
  EXPECT_THROW(dynamic_routing(random_tensor({1, 3, 2}, 1), random_tensor({3, 2, 4, 2}, 2), o),
               ConfigError);
}

TEST(Routing, MatchesScriptedOracle) {
  auto primary = random_tensor({1, 6, 4}, 21, -1, 1);
  auto w = random_tensor({6, 5, 3, 4}, 22, -1, 1);
  for (int iterations : {1, 2, 3, 5}) {
    RoutingOptions o;
    o.iterations = iterations;
    auto bundle = dynamic_routing(primary, w, o);
    RoutingOracle oracle(primary, w, iterations);
    ASSERT_EQ(bundle.coupling_history.size(), size_t(iterations));
    for (int r = 0; r < iterations; ++r) {
      for (int64_t i = 0; i < 6; ++i)
        for (int64_t j = 0; j < 5; ++j)
          EXPECT_NEAR(bundle.coupling_history[size_t(r)].at({0, i, j}),
                      oracle.c_hist[size_t(r)][size_t(i)][size_t(j)], 1e-12);
    }
    for (int64_t j = 0; j < 5; ++j)
      for (int64_t o2 = 0; o2 < 3; ++o2)
        EXPECT_NEAR(bundle.objects.at({0, j, o2}), oracle.d[size_t(j)][size_t(o2)], 1e-12);
  }
}

TEST(Routing, OneIterationIsUniformCouplingClosedForm) {
  auto primary = random_tensor({2, 5, 3}, 31, -2, 2);
  auto w = random_tensor({5, 4, 6, 3}, 32, -1, 1);
  RoutingOptions o;
  o.iterations = 1;
  auto bundle = dynamic_routing(primary, w, o);
  for (double c : bundle.couplings.data()) EXPECT_DOUBLE_EQ(c, 0.505);
  for (int64_t b = 0; b < 2; ++b) {
    for (int64_t j = 0; j < 4; ++j) {
      Vec s(6, 0.0);
      for (int64_t i = 0; i < 5; ++i)
        for (int64_t o2 = 0; o2 < 6; ++o2)
          for (int64_t k = 0; k < 3; ++k) s[size_t(o2)] += 0.505 * w.at({i, j, o2, k}) * primary.at({b, i, k});
      double n2 = 0;
      for (double x : s) n2 += x * x;
      for (int64_t o2 = 0; o2 < 6; ++o2) {
        EXPECT_NEAR(bundle.objects.at({b, j, o2}), std::sqrt(n2) / (1 + n2) * s[size_t(o2)], 1e-12);
      }
    }
  }
}

TEST(Routing, SingleCapsuleKeepsPredictionDirection) {
  auto primary = random_tensor({1, 1, 3}, 41);
  auto w = random_tensor({1, 1, 4, 3}, 42);
  auto bundle = dynamic_routing(primary, w, RoutingOptions{});
  auto u = values(bundle.predictions), d = values(bundle.objects);
  double nu = 0, nd = 0;
  for (size_t k = 0; k < 4; ++k) nu += u[k] * u[k], nd += d[k] * d[k];
  for (size_t k = 0; k < 4; ++k) EXPECT_NEAR(d[k] / std::sqrt(nd), u[k] / std::sqrt(nu), 1e-12);
}

TEST(Routing, AgreementConcentratesCouplings) {
  Tensor<double> primary, w;
  agreement_instance(primary, w);
  RoutingOptions o;
  o.iterations = 3;
  auto bundle = dynamic_routing(primary, w, o);
  const auto& c = bundle.couplings;
  EXPECT_GT(c.at({0, 0, 0}), c.at({0, 2, 0}));
  EXPECT_GT(c.at({0, 1, 0}), c.at({0, 2, 0}));
  double previous = -1;
  for (const auto& hist : bundle.coupling_history) {
    const double gap = std::min(hist.at({0, 0, 0}), hist.at({0, 1, 0})) - hist.at({0, 2, 0});
    EXPECT_GE(gap, previous);
    previous = gap;
  }
  RoutingOracle oracle(primary, w, 3);
  EXPECT_NEAR(c.at({0, 2, 0}), oracle.c_hist.back()[2][0], 1e-12);
}

TEST(Routing, CouplingBoundsAndLengthsHoldOnRandomInputs) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto primary = random_tensor({3, 8, 4}, 100 + seed, -3, 3);
    auto w = random_tensor({8, 6, 5, 4}, 200 + seed, -2, 2);
    auto bundle = dynamic_routing(primary, w, RoutingOptions{});
    for (const auto& hist : bundle.coupling_history) {
      for (double c : hist.data()) {
        EXPECT_GE(c, 0.01);
        EXPECT_LE(c, 1.0);
      }
    }
    const auto& c = bundle.couplings;
    for (int64_t b = 0; b < 3; ++b) {
      for (int64_t i = 0; i < 8; ++i) {
        double lo = 2, hi = -1;
        for (int64_t j = 0; j < 6; ++j) lo = std::min(lo, c.at({b, i, j})), hi = std::max(hi, c.at({b, i, j}));
        if (hi > lo) {
          EXPECT_DOUBLE_EQ(lo, 0.01);
          EXPECT_DOUBLE_EQ(hi, 1.0);
        }
      }
    }
    for (double s : values(capsule_scores(bundle.objects))) {
      EXPECT_GE(s, 0.0);
      EXPECT_LT(s, 1.0);
    }
  }
}

TEST(Routing, FullGradientMatchesFiniteDifferences) {
  auto primary = param({2, 4, 3}, 51);
  auto w = param({4, 3, 5, 3}, 52);
  auto target = random_tensor({2, 3, 5}, 53);
  RoutingOptions o;
  o.gradient = RoutingGradient::kFull;
  expect_gradients([&] { return sum(mul(dynamic_routing(primary, w, o).objects, target)); },
                   {primary, w}, 1e-4);
}

TEST(Routing, DetachedGradientTreatsCouplingsAsConstants) {
  auto primary = param({2, 4, 3}, 61);
  auto w = param({4, 3, 5, 3}, 62);
  auto target = random_tensor({2, 3, 5}, 63);
  RoutingOptions o;
  Tensor<double> frozen;
  {
    NoGradGuard guard;
    frozen = dynamic_routing(primary, w, o).couplings;
  }
  // Analytic detached gradient vs finite differences of the frozen-coupling map.
  primary.zero_grad();
  w.zero_grad();
  sum(mul(dynamic_routing(primary, w, o).objects, target)).backward();
  auto g_primary = values(Tensor<double>({int64_t(primary.numel())},
                                         {primary.grad().begin(), primary.grad().end()}));
  auto g_w = Vec(w.grad().begin(), w.grad().end());
  auto frozen_loss = [&] {
    return sum(mul(squash(capsule_mix(frozen, capsule_predict(primary, w))), target));
  };
  primary.zero_grad();
  w.zero_grad();
  frozen_loss().backward();
  expect_gradients(frozen_loss, {primary, w}, 1e-6);
  for (size_t i = 0; i < g_primary.size(); ++i) EXPECT_NEAR(g_primary[i], primary.grad()[i], 1e-12);
  for (size_t i = 0; i < g_w.size(); ++i) EXPECT_NEAR(g_w[i], w.grad()[i], 1e-12);

  RoutingOptions one;
  one.iterations = 1;
  expect_gradients([&] { return sum(mul(dynamic_routing(primary, w, one).objects, target)); },
                   {primary, w}, 1e-6);
}

TEST(Scores, ZeroAndHalf) {
  for (double s : values(capsule_scores(Tensor<double>::zeros({1, 3, 4})))) EXPECT_DOUBLE_EQ(s, 0.0);
  auto unit = squash(Tensor<double>({1, 1, 2}, {1.0, 0.0}));
  EXPECT_NEAR(capsule_scores(unit).item(), 0.5, 1e-15);
}

TEST(Winner, ArgmaxAndLowestIndexTie) {
  Tensor<double> s({2, 10}, {0, 0, 0, 0, 0.9, 0, 0, 0, 0, 0,  //
                             0, 0, 0.7, 0, 0, 0, 0, 0.7, 0, 0});
  EXPECT_EQ(select_winners(s), (std::vector<int>{4, 2}));
  auto objects = random_tensor({2, 10, 16}, 70, 0.1, 1.0);
  auto flat = values(mask_winner(objects, select_winners(s)));
  ASSERT_EQ(flat.size(), size_t(2 * 160));
  for (size_t k = 0; k < 160; ++k) {
    const bool keep = k >= 64 && k < 80;
    EXPECT_EQ(flat[k] != 0.0, keep) << k;
  }
}

TEST(Winner, GradientOnlyThroughWinnerSlots) {
  auto objects = param({2, 4, 3}, 80);
  const std::vector<int> winners{1, 3};
  auto w = random_tensor({2, 12}, 81);
  expect_gradients([&] { return sum(mul(mask_winner(objects, winners), w)); }, {objects});
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t j = 0; j < 4; ++j)
      for (int64_t k = 0; k < 3; ++k) {
        const double g = objects.grad()[size_t((b * 4 + j) * 3 + k)];
        if (j == winners[size_t(b)]) {
          EXPECT_NE(g, 0.0);
        } else {
          EXPECT_EQ(g, 0.0);
        }
      }
}

}  // namespace
}  // namespace ocra
