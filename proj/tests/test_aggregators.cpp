#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "shapelab/aggregators.hpp"
#include "shapelab/rng.hpp"
#include "shapelab/tensor.hpp"

using namespace shapelab;

namespace {

// Direct-summation oracle for the feature-wise aggregation, written with
// plain loops and no tensor machinery: y_d = sum_n x_nd e^{x_n.w_d} / sum_j e^{x_j.w_d}.
std::vector<double> attsets_feature_oracle(const std::vector<std::vector<double>>& x,
                                           const std::vector<std::vector<double>>& w) {
  const int n = static_cast<int>(x.size());
  const int d = static_cast<int>(x[0].size());
  std::vector<double> y(d, 0.0);
  for (int col = 0; col < d; ++col) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
      double act = 0.0;
      for (int k = 0; k < d; ++k) act += x[i][k] * w[k][col];
      const double e = std::exp(act);
      num += x[i][col] * e;
      den += e;
    }
    y[col] = num / den;
  }
  return y;
}

FeatureSet random_set(int n, int d, Rng& rng) {
  return FeatureSet(random_uniform({n, d}, -1.5, 1.5, rng, true));
}

FeatureSet permuted(const FeatureSet& set, const std::vector<int>& perm) {
  const int n = set.count(), d = set.width();
  std::vector<double> v(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) v[static_cast<std::size_t>(i) * d + j] = set.values(perm[i], j);
  return FeatureSet(Tensor::matrix(n, d, std::move(v)));
}

}  // namespace

TEST_CASE("attsets_feature basics") {
  Rng rng(21);
  SUBCASE("single element passes through exactly") {
    Tensor x = random_uniform({1, 5}, -3, 3, rng, true);
    auto params = AttentionParams::feature_wise(random_uniform({5, 5}, -2, 2, rng, true));
    Tensor y = attsets_feature(FeatureSet(x), params);
    CHECK(y.value() == x.value());
  }
  SUBCASE("zero weights reduce to the column mean") {
    Tensor x = random_uniform({4, 3}, -2, 2, rng);
    auto params = AttentionParams::feature_wise(Tensor::zeros({3, 3}));
    Tensor y = attsets_feature(FeatureSet(x), params);
    for (int j = 0; j < 3; ++j) {
      double m = 0.0;
      for (int i = 0; i < 4; ++i) m += x(i, j);
      CHECK(y[j] == doctest::Approx(m / 4).epsilon(1e-14));
    }
  }
  SUBCASE("matches the direct-summation oracle") {
    const std::vector<std::vector<double>> x = {{0.3, -1.2}, {0.9, 0.4}, {-0.5, 1.1}};
    const std::vector<std::vector<double>> w = {{0.7, -0.3}, {0.2, 0.5}};
    Tensor xt = Tensor::matrix(3, 2, {0.3, -1.2, 0.9, 0.4, -0.5, 1.1});
    Tensor wt = Tensor::matrix(2, 2, {0.7, -0.3, 0.2, 0.5});
    Tensor y = attsets_feature(FeatureSet(xt), AttentionParams::feature_wise(wt));
    auto expected = attsets_feature_oracle(x, w);
    for (int j = 0; j < 2; ++j) CHECK(y[j] == doctest::Approx(expected[j]).epsilon(1e-12));
  }
  SUBCASE("width mismatch rejected") {
    auto params = AttentionParams::feature_wise(Tensor::zeros({4, 4}));
    CHECK_THROWS_AS(attsets_feature(random_set(3, 3, rng), params), std::invalid_argument);
  }
}

TEST_CASE("attsets_element basics") {
  Rng rng(22);
  SUBCASE("single element passes through exactly") {
    Tensor x = random_uniform({1, 4}, -3, 3, rng);
    auto params = AttentionParams::element_wise(random_uniform({4, 1}, -2, 2, rng));
    Tensor y = attsets_element(FeatureSet(x), params);
    CHECK(y.value() == x.value());
  }
  SUBCASE("zero weights reduce to the column mean") {
    Tensor x = random_uniform({5, 3}, -2, 2, rng);
    auto params = AttentionParams::element_wise(Tensor::zeros({3, 1}));
    Tensor y = attsets_element(FeatureSet(x), params);
    for (int j = 0; j < 3; ++j) {
      double m = 0.0;
      for (int i = 0; i < 5; ++i) m += x(i, j);
      CHECK(y[j] == doctest::Approx(m / 5).epsilon(1e-14));
    }
  }
  SUBCASE("a dominating activation saturates to that row") {
    // Row activations 0 and 20: softmax weight of row 1 is ~1 - 2e-9.
    Tensor x = Tensor::matrix(2, 2, {1.0, -1.0, 0.5, 2.0});
    // w chosen so a = x.w gives a_1 - a_0 = 20.
    // With x rows (1,-1) and (0.5,2): w = (8, 8) -> a = (0, 20).
    Tensor w = Tensor::matrix(2, 1, {8.0, 8.0});
    Tensor y = attsets_element(FeatureSet(x), AttentionParams::element_wise(w));
    // Direct evaluation of the softmax-weighted sum.
    const double s1 = 1.0 / (1.0 + std::exp(-20.0));
    const double s0 = 1.0 - s1;
    CHECK(y[0] == doctest::Approx(s0 * 1.0 + s1 * 0.5).epsilon(1e-12));
    CHECK(std::abs(y[0] - 0.5) < 1e-6);
    CHECK(std::abs(y[1] - 2.0) < 1e-6);
  }
}

TEST_CASE("pooling baselines") {
  SUBCASE("single row returned unchanged by all three") {
    Tensor x = Tensor::matrix(1, 3, {4.0, -1.0, 0.5});
    FeatureSet set(x);
    CHECK(pool_max(set).value() == x.value());
    CHECK(pool_mean(set).value() == x.value());
    CHECK(pool_sum(set).value() == x.value());
  }
  SUBCASE("hand case") {
    FeatureSet set(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    CHECK(pool_max(set).value() == std::vector<double>{1, 1});
    CHECK(pool_mean(set).value() == std::vector<double>{0.5, 0.5});
    CHECK(pool_sum(set).value() == std::vector<double>{1, 1});
  }
}

TEST_CASE("permutation invariance across all aggregators") {
  Rng rng(23);
  const std::vector<AggregatorKind> kinds = {AggregatorKind::kAttSetsFeature,
                                             AggregatorKind::kAttSetsElement, AggregatorKind::kMax,
                                             AggregatorKind::kMean, AggregatorKind::kSum};
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(2, 7);
    const int d = rng.uniform_int(2, 6);
    FeatureSet set(random_uniform({n, d}, -2, 2, rng));
    auto fw = AttentionParams::feature_wise(random_uniform({d, d}, -1, 1, rng));
    auto ew = AttentionParams::element_wise(random_uniform({d, 1}, -1, 1, rng));
    for (auto kind : kinds) {
      const AttentionParams* params =
          kind == AggregatorKind::kAttSetsFeature ? &fw
          : kind == AggregatorKind::kAttSetsElement ? &ew : nullptr;
      Tensor base = aggregate(kind, set, params);
      for (int p = 0; p < 10; ++p) {
        Tensor out = aggregate(kind, permuted(set, rng.permutation(n)), params);
        for (int j = 0; j < d; ++j) CHECK(std::abs(out[j] - base[j]) < 1e-9);
      }
    }
  }
}

TEST_CASE("attention weights receive zero gradient at N=1 and nonzero at N>1") {
  Rng rng(24);
  SUBCASE("N=1: grad(W) is exactly zero and grad(x) exactly ones") {
    Tensor x = random_uniform({1, 6}, -2, 2, rng, true);
    Tensor w = random_uniform({6, 6}, -1, 1, rng, true);
    Tape tape;
    Tensor y = attsets_feature(FeatureSet(x), AttentionParams::feature_wise(w));
    tape.backward(sum(y));
    CHECK(w.grad() == std::vector<double>(36, 0.0));
    CHECK(x.grad() == std::vector<double>(6, 1.0));
  }
  SUBCASE("N=4: grad(W) has a nonzero entry") {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x = random_uniform({4, 5}, -2, 2, rng, true);
      Tensor w = random_uniform({5, 5}, -1, 1, rng, true);
      Tape tape;
      Tensor y = attsets_feature(FeatureSet(x), AttentionParams::feature_wise(w));
      tape.backward(sum(mul(y, y)));
      double linf = 0.0;
      for (double g : w.grad()) linf = std::max(linf, std::abs(g));
      CHECK(linf > 0.0);
    }
  }
}

TEST_CASE("attention output stays within the per-column hull of the set") {
  Rng rng(25);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(2, 6);
    const int d = rng.uniform_int(1, 5);
    Tensor x = random_uniform({n, d}, -3, 3, rng);
    FeatureSet set(x);
    auto fw = AttentionParams::feature_wise(random_uniform({d, d}, -1, 1, rng));
    auto ew = AttentionParams::element_wise(random_uniform({d, 1}, -1, 1, rng));
    for (Tensor y : {attsets_feature(set, fw), attsets_element(set, ew)}) {
      for (int j = 0; j < d; ++j) {
        double lo = x(0, j), hi = x(0, j);
        for (int i = 1; i < n; ++i) {
          lo = std::min(lo, x(i, j));
          hi = std::max(hi, x(i, j));
        }
        CHECK(y[j] >= lo - 1e-12);
        CHECK(y[j] <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("aggregator gradients pass grad_check") {
  Rng rng(26);
  Tensor x = random_uniform({4, 5}, -1.5, 1.5, rng, true);
  Tensor wf = random_uniform({5, 5}, -1, 1, rng, true);
  Tensor we = random_uniform({5, 1}, -1, 1, rng, true);
  auto check = [&](auto forward) {
    auto f = [&]() {
      Tensor y = forward();
      return mean(mul(y, y));
    };
    return grad_check(f, {x, wf, we}, 1e-5, 1e-4).pass;
  };
  CHECK(check([&]() { return attsets_feature(FeatureSet(x), AttentionParams::feature_wise(wf)); }));
  CHECK(check([&]() { return attsets_element(FeatureSet(x), AttentionParams::element_wise(we)); }));
  CHECK(check([&]() { return pool_mean(FeatureSet(x)); }));
  CHECK(check([&]() { return pool_sum(FeatureSet(x)); }));
  CHECK(check([&]() { return pool_max(FeatureSet(x)); }));
}
