#include <gtest/gtest.h>

#include "common.hpp"

using namespace xea;
using xea::testing::random_mlp;
using xea::testing::random_vector;

namespace {

MlpModel linear_model(std::vector<double> w, double b = 0.0) {
  MlpModel m = init_mlp(w.size(), {}, 1);
  m.layers[0].weights = std::move(w);
  m.layers[0].biases = {b};
  m.trained = true;
  return m;
}

ExplainerConfig logit_cfg(std::size_t dim) {
  ExplainerConfig c;
  c.output = OutputSpace::logit;
  c.shap_background = {std::vector<double>(dim, 0.0)};
  return c;
}

// Bias-free ReLU network.
MlpModel bias_free(std::size_t in, std::vector<std::size_t> hidden, std::uint64_t seed) {
  auto m = init_mlp(in, hidden, seed);
  m.trained = true;
  return m;
}

// Independent Shapley oracle: average marginal contribution over every
// permutation (F! orderings), no subset weights involved.
std::vector<double> shapley_by_permutations(const std::function<double(const std::vector<double>&)>& f,
                                            const std::vector<double>& x,
                                            const std::vector<std::vector<double>>& background) {
  const std::size_t n = x.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<double> phi(n, 0.0);
  double count = 0;
  do {
    for (const auto& b : background) {
      auto z = b;
      double prev = f(z);
      for (auto j : perm) {
        z[j] = x[j];
        const double cur = f(z);
        phi[j] += cur - prev;
        prev = cur;
      }
    }
    count += static_cast<double>(background.size());
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (auto& p : phi) p /= count;
  return phi;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(IntegratedGradients, ZeroPath) {
  const auto& m = xea::testing::small_trained_mlp();
  ExplainerConfig cfg;
  const auto x = random_vector(64, 1);
  cfg.baseline = x;
  for (double r : integrated_gradients(m, x, cfg).values) EXPECT_EQ(r, 0.0);
}

TEST(IntegratedGradients, LinearLogitAnyM) {
  const auto m = linear_model({2, 3});
  for (std::size_t steps : {1, 2, 7, 64}) {
    auto cfg = logit_cfg(2);
    cfg.ig_steps = steps;
    const auto a = integrated_gradients(m, std::vector<double>{1, 1}, cfg);
    EXPECT_NEAR(a.values[0], 2.0, 1e-12);
    EXPECT_NEAR(a.values[1], 3.0, 1e-12);
  }
}

TEST(IntegratedGradients, CompletenessGapShrinksWithSteps) {
  // ReLU kinks make the midpoint rule first order in 1/m.
  const auto& m = xea::testing::small_trained_mlp();
  const auto ds = xea::testing::desk_dataset(20, 13);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t steps : {16, 64, 256, 1024}) {
    ExplainerConfig cfg;
    cfg.ig_steps = steps;
    double total = 0;
    for (const auto& x : ds.rows) total += integrated_gradients(m, x, cfg).completeness_gap;
    EXPECT_LT(total, prev) << steps;
    prev = total;
  }
  ExplainerConfig cfg;
  cfg.ig_steps = 4096;
  for (const auto& x : ds.rows) {
    const auto a = integrated_gradients(m, x, cfg);
    EXPECT_LE(a.completeness_gap, 1e-3 * std::abs(a.output_value - a.reference_value) + 1e-6);
  }
}

TEST(IntegratedGradients, Errors) {
  const auto& m = xea::testing::small_trained_mlp();
  ExplainerConfig cfg;
  cfg.ig_steps = 0;
  EXPECT_THROW(integrated_gradients(m, random_vector(64, 1), cfg), ArgumentError);
  EXPECT_THROW(integrated_gradients(m, random_vector(63, 1), {}), ArgumentError);
  cfg = {};
  cfg.baseline = {1.0};
  EXPECT_THROW(integrated_gradients(m, random_vector(64, 1), cfg), ArgumentError);
  auto untrained = init_mlp(3, {2}, 1);
  EXPECT_THROW(integrated_gradients(untrained, random_vector(3, 1), {}), PreconditionError);
}

TEST(IntegratedGradients, SymmetricFeatures) {
  // Duplicate input columns with identical weights get identical attributions.
  auto m = random_mlp(4, {5}, 12);
  for (std::size_t o = 0; o < 5; ++o) m.layers[0].w(o, 3) = m.layers[0].w(o, 2);
  const std::vector<double> x{0.3, -0.2, 0.7, 0.7};
  const auto a = integrated_gradients(m, x, {});
  EXPECT_DOUBLE_EQ(a.values[2], a.values[3]);
}

TEST(Lrp, LinearProportionalSplit) {
  const std::vector<double> w{0.5, -1.5, 2.0};
  const auto m = linear_model(w);
  const std::vector<double> x{1.0, 0.4, 0.8};
  const auto cfg = logit_cfg(3);
  const auto a = eps_lrp(m, x, cfg);
  // z = 1.5 > 0, so the stabiliser adds +eps to the denominator
  const double shrink = 1.5 / (1.5 + cfg.lrp_epsilon);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.values[i], w[i] * x[i] * shrink, 1e-12);
  EXPECT_TRUE(std::isnan(a.completeness_gap));
}

TEST(Lrp, ZeroInputZeroBias) {
  const auto m = bias_free(5, {4, 3}, 2);
  for (double r : eps_lrp(m, std::vector<double>(5, 0.0), {}).values) EXPECT_EQ(r, 0.0);
}

TEST(Lrp, BiasFreeReluEqualsGradientTimesInput) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto m = bias_free(6, {5, 4}, 30 + s);
    const auto x = random_vector(6, 40 + s, -1, 1);
    auto cfg = logit_cfg(6);
    cfg.lrp_epsilon = 1e-12;
    const auto a = eps_lrp(m, x, cfg);
    const auto g = input_gradient(m, x, OutputSpace::logit);
    double scale = 1e-12;
    for (std::size_t i = 0; i < 6; ++i) scale = std::max(scale, std::abs(g[i] * x[i]));
    for (std::size_t i = 0; i < 6; ++i) EXPECT_LE(std::abs(a.values[i] - g[i] * x[i]) / scale, 1e-6);
  }
}

TEST(DeepLift, BaselineGivesZero) {
  const auto& m = xea::testing::small_trained_mlp();
  const auto x = random_vector(64, 5);
  ExplainerConfig cfg;
  cfg.baseline = x;
  for (double r : deeplift(m, x, cfg).values) EXPECT_EQ(r, 0.0);
}

TEST(DeepLift, LinearMatchesIg) {
  const auto m = linear_model({2, 3});
  const std::vector<double> x{0.7, -1.2};
  const auto d = deeplift(m, x, logit_cfg(2));
  EXPECT_NEAR(d.values[0], 1.4, 1e-12);
  EXPECT_NEAR(d.values[1], -3.6, 1e-12);
  const auto ig = integrated_gradients(m, x, logit_cfg(2));
  EXPECT_NEAR(d.values[0], ig.values[0], 1e-12);
  EXPECT_NEAR(d.values[1], ig.values[1], 1e-12);
}

TEST(DeepLift, CompletenessOnTrainedModel) {
  const auto& m = xea::testing::small_trained_mlp();
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = deeplift(m, random_vector(64, s), {});
    EXPECT_LE(a.completeness_gap, 1e-6 * std::max(1.0, std::abs(a.output_value - a.reference_value)));
  }
}

TEST(ShapExact, ConstantScorer) {
  ExplainerConfig cfg;
  cfg.shap_background = {random_vector(5, 1), random_vector(5, 2)};
  const auto a = shap_exact([](std::span<const double>) { return 0.3; }, random_vector(5, 3), cfg);
  for (double r : a.values) EXPECT_EQ(r, 0.0);
  EXPECT_EQ(a.completeness_gap, 0.0);
}

TEST(ShapExact, TwoFeatureLinear) {
  const auto m = linear_model({2, 3});
  const std::vector<double> x{0.4, -0.9};
  const auto a = shap_exact(m, x, logit_cfg(2));
  EXPECT_NEAR(a.values[0], 0.8, 1e-12);
  EXPECT_NEAR(a.values[1], -2.7, 1e-12);
}

TEST(ShapExact, MatchesPermutationOracle) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto m = random_mlp(6, {5}, 50 + s);
    ExplainerConfig cfg;
    cfg.shap_background = {random_vector(6, 60 + s), random_vector(6, 70 + s)};
    const auto x = random_vector(6, 80 + s);
    const auto a = shap_exact(m, x, cfg);
    const auto phi = shapley_by_permutations([&](const std::vector<double>& z) { return predict(m, z); }, x,
                                             cfg.shap_background);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(a.values[i], phi[i], 1e-12);
  }
}

TEST(ShapExact, LocalAccuracy) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t F = 2 + s % 9;
    const auto m = random_mlp(F, {6, 4}, 90 + s);
    ExplainerConfig cfg;
    cfg.shap_background = {random_vector(F, 1), random_vector(F, 2), random_vector(F, 3)};
    const auto a = shap_exact(m, random_vector(F, 100 + s), cfg);
    EXPECT_LE(a.completeness_gap, 1e-9);
  }
}

TEST(ShapExact, TooManyFeatures) {
  ExplainerConfig cfg;
  cfg.shap_background = {std::vector<double>(15, 0.0)};
  EXPECT_THROW(shap_exact([](std::span<const double>) { return 0.0; }, std::vector<double>(15, 1.0), cfg),
               CapabilityError);
  cfg.shap_background.clear();
  EXPECT_THROW(shap_exact([](std::span<const double>) { return 0.0; }, std::vector<double>(3, 1.0), cfg),
               ArgumentError);
}

TEST(ShapSampled, ConvergesToExact) {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const std::size_t F = 6 + s;
    const auto m = random_mlp(F, {6}, 110 + s);
    ExplainerConfig cfg;
    cfg.shap_background = {random_vector(F, 1), random_vector(F, 2)};
    cfg.shap_samples = 20000;
    cfg.seed = s;
    const auto x = random_vector(F, 120 + s);
    const auto exact = shap_exact(m, x, cfg);
    const auto est = shap_sampled(m, x, cfg);
    double scale = 1e-12, worst = 0;
    for (std::size_t i = 0; i < F; ++i) {
      scale = std::max(scale, std::abs(exact.values[i]));
      worst = std::max(worst, std::abs(exact.values[i] - est.values[i]));
    }
    EXPECT_LE(worst, 0.02 * scale);
  }
}

TEST(ShapSampled, TelescopesWithOnePermutation) {
  const auto m = random_mlp(7, {5}, 3);
  ExplainerConfig cfg;
  cfg.shap_background = {random_vector(7, 9)};
  cfg.shap_samples = 1;
  const auto x = random_vector(7, 10);
  const auto a = shap_sampled(m, x, cfg);
  EXPECT_NEAR(sum(a.values), predict(m, x) - predict(m, cfg.shap_background[0]), 1e-15);
}

TEST(ShapSampled, DeterministicAndOracleSpace) {
  const auto m = random_mlp(7, {5}, 3);
  ExplainerConfig cfg;
  cfg.shap_background = {random_vector(7, 9), random_vector(7, 8)};
  cfg.seed = 4;
  const auto x = random_vector(7, 10);
  EXPECT_EQ(shap_sampled(m, x, cfg).values, shap_sampled(m, x, cfg).values);
  cfg.seed = 5;
  const auto other = shap_sampled(m, x, cfg);
  ScoreOracle oracle([&](std::span<const double> z) { return predict(m, z); });
  cfg.output = OutputSpace::logit;  // ignored for oracles
  const auto via_oracle = shap_sampled(oracle, x, cfg);
  EXPECT_EQ(via_oracle.values, other.values);
  EXPECT_EQ(via_oracle.output, OutputSpace::score);
  cfg.shap_samples = 0;
  EXPECT_THROW(shap_sampled(m, x, cfg), ArgumentError);
}

TEST(AllMethods, AgreeOnLinearModel) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto w = random_vector(8, 200 + s, -2, 2);
    const auto m = linear_model(w);
    const auto x = random_vector(8, 300 + s, -1, 1);
    auto cfg = logit_cfg(8);
    cfg.shap_samples = 2;
    cfg.lrp_epsilon = 1e-9;  // the stabiliser shrinks LRP by z / (z + eps)
    const auto ig = integrated_gradients(m, x, cfg).values;
    for (auto method : {ExplainMethod::eps_lrp, ExplainMethod::deeplift, ExplainMethod::shap_exact,
                        ExplainMethod::shap_sampled}) {
      const auto r = explain(method, m, x, cfg).values;
      for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(r[i], ig[i], 1e-6) << to_string(method);
    }
  }
}

TEST(AllMethods, NullPlayer) {
  auto m = random_mlp(5, {4}, 77);
  for (std::size_t o = 0; o < 4; ++o) m.layers[0].w(o, 2) = 0.0;
  ExplainerConfig cfg;
  cfg.shap_background = {random_vector(5, 1), random_vector(5, 2)};
  const auto x = random_vector(5, 3);
  for (auto method : {ExplainMethod::integrated_gradients, ExplainMethod::eps_lrp, ExplainMethod::deeplift,
                      ExplainMethod::shap_exact, ExplainMethod::shap_sampled}) {
    EXPECT_EQ(explain(method, m, x, cfg).values[2], 0.0) << to_string(method);
  }
}

TEST(Ranking, ByMagnitude) {
  EXPECT_EQ(rank_features(std::vector<double>{0.1, -0.9, 0.5}), (FeatureRanking{1, 2, 0}));
  EXPECT_EQ(rank_features(std::vector<double>{0.2, 0.2, -0.2, 0.2}), (FeatureRanking{0, 1, 2, 3}));
  EXPECT_THROW(rank_features(std::vector<double>{0.1, std::nan("")}), ArgumentError);
}

TEST(Ranking, SortedPermutation) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto v = random_vector(20, s, -1, 1);
    v[3] = v[7];  // a tie
    const auto r = rank_features(v);
    std::vector<std::size_t> seen(r);
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < seen.size(); ++i) ASSERT_EQ(seen[i], i);
    for (std::size_t k = 0; k + 1 < r.size(); ++k) {
      const double a = std::abs(v[r[k]]), b = std::abs(v[r[k + 1]]);
      ASSERT_TRUE(a > b || (a == b && r[k] < r[k + 1]));
    }
  }
}

TEST(Dump, CsvRoundTrip) {
  const auto& m = xea::testing::small_trained_mlp();
  std::vector<Attribution> attrs;
  for (std::uint64_t s = 0; s < 3; ++s) attrs.push_back(integrated_gradients(m, random_vector(64, s), {}));
  std::vector<std::string> names;
  const auto schema = make_schema(default_widths());
  for (const auto& f : schema.features()) names.push_back(f.name);
  std::stringstream io;
  write_attributions_csv(io, attrs, names);
  const auto back = read_attributions_csv(io);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(back[s].values, attrs[s].values);
  const auto diag = diagnostics_json(attrs);
  EXPECT_EQ(diag["method"], "ig");
  EXPECT_EQ(diag["n_samples"], 3);

  std::istringstream bad("feature_index,value\n");
  EXPECT_THROW(read_attributions_csv(bad), FormatError);
}

TEST(Dump, MethodNames) {
  for (auto m : {ExplainMethod::integrated_gradients, ExplainMethod::eps_lrp, ExplainMethod::deeplift,
                 ExplainMethod::shap_exact, ExplainMethod::shap_sampled}) {
    EXPECT_EQ(explain_method_from_string(to_string(m)), m);
  }
  EXPECT_THROW(explain_method_from_string("lemna"), ArgumentError);
}
