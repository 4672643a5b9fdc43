#include <gtest/gtest.h>

#include <thread>

#include "common.hpp"

using namespace xea;
using xea::testing::random_vector;

namespace {

// x0 separates the classes with a gap (0.4, 0.6); x1 is noise.
Dataset gap_dataset(std::size_t n, std::uint64_t seed) {
  Dataset ds;
  ds.schema = make_schema({{"general", 2}});
  CounterRng rng(seed);
  for (std::size_t s = 0; s < n; ++s) {
    const int y = static_cast<int>(s % 2);
    const double x0 = y ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4);
    ds.rows.push_back({x0, rng.uniform()});
    ds.labels.push_back(y);
  }
  return ds;
}

// Walks every tree checking structure; returns the number of leaves reached.
void check_tree(const Tree& t, std::size_t F, std::size_t max_leaves) {
  ASSERT_FALSE(t.nodes.empty());
  std::vector<int> parents(t.nodes.size(), 0);
  for (const auto& n : t.nodes) {
    if (n.is_leaf()) {
      EXPECT_TRUE(std::isfinite(n.value));
      EXPECT_LE(std::abs(n.value), kLeafValueClip);
      continue;
    }
    EXPECT_LT(static_cast<std::size_t>(n.feature), F);
    ASSERT_GE(n.left, 0);
    ASSERT_GE(n.right, 0);
    ASSERT_LT(static_cast<std::size_t>(n.left), t.nodes.size());
    ASSERT_LT(static_cast<std::size_t>(n.right), t.nodes.size());
    ++parents[static_cast<std::size_t>(n.left)];
    ++parents[static_cast<std::size_t>(n.right)];
  }
  EXPECT_EQ(parents[0], 0);
  for (std::size_t i = 1; i < parents.size(); ++i) EXPECT_EQ(parents[i], 1) << "node " << i;
  EXPECT_LE(t.n_leaves(), max_leaves);
}

}  // namespace

TEST(Train, SingleStumpFindsTheGap) {
  const auto ds = gap_dataset(200, 1);
  const auto m = train_gbdt(ds, 1, 2, 0.1, 1);
  ASSERT_EQ(m.trees.size(), 1u);
  const auto& root = m.trees[0].nodes[0];
  ASSERT_FALSE(root.is_leaf());
  EXPECT_EQ(root.feature, 0);
  EXPECT_GT(root.threshold, 0.4);
  EXPECT_LT(root.threshold, 0.6);
  EXPECT_EQ(accuracy(m, ds), 1.0);
}

TEST(Train, NoTreesPredictsPrior) {
  auto ds = gap_dataset(100, 2);
  for (std::size_t s = 0; s < 30; ++s) ds.labels[s] = 1;  // 65 positives
  const auto m = train_gbdt(ds, 0, 15, 0.1, 1);
  const double prior = static_cast<double>(ds.count_label(1)) / 100.0;
  for (std::uint64_t s = 0; s < 10; ++s) EXPECT_NEAR(score(m, random_vector(2, s)), prior, 1e-12);
}

TEST(Train, Errors) {
  auto ds = gap_dataset(50, 3);
  std::fill(ds.labels.begin(), ds.labels.end(), 1);
  EXPECT_THROW(train_gbdt(ds, 3, 4, 0.1, 1), TrainingError);
  Dataset empty;
  EXPECT_THROW(train_gbdt(empty, 3, 4, 0.1, 1), TrainingError);
  EXPECT_THROW(train_gbdt(gap_dataset(50, 3), 3, 0, 0.1, 1), ArgumentError);
}

TEST(Train, StructureAndRouting) {
  const auto ds = xea::testing::desk_dataset(600, 3);
  const auto m = train_gbdt(ds, 10, 7, 0.1, 1);
  for (const auto& t : m.trees) check_tree(t, ds.dim(), 7);
  for (std::size_t s = 0; s < 50; ++s) {
    for (const auto& t : m.trees) EXPECT_TRUE(t.nodes[t.route(ds.rows[s])].is_leaf());
  }
}

TEST(Train, LossNonIncreasingPerRound) {
  const auto ds = xea::testing::desk_dataset(600, 3);
  const auto full = train_gbdt(ds, 25, 15, 0.1, 1);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k <= full.trees.size(); ++k) {
    auto partial = full;
    partial.trees.resize(k);
    const double loss = logistic_loss(partial, ds);
    EXPECT_LE(loss, prev + 1e-12) << "round " << k;
    prev = loss;
  }
}

TEST(Train, Deterministic) {
  const auto ds = xea::testing::desk_dataset(400, 5);
  EXPECT_EQ(train_gbdt(ds, 5, 7, 0.1, 9).trees, train_gbdt(ds, 5, 7, 0.1, 9).trees);
}

TEST(Train, EqualGainsPickLowestFeature) {
  // Two identical columns: the split must use feature 0.
  auto ds = gap_dataset(100, 4);
  ds.schema = make_schema({{"general", 3}});
  for (auto& r : ds.rows) r = {r[0], r[0], r[1]};
  const auto m = train_gbdt(ds, 1, 2, 0.1, 1);
  EXPECT_EQ(m.trees[0].nodes[0].feature, 0);
}

TEST(Train, DeskAccuracyBeatsSubstitute) {
  // The harness's same-train/same-features pair: 2400 training rows, default models.
  const ExperimentConfig cfg;
  const StageSeeds seeds(cfg.seed);
  const auto data = generate(make_schema(cfg.widths), cfg.n_samples, cfg.n_informative, cfg.class_balance, seeds.data);
  const auto [tr, te] = split(data, cfg.train_fraction, seeds.split);
  ASSERT_EQ(tr.size(), 2400u);
  const auto m = train_scenario(Scenario::same_train_same_features, cfg, tr);
  ASSERT_EQ(m.target->trees.size(), 50u);
  const double acc = accuracy(*m.target, te);
  const double sub = accuracy(m.substitute, te);
  std::printf("gbdt test accuracy %.4f, mlp %.4f\n", acc, sub);
  EXPECT_GE(acc, 0.90);
  EXPECT_GT(acc, sub);
}

TEST(Score, HandTrace) {
  GbdtModel m;
  m.input_dim = 2;
  m.learning_rate = 0.1;
  m.base_score = 0.0;
  m.trained = true;
  Tree t;
  t.nodes = {{1, 1, 2, 0.5, 0.0}, {-1, -1, -1, 0.0, 3.0}, {-1, -1, -1, 0.0, -2.0}};
  m.trees.push_back(t);
  EXPECT_DOUBLE_EQ(score(m, std::vector<double>{9.0, 0.2}), sigmoid(0.3));
  EXPECT_DOUBLE_EQ(score(m, std::vector<double>{9.0, 0.7}), sigmoid(-0.2));
  EXPECT_THROW(score(m, std::vector<double>{std::nan(""), 0.2}), ArgumentError);
  EXPECT_THROW(score(m, std::vector<double>{0.2}), ArgumentError);
  m.trees.clear();
  EXPECT_EQ(score(m, std::vector<double>{0.0, 0.0}), 0.5);
}

TEST(Oracle, DelegatesAndCounts) {
  const auto ds = xea::testing::desk_dataset(300, 6);
  const auto m = train_gbdt(ds, 5, 7, 0.1, 1);
  const auto a = as_oracle(m);
  const auto b = as_oracle(m);
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto x = random_vector(64, s);
    ASSERT_EQ(a.score(x), score(m, x));
    ASSERT_EQ(a.queries(), s + 1);
  }
  EXPECT_EQ(b.queries(), 0u);
  b.score(ds.rows[0]);
  EXPECT_EQ(b.queries(), 1u);
  EXPECT_EQ(a.queries(), 1000u);
}

TEST(Oracle, ConcurrentCounting) {
  const auto m = train_gbdt(xea::testing::desk_dataset(300, 6), 3, 4, 0.1, 1);
  const auto o = as_oracle(m);
  const auto x = random_vector(64, 1);
  std::vector<std::thread> pool;
  for (int t = 0; t < 4; ++t) {
    pool.emplace_back([&] {
      for (int i = 0; i < 250; ++i) o.score(x);
    });
  }
  for (auto& t : pool) t.join();
  EXPECT_EQ(o.queries(), 1000u);
}

TEST(Oracle, UntrainedRejectedAndColumnMap) {
  GbdtModel m;
  EXPECT_THROW(as_oracle(m), PreconditionError);
  const auto ds = xea::testing::desk_dataset(300, 6);
  const std::vector<std::size_t> cols{3, 10, 40};
  const auto g = train_gbdt(project_features(ds, cols), 3, 4, 0.1, 1);
  const auto o = as_oracle(g, cols);
  EXPECT_EQ(o.score(ds.rows[5]), score(g, gather(ds.rows[5], cols)));
}

TEST(Io, RoundTrip) {
  const auto dir = xea::testing::scratch_dir("gbdt_io");
  const auto ds = xea::testing::desk_dataset(300, 6);
  const auto m = train_gbdt(ds, 4, 6, 0.1, 1);
  save_gbdt(m, (dir / "g.bin").string(), {});
  const auto back = load_gbdt_file((dir / "g.bin").string());
  EXPECT_EQ(back.model.trees, m.trees);
  EXPECT_EQ(back.model.base_score, m.base_score);
  for (std::size_t s = 0; s < ds.size(); ++s) ASSERT_EQ(score(back.model, ds.rows[s]), score(m, ds.rows[s]));

  std::ostringstream out;
  write_gbdt(out, m);
  const auto text = out.str();
  std::istringstream trunc(text.substr(0, text.size() - 3));
  EXPECT_THROW(read_gbdt(trunc), FormatError);
  std::istringstream magic("XEAMLP1\n{}\n");
  EXPECT_THROW(read_gbdt(magic), FormatError);
}

TEST(Architecture, AttackSeesOnlyTheOracle) {
  std::ifstream in(XEA_SOURCE_DIR "/include/xea/attack.hpp");
  ASSERT_TRUE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto text = ss.str();
  EXPECT_EQ(text.find("gbdt.hpp"), std::string::npos);
  EXPECT_EQ(text.find("GbdtModel"), std::string::npos);
  EXPECT_EQ(text.find("Tree"), std::string::npos);
}
