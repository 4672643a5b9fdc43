#pragma once

// Gradient-boosted regression trees on logistic loss, grown leaf-wise.
// This is the black-box target; attack code only ever sees it through
// ScoreOracle (see as_oracle below).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xea/binary_io.hpp"
#include "xea/data.hpp"
#include "xea/error.hpp"
#include "xea/math.hpp"
#include "xea/oracle.hpp"

namespace xea {

/// Internal nodes have feature >= 0 and route x[feature] <= threshold left.
/// Leaves have feature == -1 and carry `value`.
struct TreeNode {
  std::int32_t feature = -1;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double threshold = 0.0;
  double value = 0.0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;

  /// Index of the leaf reached by x.
  std::size_t route(std::span<const double> x) const {
    std::size_t n = 0;
    while (!nodes[n].is_leaf()) {
      const auto& node = nodes[n];
      n = static_cast<std::size_t>(x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right);
    }
    return n;
  }

  double predict(std::span<const double> x) const { return nodes[route(x)].value; }

  std::size_t n_leaves() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.is_leaf(); }));
  }

  bool operator==(const Tree&) const = default;
};

struct GbdtConfig {
  std::size_t n_trees = 50;
  std::size_t max_leaves = 15;
  double learning_rate = 0.1;
  /// Smallest number of training samples a leaf may hold.
  std::size_t min_samples_leaf = 20;
  std::uint64_t seed = 1;
};

struct GbdtModel {
  std::size_t input_dim = 0;
  std::vector<Tree> trees;
  double learning_rate = 0.1;
  double base_score = 0.0;
  std::size_t max_leaves = 31;
  bool trained = false;

  bool operator==(const GbdtModel&) const = default;
};

inline constexpr double kLeafValueClip = 4.0;

inline double raw_score(const GbdtModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim) {
    throw ArgumentError("input has " + std::to_string(x.size()) + " features, model expects " +
                        std::to_string(model.input_dim));
  }
  for (double v : x) {
    if (std::isnan(v)) throw ArgumentError("NaN feature value");
  }
  double sum = 0.0;
  for (const auto& t : model.trees) sum += t.predict(x);
  return model.base_score + model.learning_rate * sum;
}

/// Probability of the malicious class.
inline double score(const GbdtModel& model, std::span<const double> x) { return sigmoid(raw_score(model, x)); }

inline double logistic_loss(const GbdtModel& model, const Dataset& ds) {
  double total = 0.0;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    total += logit_loss(raw_score(model, ds.rows[s]), ds.labels[s]);
  }
  return ds.size() == 0 ? 0.0 : total / static_cast<double>(ds.size());
}

inline double accuracy(const GbdtModel& model, const Dataset& ds) {
  std::size_t ok = 0;
  for (std::size_t s = 0; s < ds.size(); ++s) ok += (score(model, ds.rows[s]) >= 0.5 ? 1 : 0) == ds.labels[s];
  return ds.size() == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(ds.size());
}

namespace detail {

struct SplitCandidate {
  double gain = 0.0;
  std::int32_t feature = -1;
  double threshold = 0.0;
};

class TreeGrower {
 public:
  TreeGrower(const Dataset& ds, const std::vector<std::vector<std::uint32_t>>& sorted, const GbdtConfig& cfg)
      : ds_(ds), sorted_(sorted), cfg_(cfg), leaf_of_(ds.size(), 0) {}

  Tree grow(const std::vector<double>& grad, const std::vector<double>& hess) {
    grad_ = &grad;
    Tree tree;
    tree.nodes.emplace_back();
    std::fill(leaf_of_.begin(), leaf_of_.end(), 0);
    std::vector<SplitCandidate> best{best_split(0)};
    std::vector<std::int32_t> open{0};

    while (tree.n_leaves() < cfg_.max_leaves) {
      // Leaf with the largest gain; ties resolved toward the lowest node id.
      std::int32_t pick = -1;
      double pick_gain = 0.0;
      for (auto leaf : open) {
        const auto& c = best[static_cast<std::size_t>(leaf)];
        if (c.feature >= 0 && c.gain > pick_gain) {
          pick = leaf;
          pick_gain = c.gain;
        }
      }
      if (pick < 0) break;

      const auto c = best[static_cast<std::size_t>(pick)];
      const auto left = static_cast<std::int32_t>(tree.nodes.size());
      const auto right = left + 1;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& node = tree.nodes[static_cast<std::size_t>(pick)];
      node.feature = c.feature;
      node.threshold = c.threshold;
      node.left = left;
      node.right = right;
      for (std::size_t s = 0; s < leaf_of_.size(); ++s) {
        if (leaf_of_[s] != pick) continue;
        leaf_of_[s] = ds_.rows[s][static_cast<std::size_t>(c.feature)] <= c.threshold ? left : right;
      }
      open.erase(std::find(open.begin(), open.end(), pick));
      open.push_back(left);
      open.push_back(right);
      best.resize(tree.nodes.size());
      best[static_cast<std::size_t>(left)] = best_split(left);
      best[static_cast<std::size_t>(right)] = best_split(right);
    }

    // Newton leaf values.
    std::vector<double> g_sum(tree.nodes.size(), 0.0), h_sum(tree.nodes.size(), 0.0);
    for (std::size_t s = 0; s < leaf_of_.size(); ++s) {
      g_sum[static_cast<std::size_t>(leaf_of_[s])] += grad[s];
      h_sum[static_cast<std::size_t>(leaf_of_[s])] += hess[s];
    }
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
      if (!tree.nodes[n].is_leaf()) continue;
      const double v = h_sum[n] > 0.0 ? g_sum[n] / h_sum[n] : 0.0;
      tree.nodes[n].value = std::clamp(v, -kLeafValueClip, kLeafValueClip);
    }
    return tree;
  }

  const std::vector<std::int32_t>& leaf_of() const { return leaf_of_; }

 private:
  // Variance-reduction split over midpoints of consecutive distinct values.
  SplitCandidate best_split(std::int32_t leaf) const {
    const auto& g = *grad_;
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < leaf_of_.size(); ++s) {
      if (leaf_of_[s] == leaf) {
        total += g[s];
        ++count;
      }
    }
    SplitCandidate best;
    if (count < 2 * cfg_.min_samples_leaf || count < 2) return best;
    const double parent = total * total / static_cast<double>(count);
    const std::size_t min_leaf = std::max<std::size_t>(1, cfg_.min_samples_leaf);

    for (std::size_t f = 0; f < sorted_.size(); ++f) {
      double left_sum = 0.0;
      std::size_t left_n = 0;
      double prev = 0.0;
      bool have_prev = false;
      for (auto s : sorted_[f]) {
        if (leaf_of_[s] != leaf) continue;
        const double v = ds_.rows[s][f];
        if (have_prev && v != prev && left_n >= min_leaf && count - left_n >= min_leaf) {
          const double right_sum = total - left_sum;
          const double gain = left_sum * left_sum / static_cast<double>(left_n) +
                              right_sum * right_sum / static_cast<double>(count - left_n) - parent;
          if (gain > best.gain) {
            double t = prev + (v - prev) * 0.5;
            if (!(t < v)) t = prev;
            best = {gain, static_cast<std::int32_t>(f), t};
          }
        }
        left_sum += g[s];
        ++left_n;
        prev = v;
        have_prev = true;
      }
    }
    return best;
  }

  const Dataset& ds_;
  const std::vector<std::vector<std::uint32_t>>& sorted_;
  const GbdtConfig& cfg_;
  const std::vector<double>* grad_ = nullptr;
  std::vector<std::int32_t> leaf_of_;
};

}  // namespace detail

/// Boosting on logistic loss. Each round fits a tree to the residuals
/// y - p by greedy variance-reduction splits, grown best-first up to
/// `max_leaves`, with Newton leaf values sum(g) / sum(p (1 - p)) clipped to
/// [-4, 4]. Split search is exact and deterministic: equal gains resolve to
/// the lowest feature index, then the lowest threshold.
inline GbdtModel train_gbdt(const Dataset& ds, const GbdtConfig& cfg) {
  if (ds.size() == 0) throw TrainingError("cannot train on an empty dataset");
  const auto positives = ds.count_label(1);
  if (positives == 0 || positives == ds.size()) throw TrainingError("training set must contain both labels");
  if (cfg.max_leaves < 1) throw ArgumentError("max_leaves must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");

  GbdtModel model;
  model.input_dim = ds.dim();
  model.learning_rate = cfg.learning_rate;
  model.max_leaves = cfg.max_leaves;
  const double prior = static_cast<double>(positives) / static_cast<double>(ds.size());
  model.base_score = std::log(prior / (1.0 - prior));

  const auto n = ds.size();
  std::vector<std::vector<std::uint32_t>> sorted(ds.dim());
  for (std::size_t f = 0; f < ds.dim(); ++f) {
    auto& idx = sorted[f];
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0u);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return ds.rows[a][f] < ds.rows[b][f]; });
  }

  std::vector<double> raw(n, model.base_score), grad(n), hess(n);
  detail::TreeGrower grower(ds, sorted, cfg);
  for (std::size_t round = 0; round < cfg.n_trees; ++round) {
    for (std::size_t s = 0; s < n; ++s) {
      const double p = sigmoid(raw[s]);
      grad[s] = static_cast<double>(ds.labels[s]) - p;
      hess[s] = p * (1.0 - p);
    }
    auto tree = grower.grow(grad, hess);
    const auto& leaf_of = grower.leaf_of();
    for (std::size_t s = 0; s < n; ++s) {
      raw[s] += model.learning_rate * tree.nodes[static_cast<std::size_t>(leaf_of[s])].value;
    }
    model.trees.push_back(std::move(tree));
  }
  model.trained = true;
  return model;
}

inline GbdtModel train_gbdt(const Dataset& ds, std::size_t n_trees, std::size_t max_leaves, double learning_rate,
                            std::uint64_t seed) {
  GbdtConfig cfg;
  cfg.n_trees = n_trees;
  cfg.max_leaves = max_leaves;
  cfg.learning_rate = learning_rate;
  cfg.seed = seed;
  return train_gbdt(ds, cfg);
}

/// Query-counting score oracle over a trained model. The model is shared,
/// not copied; no tree structure is reachable through the handle.
/// `input_features`, when non-empty, selects the model's columns out of a
/// wider feature vector.
inline ScoreOracle as_oracle(std::shared_ptr<const GbdtModel> model, std::vector<std::size_t> input_features = {}) {
  if (!model || !model->trained) throw PreconditionError("oracle requires a trained model");
  if (input_features.empty()) {
    return ScoreOracle([model](std::span<const double> x) { return score(*model, x); });
  }
  if (input_features.size() != model->input_dim) throw ArgumentError("input_features size does not match model");
  return ScoreOracle([model, cols = std::move(input_features)](std::span<const double> x) {
    for (auto c : cols) {
      if (c >= x.size()) throw ArgumentError("feature vector shorter than oracle's feature map");
    }
    return score(*model, gather(x, cols));
  });
}

inline ScoreOracle as_oracle(const GbdtModel& model, std::vector<std::size_t> input_features = {}) {
  return as_oracle(std::make_shared<const GbdtModel>(model), std::move(input_features));
}

// ---------------------------------------------------------------------------
// Model file:
//   XEAGBT1\n
//   {"version":1,"input_dim":..,"learning_rate":..,"base_score":..,
//    "max_leaves":..,"trained":..,"tree_sizes":[...],"input_features":[...]}\n
//   per tree, per node (tree_sizes[t] nodes, 32 bytes each, little-endian):
//     int32 feature, int32 left, int32 right, int32 reserved(0),
//     f64 threshold, f64 value
// ---------------------------------------------------------------------------

inline constexpr int kGbdtFormatVersion = 1;

inline void write_gbdt(std::ostream& out, const GbdtModel& model, const std::vector<std::size_t>& input_features = {}) {
  std::vector<std::size_t> sizes;
  for (const auto& t : model.trees) sizes.push_back(t.nodes.size());
  nlohmann::json header = {{"version", kGbdtFormatVersion},  {"input_dim", model.input_dim},
                           {"learning_rate", model.learning_rate}, {"base_score", model.base_score},
                           {"max_leaves", model.max_leaves},   {"trained", model.trained},
                           {"tree_sizes", sizes},              {"input_features", input_features}};
  out << "XEAGBT1\n" << header.dump() << '\n';
  for (const auto& t : model.trees) {
    for (const auto& n : t.nodes) {
      detail::write_le(out, n.feature);
      detail::write_le(out, n.left);
      detail::write_le(out, n.right);
      detail::write_le(out, std::int32_t{0});
      detail::write_le(out, n.threshold);
      detail::write_le(out, n.value);
    }
  }
}

struct LoadedGbdt {
  GbdtModel model;
  std::vector<std::size_t> input_features;
};

inline LoadedGbdt read_gbdt(std::istream& in) {
  const std::string what = "gbdt model";
  if (detail::read_line(in, what) != "XEAGBT1") throw FormatError("gbdt model: bad magic");
  LoadedGbdt loaded;
  auto& m = loaded.model;
  std::vector<std::size_t> sizes;
  try {
    const auto h = nlohmann::json::parse(detail::read_line(in, what));
    if (h.at("version").get<int>() != kGbdtFormatVersion) throw FormatError("gbdt model: unsupported version");
    m.input_dim = h.at("input_dim").get<std::size_t>();
    m.learning_rate = h.at("learning_rate").get<double>();
    m.base_score = h.at("base_score").get<double>();
    m.max_leaves = h.at("max_leaves").get<std::size_t>();
    m.trained = h.at("trained").get<bool>();
    sizes = h.at("tree_sizes").get<std::vector<std::size_t>>();
    loaded.input_features = h.value("input_features", std::vector<std::size_t>{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("gbdt model: invalid header: ") + e.what());
  }
  for (auto size : sizes) {
    Tree t;
    t.nodes.resize(size);
    for (auto& n : t.nodes) {
      n.feature = detail::read_le<std::int32_t>(in, what);
      n.left = detail::read_le<std::int32_t>(in, what);
      n.right = detail::read_le<std::int32_t>(in, what);
      (void)detail::read_le<std::int32_t>(in, what);
      n.threshold = detail::read_le<double>(in, what);
      n.value = detail::read_le<double>(in, what);
    }
    for (std::size_t k = 0; k < t.nodes.size(); ++k) {
      const auto& n = t.nodes[k];
      if (n.is_leaf()) continue;
      const auto limit = static_cast<std::int32_t>(t.nodes.size());
      if (n.left <= static_cast<std::int32_t>(k) || n.right <= static_cast<std::int32_t>(k) || n.left >= limit ||
          n.right >= limit || static_cast<std::size_t>(n.feature) >= m.input_dim) {
        throw FormatError("gbdt model: malformed tree");
      }
    }
    m.trees.push_back(std::move(t));
  }
  return loaded;
}

inline void save_gbdt(const GbdtModel& model, const std::string& path, const std::vector<std::size_t>& input_features = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_gbdt(out, model, input_features);
}

inline LoadedGbdt load_gbdt_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_gbdt(in);
}

inline GbdtModel load_gbdt(const std::string& path) { return load_gbdt_file(path).model; }

}  // namespace xea
