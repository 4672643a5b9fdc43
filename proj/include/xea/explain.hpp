#pragma once

// Per-sample feature attributions: integrated gradients, epsilon-LRP and
// DeepLIFT (rescale) on the white-box MLP, plus exact and sampled Shapley
// values for any scoring function.

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "xea/data.hpp"
#include "xea/error.hpp"
#include "xea/mlp.hpp"
#include "xea/oracle.hpp"
#include "xea/random.hpp"

namespace xea {

enum class ExplainMethod : std::uint8_t { integrated_gradients, eps_lrp, deeplift, shap_exact, shap_sampled };

inline std::string_view to_string(ExplainMethod m) {
  switch (m) {
    case ExplainMethod::integrated_gradients: return "ig";
    case ExplainMethod::eps_lrp: return "lrp";
    case ExplainMethod::deeplift: return "deeplift";
    case ExplainMethod::shap_exact: return "shap_exact";
    case ExplainMethod::shap_sampled: return "shap";
  }
  return "?";
}

inline ExplainMethod explain_method_from_string(std::string_view s) {
  for (auto m : {ExplainMethod::integrated_gradients, ExplainMethod::eps_lrp, ExplainMethod::deeplift,
                 ExplainMethod::shap_exact, ExplainMethod::shap_sampled}) {
    if (to_string(m) == s) return m;
  }
  if (s == "integrated_gradients") return ExplainMethod::integrated_gradients;
  if (s == "eps_lrp") return ExplainMethod::eps_lrp;
  if (s == "shap_sampled") return ExplainMethod::shap_sampled;
  throw ArgumentError("unknown explain method '" + std::string(s) + "'");
}

inline std::string_view to_string(OutputSpace s) { return s == OutputSpace::score ? "score" : "logit"; }

inline OutputSpace output_space_from_string(std::string_view s) {
  if (s == "score") return OutputSpace::score;
  if (s == "logit") return OutputSpace::logit;
  throw ArgumentError("unknown output space '" + std::string(s) + "'");
}

struct Attribution {
  std::vector<double> values;
  ExplainMethod method = ExplainMethod::integrated_gradients;
  OutputSpace output = OutputSpace::score;
  /// |sum R - (C(x) - reference)|, NaN when the method makes no such promise.
  double completeness_gap = std::numeric_limits<double>::quiet_NaN();
  /// C(x) and the reference output (C at the baseline, or f_x of the empty set).
  double output_value = std::numeric_limits<double>::quiet_NaN();
  double reference_value = std::numeric_limits<double>::quiet_NaN();
};

struct ExplainerConfig {
  std::vector<double> baseline;  // empty means all zeros
  std::size_t ig_steps = 64;
  double lrp_epsilon = 1e-4;
  std::vector<std::vector<double>> shap_background;
  std::size_t shap_samples = 64;
  std::uint64_t seed = 1;
  OutputSpace output = OutputSpace::score;
};

using FeatureRanking = std::vector<std::size_t>;

namespace detail {

inline std::vector<double> baseline_for(const ExplainerConfig& cfg, std::size_t dim) {
  if (cfg.baseline.empty()) return std::vector<double>(dim, 0.0);
  if (cfg.baseline.size() != dim) {
    throw ArgumentError("baseline has " + std::to_string(cfg.baseline.size()) + " features, expected " +
                        std::to_string(dim));
  }
  return cfg.baseline;
}

inline void require_trained(const MlpModel& model) {
  if (!model.trained) throw PreconditionError("substitute model is not trained");
}

inline double gradient_seed(const ForwardRecord& rec, OutputSpace space) {
  return space == OutputSpace::score ? rec.score * (1.0 - rec.score) : 1.0;
}

}  // namespace detail

/// Midpoint Riemann approximation of the path integral from the baseline.
inline Attribution integrated_gradients(const MlpModel& model, std::span<const double> x, const ExplainerConfig& cfg) {
  detail::require_trained(model);
  check_input(model, x);
  if (cfg.ig_steps < 1) throw ArgumentError("ig_steps must be >= 1");
  const auto base = detail::baseline_for(cfg, x.size());
  const std::size_t m = cfg.ig_steps;

  std::vector<double> sum(x.size(), 0.0), point(x.size());
  for (std::size_t k = 1; k <= m; ++k) {
    const double alpha = (static_cast<double>(k) - 0.5) / static_cast<double>(m);
    for (std::size_t i = 0; i < x.size(); ++i) point[i] = base[i] + alpha * (x[i] - base[i]);
    const auto rec = forward(model, point);
    const auto g = detail::backprop_to_input(model, rec, detail::gradient_seed(rec, cfg.output));
    for (std::size_t i = 0; i < x.size(); ++i) sum[i] += g[i];
  }

  Attribution a;
  a.method = ExplainMethod::integrated_gradients;
  a.output = cfg.output;
  a.values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) a.values[i] = (x[i] - base[i]) * sum[i] / static_cast<double>(m);
  a.output_value = predict(model, x, cfg.output);
  a.reference_value = predict(model, base, cfg.output);
  const double total = std::accumulate(a.values.begin(), a.values.end(), 0.0);
  a.completeness_gap = std::abs(total - (a.output_value - a.reference_value));
  return a;
}

/// Epsilon rule, relevance seeded with the output at the single output unit.
inline Attribution eps_lrp(const MlpModel& model, std::span<const double> x, const ExplainerConfig& cfg) {
  detail::require_trained(model);
  check_input(model, x);
  if (!(cfg.lrp_epsilon > 0.0)) throw ArgumentError("lrp_epsilon must be > 0");
  const auto rec = forward(model, x);

  std::vector<double> r{rec.output(cfg.output)};
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const auto& layer = model.layers[l];
    const auto& a_in = rec.activations[l];
    const auto& z = rec.pre[l];
    std::vector<double> r_in(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      if (r[o] == 0.0) continue;
      const double denom = z[o] + (z[o] >= 0.0 ? cfg.lrp_epsilon : -cfg.lrp_epsilon);
      const double share = r[o] / denom;
      const double* row = &layer.weights[o * layer.in];
      for (std::size_t i = 0; i < layer.in; ++i) r_in[i] += row[i] * a_in[i] * share;
    }
    r = std::move(r_in);
  }

  Attribution a;
  a.method = ExplainMethod::eps_lrp;
  a.output = cfg.output;
  a.values = std::move(r);
  a.output_value = rec.output(cfg.output);
  return a;
}

/// Rescale rule against a forward pass on the baseline.
inline Attribution deeplift(const MlpModel& model, std::span<const double> x, const ExplainerConfig& cfg) {
  detail::require_trained(model);
  check_input(model, x);
  const auto base = detail::baseline_for(cfg, x.size());
  const auto rec = forward(model, x);
  const auto ref = forward(model, base);

  std::vector<double> r{rec.output(cfg.output) - ref.output(cfg.output)};
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const auto& layer = model.layers[l];
    const auto& a_x = rec.activations[l];
    const auto& a_b = ref.activations[l];
    std::vector<double> r_in(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double dz = rec.pre[l][o] - ref.pre[l][o];
      if (std::abs(dz) < 1e-9 || r[o] == 0.0) continue;
      const double share = r[o] / dz;
      const double* row = &layer.weights[o * layer.in];
      for (std::size_t i = 0; i < layer.in; ++i) r_in[i] += row[i] * (a_x[i] - a_b[i]) * share;
    }
    r = std::move(r_in);
  }

  Attribution a;
  a.method = ExplainMethod::deeplift;
  a.output = cfg.output;
  a.values = std::move(r);
  a.output_value = rec.output(cfg.output);
  a.reference_value = ref.output(cfg.output);
  const double total = std::accumulate(a.values.begin(), a.values.end(), 0.0);
  a.completeness_gap = std::abs(total - (a.output_value - a.reference_value));
  return a;
}

inline constexpr std::size_t kShapExactMaxFeatures = 14;

namespace detail {

inline void check_background(const std::vector<std::vector<double>>& bg, std::size_t dim) {
  if (bg.empty()) throw ArgumentError("SHAP background is empty");
  for (const auto& b : bg) {
    if (b.size() != dim) throw ArgumentError("SHAP background vector has wrong length");
  }
}

}  // namespace detail

/// Interventional Shapley values by full subset enumeration.
/// `f` maps a feature vector to the explained output.
template <class Scorer>
  requires std::invocable<Scorer&, std::span<const double>> && (!std::same_as<std::remove_cvref_t<Scorer>, ScoreOracle>)
Attribution shap_exact(Scorer&& f, std::span<const double> x, const ExplainerConfig& cfg) {
  const std::size_t n = x.size();
  if (n > kShapExactMaxFeatures) {
    throw CapabilityError("shap_exact enumerates 2^F subsets and supports F <= " +
                          std::to_string(kShapExactMaxFeatures) + " (got " + std::to_string(n) +
                          "); use shap_sampled");
  }
  detail::check_background(cfg.shap_background, n);

  const std::size_t n_sets = std::size_t{1} << n;
  std::vector<double> v(n_sets, 0.0), z(n);
  for (std::size_t s = 0; s < n_sets; ++s) {
    double acc = 0.0;
    for (const auto& b : cfg.shap_background) {
      for (std::size_t i = 0; i < n; ++i) z[i] = (s >> i) & 1U ? x[i] : b[i];
      acc += f(std::span<const double>(z));
    }
    v[s] = acc / static_cast<double>(cfg.shap_background.size());
  }

  // weight(|S|) = |S|! (n - |S| - 1)! / n!
  std::vector<double> weight(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double w = 1.0 / static_cast<double>(n);
    // 1 / (n * C(n-1, k))
    for (std::size_t j = 1; j <= k; ++j) w *= static_cast<double>(j) / static_cast<double>(n - j);
    weight[k] = w;
  }

  Attribution a;
  a.method = ExplainMethod::shap_exact;
  a.output = cfg.output;
  a.values.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    double acc = 0.0;
    for (std::size_t s = 0; s < n_sets; ++s) {
      if (s & bit) continue;
      acc += weight[static_cast<std::size_t>(std::popcount(s))] * (v[s | bit] - v[s]);
    }
    a.values[i] = acc;
  }
  a.output_value = v[n_sets - 1];
  a.reference_value = v[0];
  const double total = std::accumulate(a.values.begin(), a.values.end(), 0.0);
  a.completeness_gap = std::abs(total - (a.output_value - a.reference_value));
  return a;
}

/// Permutation sampling with antithetic pairs: odd draws reuse the previous
/// permutation reversed. Every permutation is walked against every
/// background point, so each walk telescopes to f(x) - f(b).
template <class Scorer>
  requires std::invocable<Scorer&, std::span<const double>> && (!std::same_as<std::remove_cvref_t<Scorer>, ScoreOracle>)
Attribution shap_sampled(Scorer&& f, std::span<const double> x, const ExplainerConfig& cfg) {
  const std::size_t n = x.size();
  if (cfg.shap_samples < 1) throw ArgumentError("shap_samples must be >= 1");
  detail::check_background(cfg.shap_background, n);

  CounterRng rng(derive_seed(cfg.seed, 30));
  std::vector<std::size_t> perm(n);
  std::vector<double> sum(n, 0.0), z(n);
  std::vector<double> f_bg(cfg.shap_background.size());
  for (std::size_t b = 0; b < f_bg.size(); ++b) f_bg[b] = f(std::span<const double>(cfg.shap_background[b]));
  const double f_x = f(x);

  for (std::size_t p = 0; p < cfg.shap_samples; ++p) {
    if (p % 2 == 0) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(perm.begin(), perm.end());
    } else {
      std::reverse(perm.begin(), perm.end());
    }
    for (std::size_t b = 0; b < f_bg.size(); ++b) {
      const auto& bg = cfg.shap_background[b];
      std::copy(bg.begin(), bg.end(), z.begin());
      double prev = f_bg[b];
      for (std::size_t step = 0; step < n; ++step) {
        const std::size_t j = perm[step];
        z[j] = x[j];
        // the last insertion always lands on x itself
        const double cur = step + 1 == n ? f_x : f(std::span<const double>(z));
        sum[j] += cur - prev;
        prev = cur;
      }
    }
  }

  Attribution a;
  a.method = ExplainMethod::shap_sampled;
  a.output = cfg.output;
  a.values.resize(n);
  const double denom = static_cast<double>(cfg.shap_samples * f_bg.size());
  for (std::size_t i = 0; i < n; ++i) a.values[i] = sum[i] / denom;
  a.output_value = f_x;
  a.reference_value = std::accumulate(f_bg.begin(), f_bg.end(), 0.0) / static_cast<double>(f_bg.size());
  const double total = std::accumulate(a.values.begin(), a.values.end(), 0.0);
  a.completeness_gap = std::abs(total - (a.output_value - a.reference_value));
  return a;
}

inline Attribution shap_exact(const MlpModel& model, std::span<const double> x, const ExplainerConfig& cfg) {
  detail::require_trained(model);
  check_input(model, x);
  return shap_exact([&](std::span<const double> z) { return predict(model, z, cfg.output); }, x, cfg);
}

inline Attribution shap_sampled(const MlpModel& model, std::span<const double> x, const ExplainerConfig& cfg) {
  detail::require_trained(model);
  check_input(model, x);
  return shap_sampled([&](std::span<const double> z) { return predict(model, z, cfg.output); }, x, cfg);
}

// The oracle only exposes scores, so these always explain score space.
inline Attribution shap_exact(const ScoreOracle& oracle, std::span<const double> x, const ExplainerConfig& cfg) {
  auto a = shap_exact([&](std::span<const double> z) { return oracle.score(z); }, x, cfg);
  a.output = OutputSpace::score;
  return a;
}

inline Attribution shap_sampled(const ScoreOracle& oracle, std::span<const double> x, const ExplainerConfig& cfg) {
  auto a = shap_sampled([&](std::span<const double> z) { return oracle.score(z); }, x, cfg);
  a.output = OutputSpace::score;
  return a;
}

inline Attribution explain(ExplainMethod method, const MlpModel& model, std::span<const double> x,
                           const ExplainerConfig& cfg) {
  switch (method) {
    case ExplainMethod::integrated_gradients: return integrated_gradients(model, x, cfg);
    case ExplainMethod::eps_lrp: return eps_lrp(model, x, cfg);
    case ExplainMethod::deeplift: return deeplift(model, x, cfg);
    case ExplainMethod::shap_exact: return shap_exact(model, x, cfg);
    case ExplainMethod::shap_sampled: return shap_sampled(model, x, cfg);
  }
  throw ArgumentError("unknown explain method");
}

/// Indices by descending |R|, ties by ascending index.
inline FeatureRanking rank_features(std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw ArgumentError("attribution " + std::to_string(i) + " is not finite");
  }
  FeatureRanking idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(values[a]) > std::abs(values[b]); });
  return idx;
}

inline FeatureRanking rank_features(const Attribution& a) { return rank_features(a.values); }

/// Mean |R| across samples; the "global" ranking mode.
inline std::vector<double> mean_magnitude(std::span<const Attribution> attrs) {
  if (attrs.empty()) throw ArgumentError("no attributions");
  std::vector<double> out(attrs.front().values.size(), 0.0);
  for (const auto& a : attrs) {
    if (a.values.size() != out.size()) throw ArgumentError("attribution lengths differ");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += std::abs(a.values[i]);
  }
  for (auto& v : out) v /= static_cast<double>(attrs.size());
  return out;
}

// ---- attribution dump ---------------------------------------------------

/// CSV rows `sample,feature_index,feature_name,value,rank` (rank is zero-based
/// position in rank_features order).
inline void write_attributions_csv(std::ostream& out, std::span<const Attribution> attrs,
                                   std::span<const std::string> feature_names) {
  out << "sample,feature_index,feature_name,value,rank\n";
  std::string buf;
  for (std::size_t s = 0; s < attrs.size(); ++s) {
    const auto& a = attrs[s];
    if (a.values.size() != feature_names.size()) throw ArgumentError("attribution length does not match names");
    const auto order = rank_features(a);
    std::vector<std::size_t> rank(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      buf.clear();
      detail::append_double(buf, a.values[i]);
      out << s << ',' << i << ',' << feature_names[i] << ',' << buf << ',' << rank[i] << '\n';
    }
  }
}

inline std::vector<Attribution> read_attributions_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "sample,feature_index,feature_name,value,rank") {
    throw FormatError("attribution CSV: bad header");
  }
  std::vector<Attribution> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos;) {
      cells.push_back(rest.substr(0, pos));
      rest.remove_prefix(pos + 1);
    }
    cells.push_back(rest);
    if (cells.size() != 5) throw FormatError("attribution CSV: expected 5 columns: " + line);
    const auto s = static_cast<std::size_t>(detail::parse_double(cells[0], "sample"));
    const auto i = static_cast<std::size_t>(detail::parse_double(cells[1], "feature_index"));
    if (s > out.size() || (s + 1 < out.size())) throw FormatError("attribution CSV: samples out of order");
    if (s == out.size()) out.emplace_back();
    if (i != out[s].values.size()) throw FormatError("attribution CSV: features out of order");
    out[s].values.push_back(detail::parse_double(cells[3], "value"));
  }
  return out;
}

inline nlohmann::json diagnostics_json(std::span<const Attribution> attrs) {
  nlohmann::json j;
  if (attrs.empty()) return j;
  j["method"] = to_string(attrs.front().method);
  j["output_space"] = to_string(attrs.front().output);
  j["n_samples"] = attrs.size();
  j["n_features"] = attrs.front().values.size();
  double worst = 0.0, mean = 0.0;
  std::size_t counted = 0;
  for (const auto& a : attrs) {
    if (std::isnan(a.completeness_gap)) continue;
    worst = std::max(worst, a.completeness_gap);
    mean += a.completeness_gap;
    ++counted;
  }
  if (counted > 0) {
    j["completeness_gap_max"] = worst;
    j["completeness_gap_mean"] = mean / static_cast<double>(counted);
  } else {
    j["completeness_gap_max"] = nullptr;
  }
  return j;
}

}  // namespace xea
