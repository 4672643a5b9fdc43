#pragma once

// Explanation-guided greedy evasion against a score-only oracle.
//
// The target model is reachable only through ScoreOracle; this header must
// not depend on the tree ensemble.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "xea/data.hpp"
#include "xea/error.hpp"
#include "xea/explain.hpp"
#include "xea/mlp.hpp"
#include "xea/oracle.hpp"
#include "xea/random.hpp"

namespace xea {

inline constexpr std::size_t kMaxGridSize = 32;

struct RegistryEntry {
  bool modifiable = false;
  std::vector<double> value_grid;
  std::string dependency_note;
};

/// One entry per schema feature.
struct ModifiabilityRegistry {
  std::vector<RegistryEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool modifiable(std::size_t i) const { return entries.at(i).modifiable; }

  std::vector<std::size_t> modifiable_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].modifiable) out.push_back(i);
    }
    return out;
  }
};

/// Throws SchemaError if the registry does not fit the schema.
inline void validate_registry(const ModifiabilityRegistry& reg, const FeatureSchema& schema) {
  if (reg.size() != schema.size()) {
    throw SchemaError("registry has " + std::to_string(reg.size()) + " entries, schema has " +
                      std::to_string(schema.size()));
  }
  for (std::size_t i = 0; i < reg.size(); ++i) {
    const auto& e = reg.entries[i];
    const auto& d = schema[i];
    if (!e.modifiable) continue;
    if (e.value_grid.empty()) throw SchemaError("modifiable feature '" + d.name + "' has an empty grid");
    if (e.value_grid.size() > kMaxGridSize) throw SchemaError("grid of '" + d.name + "' is too large");
    for (double v : e.value_grid) {
      if (!(v >= d.lo && v <= d.hi)) throw SchemaError("grid value out of bounds for '" + d.name + "'");
      if (is_integral_kind(d.kind) && v != std::round(v)) {
        throw SchemaError("non-integral grid value for '" + d.name + "'");
      }
    }
    if (d.kind == FeatureKind::simplex_component) {
      // Renormalization touches the rest of the group, so it must all be editable.
      const auto r = schema.range(d.group);
      for (std::size_t j = r.begin; j < r.end; ++j) {
        if (!reg.entries[j].modifiable) {
          throw SchemaError("simplex feature '" + d.name + "' shares a group with non-modifiable '" +
                            schema[j].name + "'");
        }
      }
    }
  }
}

inline const std::vector<double>& simplex_grid() {
  static const std::vector<double> g{0.0, 0.05, 0.1, 0.2, 0.4};
  return g;
}

/// Printable-distribution components plus the timestamp and CLR stand-ins.
inline ModifiabilityRegistry default_registry(const FeatureSchema& schema) {
  ModifiabilityRegistry reg;
  reg.entries.resize(schema.size());

  const auto strings = schema.range(FeatureGroup::strings);
  if (strings.size() >= 2) {
    for (std::size_t i = strings.begin; i < strings.end; ++i) {
      auto& e = reg.entries[i];
      e.modifiable = true;
      e.value_grid = simplex_grid();
      e.dependency_note = "other strings components rescaled to keep the group summing to 1";
    }
  }

  const std::pair<const char*, const char*> headers[] = {
      {"coff_header_timestamp", "link timestamp, ignored by the loader"},
      {"general_clr_runtime_size", ".NET runtime directory size, inert without mscoree.dll"},
      {"general_clr_runtime_va", ".NET runtime directory address, inert without mscoree.dll"},
  };
  for (const auto& [name, note] : headers) {
    const auto idx = schema.index_of(name);
    if (!idx) continue;
    const auto& d = schema[*idx];
    auto& e = reg.entries[*idx];
    e.modifiable = true;
    e.dependency_note = note;
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      double v = d.lo + q * (d.hi - d.lo);
      if (is_integral_kind(d.kind)) v = std::round(v);
      v = std::clamp(v, d.lo, d.hi);
      if (std::find(e.value_grid.begin(), e.value_grid.end(), v) == e.value_grid.end()) e.value_grid.push_back(v);
    }
  }
  return reg;
}

/// Sets x[feature] = value. In a simplex group the other components are
/// rescaled to sum to 1 - value (spread evenly if they were all zero).
inline void apply_modification(const FeatureSchema& schema, std::vector<double>& x, std::size_t feature,
                               double value) {
  if (x.size() != schema.size()) throw ArgumentError("sample does not match schema");
  const auto& d = schema.features().at(feature);
  if (d.kind != FeatureKind::simplex_component) {
    x[feature] = value;
    return;
  }
  const auto r = schema.range(d.group);
  const double rest_target = 1.0 - value;
  double rest = 0.0;
  for (std::size_t j = r.begin; j < r.end; ++j) {
    if (j != feature) rest += x[j];
  }
  for (std::size_t j = r.begin; j < r.end; ++j) {
    if (j == feature) continue;
    const double v = rest > 0.0 ? x[j] * (rest_target / rest) : rest_target / static_cast<double>(r.size() - 1);
    x[j] = std::clamp(v, 0.0, 1.0);
  }
  x[feature] = value;
}

/// The attacker's white-box model, possibly trained on a feature subset.
/// Attributions come back in the full feature space; features the model
/// never sees get zero.
class SubstituteView {
 public:
  SubstituteView(const MlpModel& model, std::size_t full_dim, std::vector<std::size_t> input_features = {})
      : model_(&model), full_dim_(full_dim), features_(std::move(input_features)) {
    if (features_.empty()) {
      if (model.input_dim != full_dim) throw ArgumentError("substitute input dim does not match the feature space");
    } else {
      if (features_.size() != model.input_dim) throw ArgumentError("substitute feature map does not match its input dim");
      for (auto f : features_) {
        if (f >= full_dim) throw ArgumentError("substitute feature map index out of range");
      }
    }
  }

  const MlpModel& model() const { return *model_; }
  std::size_t full_dim() const { return full_dim_; }

  std::vector<double> project(std::span<const double> x) const {
    if (x.size() != full_dim_) throw ArgumentError("sample does not match the feature space");
    if (features_.empty()) return {x.begin(), x.end()};
    return gather(x, features_);
  }

  Attribution explain(ExplainMethod method, std::span<const double> x, const ExplainerConfig& cfg) const {
    ExplainerConfig local = cfg;
    if (!cfg.baseline.empty()) local.baseline = project(cfg.baseline);
    local.shap_background.clear();
    for (const auto& b : cfg.shap_background) local.shap_background.push_back(project(b));
    auto a = xea::explain(method, *model_, project(x), local);
    if (features_.empty()) return a;
    std::vector<double> full(full_dim_, 0.0);
    for (std::size_t k = 0; k < features_.size(); ++k) full[features_[k]] = a.values[k];
    a.values = std::move(full);
    return a;
  }

 private:
  const MlpModel* model_;
  std::size_t full_dim_;
  std::vector<std::size_t> features_;
};

enum class AttackOutcome : std::uint8_t { evaded, budget_exhausted, no_modifiable_features };

inline std::string_view to_string(AttackOutcome o) {
  switch (o) {
    case AttackOutcome::evaded: return "evaded";
    case AttackOutcome::budget_exhausted: return "budget_exhausted";
    case AttackOutcome::no_modifiable_features: return "no_modifiable_features";
  }
  return "?";
}

struct AttackConfig {
  std::size_t max_features_modified = 20;
  std::size_t oracle_budget = 2000;
  double benign_threshold = 0.5;
  ExplainMethod explain_method = ExplainMethod::integrated_gradients;
  std::uint64_t seed = 1;
  /// Recompute the attribution after every committed step.
  bool reexplain = false;
};

struct AttackStep {
  std::size_t feature_index = 0;
  double old_value = 0.0;
  double new_value = 0.0;
  double oracle_score_after = 0.0;
};

struct AttackTrace {
  std::vector<AttackStep> steps;
  AttackOutcome outcome = AttackOutcome::budget_exhausted;
  std::size_t queries_used = 0;
  std::size_t grid_evaluations = 0;
  bool final_checked = false;
  std::size_t n_features_modified = 0;
  std::size_t features_visited = 0;
  double initial_score = 0.0;
  double final_score = 0.0;
  std::vector<double> final_sample;
};

namespace detail {

inline void check_attack_config(const AttackConfig& cfg) {
  if (cfg.max_features_modified < 1) throw ArgumentError("max_features_modified must be >= 1");
  if (cfg.oracle_budget < 1) throw ArgumentError("oracle_budget must be >= 1");
  if (!(cfg.benign_threshold > 0.0 && cfg.benign_threshold < 1.0)) {
    throw ArgumentError("benign_threshold must be in (0, 1)");
  }
}

inline std::vector<std::size_t> candidate_features(const ModifiabilityRegistry& reg, const FeatureMask* allowed) {
  std::vector<std::size_t> out;
  for (auto i : reg.modifiable_indices()) {
    if (allowed && allowed->size() > 0 && !allowed->test(i)) continue;
    out.push_back(i);
  }
  return out;
}

using OrderFn = std::function<std::vector<std::size_t>(const std::vector<double>&)>;

/// Shared greedy loop. `order` returns candidate features in visiting order
/// for the current sample; it is called once, or after each commit when
/// `reorder` is set.
inline AttackTrace greedy_attack(std::span<const double> sample, const ScoreOracle& oracle,
                                 const ModifiabilityRegistry& reg, const FeatureSchema& schema,
                                 const AttackConfig& cfg, const std::vector<std::size_t>& candidates,
                                 const OrderFn& order, bool reorder) {
  check_attack_config(cfg);
  if (reg.size() != schema.size() || sample.size() != schema.size()) {
    throw ArgumentError("sample, registry and schema sizes disagree");
  }
  AttackTrace trace;
  std::vector<double> x(sample.begin(), sample.end());
  auto query = [&](const std::vector<double>& v) {
    ++trace.queries_used;
    return oracle.score(v);
  };

  double current = query(x);
  trace.initial_score = current;
  if (current < cfg.benign_threshold) {
    throw PreconditionError("sample is already classified benign (score " + std::to_string(current) + ")");
  }

  if (candidates.empty()) {
    trace.outcome = AttackOutcome::no_modifiable_features;
  } else {
    std::vector<char> visited(schema.size(), 0);
    std::vector<std::size_t> plan = order(x);
    std::size_t pos = 0;
    bool stop = false;
    while (!stop && pos < plan.size()) {
      const std::size_t f = plan[pos++];
      if (visited[f]) continue;
      if (trace.n_features_modified >= cfg.max_features_modified) break;
      visited[f] = 1;
      ++trace.features_visited;

      double best = current;
      std::optional<double> best_value;
      for (double v : reg.entries[f].value_grid) {
        if (v == x[f]) continue;
        // keep one query for the final check
        if (trace.queries_used + 2 > cfg.oracle_budget) {
          stop = true;
          break;
        }
        auto cand = x;
        apply_modification(schema, cand, f, v);
        const double s = query(cand);
        ++trace.grid_evaluations;
        if (s < best) {
          best = s;
          best_value = v;
        }
      }
      if (!best_value) continue;

      const double old = x[f];
      apply_modification(schema, x, f, *best_value);
      current = best;
      trace.steps.push_back({f, old, *best_value, best});
      ++trace.n_features_modified;
      if (current < cfg.benign_threshold) break;
      if (reorder && !stop) {
        plan = order(x);
        pos = 0;
      }
    }
  }

  trace.final_score = current;
  if (trace.queries_used < cfg.oracle_budget) {
    trace.final_score = query(x);
    trace.final_checked = true;
  }
  if (trace.outcome != AttackOutcome::no_modifiable_features) {
    trace.outcome =
        trace.final_score < cfg.benign_threshold ? AttackOutcome::evaded : AttackOutcome::budget_exhausted;
  }
  trace.final_sample = std::move(x);
  return trace;
}

}  // namespace detail

/// Greedy attack visiting modifiable features by descending substitute
/// attribution magnitude. `allowed`, when given and non-empty, further
/// restricts which modifiable features may be used.
inline AttackTrace run_attack(std::span<const double> sample, const SubstituteView& substitute,
                              const ScoreOracle& oracle, const ModifiabilityRegistry& reg,
                              const FeatureSchema& schema, const ExplainerConfig& explainer,
                              const AttackConfig& cfg, const FeatureMask* allowed = nullptr) {
  if (!substitute.model().trained) throw PreconditionError("substitute model is not trained");
  const auto candidates = detail::candidate_features(reg, allowed);
  auto order = [&](const std::vector<double>& x) {
    const auto attr = substitute.explain(cfg.explain_method, x, explainer);
    std::vector<std::size_t> out;
    for (auto f : rank_features(attr)) {
      if (std::binary_search(candidates.begin(), candidates.end(), f)) out.push_back(f);
    }
    return out;
  };
  return detail::greedy_attack(sample, oracle, reg, schema, cfg, candidates, order, cfg.reexplain);
}

/// Same loop with a seeded uniform shuffle of the modifiable features.
inline AttackTrace random_order_attack(std::span<const double> sample, const ScoreOracle& oracle,
                                       const ModifiabilityRegistry& reg, const FeatureSchema& schema,
                                       const AttackConfig& cfg, const FeatureMask* allowed = nullptr) {
  const auto candidates = detail::candidate_features(reg, allowed);
  auto order = [&](const std::vector<double>&) {
    auto out = candidates;
    CounterRng rng(derive_seed(cfg.seed, 40));
    rng.shuffle(out.begin(), out.end());
    return out;
  };
  return detail::greedy_attack(sample, oracle, reg, schema, cfg, candidates, order, false);
}

/// Rebuilds every intermediate vector of a trace, starting from the sample.
inline std::vector<std::vector<double>> replay(const AttackTrace& trace, const FeatureSchema& schema,
                                               std::span<const double> sample) {
  std::vector<std::vector<double>> states{{sample.begin(), sample.end()}};
  for (const auto& s : trace.steps) {
    auto next = states.back();
    apply_modification(schema, next, s.feature_index, s.new_value);
    states.push_back(std::move(next));
  }
  return states;
}

enum class Ordering : std::uint8_t { guided, random };

struct CampaignConfig {
  AttackConfig attack;
  ExplainerConfig explainer;
  Ordering ordering = Ordering::guided;
  /// Empty means every registry-modifiable feature may be used.
  FeatureMask allowed;
  std::size_t workers = 1;
};

struct AttackReport {
  std::size_t n_eligible = 0;
  std::size_t n_evaded = 0;
  double effectiveness = 0.0;
  /// Mean features modified over evaded samples (0 when none evaded).
  double avg_perturbation = 0.0;
  /// Mean features modified over every eligible sample.
  double avg_perturbation_all = 0.0;
  std::size_t total_queries = 0;
  std::vector<std::size_t> sample_indices;
  std::vector<AttackTrace> traces;
};

/// Attacks every malicious test sample the oracle currently detects.
inline AttackReport run_campaign(const Dataset& test, const SubstituteView* substitute, const ScoreOracle& oracle,
                                 const ModifiabilityRegistry& reg, const CampaignConfig& cfg) {
  detail::check_attack_config(cfg.attack);
  if (cfg.ordering == Ordering::guided && substitute == nullptr) {
    throw ArgumentError("guided ordering needs a substitute model");
  }
  AttackReport report;
  for (std::size_t s = 0; s < test.size(); ++s) {
    if (test.labels[s] == 1 && oracle.score(test.rows[s]) >= cfg.attack.benign_threshold) {
      report.sample_indices.push_back(s);
    }
  }
  if (report.sample_indices.empty()) throw PreconditionError("no eligible samples (no detected malicious samples)");

  const FeatureMask* allowed = cfg.allowed.size() > 0 ? &cfg.allowed : nullptr;
  report.traces.resize(report.sample_indices.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < report.sample_indices.size();) {
      try {
        const std::size_t s = report.sample_indices[k];
        AttackConfig ac = cfg.attack;
        ac.seed = derive_seed(cfg.attack.seed, 1000 + s);
        ExplainerConfig ec = cfg.explainer;
        ec.seed = derive_seed(cfg.explainer.seed, 1000 + s);
        report.traces[k] = cfg.ordering == Ordering::guided
                               ? run_attack(test.rows[s], *substitute, oracle, reg, test.schema, ec, ac, allowed)
                               : random_order_attack(test.rows[s], oracle, reg, test.schema, ac, allowed);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, cfg.workers);
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  double pert_evaded = 0.0, pert_all = 0.0;
  for (const auto& t : report.traces) {
    report.total_queries += t.queries_used;
    pert_all += static_cast<double>(t.n_features_modified);
    if (t.outcome == AttackOutcome::evaded) {
      ++report.n_evaded;
      pert_evaded += static_cast<double>(t.n_features_modified);
    }
  }
  report.n_eligible = report.sample_indices.size();
  report.effectiveness = static_cast<double>(report.n_evaded) / static_cast<double>(report.n_eligible);
  report.avg_perturbation = report.n_evaded > 0 ? pert_evaded / static_cast<double>(report.n_evaded) : 0.0;
  report.avg_perturbation_all = pert_all / static_cast<double>(report.n_eligible);
  return report;
}

inline nlohmann::json trace_to_json(const AttackTrace& t, std::size_t sample_index) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps) {
    steps.push_back({{"feature_index", s.feature_index},
                     {"old_value", s.old_value},
                     {"new_value", s.new_value},
                     {"oracle_score_after", s.oracle_score_after}});
  }
  return {{"sample", sample_index},
          {"outcome", to_string(t.outcome)},
          {"initial_score", t.initial_score},
          {"final_score", t.final_score},
          {"queries_used", t.queries_used},
          {"n_features_modified", t.n_features_modified},
          {"features_visited", t.features_visited},
          {"steps", std::move(steps)}};
}

}  // namespace xea
