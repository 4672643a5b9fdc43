#pragma once

// The three knowledge scenarios end to end: data, both models, attribution
// agreement and attack campaigns, rendered as CSV and markdown tables.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xea/attack.hpp"
#include "xea/data.hpp"
#include "xea/error.hpp"
#include "xea/explain.hpp"
#include "xea/gbdt.hpp"
#include "xea/mlp.hpp"
#include "xea/random.hpp"
#include "xea/rank.hpp"

namespace xea {

enum class Scenario : std::uint8_t { same_train_same_features, diff_train_same_features, diff_train_diff_features };

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::same_train_same_features: return "same_train_same_features";
    case Scenario::diff_train_same_features: return "diff_train_same_features";
    case Scenario::diff_train_diff_features: return "diff_train_diff_features";
  }
  return "?";
}

inline Scenario scenario_from_string(std::string_view s) {
  for (auto v : {Scenario::same_train_same_features, Scenario::diff_train_same_features,
                 Scenario::diff_train_diff_features}) {
    if (to_string(v) == s) return v;
  }
  throw ArgumentError("unknown scenario '" + std::string(s) + "'");
}

inline bool splits_training(Scenario s) { return s != Scenario::same_train_same_features; }
inline bool masks_features(Scenario s) { return s == Scenario::diff_train_diff_features; }

struct ExperimentConfig {
  std::uint64_t seed = 7;

  // dataset
  GroupWidths widths = default_widths();
  std::size_t n_samples = 4000;
  std::size_t n_informative = 12;
  double class_balance = 0.5;
  GeneratorOptions generator;
  double train_fraction = 0.6;
  double mask_fraction = 0.5;

  GbdtConfig target;
  TrainConfig substitute;

  // attribution
  std::size_t ig_steps = 64;
  double lrp_epsilon = 1e-4;
  std::size_t shap_samples = 16;
  std::size_t shap_background = 16;
  OutputSpace output = OutputSpace::score;

  // agreement
  std::size_t transfer_samples = 200;
  bool global_ranking = false;

  AttackConfig attack;
  std::vector<Scenario> scenarios = {Scenario::same_train_same_features, Scenario::diff_train_same_features,
                                     Scenario::diff_train_diff_features};
  std::vector<ExplainMethod> methods = {ExplainMethod::integrated_gradients, ExplainMethod::eps_lrp,
                                        ExplainMethod::deeplift, ExplainMethod::shap_sampled};
  std::size_t workers = 1;
};

// ---- config file ---------------------------------------------------------

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw FormatError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json scenarios = nlohmann::json::array(), methods = nlohmann::json::array();
  for (auto s : c.scenarios) scenarios.push_back(std::string(to_string(s)));
  for (auto m : c.methods) methods.push_back(std::string(to_string(m)));
  return {
      {"seed", c.seed},
      {"dataset",
       {{"widths", c.widths},
        {"n_samples", c.n_samples},
        {"n_informative", c.n_informative},
        {"class_balance", c.class_balance},
        {"separation", c.generator.separation},
        {"shared_factor", c.generator.shared_factor},
        {"train_fraction", c.train_fraction},
        {"mask_fraction", c.mask_fraction}}},
      {"target",
       {{"n_trees", c.target.n_trees},
        {"max_leaves", c.target.max_leaves},
        {"learning_rate", c.target.learning_rate},
        {"min_samples_leaf", c.target.min_samples_leaf}}},
      {"substitute",
       {{"hidden_dims", c.substitute.hidden_dims},
        {"epochs", c.substitute.epochs},
        {"batch_size", c.substitute.batch_size},
        {"learning_rate", c.substitute.learning_rate},
        {"dropout_rate", c.substitute.dropout_rate},
        {"weight_decay", c.substitute.weight_decay}}},
      {"explain",
       {{"ig_steps", c.ig_steps},
        {"lrp_epsilon", c.lrp_epsilon},
        {"shap_samples", c.shap_samples},
        {"shap_background", c.shap_background},
        {"output", std::string(to_string(c.output))}}},
      {"transfer", {{"n_samples", c.transfer_samples}, {"global_ranking", c.global_ranking}}},
      {"attack",
       {{"max_features_modified", c.attack.max_features_modified},
        {"oracle_budget", c.attack.oracle_budget},
        {"benign_threshold", c.attack.benign_threshold},
        {"reexplain", c.attack.reexplain}}},
      {"scenarios", scenarios},
      {"methods", methods},
      {"workers", c.workers},
  };
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  ExperimentConfig c;
  try {
    detail::reject_unknown(j, {"seed", "dataset", "target", "substitute", "explain", "transfer", "attack", "scenarios",
                               "methods", "workers"},
                           "config");
    read_opt(j, "seed", c.seed);
    read_opt(j, "workers", c.workers);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      detail::reject_unknown(d, {"widths", "n_samples", "n_informative", "class_balance", "separation", "shared_factor",
                                 "train_fraction", "mask_fraction"},
                             "config.dataset");
      read_opt(d, "widths", c.widths);
      read_opt(d, "n_samples", c.n_samples);
      read_opt(d, "n_informative", c.n_informative);
      read_opt(d, "class_balance", c.class_balance);
      read_opt(d, "separation", c.generator.separation);
      read_opt(d, "shared_factor", c.generator.shared_factor);
      read_opt(d, "train_fraction", c.train_fraction);
      read_opt(d, "mask_fraction", c.mask_fraction);
    }
    if (j.contains("target")) {
      const auto& t = j.at("target");
      detail::reject_unknown(t, {"n_trees", "max_leaves", "learning_rate", "min_samples_leaf"}, "config.target");
      read_opt(t, "n_trees", c.target.n_trees);
      read_opt(t, "max_leaves", c.target.max_leaves);
      read_opt(t, "learning_rate", c.target.learning_rate);
      read_opt(t, "min_samples_leaf", c.target.min_samples_leaf);
    }
    if (j.contains("substitute")) {
      const auto& s = j.at("substitute");
      detail::reject_unknown(s, {"hidden_dims", "epochs", "batch_size", "learning_rate", "dropout_rate", "weight_decay"},
                             "config.substitute");
      read_opt(s, "hidden_dims", c.substitute.hidden_dims);
      read_opt(s, "epochs", c.substitute.epochs);
      read_opt(s, "batch_size", c.substitute.batch_size);
      read_opt(s, "learning_rate", c.substitute.learning_rate);
      read_opt(s, "dropout_rate", c.substitute.dropout_rate);
      read_opt(s, "weight_decay", c.substitute.weight_decay);
    }
    if (j.contains("explain")) {
      const auto& e = j.at("explain");
      detail::reject_unknown(e, {"ig_steps", "lrp_epsilon", "shap_samples", "shap_background", "output"}, "config.explain");
      read_opt(e, "ig_steps", c.ig_steps);
      read_opt(e, "lrp_epsilon", c.lrp_epsilon);
      read_opt(e, "shap_samples", c.shap_samples);
      read_opt(e, "shap_background", c.shap_background);
      if (e.contains("output")) c.output = output_space_from_string(e.at("output").get<std::string>());
    }
    if (j.contains("transfer")) {
      const auto& t = j.at("transfer");
      detail::reject_unknown(t, {"n_samples", "global_ranking"}, "config.transfer");
      read_opt(t, "n_samples", c.transfer_samples);
      read_opt(t, "global_ranking", c.global_ranking);
    }
    if (j.contains("attack")) {
      const auto& a = j.at("attack");
      detail::reject_unknown(a, {"max_features_modified", "oracle_budget", "benign_threshold", "reexplain"},
                             "config.attack");
      read_opt(a, "max_features_modified", c.attack.max_features_modified);
      read_opt(a, "oracle_budget", c.attack.oracle_budget);
      read_opt(a, "benign_threshold", c.attack.benign_threshold);
      read_opt(a, "reexplain", c.attack.reexplain);
    }
    if (j.contains("scenarios")) {
      c.scenarios.clear();
      for (const auto& s : j.at("scenarios")) c.scenarios.push_back(scenario_from_string(s.get<std::string>()));
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods")) c.methods.push_back(explain_method_from_string(m.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config '" + path + "': " + e.what());
  }
}

// ---- seeds ---------------------------------------------------------------
// Every stage seed is derived from the master seed with a fixed tag.

struct StageSeeds {
  std::uint64_t data, split, halves, mask_a, mask_b, target, substitute, background, attack, random_ranking;

  explicit StageSeeds(std::uint64_t master)
      : data(master),
        split(derive_seed(master, 100)),
        halves(derive_seed(master, 101)),
        mask_a(derive_seed(master, 102)),
        mask_b(derive_seed(master, 103)),
        target(derive_seed(master, 104)),
        substitute(derive_seed(master, 105)),
        background(derive_seed(master, 106)),
        attack(derive_seed(master, 107)),
        random_ranking(derive_seed(master, 108)) {}
};

// ---- pipeline pieces -----------------------------------------------------

/// Seeded draw of `n` rows (without replacement) to serve as SHAP background.
inline std::vector<std::vector<double>> sample_background(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (ds.size() == 0) throw ArgumentError("cannot draw a background from an empty dataset");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  CounterRng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(std::min(n, idx.size()));
  std::sort(idx.begin(), idx.end());
  std::vector<std::vector<double>> out;
  for (auto i : idx) out.push_back(ds.rows[i]);
  return out;
}

/// Target-side attribution: sampled SHAP on the tree ensemble, computed in
/// the model's own columns and expanded to the full feature space.
inline Attribution explain_target(const GbdtModel& model, std::span<const std::size_t> features,
                                  std::span<const double> x, const ExplainerConfig& cfg) {
  if (features.empty()) {
    return shap_sampled([&](std::span<const double> z) { return score(model, z); }, x, cfg);
  }
  ExplainerConfig local = cfg;
  local.shap_background.clear();
  for (const auto& b : cfg.shap_background) local.shap_background.push_back(gather(b, features));
  auto a = shap_sampled([&](std::span<const double> z) { return score(model, z); }, gather(x, features), local);
  std::vector<double> full(x.size(), 0.0);
  for (std::size_t k = 0; k < features.size(); ++k) full[features[k]] = a.values[k];
  a.values = std::move(full);
  return a;
}

struct TransferRow {
  std::string scenario;
  std::string algorithm;
  AgreementSummary summary;
};

struct AttackRow {
  std::string scenario;
  std::string algorithm;
  AttackReport report;
};

struct ScenarioTelemetry {
  std::string scenario;
  double target_accuracy = 0.0;
  double target_fpr = 0.0;
  double substitute_accuracy = 0.0;
  std::size_t target_features = 0;
  std::size_t substitute_features = 0;
  std::size_t shared_features = 0;
  std::size_t modifiable_pool = 0;
  std::size_t train_overlap = 0;
  std::uint64_t oracle_queries = 0;
  double seconds_train = 0.0;
  double seconds_transfer = 0.0;
  double seconds_attack = 0.0;
};

struct ExperimentReport {
  std::vector<TransferRow> transfer;
  std::vector<AttackRow> attack;
  std::vector<ScenarioTelemetry> telemetry;
  std::vector<std::size_t> informative_indices;
  double seconds_total = 0.0;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

inline std::size_t row_overlap(const Dataset& a, const Dataset& b) {
  std::set<std::vector<double>> seen(a.rows.begin(), a.rows.end());
  std::size_t n = 0;
  for (const auto& r : b.rows) n += seen.count(r);
  return n;
}

inline double false_positive_rate(const ScoreOracle& oracle, const Dataset& ds) {
  std::size_t neg = 0, fp = 0;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    if (ds.labels[s] != 0) continue;
    ++neg;
    fp += oracle.score(ds.rows[s]) >= 0.5;
  }
  return neg == 0 ? 0.0 : static_cast<double>(fp) / static_cast<double>(neg);
}

}  // namespace detail

/// Everything one scenario needs after training, kept for inspection.
struct ScenarioModels {
  Scenario scenario{};
  std::shared_ptr<const GbdtModel> target;
  std::vector<std::size_t> target_features;  // empty: all
  MlpModel substitute;
  std::vector<std::size_t> substitute_features;
  FeatureMask shared;
  Dataset target_train;
  Dataset substitute_train;
};

inline ScenarioModels train_scenario(Scenario scenario, const ExperimentConfig& cfg, const Dataset& pool) {
  const StageSeeds seeds(cfg.seed);
  ScenarioModels m;
  m.scenario = scenario;
  if (splits_training(scenario)) {
    std::tie(m.target_train, m.substitute_train) = split(pool, 0.5, seeds.halves);
  } else {
    m.target_train = pool;
    m.substitute_train = pool;
  }
  const std::size_t F = pool.dim();
  if (masks_features(scenario)) {
    const auto a = sample_feature_mask(pool.schema, cfg.mask_fraction, seeds.mask_a);
    const auto b = sample_feature_mask(pool.schema, cfg.mask_fraction, seeds.mask_b);
    m.target_features = a.indices();
    m.substitute_features = b.indices();
    m.shared = a & b;
  } else {
    m.shared = FeatureMask::all(F);
  }

  auto tcfg = cfg.target;
  tcfg.seed = seeds.target;
  const Dataset t_data = m.target_features.empty() ? m.target_train : project_features(m.target_train, m.target_features);
  m.target = std::make_shared<const GbdtModel>(train_gbdt(t_data, tcfg));

  auto scfg = cfg.substitute;
  scfg.seed = seeds.substitute;
  const Dataset s_data =
      m.substitute_features.empty() ? m.substitute_train : project_features(m.substitute_train, m.substitute_features);
  m.substitute = train(init_mlp(s_data.dim(), scfg.hidden_dims, scfg.seed), s_data, scfg);
  return m;
}

inline ExplainerConfig base_explainer(const ExperimentConfig& cfg) {
  ExplainerConfig e;
  e.ig_steps = cfg.ig_steps;
  e.lrp_epsilon = cfg.lrp_epsilon;
  e.shap_samples = cfg.shap_samples;
  e.output = cfg.output;
  e.seed = StageSeeds(cfg.seed).background;
  return e;
}

/// Generates the data once and runs every configured scenario.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  const StageSeeds seeds(cfg.seed);
  const auto schema = make_schema(cfg.widths);
  const auto data = generate(schema, cfg.n_samples, cfg.n_informative, cfg.class_balance, seeds.data, cfg.generator);
  const auto [train_set, test_set] = split(data, cfg.train_fraction, seeds.split);
  if (test_set.size() < cfg.transfer_samples) throw ArgumentError("test set smaller than transfer sample count");
  const auto registry = default_registry(schema);

  std::vector<std::size_t> first(cfg.transfer_samples);
  std::iota(first.begin(), first.end(), std::size_t{0});
  const auto probe = select_rows(test_set, first);

  ExperimentReport report;
  report.informative_indices = data.informative_indices;
  for (const auto scenario : cfg.scenarios) {
    const std::string sname(to_string(scenario));
    ScenarioTelemetry tel;
    tel.scenario = sname;

    auto t = std::chrono::steady_clock::now();
    const auto models = train_scenario(scenario, cfg, train_set);
    tel.seconds_train = detail::seconds_since(t);
    const auto oracle = as_oracle(models.target, models.target_features);
    const SubstituteView view(models.substitute, schema.size(), models.substitute_features);
    {
      std::size_t ok = 0, ok_sub = 0;
      for (std::size_t s = 0; s < test_set.size(); ++s) {
        ok += (oracle.score(test_set.rows[s]) >= 0.5 ? 1 : 0) == test_set.labels[s];
        ok_sub += (predict(models.substitute, view.project(test_set.rows[s])) >= 0.5 ? 1 : 0) == test_set.labels[s];
      }
      tel.target_accuracy = static_cast<double>(ok) / static_cast<double>(test_set.size());
      tel.substitute_accuracy = static_cast<double>(ok_sub) / static_cast<double>(test_set.size());
      tel.target_fpr = detail::false_positive_rate(oracle, test_set);
    }
    tel.target_features = models.target_features.empty() ? schema.size() : models.target_features.size();
    tel.substitute_features = models.substitute_features.empty() ? schema.size() : models.substitute_features.size();
    tel.shared_features = models.shared.popcount();
    tel.train_overlap = splits_training(scenario) ? detail::row_overlap(models.target_train, models.substitute_train)
                                                  : models.target_train.size();
    const FeatureMask allowed = masks_features(scenario) ? models.shared : FeatureMask{};
    tel.modifiable_pool = detail::candidate_features(registry, allowed.size() ? &allowed : nullptr).size();

    // Agreement between substitute and target attributions.
    t = std::chrono::steady_clock::now();
    auto target_cfg = base_explainer(cfg);
    target_cfg.shap_background = sample_background(models.target_train, cfg.shap_background, seeds.background);
    auto sub_cfg = base_explainer(cfg);
    sub_cfg.shap_background = sample_background(models.substitute_train, cfg.shap_background, seeds.background);

    std::vector<Attribution> target_attr;
    target_attr.reserve(probe.size());
    for (std::size_t s = 0; s < probe.size(); ++s) {
      auto c = target_cfg;
      c.seed = derive_seed(target_cfg.seed, s);
      target_attr.push_back(explain_target(*models.target, models.target_features, probe.rows[s], c));
    }
    auto compare = [&](const std::vector<Attribution>& sub_attr) {
      if (!cfg.global_ranking) return compare_models(sub_attr, target_attr, models.shared);
      return summarize({compare_models_global(sub_attr, target_attr, models.shared)});
    };
    for (const auto method : cfg.methods) {
      std::vector<Attribution> sub_attr;
      sub_attr.reserve(probe.size());
      for (std::size_t s = 0; s < probe.size(); ++s) {
        auto c = sub_cfg;
        c.seed = derive_seed(sub_cfg.seed, s);
        sub_attr.push_back(view.explain(method, probe.rows[s], c));
      }
      report.transfer.push_back({sname, std::string(to_string(method)), compare(sub_attr)});
    }
    report.transfer.push_back(
        {sname, "random", compare(random_attributions(probe.size(), schema.size(), seeds.random_ranking))});
    tel.seconds_transfer = detail::seconds_since(t);

    // Attack campaigns, guided by each method, then random order.
    t = std::chrono::steady_clock::now();
    CampaignConfig cc;
    cc.attack = cfg.attack;
    cc.attack.seed = seeds.attack;
    cc.explainer = sub_cfg;
    cc.allowed = allowed;
    cc.workers = cfg.workers;
    for (const auto method : cfg.methods) {
      cc.ordering = Ordering::guided;
      cc.attack.explain_method = method;
      report.attack.push_back({sname, std::string(to_string(method)), run_campaign(test_set, &view, oracle, registry, cc)});
    }
    cc.ordering = Ordering::random;
    report.attack.push_back({sname, "random", run_campaign(test_set, &view, oracle, registry, cc)});
    tel.seconds_attack = detail::seconds_since(t);
    tel.oracle_queries = oracle.queries();
    report.telemetry.push_back(tel);
  }
  report.seconds_total = detail::seconds_since(t_start);
  return report;
}

// ---- rendering -----------------------------------------------------------

namespace detail {

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Unknown labels (hand-run stages) sort after the three scenarios.
inline std::size_t scenario_order(const std::string& s) {
  for (auto v : {Scenario::same_train_same_features, Scenario::diff_train_same_features,
                 Scenario::diff_train_diff_features}) {
    if (to_string(v) == s) return static_cast<std::size_t>(v);
  }
  return 3;
}

inline std::size_t algorithm_order(const std::string& a) {
  static const std::vector<std::string> order{"ig", "lrp", "deeplift", "shap", "shap_exact", "random"};
  const auto it = std::find(order.begin(), order.end(), a);
  return static_cast<std::size_t>(it - order.begin());
}

template <class Row>
std::vector<const Row*> sorted_rows(const std::vector<Row>& rows) {
  std::vector<const Row*> out;
  for (const auto& r : rows) out.push_back(&r);
  std::stable_sort(out.begin(), out.end(), [](const Row* a, const Row* b) {
    const auto ka = std::tuple{scenario_order(a->scenario), a->scenario, algorithm_order(a->algorithm), a->algorithm};
    const auto kb = std::tuple{scenario_order(b->scenario), b->scenario, algorithm_order(b->algorithm), b->algorithm};
    return ka < kb;
  });
  return out;
}

}  // namespace detail

inline std::string transferability_csv(const ExperimentReport& r) {
  std::ostringstream out;
  out << "scenario,algorithm,mean_tau_w,mean_tau,std_tau_w,std_tau,n_samples\n";
  for (const auto* row : detail::sorted_rows(r.transfer)) {
    const auto& s = row->summary;
    out << row->scenario << ',' << row->algorithm << ',' << detail::fixed(s.mean_tau_w) << ','
        << detail::fixed(s.mean_tau) << ',' << detail::fixed(s.std_tau_w) << ',' << detail::fixed(s.std_tau) << ','
        << s.n_samples() << '\n';
  }
  return out.str();
}

inline std::string attack_csv(const ExperimentReport& r) {
  std::ostringstream out;
  out << "scenario,algorithm,effectiveness,avg_perturbation,n_eligible,n_evaded,avg_perturbation_all,mean_queries\n";
  for (const auto* row : detail::sorted_rows(r.attack)) {
    const auto& a = row->report;
    out << row->scenario << ',' << row->algorithm << ',' << detail::fixed(a.effectiveness) << ','
        << detail::fixed(a.avg_perturbation) << ',' << a.n_eligible << ',' << a.n_evaded << ','
        << detail::fixed(a.avg_perturbation_all) << ','
        << detail::fixed(static_cast<double>(a.total_queries) / static_cast<double>(a.n_eligible), 3) << '\n';
  }
  return out.str();
}

inline std::string report_markdown(const ExperimentReport& r, const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "# Transferability and attack report\n\n";
  out << "Seed " << cfg.seed << ", " << cfg.n_samples << " samples, " << cfg.n_informative
      << " informative features. Timings are in report_env.json.\n\n";
  out << "## Transferability (tau_w | tau)\n\n| scenario | algorithm | tau_w | tau | std tau_w | n |\n|---|---|---|---|---|---|\n";
  for (const auto* row : detail::sorted_rows(r.transfer)) {
    const auto& s = row->summary;
    out << "| " << row->scenario << " | " << row->algorithm << " | " << detail::fixed(s.mean_tau_w, 3) << " | "
        << detail::fixed(s.mean_tau, 3) << " | " << detail::fixed(s.std_tau_w, 3) << " | " << s.n_samples() << " |\n";
  }
  out << "\n## Attack (effectiveness | avg perturbation)\n\n"
         "| scenario | algorithm | effectiveness | avg perturbation | evaded / eligible |\n|---|---|---|---|---|\n";
  for (const auto* row : detail::sorted_rows(r.attack)) {
    const auto& a = row->report;
    out << "| " << row->scenario << " | " << row->algorithm << " | " << detail::fixed(100.0 * a.effectiveness, 2)
        << "% | " << detail::fixed(a.avg_perturbation, 2) << " | " << a.n_evaded << " / " << a.n_eligible << " |\n";
  }
  out << "\n## Models\n\n| scenario | target acc | target FPR | substitute acc | target F | substitute F | shared F | "
         "attack pool |\n|---|---|---|---|---|---|---|---|\n";
  for (const auto& t : r.telemetry) {
    out << "| " << t.scenario << " | " << detail::fixed(t.target_accuracy, 3) << " | " << detail::fixed(t.target_fpr, 3)
        << " | " << detail::fixed(t.substitute_accuracy, 3) << " | " << t.target_features << " | "
        << t.substitute_features << " | " << t.shared_features << " | " << t.modifiable_pool << " |\n";
  }
  return out.str();
}

inline nlohmann::json environment_json(const ExperimentReport& r, const ExperimentConfig& cfg) {
  nlohmann::json scen = nlohmann::json::array();
  for (const auto& t : r.telemetry) {
    scen.push_back({{"scenario", t.scenario},
                    {"target_accuracy", t.target_accuracy},
                    {"target_fpr", t.target_fpr},
                    {"substitute_accuracy", t.substitute_accuracy},
                    {"shared_features", t.shared_features},
                    {"modifiable_pool", t.modifiable_pool},
                    {"train_overlap_rows", t.train_overlap},
                    {"oracle_queries", t.oracle_queries},
                    {"seconds_train", t.seconds_train},
                    {"seconds_transfer", t.seconds_transfer},
                    {"seconds_attack", t.seconds_attack}});
  }
  return {{"config", config_to_json(cfg)},
          {"informative_indices", r.informative_indices},
          {"compiler", __VERSION__},
          {"cplusplus", __cplusplus},
          {"scenarios", scen},
          {"seconds_total", r.seconds_total}};
}

/// Writes report_transferability.csv, report_attack.csv, report.md and
/// report_env.json into `dir`.
inline void write_report(const ExperimentReport& r, const ExperimentConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::string& name, const std::string& text) {
    const auto path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
  };
  put("report_transferability.csv", transferability_csv(r));
  put("report_attack.csv", attack_csv(r));
  put("report.md", report_markdown(r, cfg));
  put("report_env.json", environment_json(r, cfg).dump(2) + "\n");
}

}  // namespace xea
