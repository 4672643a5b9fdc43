// xea: pipeline stages as subcommands, plus `report` which runs the full matrix.

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "xea/xea.hpp"

namespace {

using namespace xea;

FeatureMask load_mask_for(const std::string& path, std::size_t dim, const char* what) {
  auto m = load_mask(path);
  if (m.size() != dim) {
    throw SchemaError(std::string(what) + " mask '" + path + "' has " + std::to_string(m.size()) +
                      " features, dataset has " + std::to_string(dim));
  }
  return m;
}

std::vector<std::size_t> mask_indices(const std::string& path, std::size_t dim) {
  if (path.empty()) return {};
  const auto idx = load_mask_for(path, dim, "feature").indices();
  if (idx.empty()) throw SchemaError("feature mask '" + path + "' selects no features");
  return idx;
}

std::string first_line(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  return line;
}

void check_model_fits(std::size_t model_dim, const std::vector<std::size_t>& features, std::size_t data_dim,
                      const std::string& path) {
  const std::size_t expect = features.empty() ? data_dim : features.size();
  if (model_dim != expect) {
    throw SchemaError("model '" + path + "' takes " + std::to_string(model_dim) + " inputs, expected " +
                      std::to_string(expect));
  }
  for (auto f : features) {
    if (f >= data_dim) throw SchemaError("model '" + path + "' references feature " + std::to_string(f) +
                                         " beyond the dataset width");
  }
}

std::vector<std::size_t> parse_sample_list(std::size_t n_available, std::size_t limit) {
  std::vector<std::size_t> rows(std::min(limit, n_available));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

/// Runs f(i) for i in [0, n) on `workers` threads; results land by index.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& f) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto run = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

GroupWidths parse_widths(const std::string& spec) {
  if (spec.empty()) return default_widths();
  GroupWidths w;
  std::stringstream ss(spec);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ArgumentError("widths entry '" + item + "' is not group=N");
    w[item.substr(0, eq)] = static_cast<std::size_t>(std::stoul(item.substr(eq + 1)));
  }
  return w;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explainability transfer and explanation-guided evasion experiments"};
  app.require_subcommand(1);
  std::string stage;
  std::function<void()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
  std::string gen_out, gen_widths;
  std::size_t gen_n = 4000, gen_k = 12;
  double gen_balance = 0.5;
  std::uint64_t gen_seed = 7;
  GeneratorOptions gen_opts;
  gen->add_option("--out", gen_out, "dataset file")->required();
  gen->add_option("--samples", gen_n, "number of samples");
  gen->add_option("--informative", gen_k, "number of planted informative features");
  gen->add_option("--balance", gen_balance, "fraction of malicious samples");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--widths", gen_widths, "group widths, e.g. strings=12,general=4 (default desk widths)");
  gen->add_option("--separation", gen_opts.separation, "class mean gap of informative latents");
  gen->add_option("--shared-factor", gen_opts.shared_factor, "loading of the shared per-sample factor");
  gen->callback([&] {
    stage = "gen-data";
    action = [&] {
      const auto ds = generate(make_schema(parse_widths(gen_widths)), gen_n, gen_k, gen_balance, gen_seed, gen_opts);
      save_dataset(ds, gen_out);
      std::printf("wrote %zu samples x %zu features to %s\n", ds.size(), ds.dim(), gen_out.c_str());
    };
  });

  // gen-mask
  auto* gm = app.add_subcommand("gen-mask", "draw a random feature mask");
  std::string gm_data, gm_out;
  std::vector<std::string> gm_intersect;
  double gm_fraction = 0.5;
  std::uint64_t gm_seed = 1;
  auto* gm_data_opt = gm->add_option("--data", gm_data, "dataset whose schema the mask covers");
  gm->add_option("--out", gm_out, "mask file")->required();
  gm->add_option("--fraction", gm_fraction, "fraction of features kept");
  gm->add_option("--seed", gm_seed, "mask seed");
  gm->add_option("--intersect", gm_intersect, "write the intersection of two mask files instead of drawing one")
      ->expected(2)
      ->excludes(gm_data_opt);
  gm->callback([&] {
    stage = "gen-mask";
    action = [&] {
      FeatureMask m;
      if (!gm_intersect.empty()) {
        m = load_mask(gm_intersect[0]) & load_mask(gm_intersect[1]);
      } else {
        if (gm_data.empty()) throw ArgumentError("--data or --intersect is required");
        m = sample_feature_mask(load_dataset(gm_data).schema, gm_fraction, gm_seed);
      }
      save_mask(m, gm_out);
      std::printf("kept %zu of %zu features\n", m.popcount(), m.size());
    };
  });

  // split
  auto* sp = app.add_subcommand("split", "stratified train/test (or halves) split");
  std::string sp_in, sp_a, sp_b;
  double sp_fraction = 0.6;
  std::uint64_t sp_seed = 1;
  sp->add_option("--data", sp_in, "dataset to split")->required();
  sp->add_option("--train-out", sp_a, "first part")->required();
  sp->add_option("--test-out", sp_b, "second part")->required();
  sp->add_option("--fraction", sp_fraction, "share of the first part");
  sp->add_option("--seed", sp_seed, "split seed");
  sp->callback([&] {
    stage = "split";
    action = [&] {
      const auto [a, b] = split(load_dataset(sp_in), sp_fraction, sp_seed);
      save_dataset(a, sp_a);
      save_dataset(b, sp_b);
      std::printf("%zu / %zu samples\n", a.size(), b.size());
    };
  });

  // train-target
  auto* tt = app.add_subcommand("train-target", "train the gradient boosted target model");
  std::string tt_data, tt_mask, tt_out;
  GbdtConfig tt_cfg;
  tt->add_option("--data", tt_data, "training dataset")->required();
  tt->add_option("--mask", tt_mask, "train only on the masked features");
  tt->add_option("--out", tt_out, "model file")->required();
  tt->add_option("--trees", tt_cfg.n_trees, "boosting rounds");
  tt->add_option("--leaves", tt_cfg.max_leaves, "max leaves per tree");
  tt->add_option("--lr", tt_cfg.learning_rate, "shrinkage");
  tt->add_option("--min-leaf", tt_cfg.min_samples_leaf, "minimum samples per leaf");
  tt->add_option("--seed", tt_cfg.seed, "seed");
  tt->callback([&] {
    stage = "train-target";
    action = [&] {
      const auto ds = load_dataset(tt_data);
      const auto features = mask_indices(tt_mask, ds.dim());
      const auto model = train_gbdt(features.empty() ? ds : project_features(ds, features), tt_cfg);
      save_gbdt(model, tt_out, features);
      const auto oracle = as_oracle(model, features);
      std::size_t ok = 0;
      for (std::size_t s = 0; s < ds.size(); ++s) ok += (oracle.score(ds.rows[s]) >= 0.5) == (ds.labels[s] == 1);
      std::printf("%zu trees on %zu features, train accuracy %.4f\n", model.trees.size(), model.input_dim,
                  static_cast<double>(ok) / static_cast<double>(ds.size()));
    };
  });

  // train-substitute
  auto* ts = app.add_subcommand("train-substitute", "train the neural substitute model");
  std::string ts_data, ts_mask, ts_out;
  TrainConfig ts_cfg;
  ts->add_option("--data", ts_data, "training dataset")->required();
  ts->add_option("--mask", ts_mask, "train only on the masked features");
  ts->add_option("--out", ts_out, "model file")->required();
  ts->add_option("--hidden", ts_cfg.hidden_dims, "hidden layer widths")->delimiter(',');
  ts->add_option("--epochs", ts_cfg.epochs, "epochs");
  ts->add_option("--batch", ts_cfg.batch_size, "mini-batch size");
  ts->add_option("--lr", ts_cfg.learning_rate, "learning rate");
  ts->add_option("--dropout", ts_cfg.dropout_rate, "dropout rate");
  ts->add_option("--weight-decay", ts_cfg.weight_decay, "decoupled L2 weight decay");
  ts->add_option("--seed", ts_cfg.seed, "seed");
  ts->callback([&] {
    stage = "train-substitute";
    action = [&] {
      const auto ds = load_dataset(ts_data);
      const auto features = mask_indices(ts_mask, ds.dim());
      const auto local = features.empty() ? ds : project_features(ds, features);
      const auto model = train(init_mlp(local.dim(), ts_cfg.hidden_dims, ts_cfg.seed), local, ts_cfg);
      save_model(model, ts_out, features);
      std::printf("mlp on %zu features, train accuracy %.4f\n", model.input_dim, accuracy(model, local));
    };
  });

  // explain
  auto* ex = app.add_subcommand("explain", "attribute samples with one method");
  std::string ex_model, ex_data, ex_out, ex_diag, ex_method = "ig", ex_background, ex_output = "score";
  std::size_t ex_samples = 200, ex_bg = 16, ex_workers = 1;
  ExplainerConfig ex_cfg;
  ex_cfg.shap_samples = 16;
  ex->add_option("--model", ex_model, "substitute (XEAMLP1) or target (XEAGBT1, shap only) model")->required();
  ex->add_option("--data", ex_data, "samples to explain (first --samples rows)")->required();
  ex->add_option("--out", ex_out, "attribution CSV")->required();
  ex->add_option("--diagnostics", ex_diag, "JSON diagnostics file");
  ex->add_option("--method", ex_method, "ig | lrp | deeplift | shap | shap_exact");
  ex->add_option("--samples", ex_samples, "number of rows to explain");
  ex->add_option("--background", ex_background, "dataset to draw the SHAP background from (default: --data)");
  ex->add_option("--background-size", ex_bg, "SHAP background rows");
  ex->add_option("--shap-samples", ex_cfg.shap_samples, "SHAP permutations");
  ex->add_option("--ig-steps", ex_cfg.ig_steps, "IG path steps");
  ex->add_option("--epsilon", ex_cfg.lrp_epsilon, "LRP epsilon");
  ex->add_option("--output", ex_output, "score | logit");
  ex->add_option("--seed", ex_cfg.seed, "seed");
  ex->add_option("--workers", ex_workers, "worker threads");
  ex->callback([&] {
    stage = "explain";
    action = [&] {
      const auto ds = load_dataset(ex_data);
      const auto method = explain_method_from_string(ex_method);
      ex_cfg.output = output_space_from_string(ex_output);
      const auto bg_source = ex_background.empty() ? ds : load_dataset(ex_background);
      if (bg_source.dim() != ds.dim()) throw SchemaError("background dataset width differs from --data");
      if (method == ExplainMethod::shap_sampled || method == ExplainMethod::shap_exact) {
        ex_cfg.shap_background = sample_background(bg_source, ex_bg, derive_seed(ex_cfg.seed, 7));
      }
      const auto rows = parse_sample_list(ds.size(), ex_samples);
      std::vector<Attribution> attrs(rows.size());
      const auto magic = first_line(ex_model);
      if (magic == "XEAMLP1") {
        const auto loaded = load_model_file(ex_model);
        check_model_fits(loaded.model.input_dim, loaded.input_features, ds.dim(), ex_model);
        const SubstituteView view(loaded.model, ds.dim(), loaded.input_features);
        parallel_for(rows.size(), ex_workers, [&](std::size_t k) {
          auto c = ex_cfg;
          c.seed = derive_seed(ex_cfg.seed, k);
          attrs[k] = view.explain(method, ds.rows[rows[k]], c);
        });
      } else if (magic == "XEAGBT1") {
        if (method != ExplainMethod::shap_sampled) throw CapabilityError("tree models are explained with shap only");
        const auto loaded = load_gbdt_file(ex_model);
        check_model_fits(loaded.model.input_dim, loaded.input_features, ds.dim(), ex_model);
        parallel_for(rows.size(), ex_workers, [&](std::size_t k) {
          auto c = ex_cfg;
          c.seed = derive_seed(ex_cfg.seed, k);
          attrs[k] = explain_target(loaded.model, loaded.input_features, ds.rows[rows[k]], c);
        });
      } else {
        throw FormatError("'" + ex_model + "' is not a model file");
      }
      std::ofstream out(ex_out);
      if (!out) throw IoError("cannot write '" + ex_out + "'");
      std::vector<std::string> names;
      for (const auto& f : ds.schema.features()) names.push_back(f.name);
      write_attributions_csv(out, attrs, names);
      if (!ex_diag.empty()) {
        std::ofstream d(ex_diag);
        if (!d) throw IoError("cannot write '" + ex_diag + "'");
        d << diagnostics_json(attrs).dump(2) << '\n';
      }
      std::printf("%zu attributions (%s) written to %s\n", attrs.size(), ex_method.c_str(), ex_out.c_str());
    };
  });

  // rank-compare
  auto* rc = app.add_subcommand("rank-compare", "Kendall agreement of two attribution dumps");
  std::string rc_a, rc_b, rc_shared, rc_out, rc_scenario = "custom", rc_algorithm = "custom";
  std::size_t rc_workers = 1;
  bool rc_global = false;
  rc->add_option("--substitute", rc_a, "substitute attribution CSV (weights come from its ranks)")->required();
  rc->add_option("--target", rc_b, "target attribution CSV")->required();
  rc->add_option("--shared", rc_shared, "mask of features both models see");
  rc->add_option("--out", rc_out, "summary CSV (appended to stdout if omitted)");
  rc->add_option("--scenario", rc_scenario, "scenario label for the summary row");
  rc->add_option("--algorithm", rc_algorithm, "algorithm label for the summary row");
  rc->add_flag("--global", rc_global, "compare mean |R| per feature instead of per sample");
  rc->add_option("--workers", rc_workers, "worker threads");
  rc->callback([&] {
    stage = "rank-compare";
    action = [&] {
      auto read = [](const std::string& p) {
        std::ifstream in(p);
        if (!in) throw IoError("cannot open '" + p + "'");
        return read_attributions_csv(in);
      };
      const auto a = read(rc_a);
      const auto b = read(rc_b);
      if (a.empty() || b.empty()) throw FormatError("attribution file is empty");
      if (a.size() != b.size()) throw SchemaError("attribution files cover different sample counts");
      const std::size_t F = a.front().values.size();
      if (b.front().values.size() != F) throw SchemaError("attribution files cover different feature counts");
      const auto shared = rc_shared.empty() ? FeatureMask::all(F) : load_mask_for(rc_shared, F, "shared");
      AgreementSummary summary;
      if (rc_global) {
        summary = summarize({compare_models_global(a, b, shared)});
      } else {
        const auto keep = shared.indices();
        if (keep.size() < 2) throw ArgumentError("shared mask must keep at least 2 features");
        std::vector<RankAgreement> per(a.size());
        parallel_for(a.size(), rc_workers, [&](std::size_t s) {
          if (a[s].values.size() != F || b[s].values.size() != F) throw SchemaError("ragged attribution rows");
          per[s] = rank_agreement(detail::restricted_magnitude(a[s].values, keep),
                                  detail::restricted_magnitude(b[s].values, keep));
        });
        summary = summarize(std::move(per));
      }
      ExperimentReport r;
      r.transfer.push_back({rc_scenario, rc_algorithm, summary});
      const auto text = transferability_csv(r);
      if (rc_out.empty()) {
        std::fputs(text.c_str(), stdout);
      } else {
        std::ofstream out(rc_out);
        if (!out) throw IoError("cannot write '" + rc_out + "'");
        out << text;
      }
    };
  });

  // attack
  auto* at = app.add_subcommand("attack", "greedy evasion campaign against the target");
  std::string at_target, at_sub, at_data, at_allowed, at_traces, at_out, at_method = "ig", at_bg,
      at_scenario = "custom";
  bool at_random = false;
  std::size_t at_bg_n = 16;
  CampaignConfig at_cfg;
  at_cfg.explainer.shap_samples = 16;
  at->add_option("--target", at_target, "target model (XEAGBT1)")->required();
  at->add_option("--substitute", at_sub, "substitute model (XEAMLP1), required unless --random");
  at->add_option("--data", at_data, "test dataset")->required();
  at->add_option("--allowed", at_allowed, "mask restricting which features may be modified");
  at->add_option("--method", at_method, "attribution method ordering the features");
  at->add_flag("--random", at_random, "random feature order instead of attributions");
  at->add_option("--background", at_bg, "dataset for the SHAP background (default: --data)");
  at->add_option("--background-size", at_bg_n, "SHAP background rows");
  at->add_option("--max-features", at_cfg.attack.max_features_modified, "features modified per sample");
  at->add_option("--budget", at_cfg.attack.oracle_budget, "oracle queries per sample");
  at->add_option("--threshold", at_cfg.attack.benign_threshold, "benign decision threshold");
  at->add_flag("--reexplain", at_cfg.attack.reexplain, "recompute attributions after every commit");
  at->add_option("--seed", at_cfg.attack.seed, "seed");
  at->add_option("--workers", at_cfg.workers, "worker threads");
  at->add_option("--traces", at_traces, "JSON-lines trace file");
  at->add_option("--out", at_out, "summary CSV (stdout if omitted)");
  at->add_option("--scenario", at_scenario, "scenario label for the summary row");
  at->callback([&] {
    stage = "attack";
    action = [&] {
      const auto ds = load_dataset(at_data);
      if (first_line(at_target) != "XEAGBT1") throw FormatError("'" + at_target + "' is not a target model");
      const auto target = std::make_shared<LoadedGbdt>(load_gbdt_file(at_target));
      check_model_fits(target->model.input_dim, target->input_features, ds.dim(), at_target);
      const auto oracle = as_oracle(std::shared_ptr<const GbdtModel>(target, &target->model), target->input_features);
      const auto reg = default_registry(ds.schema);
      if (!at_allowed.empty()) at_cfg.allowed = load_mask_for(at_allowed, ds.dim(), "allowed");
      at_cfg.ordering = at_random ? Ordering::random : Ordering::guided;
      at_cfg.attack.explain_method = explain_method_from_string(at_method);
      at_cfg.explainer.seed = derive_seed(at_cfg.attack.seed, 7);

      std::optional<LoadedMlp> sub;
      std::optional<SubstituteView> view;
      if (!at_random) {
        if (at_sub.empty()) throw ArgumentError("--substitute is required for guided attacks");
        sub = load_model_file(at_sub);
        check_model_fits(sub->model.input_dim, sub->input_features, ds.dim(), at_sub);
        view.emplace(sub->model, ds.dim(), sub->input_features);
        const auto bg_source = at_bg.empty() ? ds : load_dataset(at_bg);
        at_cfg.explainer.shap_background = sample_background(bg_source, at_bg_n, at_cfg.explainer.seed);
      }
      const auto report = run_campaign(ds, view ? &*view : nullptr, oracle, reg, at_cfg);

      if (!at_traces.empty()) {
        std::ofstream tr(at_traces);
        if (!tr) throw IoError("cannot write '" + at_traces + "'");
        for (std::size_t k = 0; k < report.traces.size(); ++k) {
          tr << trace_to_json(report.traces[k], report.sample_indices[k]).dump() << '\n';
        }
      }
      ExperimentReport r;
      r.attack.push_back({at_scenario, at_random ? "random" : at_method, report});
      const auto text = attack_csv(r);
      if (at_out.empty()) {
        std::fputs(text.c_str(), stdout);
      } else {
        std::ofstream out(at_out);
        if (!out) throw IoError("cannot write '" + at_out + "'");
        out << text;
      }
    };
  });

  // report
  auto* rp = app.add_subcommand("report", "run every scenario and method and write both tables");
  std::string rp_config, rp_out = "report";
  std::optional<std::uint64_t> rp_seed;
  std::optional<std::size_t> rp_workers, rp_samples, rp_transfer, rp_max_features, rp_budget, rp_shap;
  std::optional<std::string> rp_output;
  bool rp_global = false, rp_dump = false;
  rp->add_option("--config", rp_config, "JSON config (see README)");
  rp->add_option("--out-dir", rp_out, "directory for the report files");
  rp->add_option("--seed", rp_seed, "master seed");
  rp->add_option("--workers", rp_workers, "worker threads for attack campaigns");
  rp->add_option("--samples", rp_samples, "dataset size");
  rp->add_option("--transfer-samples", rp_transfer, "test samples compared for transferability");
  rp->add_option("--max-features", rp_max_features, "attack: features modified per sample");
  rp->add_option("--budget", rp_budget, "attack: oracle queries per sample");
  rp->add_option("--shap-samples", rp_shap, "SHAP permutations");
  rp->add_option("--output", rp_output, "attribution output space: score | logit");
  rp->add_flag("--global", rp_global, "global (mean |R|) rankings instead of per-sample");
  rp->add_flag("--print-config", rp_dump, "print the effective config and exit");
  rp->callback([&] {
    stage = "report";
    action = [&] {
      auto cfg = rp_config.empty() ? ExperimentConfig{} : load_config(rp_config);
      if (rp_seed) cfg.seed = *rp_seed;
      if (rp_workers) cfg.workers = *rp_workers;
      if (rp_samples) cfg.n_samples = *rp_samples;
      if (rp_transfer) cfg.transfer_samples = *rp_transfer;
      if (rp_max_features) cfg.attack.max_features_modified = *rp_max_features;
      if (rp_budget) cfg.attack.oracle_budget = *rp_budget;
      if (rp_shap) cfg.shap_samples = *rp_shap;
      if (rp_output) cfg.output = output_space_from_string(*rp_output);
      if (rp_global) cfg.global_ranking = true;
      if (rp_dump) {
        std::printf("%s\n", config_to_json(cfg).dump(2).c_str());
        return;
      }
      const auto report = run_experiment(cfg);
      write_report(report, cfg, rp_out);
      std::fputs(report_markdown(report, cfg).c_str(), stdout);
      std::printf("\nreport written to %s/ in %.1f s\n", rp_out.c_str(), report.seconds_total);
    };
  });

  CLI11_PARSE(app, argc, argv);
  try {
    action();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "xea %s: %s\n", stage.c_str(), e.what());
    return 1;
  }
  return 0;
}
