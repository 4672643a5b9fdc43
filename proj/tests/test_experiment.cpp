#include <gtest/gtest.h>

#include <cstdlib>

#include "common.hpp"
#include "pe_fixtures.hpp"

using namespace xea;
namespace fs = std::filesystem;

namespace {

// Small enough to run the whole matrix in a few seconds.
ExperimentConfig small_config() {
  ExperimentConfig c;
  c.seed = 21;
  c.n_samples = 700;
  c.transfer_samples = 25;
  c.target.n_trees = 15;
  c.substitute.epochs = 8;
  c.ig_steps = 16;
  c.shap_samples = 4;
  c.shap_background = 8;
  c.attack.max_features_modified = 5;
  c.attack.oracle_budget = 200;
  return c;
}

Dataset pool_for(const ExperimentConfig& c) {
  const StageSeeds seeds(c.seed);
  const auto data = generate(make_schema(c.widths), c.n_samples, c.n_informative, c.class_balance, seeds.data);
  return split(data, c.train_fraction, seeds.split).first;
}

const ExperimentReport& small_report() {
  static const ExperimentReport r = run_experiment(small_config());
  return r;
}

struct Run {
  int code;
  std::string output;
};

Run run(const fs::path& dir, const std::string& args, const char* binary = XEA_CLI_PATH) {
  const auto log = dir / "cmd.log";
  const std::string cmd = "cd '" + dir.string() + "' && '" + binary + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), xea::testing::slurp(log)};
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  auto c = small_config();
  c.methods = {ExplainMethod::integrated_gradients, ExplainMethod::shap_sampled};
  c.scenarios = {Scenario::diff_train_diff_features};
  c.output = OutputSpace::logit;
  const auto j = config_to_json(c);
  const auto back = config_from_json(j);
  EXPECT_EQ(config_to_json(back), j);
  EXPECT_EQ(back.methods, c.methods);
  EXPECT_EQ(back.scenarios, c.scenarios);
  // partial configs keep defaults
  const auto partial = config_from_json(nlohmann::json::parse(R"({"seed": 3, "attack": {"oracle_budget": 10}})"));
  EXPECT_EQ(partial.seed, 3u);
  EXPECT_EQ(partial.attack.oracle_budget, 10u);
  EXPECT_EQ(partial.n_samples, ExperimentConfig{}.n_samples);
}

TEST(Config, StrictKeysAndTypes) {
  for (const char* bad : {R"({"sed": 3})", R"({"dataset": {"n_sample": 10}})", R"({"attack": {"budget": 1}})",
                          R"({"seed": "seven"})", R"({"scenarios": ["nope"]})", R"({"methods": ["lemna"]})",
                          R"({"explain": {"output": "prob"}})", R"([1, 2])"}) {
    EXPECT_THROW(config_from_json(nlohmann::json::parse(bad)), FormatError) << bad;
  }
  const auto dir = xea::testing::scratch_dir("config");
  EXPECT_THROW(load_config((dir / "missing.json").string()), IoError);
  std::ofstream(dir / "broken.json") << "{ \"seed\": ";
  EXPECT_THROW(load_config((dir / "broken.json").string()), FormatError);
  std::ofstream(dir / "ok.json") << R"({"seed": 11, "workers": 2})";
  EXPECT_EQ(load_config((dir / "ok.json").string()).workers, 2u);
}

TEST(Seeds, StagesDiffer) {
  const StageSeeds s(7);
  const std::set<std::uint64_t> all{s.data,       s.split,  s.halves,     s.mask_a, s.mask_b,
                                    s.target,     s.substitute, s.background, s.attack, s.random_ranking};
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(s.data, 7u);
}

TEST(Scenario, Isolation) {
  const auto cfg = small_config();
  const auto pool = pool_for(cfg);

  const auto same = train_scenario(Scenario::same_train_same_features, cfg, pool);
  EXPECT_EQ(same.target_train.rows, pool.rows);
  EXPECT_EQ(same.substitute_train.rows, pool.rows);
  EXPECT_EQ(same.shared.popcount(), pool.dim());

  const auto halves = train_scenario(Scenario::diff_train_same_features, cfg, pool);
  EXPECT_EQ(halves.target_train.size() + halves.substitute_train.size(), pool.size());
  EXPECT_LE(std::abs(static_cast<long>(halves.target_train.size()) - static_cast<long>(halves.substitute_train.size())), 1);
  std::set<std::vector<double>> a(halves.target_train.rows.begin(), halves.target_train.rows.end());
  for (const auto& r : halves.substitute_train.rows) EXPECT_EQ(a.count(r), 0u);
  EXPECT_EQ(halves.substitute.input_dim, pool.dim());
}

TEST(Scenario, MaskedTraining) {
  const auto cfg = small_config();
  const auto pool = pool_for(cfg);
  const auto m = train_scenario(Scenario::diff_train_diff_features, cfg, pool);
  const StageSeeds seeds(cfg.seed);
  const auto a = sample_feature_mask(pool.schema, cfg.mask_fraction, seeds.mask_a);
  const auto b = sample_feature_mask(pool.schema, cfg.mask_fraction, seeds.mask_b);
  EXPECT_EQ(m.target_features, a.indices());
  EXPECT_EQ(m.substitute_features, b.indices());
  EXPECT_EQ(m.substitute.input_dim, b.popcount());
  EXPECT_EQ(m.target->input_dim, a.popcount());
  EXPECT_EQ(m.shared.indices(), (a & b).indices());
  EXPECT_NE(m.target_features, m.substitute_features);

  // the target's attribution lives in the full space with zeros off its mask
  auto ec = base_explainer(cfg);
  ec.shap_background = sample_background(m.target_train, 4, 1);
  const auto attr = explain_target(*m.target, m.target_features, pool.rows[0], ec);
  ASSERT_EQ(attr.values.size(), pool.dim());
  for (std::size_t i = 0; i < pool.dim(); ++i) {
    if (!a.test(i)) EXPECT_EQ(attr.values[i], 0.0) << i;
  }
}

TEST(Harness, EveryCellPresentAndSorted) {
  const auto& r = small_report();
  const auto cfg = small_config();
  EXPECT_EQ(r.transfer.size(), 3 * (cfg.methods.size() + 1));
  EXPECT_EQ(r.attack.size(), 3 * (cfg.methods.size() + 1));
  ASSERT_EQ(r.telemetry.size(), 3u);
  EXPECT_EQ(r.telemetry[1].train_overlap, 0u);
  EXPECT_EQ(r.telemetry[2].train_overlap, 0u);
  EXPECT_LT(r.telemetry[2].shared_features, 64u);
  for (const auto& t : r.transfer) EXPECT_EQ(t.summary.n_samples(), cfg.transfer_samples);

  const std::vector<std::string> algos{"ig", "lrp", "deeplift", "shap", "random"};
  std::istringstream csv(transferability_csv(r));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "scenario,algorithm,mean_tau_w,mean_tau,std_tau_w,std_tau,n_samples");
  std::vector<std::string> keys;
  while (std::getline(csv, line)) keys.push_back(line.substr(0, line.find(',', line.find(',') + 1)));
  std::vector<std::string> expected;
  for (const char* s : {"same_train_same_features", "diff_train_same_features", "diff_train_diff_features"}) {
    for (const auto& a : algos) expected.push_back(std::string(s) + "," + a);
  }
  EXPECT_EQ(keys, expected);

  const auto md = report_markdown(r, cfg);
  EXPECT_NE(md.find("| diff_train_diff_features | random |"), std::string::npos);
  EXPECT_EQ(environment_json(r, cfg)["scenarios"].size(), 3u);
}

TEST(Harness, SortIsIndependentOfInputOrder) {
  auto r = small_report();
  std::reverse(r.transfer.begin(), r.transfer.end());
  std::reverse(r.attack.begin(), r.attack.end());
  EXPECT_EQ(transferability_csv(r), transferability_csv(small_report()));
  EXPECT_EQ(attack_csv(r), attack_csv(small_report()));
  // hand-labelled rows sort after the known scenarios
  r.transfer.push_back({"adhoc", "ig", {}});
  const auto csv = transferability_csv(r);
  EXPECT_EQ(csv.rfind("adhoc,ig"), csv.find("adhoc,ig"));
  EXPECT_GT(csv.find("adhoc,ig"), csv.find("diff_train_diff_features,random"));
}

TEST(Harness, RerunIsByteIdentical) {
  auto cfg = small_config();
  cfg.workers = 3;
  const auto again = run_experiment(cfg);
  EXPECT_EQ(transferability_csv(again), transferability_csv(small_report()));
  EXPECT_EQ(attack_csv(again), attack_csv(small_report()));

  const auto dir = xea::testing::scratch_dir("report");
  write_report(again, cfg, dir.string());
  for (const char* f : {"report_transferability.csv", "report_attack.csv", "report.md", "report_env.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_EQ(xea::testing::slurp(dir / "report_attack.csv"), attack_csv(small_report()));
}

TEST(Harness, TransferSamplesBeyondTestSet) {
  auto cfg = small_config();
  cfg.transfer_samples = 10000;
  EXPECT_THROW(run_experiment(cfg), ArgumentError);
}

TEST(Cli, StagePipeline) {
  const auto dir = xea::testing::scratch_dir("cli");
  ASSERT_EQ(run(dir, "gen-data --out d.csv --samples 500 --seed 3").code, 0);
  ASSERT_EQ(run(dir, "split --data d.csv --train-out tr.csv --test-out te.csv --fraction 0.6 --seed 1").code, 0);
  ASSERT_EQ(run(dir, "gen-mask --data d.csv --out m.txt --seed 2").code, 0);
  ASSERT_EQ(run(dir, "gen-mask --data d.csv --out m2.txt --seed 5").code, 0);
  ASSERT_EQ(run(dir, "gen-mask --intersect m.txt m2.txt --out both.txt").code, 0);
  EXPECT_EQ(load_mask((dir / "both.txt").string()),
            load_mask((dir / "m.txt").string()) & load_mask((dir / "m2.txt").string()));
  EXPECT_NE(run(dir, "gen-mask --out x.txt").code, 0);
  ASSERT_EQ(run(dir, "train-target --data tr.csv --mask m.txt --out t.bin --trees 8").code, 0);
  ASSERT_EQ(run(dir, "train-substitute --data tr.csv --mask m.txt --out s.bin --epochs 3").code, 0);
  const auto sub = load_model_file((dir / "s.bin").string());
  EXPECT_EQ(sub.model.input_dim, load_mask((dir / "m.txt").string()).popcount());

  ASSERT_EQ(run(dir, "explain --model s.bin --data te.csv --out a.csv --samples 6 --ig-steps 8 --diagnostics a.json").code, 0);
  ASSERT_EQ(run(dir, "explain --model t.bin --data te.csv --out b.csv --samples 6 --method shap --shap-samples 2").code, 0);
  std::ifstream a_in(dir / "a.csv");
  const auto attrs = read_attributions_csv(a_in);
  ASSERT_EQ(attrs.size(), 6u);
  EXPECT_EQ(attrs[0].values.size(), 64u);
  EXPECT_TRUE(fs::exists(dir / "a.json"));

  const auto rc = run(dir, "rank-compare --substitute a.csv --target b.csv --shared m.txt --scenario s3 --algorithm ig");
  ASSERT_EQ(rc.code, 0) << rc.output;
  EXPECT_NE(rc.output.find("s3,ig,"), std::string::npos) << rc.output;

  const auto at = run(dir, "attack --target t.bin --substitute s.bin --data te.csv --allowed m.txt --max-features 3 "
                           "--budget 100 --traces tr.jsonl --out atk.csv --workers 2");
  ASSERT_EQ(at.code, 0) << at.output;
  std::ifstream traces(dir / "tr.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(traces, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_LE(j["queries_used"].get<std::size_t>(), 100u);
    ++n;
  }
  EXPECT_GT(n, 0u);
}

TEST(Cli, StageErrorMessages) {
  const auto dir = xea::testing::scratch_dir("cli_errors");
  auto r = run(dir, "train-target --data nope.csv --out t.bin");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("xea train-target:"), std::string::npos) << r.output;

  ASSERT_EQ(run(dir, "gen-data --out d.csv --samples 300 --seed 3").code, 0);
  ASSERT_EQ(run(dir, "gen-data --out narrow.csv --samples 50 --widths strings=12,general=4").code, 0);
  ASSERT_EQ(run(dir, "gen-mask --data narrow.csv --out narrow_mask.txt").code, 0);
  r = run(dir, "train-substitute --data d.csv --mask narrow_mask.txt --out s.bin");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("xea train-substitute:"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("mask"), std::string::npos) << r.output;

  // every malicious row removed: nothing to attack
  auto ds = load_dataset((dir / "d.csv").string());
  Dataset benign;
  benign.schema = ds.schema;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    if (ds.labels[s] == 0) {
      benign.rows.push_back(ds.rows[s]);
      benign.labels.push_back(0);
    }
  }
  save_dataset(benign, (dir / "benign.csv").string());
  ASSERT_EQ(run(dir, "train-target --data d.csv --out t.bin --trees 5").code, 0);
  r = run(dir, "attack --target t.bin --data benign.csv --random");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("xea attack:"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("no eligible samples"), std::string::npos) << r.output;

  r = run(dir, "attack --target t.bin --data d.csv");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("xea attack:"), std::string::npos) << r.output;

  r = run(dir, "explain --model d.csv --data d.csv --out x.csv");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("xea explain:"), std::string::npos) << r.output;
}

TEST(Cli, ReportPrintConfig) {
  const auto dir = xea::testing::scratch_dir("cli_report");
  const auto r = run(dir, "report --print-config --seed 9 --samples 1000");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto cfg = config_from_json(nlohmann::json::parse(r.output));
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.n_samples, 1000u);
  std::ofstream(dir / "bad.json") << R"({"dataset": {"rows": 5}})";
  const auto bad = run(dir, "report --config bad.json --print-config");
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.output.find("unknown key 'rows'"), std::string::npos) << bad.output;
}

TEST(Cli, PePatch) {
  const auto dir = xea::testing::scratch_dir("cli_pe");
  const auto built = xea::testing::build_pe(xea::testing::fixture_specs()[1]);
  pe::write_file((dir / "in.exe").string(), built.bytes);
  std::string dist;
  for (std::size_t k = 0; k < pe::kPrintableCount; ++k) dist += (k ? "," : "") + std::string(k < 2 ? "0.5" : "0");
  std::ofstream(dir / "dist.txt") << dist;
  const auto r = run(dir, "in.exe out.exe --timedate 1234 --clr-size 72 --target-dist dist.txt", XEA_PE_PATCH_PATH);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto out = pe::parse(pe::read_file((dir / "out.exe").string()));
  EXPECT_EQ(out.timedate_stamp(), 1234u);
  EXPECT_EQ(out.clr_directory()->second, 72u);
  EXPECT_EQ(out.n_sections(), built.sections.size() + 1);

  std::ofstream(dir / "junk.exe") << "MZ not really";
  const auto bad = run(dir, "junk.exe x.exe --timedate 1", XEA_PE_PATCH_PATH);
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.output.find("truncated"), std::string::npos) << bad.output;
}
