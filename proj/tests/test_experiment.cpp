#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dppmlf/experiment.hpp"

using namespace dppmlf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::string config_error(const json& j) {
  try {
    parse_config_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("dppmlf_exp_" + name);
  fs::remove_all(d);
  return d;
}

json small_sweep() {
  return json::parse(R"({
    "dataset": {"kind": "blobs", "n": 120, "p": 4},
    "optimizer": {"epochs": 2, "batch": 10},
    "privacy": {"delta": 0.001},
    "seeds": [1, 2, 3, 4, 5],
    "sweeps": {"epsilon": [1, 2, 4, 8], "variant": ["dp-pmlf", "dpsgd"]}
  })");
}

}  // namespace

TEST(ParseConfig, MinimalGetsDefaults) {
  const auto cfg = parse_config_json(json::parse(R"({"dataset": "blobs", "epsilon": 1})"));
  EXPECT_EQ(cfg.base.dataset.kind, DatasetKind::kBlobs);
  EXPECT_EQ(cfg.base.epsilon, 1.0);
  EXPECT_EQ(cfg.base.momentum, (MomentumConfig{0.1, 2}));
  EXPECT_EQ(cfg.base.filter, (FilterConfig{{-0.9}, {0.1}}));
  EXPECT_EQ(cfg.base.eta, 0.5);
  EXPECT_EQ(cfg.base.clip, 1.0);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
  EXPECT_FALSE(cfg.batch.has_value());
  const auto runs = plan_runs(cfg, 1600);
  ASSERT_EQ(runs.size(), 5u);
  EXPECT_EQ(runs[0].config.batch, 27u);
  for (const auto& r : runs) EXPECT_NO_THROW(r.config.validate(1600));
}

TEST(ParseConfig, RejectsGainViolation) {
  const auto msg = config_error(json::parse(R"({"filter": {"a": [-0.9], "b": [0.2]}})"));
  EXPECT_NE(msg.find("$.filter"), std::string::npos) << msg;
  EXPECT_NE(msg.find("1.1"), std::string::npos) << msg;
}

TEST(ParseConfig, AcceptsSecondOrderFeedforward) {
  const auto cfg = parse_config_json(json::parse(R"({"filter": {"a": [-0.9], "b": [0.15, -0.05]}})"));
  EXPECT_EQ(cfg.base.filter.b, (std::vector<double>{0.15, -0.05}));
}

TEST(ParseConfig, ErrorsCarryJsonPath) {
  EXPECT_NE(config_error(json::parse(R"({"optimizer": {"bogus": 1}})")).find("$.optimizer.bogus: unknown key"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"optimizer": {"eta": "fast"}})")).find("$.optimizer.eta: expected a number"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"optimizer": {"k": -1}})")).find("$.optimizer.k"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"optimizer": {"beta": 1.5}})")).find("$.optimizer"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"sweeps": {"epsilon": [1, -2]}})")).find("$.sweeps.epsilon[1]"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"sweeps": {"variant": ["sgd"]}})")).find("$.sweeps.variant[0]"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"sweeps": {"filter": [{"a": [-1.5], "b": [-0.5]}]}})"))
                .find("$.sweeps.filter[0]"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"dataset": {"kind": "cifar"}})")).find("$.dataset.kind"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"dataset": {"kind": "idx"}})")).find("$.dataset.paths"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"privacy": {"delta": 2}})")).find("$.privacy.delta"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"epsilon": 1, "privacy": {"epsilon": 2}})")).find("$.epsilon"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"([1, 2])")).find("$: expected an object"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"objective": {"kind": "linear"}})")).find("$.objective.kind"),
            std::string::npos);
}

TEST(ParseConfig, MissingFile) { EXPECT_THROW(parse_config("/nonexistent/config.json"), ConfigError); }

TEST(ParseConfig, RoundTrip) {
  const std::vector<std::string> docs{
      R"({"dataset": "blobs", "epsilon": 1})",
      R"({"dataset": {"kind": "linear", "n": 300, "p": 3, "noise": 0.2, "seed": 9},
          "objective": {"kind": "linear", "lambda": 0.01},
          "optimizer": {"variant": "dpsgd", "eta": 0.1, "batch": 7, "epochs": 3, "beta": 0.9, "k": 4, "clip": 2,
                        "metrics_samples": 50},
          "filter": {"a": [-0.7, -0.2], "b": [0.05, 0.05]},
          "privacy": {"epsilon": 3, "delta": 1e-4, "noise_multiplier": 1.5},
          "seeds": [7, 8],
          "sweeps": {"epsilon": [1, 2], "variant": ["dp-pmlf", "dp-pmlf-no-lf"],
                     "filter": [{"a": [], "b": [1]}, {"a": [-0.6], "b": [0.4]}]},
          "output": "x/y",
          "diagnostics": {"correlation": "constant", "horizon": 10, "estimate": true, "lipschitz": 3}})",
      R"({"dataset": {"kind": "idx", "paths": {"train_images": "a", "train_labels": "b", "test_images": "c",
                                              "test_labels": "d"}},
          "objective": {"kind": "mlp"}})"};
  for (const auto& d : docs) {
    const auto cfg = parse_config_json(json::parse(d));
    const auto again = parse_config_json(to_json(cfg));
    EXPECT_EQ(cfg, again) << d;
    EXPECT_EQ(to_json(cfg), to_json(again));
  }
}

TEST(PlanRuns, CrossProductAndIds) {
  const auto cfg = parse_config_json(small_sweep());
  const auto runs = plan_runs(cfg, 96);
  ASSERT_EQ(runs.size(), 40u);
  EXPECT_EQ(runs.front().id, "dp-pmlf__f0__eps1__s1");
  EXPECT_EQ(runs.back().id, "dpsgd__f0__eps8__s5");
  std::set<std::string> ids;
  for (const auto& r : runs) ids.insert(r.id);
  EXPECT_EQ(ids.size(), 40u);
}

TEST(RunExperiment, CountsDeterminismAndSummary) {
  const auto cfg = parse_config_json(small_sweep());
  const auto d1 = fresh_dir("a"), d2 = fresh_dir("b");
  std::ostringstream log1, log2;
  ASSERT_EQ(run_experiment(cfg, d1, 2, log1), 0);
  ASSERT_EQ(run_experiment(cfg, d2, 1, log2), 0);
  EXPECT_NE(log1.str().find("40 runs"), std::string::npos);

  const auto summary = read_csv(d1 / "summary.csv");
  ASSERT_EQ(summary.size(), 1u + 8u);
  const auto runs = read_csv(d1 / "runs.csv");
  ASSERT_EQ(runs.size(), 1u + 40u);

  // byte-identical CSVs across reruns (and across job counts)
  for (const char* f : {"runs.csv", "summary.csv", "MANIFEST"}) EXPECT_EQ(read_file(d1 / f), read_file(d2 / f)) << f;
  for (const auto& entry : fs::directory_iterator(d1 / "runs")) {
    const auto name = entry.path().filename();
    EXPECT_EQ(read_file(entry.path() / "trace.csv"), read_file(d2 / "runs" / name / "trace.csv"));
  }

  // summary mean/std recomputed independently from runs.csv
  std::map<std::string, std::vector<double>> groups;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    groups[runs[i][1] + "," + runs[i][2] + "," + runs[i][3]].push_back(std::stod(runs[i][5]));
  }
  for (std::size_t i = 1; i < summary.size(); ++i) {
    const auto& row = summary[i];
    const auto& accs = groups.at(row[0] + "," + row[1] + "," + row[2]);
    ASSERT_EQ(accs.size(), 5u);
    double mean = 0.0;
    for (double a : accs) mean += a / 5.0;
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean) / 4.0;
    EXPECT_NEAR(std::stod(row[4]), mean, 1e-12);
    EXPECT_NEAR(std::stod(row[5]), std::sqrt(var), 1e-12);
  }

  // no NaN or Inf anywhere in the CSV outputs
  for (const auto& row : runs) {
    for (const auto& cell : row) {
      EXPECT_EQ(cell.find("nan"), std::string::npos);
      EXPECT_EQ(cell.find("inf"), std::string::npos);
    }
  }
  const auto trace = read_csv(d1 / "runs" / "dp-pmlf__f0__eps1__s1" / "trace.csv");
  EXPECT_EQ(trace[0], (std::vector<std::string>{"t", "loss", "grad_norm", "clip_frac", "update_norm"}));
  EXPECT_TRUE(fs::exists(d1 / "accuracy_vs_epsilon.svg"));
  EXPECT_TRUE(fs::exists(d1 / "loss_vs_t.svg"));
  EXPECT_NE(read_file(d1 / "runs" / "dpsgd__f0__eps8__s5" / "summary.txt").find("wall_clock_seconds="),
            std::string::npos);
}

TEST(RunExperiment, FailuresAreExplicit) {
  auto j = json::parse(R"({
    "dataset": {"kind": "linear", "n": 100, "p": 3},
    "objective": {"kind": "linear"},
    "optimizer": {"variant": "dpsgd", "epochs": 3, "batch": 80, "eta": 50, "clip": 1e9},
    "privacy": {"noise_multiplier": 1},
    "seeds": [1],
    "sweeps": {"variant": ["dpsgd", "dp-pmlf"]}
  })");
  const auto cfg = parse_config_json(j);
  const auto d = fresh_dir("fail");
  std::ostringstream log;
  EXPECT_NE(run_experiment(cfg, d, 1, log), 0);
  const auto manifest = read_file(d / "MANIFEST");
  EXPECT_NE(manifest.find("dpsgd__f0__eps1__s1 FAILED"), std::string::npos) << manifest;
  EXPECT_TRUE(fs::exists(d / "runs" / "dpsgd__f0__eps1__s1" / "trace.csv"));
}

TEST(RunExperiment, AblationPresetLayout) {
  const auto cfg = parse_config(DPPMLF_SOURCE_DIR "/configs/ablation.json");
  ASSERT_EQ(cfg.variants.size(), 3u);
  EXPECT_EQ(cfg.variants[0], Variant::kDpPmlf);
  EXPECT_EQ(cfg.variants[1], Variant::kDpPmlfNoPm);
  EXPECT_EQ(cfg.variants[2], Variant::kDpPmlfNoLf);
  EXPECT_EQ(plan_runs(cfg, 1600).size(), 3u * cfg.epsilons.size() * 5u);
  for (const char* name : {"default", "baselines", "filter_sweep", "mnist"}) {
    EXPECT_NO_THROW(parse_config(std::string(DPPMLF_SOURCE_DIR "/configs/") + name + ".json")) << name;
  }
  EXPECT_EQ(parse_config(DPPMLF_SOURCE_DIR "/configs/filter_sweep.json").filters.size(), 8u);
}

TEST(Diagnostics, PrintsTable) {
  auto cfg = parse_config_json(json::parse(R"({"dataset": {"kind": "blobs", "n": 200, "p": 4}})"));
  const auto in = diagnostics_inputs(cfg);
  EXPECT_EQ(in.bound.dim, 4u);
  EXPECT_GT(in.bound.sigma_dp, 0.0);
  std::ostringstream os;
  print_diagnostics(in, compute_theory_diagnostics(in), os);
  for (const char* key : {"rho", "eta_max", "Gamma_DP", "Gamma_SGD", "optimization", "clipping", "dp_noise",
                          "bias_gradient", "bias_variance"}) {
    EXPECT_NE(os.str().find(key), std::string::npos) << key;
  }
  EXPECT_NE(os.str().find(format_number(variance_reduction_rho({0.1, 2}))), std::string::npos);
}

TEST(Diagnostics, TrivialAndEqualWeight) {
  auto cfg = parse_config_json(json::parse(
      R"({"dataset": {"kind": "blobs", "n": 200, "p": 4}, "optimizer": {"k": 1},
          "filter": {"a": [], "b": [1]}, "diagnostics": {"correlation": "constant"}})"));
  auto d = compute_theory_diagnostics(diagnostics_inputs(cfg));
  EXPECT_EQ(d.gamma_dp, 1.0);
  EXPECT_EQ(d.gamma_sgd, 1.0);
  cfg.base.momentum = {1.0, 4};
  std::ostringstream os;
  const auto in = diagnostics_inputs(cfg);
  print_diagnostics(in, compute_theory_diagnostics(in), os);
  EXPECT_NE(os.str().find("  rho" + std::string(23, ' ') + "2\n"), std::string::npos) << os.str();
}

TEST(Diagnostics, EstimatedConstants) {
  auto cfg = parse_config_json(
      json::parse(R"({"dataset": {"kind": "blobs", "n": 200, "p": 4}, "diagnostics": {"estimate": true}})"));
  const auto in = diagnostics_inputs(cfg);
  EXPECT_NE(in.bound.lipschitz, 1.0);
  EXPECT_NE(in.bound.sigma_sgd, 1.0);
}

TEST(ImpulseCsv, Columns) {
  const auto csv = impulse_csv(FilterConfig{{-0.9}, {0.1}}, 3);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "r,kappa,kappa_hat,c_m");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 6), "0,0.1,");
  EXPECT_NE(line.find(",0.1"), std::string::npos);
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
  EXPECT_THROW(impulse_csv(FilterConfig{{-0.9}, {0.2}}, 3), ConfigError);
}

TEST(FormatNumber, ShortestRoundTrip) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(1.0), "1");
  EXPECT_EQ(std::stod(format_number(1.0 / 3.0)), 1.0 / 3.0);
}
