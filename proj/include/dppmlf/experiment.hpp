#pragma once

// Experiment configs and the sweep runner behind the dppmlf command line tool.
//
// Config files are strict JSON: unknown keys and wrong types are rejected with
// the JSON path of the offending value. See configs/ for examples and
// README.md for the full schema.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "dppmlf/diagnostics.hpp"
#include "dppmlf/engine.hpp"
#include "dppmlf/errors.hpp"
#include "dppmlf/filter.hpp"
#include "dppmlf/privacy.hpp"

namespace dppmlf {

/// Shortest decimal that round-trips, so repeated runs write identical bytes.
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

enum class CorrelationModel { kGeometric, kConstant };

struct DiagnosticsSection {
  CorrelationModel correlation = CorrelationModel::kGeometric;
  double gamma = 0.9;
  std::size_t horizon = 64;
  double sigma_sgd = 1.0;
  double lipschitz = 1.0;
  double grad_bound = 1.0;
  double f0_gap = 1.0;
  // Replace sigma_sgd, G and L by estimates at the initial point.
  bool estimate = false;

  bool operator==(const DiagnosticsSection&) const = default;
};

struct ExperimentConfig {
  RunConfig base;
  // Unset means B = round(n_train / 60), i.e. q ~ 0.0167.
  std::optional<std::size_t> batch;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<double> epsilons;        // sweep; empty = base epsilon
  std::vector<Variant> variants;       // sweep; empty = base variant
  std::vector<FilterConfig> filters;   // sweep; empty = base filter
  std::string output = "out";
  DiagnosticsSection diagnostics;

  bool operator==(const ExperimentConfig&) const = default;
};

inline std::size_t default_batch(std::size_t n_train) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n_train) / 60.0)));
}

namespace detail {

using nlohmann::json;

[[noreturn]] inline void config_fail(const std::string& path, const std::string& msg) {
  throw ConfigError("config: " + path + ": " + msg);
}

inline void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_fail(path, "expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      config_fail(path + "." + key, "unknown key");
    }
  }
}

inline double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) config_fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) config_fail(path, "expected a finite number");
  return v;
}

inline std::uint64_t get_count(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer()) {
    if (j.get<std::int64_t>() < 0) config_fail(path, "expected a non-negative integer");
    return static_cast<std::uint64_t>(j.get<std::int64_t>());
  }
  config_fail(path, "expected a non-negative integer");
}

inline std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) config_fail(path, "expected a string");
  return j.get<std::string>();
}

inline std::vector<double> get_numbers(const json& j, const std::string& path) {
  if (!j.is_array()) config_fail(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline FilterConfig parse_filter(const json& j, const std::string& path) {
  check_keys(j, path, {"a", "b"});
  FilterConfig f;
  if (j.contains("a")) f.a = get_numbers(j["a"], path + ".a");
  if (j.contains("b")) f.b = get_numbers(j["b"], path + ".b");
  try {
    validate(f);
  } catch (const ConfigError& e) {
    config_fail(path, e.what());
  }
  return f;
}

inline json filter_json(const FilterConfig& f) { return json{{"a", f.a}, {"b", f.b}}; }

inline Variant parse_variant_at(const json& j, const std::string& path) {
  const auto s = get_string(j, path);
  const auto v = parse_variant(s);
  if (!v) config_fail(path, "unknown variant '" + s + "' (dp-pmlf, dpsgd, dp-pmlf-no-pm, dp-pmlf-no-lf)");
  return *v;
}

inline std::string dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::kBlobs:
      return "blobs";
    case DatasetKind::kLinear:
      return "linear";
    case DatasetKind::kIdx:
      return "idx";
  }
  return "";
}

inline std::string objective_name(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::kLinearRegression:
      return "linear";
    case ObjectiveKind::kLogisticRegression:
      return "logistic";
    case ObjectiveKind::kMlp1:
      return "mlp";
  }
  return "";
}

inline void parse_dataset(const json& j, DatasetSpec& ds) {
  const std::string path = "$.dataset";
  auto kind_from = [&](const std::string& s, const std::string& at) {
    if (s == "blobs") return DatasetKind::kBlobs;
    if (s == "linear") return DatasetKind::kLinear;
    if (s == "idx") return DatasetKind::kIdx;
    config_fail(at, "unknown dataset kind '" + s + "' (blobs, linear, idx)");
  };
  if (j.is_string()) {
    ds.kind = kind_from(j.get<std::string>(), path);
    return;
  }
  check_keys(j, path, {"kind", "n", "p", "noise", "seed", "paths"});
  if (j.contains("kind")) ds.kind = kind_from(get_string(j["kind"], path + ".kind"), path + ".kind");
  if (j.contains("n")) ds.n = get_count(j["n"], path + ".n");
  if (j.contains("p")) ds.p = get_count(j["p"], path + ".p");
  if (j.contains("noise")) ds.noise = get_number(j["noise"], path + ".noise");
  if (j.contains("seed")) ds.seed = get_count(j["seed"], path + ".seed");
  if (j.contains("paths")) {
    const auto& pj = j["paths"];
    check_keys(pj, path + ".paths", {"train_images", "train_labels", "test_images", "test_labels"});
    auto str = [&](const char* key, std::string& out) {
      if (pj.contains(key)) out = get_string(pj[key], path + ".paths." + key);
    };
    str("train_images", ds.paths.train_images);
    str("train_labels", ds.paths.train_labels);
    str("test_images", ds.paths.test_images);
    str("test_labels", ds.paths.test_labels);
  }
  if (ds.kind != DatasetKind::kIdx && (ds.n < 2 || ds.p < 1)) config_fail(path, "synthetic data needs n >= 2, p >= 1");
  if (ds.noise < 0.0) config_fail(path + ".noise", "must be >= 0");
  if (ds.kind == DatasetKind::kIdx &&
      (ds.paths.train_images.empty() || ds.paths.train_labels.empty() || ds.paths.test_images.empty() ||
       ds.paths.test_labels.empty())) {
    config_fail(path + ".paths", "idx datasets need train_images, train_labels, test_images, test_labels");
  }
}

}  // namespace detail

/// Strict parse of an experiment config document.
inline ExperimentConfig parse_config_json(const nlohmann::json& j) {
  using detail::config_fail;
  detail::check_keys(j, "$",
                     {"dataset", "objective", "optimizer", "filter", "privacy", "epsilon", "seeds", "sweeps", "output",
                      "diagnostics"});
  ExperimentConfig cfg;
  RunConfig& run = cfg.base;
  if (j.contains("dataset")) detail::parse_dataset(j["dataset"], run.dataset);
  run.objective = run.dataset.kind == DatasetKind::kLinear ? ObjectiveKind::kLinearRegression
                                                           : ObjectiveKind::kLogisticRegression;

  if (j.contains("objective")) {
    const auto& o = j["objective"];
    detail::check_keys(o, "$.objective", {"kind", "lambda"});
    if (o.contains("kind")) {
      const auto s = detail::get_string(o["kind"], "$.objective.kind");
      if (s == "linear") {
        run.objective = ObjectiveKind::kLinearRegression;
      } else if (s == "logistic") {
        run.objective = ObjectiveKind::kLogisticRegression;
      } else if (s == "mlp") {
        run.objective = ObjectiveKind::kMlp1;
      } else {
        config_fail("$.objective.kind", "unknown objective '" + s + "' (linear, logistic, mlp)");
      }
    }
    if (o.contains("lambda")) run.lambda = detail::get_number(o["lambda"], "$.objective.lambda");
    if (run.lambda < 0.0) config_fail("$.objective.lambda", "must be >= 0");
  }
  if ((run.objective == ObjectiveKind::kLinearRegression) != (run.dataset.kind == DatasetKind::kLinear)) {
    config_fail("$.objective.kind", "linear objective pairs with the linear dataset only");
  }

  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    const std::string p = "$.optimizer";
    detail::check_keys(o, p, {"variant", "eta", "batch", "epochs", "beta", "k", "clip", "metrics_samples"});
    if (o.contains("variant")) run.variant = detail::parse_variant_at(o["variant"], p + ".variant");
    if (o.contains("eta")) run.eta = detail::get_number(o["eta"], p + ".eta");
    if (o.contains("batch")) cfg.batch = detail::get_count(o["batch"], p + ".batch");
    if (o.contains("epochs")) run.epochs = detail::get_count(o["epochs"], p + ".epochs");
    if (o.contains("beta")) run.momentum.beta = detail::get_number(o["beta"], p + ".beta");
    if (o.contains("k")) run.momentum.k = detail::get_count(o["k"], p + ".k");
    if (o.contains("clip")) run.clip = detail::get_number(o["clip"], p + ".clip");
    if (o.contains("metrics_samples")) run.metrics_samples = detail::get_count(o["metrics_samples"], p + ".metrics_samples");
    if (!(run.eta > 0.0)) config_fail(p + ".eta", "must be > 0");
    if (cfg.batch && *cfg.batch == 0) config_fail(p + ".batch", "must be >= 1");
    if (run.epochs == 0) config_fail(p + ".epochs", "must be >= 1");
    if (!(run.clip > 0.0)) config_fail(p + ".clip", "must be > 0");
    try {
      run.momentum.validate();
    } catch (const Error& e) {
      config_fail(p, e.what());
    }
  }

  if (j.contains("filter")) run.filter = detail::parse_filter(j["filter"], "$.filter");

  if (j.contains("privacy")) {
    const auto& o = j["privacy"];
    detail::check_keys(o, "$.privacy", {"epsilon", "delta", "noise_multiplier"});
    if (o.contains("epsilon")) run.epsilon = detail::get_number(o["epsilon"], "$.privacy.epsilon");
    if (o.contains("delta")) run.delta = detail::get_number(o["delta"], "$.privacy.delta");
    if (o.contains("noise_multiplier")) {
      run.noise_multiplier = detail::get_number(o["noise_multiplier"], "$.privacy.noise_multiplier");
      if (!(*run.noise_multiplier > 0.0)) config_fail("$.privacy.noise_multiplier", "must be > 0");
    }
    if (!(run.epsilon > 0.0)) config_fail("$.privacy.epsilon", "must be > 0");
    if (run.delta && !(*run.delta > 0.0 && *run.delta < 1.0)) config_fail("$.privacy.delta", "must lie in (0, 1)");
  }

  // Top-level "epsilon" is shorthand for privacy.epsilon.
  if (j.contains("epsilon")) {
    if (j.contains("privacy") && j["privacy"].contains("epsilon")) {
      config_fail("$.epsilon", "given twice (also at $.privacy.epsilon)");
    }
    run.epsilon = detail::get_number(j["epsilon"], "$.epsilon");
    if (!(run.epsilon > 0.0)) config_fail("$.epsilon", "must be > 0");
  }

  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    if (!s.is_array() || s.empty()) config_fail("$.seeds", "expected a non-empty array of integers");
    cfg.seeds.clear();
    for (std::size_t i = 0; i < s.size(); ++i) cfg.seeds.push_back(detail::get_count(s[i], "$.seeds[" + std::to_string(i) + "]"));
  }
  if (!cfg.seeds.empty()) run.seed = cfg.seeds.front();

  if (j.contains("sweeps")) {
    const auto& s = j["sweeps"];
    detail::check_keys(s, "$.sweeps", {"epsilon", "variant", "filter"});
    if (s.contains("epsilon")) {
      cfg.epsilons = detail::get_numbers(s["epsilon"], "$.sweeps.epsilon");
      for (std::size_t i = 0; i < cfg.epsilons.size(); ++i) {
        if (!(cfg.epsilons[i] > 0.0)) config_fail("$.sweeps.epsilon[" + std::to_string(i) + "]", "must be > 0");
      }
    }
    if (s.contains("variant")) {
      if (!s["variant"].is_array()) config_fail("$.sweeps.variant", "expected an array of strings");
      for (std::size_t i = 0; i < s["variant"].size(); ++i) {
        cfg.variants.push_back(detail::parse_variant_at(s["variant"][i], "$.sweeps.variant[" + std::to_string(i) + "]"));
      }
    }
    if (s.contains("filter")) {
      if (!s["filter"].is_array()) config_fail("$.sweeps.filter", "expected an array of filters");
      for (std::size_t i = 0; i < s["filter"].size(); ++i) {
        cfg.filters.push_back(detail::parse_filter(s["filter"][i], "$.sweeps.filter[" + std::to_string(i) + "]"));
      }
    }
  }

  if (j.contains("output")) cfg.output = detail::get_string(j["output"], "$.output");

  if (j.contains("diagnostics")) {
    const auto& o = j["diagnostics"];
    const std::string p = "$.diagnostics";
    auto& d = cfg.diagnostics;
    detail::check_keys(o, p, {"correlation", "gamma", "horizon", "sigma_sgd", "lipschitz", "grad_bound", "f0_gap", "estimate"});
    if (o.contains("correlation")) {
      const auto s = detail::get_string(o["correlation"], p + ".correlation");
      if (s == "geometric") {
        d.correlation = CorrelationModel::kGeometric;
      } else if (s == "constant") {
        d.correlation = CorrelationModel::kConstant;
      } else {
        config_fail(p + ".correlation", "unknown model '" + s + "' (geometric, constant)");
      }
    }
    if (o.contains("gamma")) d.gamma = detail::get_number(o["gamma"], p + ".gamma");
    if (o.contains("horizon")) d.horizon = detail::get_count(o["horizon"], p + ".horizon");
    if (o.contains("sigma_sgd")) d.sigma_sgd = detail::get_number(o["sigma_sgd"], p + ".sigma_sgd");
    if (o.contains("lipschitz")) d.lipschitz = detail::get_number(o["lipschitz"], p + ".lipschitz");
    if (o.contains("grad_bound")) d.grad_bound = detail::get_number(o["grad_bound"], p + ".grad_bound");
    if (o.contains("f0_gap")) d.f0_gap = detail::get_number(o["f0_gap"], p + ".f0_gap");
    if (o.contains("estimate")) {
      if (!o["estimate"].is_boolean()) config_fail(p + ".estimate", "expected a boolean");
      d.estimate = o["estimate"].get<bool>();
    }
    if (d.horizon == 0) config_fail(p + ".horizon", "must be >= 1");
    if (!(d.gamma > 0.0)) config_fail(p + ".gamma", "must be > 0");
    if (!(d.sigma_sgd > 0.0) || !(d.lipschitz > 0.0) || !(d.grad_bound > 0.0) || !(d.f0_gap > 0.0)) {
      config_fail(p, "sigma_sgd, lipschitz, grad_bound and f0_gap must be > 0");
    }
  }
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return parse_config_json(j);
}

/// Full (non-shorthand) JSON form; parse_config_json(to_json(c)) == c.
inline nlohmann::json to_json(const ExperimentConfig& cfg) {
  using nlohmann::json;
  const RunConfig& r = cfg.base;
  json ds{{"kind", detail::dataset_kind_name(r.dataset.kind)},
          {"n", r.dataset.n},
          {"p", r.dataset.p},
          {"noise", r.dataset.noise},
          {"seed", r.dataset.seed}};
  if (r.dataset.kind == DatasetKind::kIdx || !r.dataset.paths.train_images.empty() ||
      !r.dataset.paths.train_labels.empty() || !r.dataset.paths.test_images.empty() ||
      !r.dataset.paths.test_labels.empty()) {
    ds["paths"] = json{{"train_images", r.dataset.paths.train_images},
                       {"train_labels", r.dataset.paths.train_labels},
                       {"test_images", r.dataset.paths.test_images},
                       {"test_labels", r.dataset.paths.test_labels}};
  }
  json opt{{"variant", to_string(r.variant)}, {"eta", r.eta},           {"epochs", r.epochs},
           {"beta", r.momentum.beta},        {"k", r.momentum.k},       {"clip", r.clip},
           {"metrics_samples", r.metrics_samples}};
  if (cfg.batch) opt["batch"] = *cfg.batch;
  json priv{{"epsilon", r.epsilon}};
  if (r.delta) priv["delta"] = *r.delta;
  if (r.noise_multiplier) priv["noise_multiplier"] = *r.noise_multiplier;
  json sweeps = json::object();
  if (!cfg.epsilons.empty()) sweeps["epsilon"] = cfg.epsilons;
  if (!cfg.variants.empty()) {
    json vs = json::array();
    for (Variant v : cfg.variants) vs.push_back(to_string(v));
    sweeps["variant"] = vs;
  }
  if (!cfg.filters.empty()) {
    json fs = json::array();
    for (const auto& f : cfg.filters) fs.push_back(detail::filter_json(f));
    sweeps["filter"] = fs;
  }
  const auto& d = cfg.diagnostics;
  json diag{{"correlation", d.correlation == CorrelationModel::kGeometric ? "geometric" : "constant"},
            {"gamma", d.gamma},
            {"horizon", d.horizon},
            {"sigma_sgd", d.sigma_sgd},
            {"lipschitz", d.lipschitz},
            {"grad_bound", d.grad_bound},
            {"f0_gap", d.f0_gap},
            {"estimate", d.estimate}};
  return json{{"dataset", ds},
              {"objective", {{"kind", detail::objective_name(r.objective)}, {"lambda", r.lambda}}},
              {"optimizer", opt},
              {"filter", detail::filter_json(r.filter)},
              {"privacy", priv},
              {"seeds", cfg.seeds},
              {"sweeps", sweeps},
              {"output", cfg.output},
              {"diagnostics", diag}};
}

struct PlannedRun {
  std::string id;
  std::size_t filter_index = 0;
  RunConfig config;
};

/// Cross product variant x filter x epsilon x seed, in that nesting order.
/// `n_train` resolves the default batch size.
inline std::vector<PlannedRun> plan_runs(const ExperimentConfig& cfg, std::size_t n_train) {
  const std::vector<Variant> variants = cfg.variants.empty() ? std::vector<Variant>{cfg.base.variant} : cfg.variants;
  const std::vector<FilterConfig> filters =
      cfg.filters.empty() ? std::vector<FilterConfig>{cfg.base.filter} : cfg.filters;
  const std::vector<double> epsilons = cfg.epsilons.empty() ? std::vector<double>{cfg.base.epsilon} : cfg.epsilons;
  std::vector<PlannedRun> runs;
  for (Variant v : variants) {
    for (std::size_t fi = 0; fi < filters.size(); ++fi) {
      for (double eps : epsilons) {
        for (std::uint64_t seed : cfg.seeds) {
          PlannedRun pr;
          pr.filter_index = fi;
          pr.config = cfg.base;
          pr.config.variant = v;
          pr.config.filter = filters[fi];
          pr.config.epsilon = eps;
          pr.config.seed = seed;
          pr.config.batch = cfg.batch.value_or(default_batch(n_train));
          pr.id = to_string(v) + "__f" + std::to_string(fi) + "__eps" + format_number(eps) + "__s" + std::to_string(seed);
          runs.push_back(std::move(pr));
        }
      }
    }
  }
  return runs;
}

inline std::string trace_csv(const TrainReport& report) {
  std::ostringstream os;
  os << "t,loss,grad_norm,clip_frac,update_norm\n";
  for (const auto& r : report.rows) {
    os << r.t << ',' << format_number(r.loss) << ',' << format_number(r.grad_norm) << ','
       << format_number(r.clip_frac) << ',' << format_number(r.update_norm) << '\n';
  }
  return os.str();
}

struct SeedStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};

inline SeedStats mean_std(const std::vector<double>& xs) {
  SeedStats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
  return s;
}

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

// Minimal line chart: axes box, one polyline per series, legend and ticks.
inline std::string svg_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                             const std::vector<Series>& series) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x), xmax = std::max(xmax, x);
      ymin = std::min(ymin, y), ymax = std::max(ymax, y);
    }
  }
  if (xmin > xmax) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double w = 640, h = 400, left = 70, right = 180, top = 40, bottom = 50;
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (w - left - right); };
  auto sy = [&](double y) { return h - bottom - (y - ymin) / (ymax - ymin) * (h - top - bottom); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w - left - right << "\" height=\""
     << h - top - bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << xlabel << "</text>\n";
  os << "<text x=\"16\" y=\"" << (top + h - bottom) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 "
     << (top + h - bottom) / 2 << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0, yv = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << sx(xv) << "\" y=\"" << h - bottom + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
       << format_number(std::round(xv * 1000) / 1000) << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
       << format_number(std::round(yv * 1000) / 1000) << "</text>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* c = colors[i % 8];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (auto [x, y] : series[i].points) os << sx(x) << ',' << sy(y) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << w - right + 10 << "\" y=\"" << top + 14 + 16 * i << "\" font-size=\"11\" fill=\"" << c
       << "\">" << series[i].label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace detail

struct RunOutcome {
  PlannedRun run;
  bool ok = false;
  std::string error;
  TrainReport report;
};

/// Executes every planned run (up to `jobs` at a time) and writes
///
///   <out>/runs/<id>/trace.csv    per-iteration rows
///   <out>/runs/<id>/summary.txt  final metrics, privacy, wall clock
///   <out>/runs.csv               one row per run
///   <out>/summary.csv            mean/std of final accuracy over seeds
///   <out>/accuracy_vs_epsilon.svg, <out>/loss_vs_t.svg
///   <out>/MANIFEST               run id -> status
///
/// Returns 0 when every run succeeded. CSV files are byte-identical across
/// reruns of the same config; wall-clock time only appears in summary.txt.
inline int run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, unsigned jobs = 1,
                          std::ostream& log = std::cout) {
  namespace fs = std::filesystem;
  const DataSplit data = materialize(cfg.base.dataset);
  auto runs = plan_runs(cfg, data.train.size());
  for (const auto& r : runs) {
    try {
      r.config.validate(data.train.size());
    } catch (const Error& e) {
      throw ConfigError("run " + r.id + ": " + e.what());
    }
  }
  log << "experiment: " << runs.size() << " runs (n_train = " << data.train.size()
      << ", batch = " << runs.front().config.batch << ")\n";

  fs::create_directories(out_dir / "runs");
  std::vector<RunOutcome> outcomes(runs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      RunOutcome& o = outcomes[i];
      o.run = runs[i];
      try {
        o.report = train(o.run.config, data.train, data.test);
        o.ok = true;
      } catch (const DivergenceError& e) {
        o.error = e.what();
        o.report = e.partial();
      } catch (const std::exception& e) {
        o.error = e.what();
      }
      const fs::path dir = out_dir / "runs" / o.run.id;
      fs::create_directories(dir);
      detail::write_text(dir / "trace.csv", trace_csv(o.report));
      std::ostringstream s;
      s << "run_id=" << o.run.id << "\nstatus=" << (o.ok ? "ok" : "failed") << "\n";
      if (!o.ok) s << "error=" << o.error << "\n";
      s << "final_accuracy=" << format_number(o.report.final_accuracy)
        << "\nfinal_loss=" << format_number(o.report.final_loss)
        << "\nepsilon_target=" << format_number(o.report.privacy.epsilon_target)
        << "\nepsilon_achieved=" << format_number(o.report.privacy.epsilon_achieved)
        << "\nsigma_multiplier=" << format_number(o.report.privacy.sigma_multiplier)
        << "\nsigma_dp=" << format_number(o.report.privacy.sigma_dp)
        << "\nwall_clock_seconds=" << o.report.wall_clock_seconds << "\n";
      detail::write_text(dir / "summary.txt", s.str());
      std::lock_guard lock(log_mutex);
      log << "  [" << (i + 1) << "/" << runs.size() << "] " << o.run.id << " "
          << (o.ok ? "acc=" + format_number(o.report.final_accuracy) : "FAILED: " + o.error) << "\n";
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(runs.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }

  std::ostringstream manifest, runs_csv, summary_csv;
  runs_csv << "run_id,variant,filter,epsilon,seed,final_accuracy,final_loss,epsilon_target,epsilon_achieved,"
              "sigma_multiplier,sigma_dp\n";
  // group key: (variant, filter index, epsilon) in plan order
  std::vector<std::tuple<Variant, std::size_t, double>> group_order;
  std::map<std::tuple<int, std::size_t, double>, std::vector<const RunOutcome*>> groups;
  bool all_ok = true;
  for (const auto& o : outcomes) {
    manifest << o.run.id << " " << (o.ok ? "ok" : "FAILED: " + o.error) << "\n";
    all_ok = all_ok && o.ok;
    if (!o.ok) continue;
    const auto& p = o.report.privacy;
    runs_csv << o.run.id << ',' << to_string(o.run.config.variant) << ",f" << o.run.filter_index << ','
             << format_number(o.run.config.epsilon) << ',' << o.run.config.seed << ','
             << format_number(o.report.final_accuracy) << ',' << format_number(o.report.final_loss) << ','
             << format_number(p.epsilon_target) << ',' << format_number(p.epsilon_achieved) << ','
             << format_number(p.sigma_multiplier) << ',' << format_number(p.sigma_dp) << '\n';
    const auto key = std::make_tuple(static_cast<int>(o.run.config.variant), o.run.filter_index, o.run.config.epsilon);
    if (!groups.count(key)) group_order.emplace_back(o.run.config.variant, o.run.filter_index, o.run.config.epsilon);
    groups[key].push_back(&o);
  }

  summary_csv << "variant,filter,epsilon,seeds,accuracy_mean,accuracy_std,sigma_multiplier\n";
  std::map<std::pair<int, std::size_t>, detail::Series> acc_series, loss_series;
  std::vector<std::pair<int, std::size_t>> series_order;
  for (const auto& [v, fi, eps] : group_order) {
    const auto& members = groups[std::make_tuple(static_cast<int>(v), fi, eps)];
    std::vector<double> accs;
    for (const auto* o : members) accs.push_back(o->report.final_accuracy);
    const auto st = mean_std(accs);
    summary_csv << to_string(v) << ",f" << fi << ',' << format_number(eps) << ',' << members.size() << ','
                << format_number(st.mean) << ',' << format_number(st.std) << ','
                << format_number(members.front()->report.privacy.sigma_multiplier) << '\n';
    const auto skey = std::make_pair(static_cast<int>(v), fi);
    if (!acc_series.count(skey)) {
      series_order.push_back(skey);
      const std::string label = to_string(v) + " f" + std::to_string(fi);
      acc_series[skey].label = label;
      loss_series[skey].label = label + " eps=" + format_number(eps);
      // Mean loss curve over seeds at the first epsilon of the group.
      const auto& rows0 = members.front()->report.rows;
      for (std::size_t t = 0; t < rows0.size(); ++t) {
        double acc = 0.0;
        for (const auto* o : members) acc += o->report.rows[t].loss;
        loss_series[skey].points.emplace_back(static_cast<double>(t), acc / static_cast<double>(members.size()));
      }
    }
    acc_series[skey].points.emplace_back(eps, st.mean);
  }
  std::vector<detail::Series> acc_list, loss_list;
  for (const auto& k : series_order) {
    acc_list.push_back(acc_series[k]);
    loss_list.push_back(loss_series[k]);
  }

  detail::write_text(out_dir / "MANIFEST", manifest.str());
  detail::write_text(out_dir / "runs.csv", runs_csv.str());
  detail::write_text(out_dir / "summary.csv", summary_csv.str());
  detail::write_text(out_dir / "accuracy_vs_epsilon.svg",
                     detail::svg_chart("final test accuracy", "epsilon", "accuracy", acc_list));
  detail::write_text(out_dir / "loss_vs_t.svg", detail::svg_chart("training loss", "iteration", "loss", loss_list));
  log << "experiment: " << (all_ok ? "all runs ok" : "some runs FAILED, see MANIFEST") << "\n";
  return all_ok ? 0 : 1;
}

/// Inputs for the diag command, derived from a config.
inline DiagnosticsInputs diagnostics_inputs(const ExperimentConfig& cfg) {
  const DataSplit data = materialize(cfg.base.dataset);
  RunConfig run = cfg.base;
  run.batch = cfg.batch.value_or(default_batch(data.train.size()));
  run.validate(data.train.size());
  const Objective obj = Objective::for_dataset(run.objective, data.train, run.lambda);
  const auto& d = cfg.diagnostics;

  DiagnosticsInputs in;
  in.momentum = run.momentum;
  in.filter = run.filter;
  in.horizon = d.horizon;
  const std::size_t len = d.horizon + run.momentum.k;
  in.correlation = d.correlation == CorrelationModel::kGeometric ? geometric_correlation(d.gamma, len)
                                                                 : std::vector<double>(len, 1.0);
  in.bound.f0_gap = d.f0_gap;
  in.bound.eta = run.eta;
  in.bound.steps = run.iterations(data.train.size());
  in.bound.clip = run.clip;
  in.bound.dim = obj.dim();
  in.bound.sigma_dp = run_privacy(run, data.train.size()).sigma_dp;
  in.bound.sigma_sgd = d.sigma_sgd;
  in.bound.lipschitz = d.lipschitz;
  in.bound.grad_bound = d.grad_bound;
  if (d.estimate) {
    RandomStream init = RandomStream(run.seed).substream(3);
    const auto est = estimate_constants(obj, data.train, obj.initial_point(init));
    if (est.sigma_sgd > 0.0) in.bound.sigma_sgd = est.sigma_sgd;
    if (est.lipschitz > 0.0) in.bound.lipschitz = est.lipschitz;
    if (est.grad_bound > 0.0) in.bound.grad_bound = est.grad_bound;
  }
  return in;
}

inline void print_diagnostics(const DiagnosticsInputs& in, const TheoryDiagnostics& d, std::ostream& os) {
  auto row = [&](const std::string& name, double v) { os << "  " << name << std::string(26 - name.size(), ' ') << format_number(v) << "\n"; };
  os << "inputs\n";
  row("beta", in.momentum.beta);
  row("k", static_cast<double>(in.momentum.k));
  os << "  filter a                  [";
  for (std::size_t i = 0; i < in.filter.a.size(); ++i) os << (i ? ", " : "") << format_number(in.filter.a[i]);
  os << "]\n  filter b                  [";
  for (std::size_t i = 0; i < in.filter.b.size(); ++i) os << (i ? ", " : "") << format_number(in.filter.b[i]);
  os << "]\n";
  row("horizon", static_cast<double>(in.horizon));
  row("sigma_sgd", in.bound.sigma_sgd);
  row("L", in.bound.lipschitz);
  row("G", in.bound.grad_bound);
  row("C", in.bound.clip);
  row("d", static_cast<double>(in.bound.dim));
  row("sigma_dp", in.bound.sigma_dp);
  row("eta", in.bound.eta);
  row("T", static_cast<double>(in.bound.steps));
  os << "diagnostics\n";
  row("rho", d.rho);
  row("rho^2", d.rho * d.rho);
  row("eta_max", d.eta_max);
  row("Gamma_DP", d.gamma_dp);
  row("Gamma_SGD", d.gamma_sgd);
  os << "convergence bound terms\n";
  row("optimization", d.terms.optimization);
  row("clipping", d.terms.clipping);
  row("dp_noise", d.terms.dp_noise);
  row("bias_gradient", d.terms.bias_gradient);
  row("bias_variance", d.terms.bias_variance);
  row("total", d.terms.total());
}

/// r, kappa_r, kappa_hat_r (normalized over the full horizon), c_m,r.
inline std::string impulse_csv(const FilterConfig& filter, std::size_t horizon) {
  validate(filter);
  const auto ir = impulse_response(filter, horizon);
  FilterState<double> st;
  std::ostringstream os;
  os << "r,kappa,kappa_hat,c_m\n";
  for (std::size_t r = 0; r <= horizon; ++r) {
    const double c = bias_correction_step(st, filter);
    os << r << ',' << format_number(ir.kappa(r)) << ',' << format_number(ir.kappa_hat(r, horizon)) << ','
       << format_number(c) << '\n';
  }
  return os.str();
}

}  // namespace dppmlf
