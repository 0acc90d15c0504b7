#pragma once
// Benchmark orchestration: expand plans, fit and time detectors, evaluate
// every criterion, aggregate per dataset and write reports.
//
// Output directory layout:
//   results.json                 metrics, aggregates, exclusions, failures (no wall-clock data)
//   runtime.csv                  fit / inference timing per (detector, schema)
//   tables/<criterion>.csv       detectors ranked by mean dataset F1_best
//   plotdata/tradeoff.csv        inference seconds vs mean score vs cbrt(parameters)
//   scores/<dataset>/<schema>/<detector>/<curve>.csv   raw score dumps

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsadbench/core.hpp"
#include "tsadbench/datasets.hpp"
#include "tsadbench/detectors.hpp"
#include "tsadbench/extern.hpp"
#include "tsadbench/metrics.hpp"
#include "tsadbench/schemas.hpp"

namespace tsadbench {

// ---------------------------------------------------------------------------
// Configuration

struct DetectorEntry {
  std::string name;
  bool external = false;
  DetectorConfig builtin;
  ExternalDetectorSpec ext;
};

/// A criterion as configured. With `delayed` set, K resolves per dataset:
/// CLI override, then the config's per-dataset override, then the manifest,
/// then `base.k_delay`.
struct CriterionEntry {
  std::string name;
  EvalCriterion base;
  bool delayed = false;
};

struct RunConfig {
  std::vector<std::filesystem::path> datasets;
  std::vector<DetectorEntry> detectors;
  std::vector<Schema> schemas{Schema::naive};
  std::vector<CriterionEntry> criteria;
  std::map<std::string, std::size_t> k_delay_overrides;  // dataset name -> K
  std::optional<std::size_t> k_delay_cli;
  std::filesystem::path output = "tsadbench_out";
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  bool allow_statistical_pooling = false;
};

/// Statistical detectors do not learn a pooled model; all_in_one and
/// zero_shot refuse them unless pooling is explicitly allowed.
inline bool is_statistical(const DetectorEntry& d) {
  return !d.external && d.builtin.kind != DetectorKind::ar;
}

inline std::string default_criterion_name(const EvalCriterion& c, bool delayed) {
  std::string name(to_string(c.variant));
  if (c.prolong_len != kDefaultProlong) name += "_L" + std::to_string(c.prolong_len);
  if (delayed) name += "_kdelay";
  return name;
}

inline std::optional<std::size_t> resolve_k_delay(const CriterionEntry& c, const RunConfig& cfg,
                                                  const DatasetManifest& manifest) {
  if (!c.delayed) return std::nullopt;
  if (cfg.k_delay_cli) return cfg.k_delay_cli;
  if (auto it = cfg.k_delay_overrides.find(manifest.name); it != cfg.k_delay_overrides.end()) return it->second;
  if (manifest.k_delay) return manifest.k_delay;
  return c.base.k_delay;
}

/// Parses "variant[:L=<n>][:k=<n>|:k=dataset][:name=<s>]".
inline CriterionEntry parse_criterion(std::string_view text) {
  CriterionEntry c;
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const auto colon = text.find(':', start);
    parts.push_back(text.substr(start, colon == std::string_view::npos ? std::string_view::npos : colon - start));
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  const auto variant = parse_variant(parts[0]);
  if (!variant) throw Error(ErrorCode::ConfigError, "unknown criterion variant '" + std::string(parts[0]) + "'");
  c.base.variant = *variant;
  std::string name;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string_view::npos) throw Error(ErrorCode::ConfigError, "bad criterion option '" + std::string(parts[i]) + "'");
    const auto key = parts[i].substr(0, eq);
    const auto val = std::string(parts[i].substr(eq + 1));
    auto as_count = [&]() {
      const auto v = parse_double(val);
      if (!v || *v < 0 || *v != std::floor(*v)) throw Error(ErrorCode::ConfigError, "bad value '" + val + "' in criterion");
      return static_cast<std::size_t>(*v);
    };
    if (key == "L") {
      c.base.prolong_len = as_count();
    } else if (key == "k") {
      c.delayed = true;
      if (val != "dataset") c.base.k_delay = as_count();
    } else if (key == "name") {
      name = val;
    } else {
      throw Error(ErrorCode::ConfigError, "unknown criterion option '" + std::string(key) + "'");
    }
  }
  c.name = name.empty() ? default_criterion_name(c.base, c.delayed) : name;
  return c;
}

inline CriterionEntry criterion_from_json(const nlohmann::json& j) {
  CriterionEntry c;
  const auto v = j.value("variant", std::string("reduced_length_pa"));
  const auto variant = parse_variant(v);
  if (!variant) throw Error(ErrorCode::ConfigError, "unknown criterion variant '" + v + "'");
  c.base.variant = *variant;
  c.base.prolong_len = j.value("prolong", kDefaultProlong);
  if (j.contains("k_delay") && !j.at("k_delay").is_null()) {
    c.delayed = true;
    const auto& k = j.at("k_delay");
    if (k.is_number_integer()) {
      if (k.get<long long>() < 0) throw Error(ErrorCode::ConfigError, "k_delay must be non-negative");
      c.base.k_delay = k.get<std::size_t>();
    } else if (!(k.is_string() && k.get<std::string>() == "dataset")) {
      throw Error(ErrorCode::ConfigError, "k_delay must be an integer or \"dataset\"");
    }
  }
  c.name = j.value("name", default_criterion_name(c.base, c.delayed));
  return c;
}

inline nlohmann::ordered_json criterion_to_json(const CriterionEntry& c) {
  nlohmann::ordered_json j{{"name", c.name}, {"variant", std::string(to_string(c.base.variant))}, {"prolong", c.base.prolong_len}};
  if (c.delayed)
    j["k_delay"] = c.base.k_delay ? nlohmann::ordered_json(*c.base.k_delay) : nlohmann::ordered_json("dataset");
  else
    j["k_delay"] = nullptr;
  return j;
}

inline DetectorEntry detector_from_json(const nlohmann::json& j) {
  DetectorEntry d;
  const auto kind = j.value("kind", std::string());
  d.name = j.value("name", kind);
  if (kind == "external") {
    d.external = true;
    d.ext.command = j.at("command").get<std::vector<std::string>>();
    d.ext.startup_timeout = j.value("startup_timeout", d.ext.startup_timeout);
    d.ext.message_timeout = j.value("message_timeout", d.ext.message_timeout);
    d.ext.validate();
  } else {
    const auto k = parse_detector_kind(kind);
    if (!k) throw Error(ErrorCode::ConfigError, "unknown detector kind '" + kind + "'");
    d.builtin.kind = *k;
    d.builtin.window = j.value("window", d.builtin.window);
    d.builtin.neighbors = j.value("neighbors", d.builtin.neighbors);
    d.builtin.ridge = j.value("ridge", d.builtin.ridge);
    validate_config(d.builtin);
  }
  if (d.name.empty()) throw Error(ErrorCode::ConfigError, "detector needs a name or kind");
  return d;
}

inline void validate_run_config(const RunConfig& c) {
  if (c.datasets.empty()) throw Error(ErrorCode::ConfigError, "at least one dataset is required");
  if (c.detectors.empty()) throw Error(ErrorCode::ConfigError, "at least one detector is required");
  if (c.schemas.empty()) throw Error(ErrorCode::ConfigError, "at least one schema is required");
  if (c.criteria.empty()) throw Error(ErrorCode::ConfigError, "at least one criterion is required");
  if (c.workers < 1) throw Error(ErrorCode::ConfigError, "workers must be at least 1");
  std::set<std::string> names;
  for (const auto& d : c.detectors)
    if (!names.insert(d.name).second) throw Error(ErrorCode::ConfigError, "duplicate detector name '" + d.name + "'");
  names.clear();
  for (const auto& cr : c.criteria)
    if (!names.insert(cr.name).second) throw Error(ErrorCode::ConfigError, "duplicate criterion name '" + cr.name + "'");
}

/// Defaults: schemas ["naive"], criteria [reduced_length_pa], workers 1,
/// seed 0, output "tsadbench_out". Relative dataset paths resolve against
/// `base_dir`.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  try {
    for (const auto& d : j.at("datasets")) {
      std::filesystem::path p = d.get<std::string>();
      c.datasets.push_back(p.is_relative() && !base_dir.empty() ? base_dir / p : p);
    }
    for (const auto& d : j.at("detectors")) c.detectors.push_back(detector_from_json(d));
    if (j.contains("schemas")) {
      c.schemas.clear();
      for (const auto& s : j.at("schemas")) {
        const auto v = s.get<std::string>();
        const auto schema = parse_schema(v);
        if (!schema) throw Error(ErrorCode::ConfigError, "unknown schema '" + v + "'");
        c.schemas.push_back(*schema);
      }
    }
    if (j.contains("criteria")) {
      for (const auto& cr : j.at("criteria"))
        c.criteria.push_back(cr.is_string() ? parse_criterion(cr.get<std::string>()) : criterion_from_json(cr));
    } else {
      c.criteria.push_back(parse_criterion("reduced_length_pa"));
    }
    if (j.contains("k_delay_overrides"))
      for (const auto& [k, v] : j.at("k_delay_overrides").items()) c.k_delay_overrides[k] = v.get<std::size_t>();
    if (j.contains("output")) {
      std::filesystem::path p = j.at("output").get<std::string>();
      c.output = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    c.workers = j.value("workers", c.workers);
    c.seed = j.value("seed", c.seed);
    c.allow_statistical_pooling = j.value("allow_statistical_pooling", c.allow_statistical_pooling);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("run config: ") + e.what());
  }
  validate_run_config(c);
  return c;
}

// ---------------------------------------------------------------------------
// Report

struct MetricRow {
  std::string dataset;
  std::string curve;
  std::string detector;
  std::string schema;
  std::string criterion;
  MetricReport report;

  auto key() const { return std::tie(dataset, curve, detector, schema, criterion); }
};

struct Exclusion {
  std::string dataset;
  std::string curve;
  std::string detector;
  std::string schema;
  std::string reason;

  auto key() const { return std::tie(dataset, curve, detector, schema); }
};

struct Failure {
  std::string dataset;
  std::string curve;
  std::string detector;
  std::string schema;
  std::string code;
  std::string message;

  auto key() const { return std::tie(dataset, curve, detector, schema); }
};

struct RuntimeStats {
  std::string detector;
  std::string schema;
  double fit_seconds = 0.0;
  double inference_seconds = 0.0;
  std::size_t scored_samples = 0;
  std::size_t parameter_count = 0;
  std::size_t store_size = 0;

  double per_sample_seconds() const {
    return scored_samples ? inference_seconds / static_cast<double>(scored_samples) : 0.0;
  }
};

struct RunReport {
  std::vector<CriterionEntry> criteria;
  std::vector<MetricRow> metrics;
  std::vector<Exclusion> exclusions;
  std::vector<Failure> failures;
  std::vector<RuntimeStats> runtime;

  void sort() {
    std::sort(metrics.begin(), metrics.end(), [](const auto& a, const auto& b) { return a.key() < b.key(); });
    std::sort(exclusions.begin(), exclusions.end(), [](const auto& a, const auto& b) { return a.key() < b.key(); });
    std::sort(failures.begin(), failures.end(), [](const auto& a, const auto& b) { return a.key() < b.key(); });
    std::sort(runtime.begin(), runtime.end(), [](const auto& a, const auto& b) {
      return std::tie(a.detector, a.schema) < std::tie(b.detector, b.schema);
    });
  }
};

struct AggregateRow {
  std::string detector;
  std::string schema;
  std::string criterion;
  AggregateReport scores;
};

/// Dataset-level aggregates per (detector, schema, criterion), sorted by key.
inline std::vector<AggregateRow> compute_aggregates(const RunReport& report) {
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<CurveMetric>> groups;
  for (const auto& m : report.metrics)
    groups[{m.detector, m.schema, m.criterion}].push_back({m.dataset, m.curve, m.report});
  std::vector<AggregateRow> out;
  for (const auto& [key, curves] : groups)
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), aggregate(curves)});
  return out;
}

inline nlohmann::ordered_json report_to_json(const RunReport& report) {
  nlohmann::ordered_json j;
  auto crit = nlohmann::ordered_json::array();
  for (const auto& c : report.criteria) crit.push_back(criterion_to_json(c));
  j["criteria"] = std::move(crit);

  auto metrics = nlohmann::ordered_json::array();
  for (const auto& m : report.metrics) {
    nlohmann::ordered_json row{{"dataset", m.dataset},  {"curve", m.curve},         {"detector", m.detector},
                               {"schema", m.schema},    {"criterion", m.criterion}};
    row["variant"] = std::string(to_string(m.report.criterion.variant));
    row["prolong"] = m.report.criterion.prolong_len;
    row["k_delay"] = m.report.criterion.k_delay ? nlohmann::ordered_json(*m.report.criterion.k_delay) : nlohmann::ordered_json();
    row["f1_best"] = m.report.f1_best;
    row["best_threshold"] = m.report.best_threshold;
    row["precision"] = m.report.precision_at_best;
    row["recall"] = m.report.recall_at_best;
    row["auprc"] = m.report.auprc;
    metrics.push_back(std::move(row));
  }
  j["metrics"] = std::move(metrics);

  auto aggs = nlohmann::ordered_json::array();
  for (const auto& a : compute_aggregates(report)) {
    nlohmann::ordered_json row{{"detector", a.detector}, {"schema", a.schema}, {"criterion", a.criterion}};
    auto ds = nlohmann::ordered_json::object();
    for (const auto& d : a.scores.datasets) ds[d.dataset] = {{"f1_best", d.f1_best}, {"auprc", d.auprc}, {"curves", d.curves}};
    row["datasets"] = std::move(ds);
    row["f1_best"] = a.scores.f1_best;
    row["auprc"] = a.scores.auprc;
    aggs.push_back(std::move(row));
  }
  j["aggregates"] = std::move(aggs);

  auto params = nlohmann::ordered_json::array();
  for (const auto& r : report.runtime)
    params.push_back({{"detector", r.detector}, {"schema", r.schema}, {"parameter_count", r.parameter_count}, {"store_size", r.store_size}});
  j["parameters"] = std::move(params);

  auto excl = nlohmann::ordered_json::array();
  for (const auto& e : report.exclusions)
    excl.push_back({{"dataset", e.dataset}, {"curve", e.curve}, {"detector", e.detector}, {"schema", e.schema}, {"reason", e.reason}});
  j["exclusions"] = std::move(excl);

  auto fails = nlohmann::ordered_json::array();
  for (const auto& f : report.failures)
    fails.push_back({{"dataset", f.dataset}, {"curve", f.curve}, {"detector", f.detector}, {"schema", f.schema}, {"error", f.code}, {"message", f.message}});
  j["failures"] = std::move(fails);
  return j;
}

/// Reads back results.json. Runtime fields are not stored there, so only
/// parameter counts are restored.
inline RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  try {
    for (const auto& c : j.at("criteria")) r.criteria.push_back(criterion_from_json(c));
    for (const auto& m : j.at("metrics")) {
      MetricRow row;
      row.dataset = m.at("dataset").get<std::string>();
      row.curve = m.at("curve").get<std::string>();
      row.detector = m.at("detector").get<std::string>();
      row.schema = m.at("schema").get<std::string>();
      row.criterion = m.at("criterion").get<std::string>();
      row.report.criterion.variant = parse_variant(m.at("variant").get<std::string>()).value();
      row.report.criterion.prolong_len = m.at("prolong").get<std::size_t>();
      if (!m.at("k_delay").is_null()) row.report.criterion.k_delay = m.at("k_delay").get<std::size_t>();
      row.report.f1_best = m.at("f1_best").get<double>();
      row.report.best_threshold = m.at("best_threshold").get<double>();
      row.report.precision_at_best = m.at("precision").get<double>();
      row.report.recall_at_best = m.at("recall").get<double>();
      row.report.auprc = m.at("auprc").get<double>();
      r.metrics.push_back(std::move(row));
    }
    if (j.contains("parameters"))
      for (const auto& p : j.at("parameters")) {
        RuntimeStats s;
        s.detector = p.at("detector").get<std::string>();
        s.schema = p.at("schema").get<std::string>();
        s.parameter_count = p.at("parameter_count").get<std::size_t>();
        s.store_size = p.at("store_size").get<std::size_t>();
        r.runtime.push_back(std::move(s));
      }
    if (j.contains("exclusions"))
      for (const auto& e : j.at("exclusions"))
        r.exclusions.push_back({e.at("dataset").get<std::string>(), e.at("curve").get<std::string>(),
                                e.at("detector").get<std::string>(), e.at("schema").get<std::string>(),
                                e.at("reason").get<std::string>()});
    if (j.contains("failures"))
      for (const auto& f : j.at("failures"))
        r.failures.push_back({f.at("dataset").get<std::string>(), f.at("curve").get<std::string>(),
                              f.at("detector").get<std::string>(), f.at("schema").get<std::string>(),
                              f.at("error").get<std::string>(), f.at("message").get<std::string>()});
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("results.json: ") + e.what());
  }
  r.sort();
  return r;
}

namespace detail {

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string general(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string safe_file_name(std::string s) {
  for (char& ch : s)
    if (ch == '/' || ch == '\\' || ch == ':' || ch == ' ') ch = '_';
  return s;
}

}  // namespace detail

/// Writes tables/<criterion>.csv: one row per (detector, schema), one column
/// per dataset plus "avg". Rows are ranked by avg descending, then detector
/// and schema ascending.
inline void emit_tables(const RunReport& report, const std::filesystem::path& table_dir) {
  if (report.metrics.empty()) throw Error(ErrorCode::EmptyDataset, "report has no metric rows");
  const auto aggs = compute_aggregates(report);
  std::set<std::string> datasets;
  for (const auto& m : report.metrics) datasets.insert(m.dataset);
  std::vector<std::string> criteria;
  for (const auto& c : report.criteria) criteria.push_back(c.name);
  for (const auto& a : aggs)
    if (std::find(criteria.begin(), criteria.end(), a.criterion) == criteria.end()) criteria.push_back(a.criterion);

  for (const auto& crit : criteria) {
    std::vector<const AggregateRow*> rows;
    for (const auto& a : aggs)
      if (a.criterion == crit) rows.push_back(&a);
    if (rows.empty()) continue;
    std::stable_sort(rows.begin(), rows.end(), [](const AggregateRow* a, const AggregateRow* b) {
      if (a->scores.f1_best != b->scores.f1_best) return a->scores.f1_best > b->scores.f1_best;
      return std::tie(a->detector, a->schema) < std::tie(b->detector, b->schema);
    });
    std::string csv = "detector,schema";
    for (const auto& d : datasets) csv += "," + d;
    csv += ",avg\n";
    for (const auto* r : rows) {
      csv += r->detector + "," + r->schema;
      for (const auto& d : datasets) {
        csv += ",";
        for (const auto& ds : r->scores.datasets)
          if (ds.dataset == d) csv += detail::fixed(ds.f1_best);
      }
      csv += "," + detail::fixed(r->scores.f1_best) + "\n";
    }
    write_text_file(table_dir / (detail::safe_file_name(crit) + ".csv"), csv);
  }
}

/// results.json, tables/*.csv, runtime.csv and plotdata/tradeoff.csv.
inline void emit_reports(const RunReport& report, const std::filesystem::path& outdir) {
  if (report.metrics.empty()) throw Error(ErrorCode::EmptyDataset, "report has no metric rows");
  write_text_file(outdir / "results.json", report_to_json(report).dump(2) + "\n");
  emit_tables(report, outdir / "tables");

  std::string runtime = "detector,schema,fit_seconds,inference_seconds,scored_samples,per_sample_seconds,parameter_count,store_size\n";
  for (const auto& r : report.runtime)
    runtime += r.detector + "," + r.schema + "," + detail::general(r.fit_seconds) + "," +
               detail::general(r.inference_seconds) + "," + std::to_string(r.scored_samples) + "," +
               detail::general(r.per_sample_seconds()) + "," + std::to_string(r.parameter_count) + "," +
               std::to_string(r.store_size) + "\n";
  write_text_file(outdir / "runtime.csv", runtime);

  // y = mean dataset F1_best under the first configured criterion.
  const auto aggs = compute_aggregates(report);
  const std::string crit = report.criteria.empty() ? report.metrics.front().criterion : report.criteria.front().name;
  std::string trade = "detector,schema,criterion,inference_seconds,mean_score,size\n";
  for (const auto& r : report.runtime) {
    for (const auto& a : aggs) {
      if (a.detector != r.detector || a.schema != r.schema || a.criterion != crit) continue;
      trade += r.detector + "," + r.schema + "," + crit + "," + detail::general(r.inference_seconds) + "," +
               format_double(a.scores.f1_best) + "," +
               format_double(std::cbrt(static_cast<double>(r.parameter_count))) + "\n";
    }
  }
  write_text_file(outdir / "plotdata" / "tradeoff.csv", trade);
}

// ---------------------------------------------------------------------------
// Score dumps

inline std::string score_dump_csv(const TimeSeries& s, std::span<const double> scores) {
  std::string out = "index,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i)
    out += std::to_string(s.split.valid_end + i) + "," + format_double(scores[i]) + "\n";
  return out;
}

inline ScoreSeries parse_score_dump(std::string_view text, const std::string& series_id, const std::string& origin) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines.front() != "index,score")
    throw Error(ErrorCode::ParseError, origin + ": expected header 'index,score'");
  ScoreSeries out{series_id, {}};
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const auto cells = split_csv_line(lines[li]);
    if (cells.size() != 2) throw Error(ErrorCode::ParseError, origin + " row " + std::to_string(li) + ": expected 2 columns");
    const auto v = parse_double(cells[1]);
    if (!v) throw Error(ErrorCode::ParseError, origin + " row " + std::to_string(li) + ": score is not a number");
    out.scores.push_back(*v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run

namespace detail {

struct LoadedDataset {
  Dataset data;          // anomaly-free series removed
  std::vector<std::string> excluded;
};

struct WorkUnit {
  std::size_t dataset = 0;
  Schema schema = Schema::naive;
  std::size_t detector = 0;
  const Task* task = nullptr;
};

struct UnitResult {
  std::vector<MetricRow> metrics;
  std::vector<Failure> failures;
  double fit_seconds = 0.0;
  double inference_seconds = 0.0;
  std::size_t scored_samples = 0;
  std::size_t parameter_count = 0;
  std::size_t store_size = 0;
};

inline std::vector<MetricRow> evaluate_curve(const std::string& dataset, const TimeSeries& s, const ScoreSeries& scores,
                                             const std::string& detector, const std::string& schema,
                                             const std::vector<CriterionEntry>& criteria,
                                             const std::vector<std::optional<std::size_t>>& ks) {
  validate_scores(scores, s);
  std::vector<MetricRow> rows;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    EvalCriterion crit = criteria[c].base;
    crit.k_delay = ks[c];
    rows.push_back({dataset, s.id, detector, schema, criteria[c].name, evaluate(scores.scores, s.test_labels(), crit)});
  }
  return rows;
}

inline UnitResult execute_unit(const WorkUnit& u, const RunConfig& cfg, const LoadedDataset& ds) {
  using Clock = std::chrono::steady_clock;
  const auto& det = cfg.detectors[u.detector];
  const std::string schema(to_string(u.schema));
  const std::string& dsname = ds.data.name();
  std::vector<std::optional<std::size_t>> ks;
  for (const auto& c : cfg.criteria) ks.push_back(resolve_k_delay(c, cfg, ds.data.manifest));

  UnitResult res;
  auto fail_all = [&](const Error& e) {
    for (const auto& ref : u.task->eval_refs)
      res.failures.push_back({dsname, ref.series_id, det.name, schema, std::string(to_string(e.code())), e.what()});
  };
  auto dump = [&](const TimeSeries& s, std::span<const double> scores) {
    write_text_file(cfg.output / "scores" / detail::safe_file_name(dsname) / schema / detail::safe_file_name(det.name) /
                        (s.id + ".csv"),
                    score_dump_csv(s, scores));
  };
  auto finish_curve = [&](const TimeSeries& s, const ScoreSeries& scores) {
    try {
      dump(s, scores.scores);
      auto rows = evaluate_curve(dsname, s, scores, det.name, schema, cfg.criteria, ks);
      res.metrics.insert(res.metrics.end(), rows.begin(), rows.end());
    } catch (const Error& e) {
      res.failures.push_back({dsname, s.id, det.name, schema, std::string(to_string(e.code())), e.what()});
    }
  };

  if (det.external) {
    ExternalDetectorSpec spec = det.ext;
    spec.stderr_log = cfg.output / "logs" /
                      (detail::safe_file_name(dsname) + "." + schema + "." + detail::safe_file_name(det.name) + ".stderr.log");
    std::error_code ec;
    std::filesystem::create_directories(spec.stderr_log.parent_path(), ec);
    try {
      const auto out = drive_timed(spec, *u.task, [&](const std::string& id) { return ds.data.find(id); });
      res.fit_seconds = out.fit_seconds;
      res.inference_seconds = out.inference_seconds;
      for (const auto& sc : out.scores) {
        const TimeSeries* s = ds.data.find(sc.series_id);
        res.scored_samples += sc.scores.size();
        finish_curve(*s, sc);
      }
    } catch (const Error& e) {
      fail_all(e);
    }
    return res;
  }

  std::vector<std::span<const double>> pools;
  for (const auto& ref : u.task->train_refs) pools.push_back(ds.data.find(ref.series_id)->values_in(ref.region));
  std::optional<FittedDetector> fitted;
  try {
    const auto t0 = Clock::now();
    fitted = fit(det.builtin, pools);
    res.fit_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  } catch (const Error& e) {
    fail_all(e);
    return res;
  }
  res.parameter_count = fitted->parameter_count();
  res.store_size = fitted->store_size();
  for (const auto& ref : u.task->eval_refs) {
    const TimeSeries* s = ds.data.find(ref.series_id);
    try {
      const auto t0 = Clock::now();
      ScoreSeries scores{s->id, fitted->score(*s, ref.region)};
      res.inference_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
      res.scored_samples += scores.scores.size();
      finish_curve(*s, scores);
    } catch (const Error& e) {
      res.failures.push_back({dsname, s->id, det.name, schema, std::string(to_string(e.code())), e.what()});
    }
  }
  return res;
}

}  // namespace detail

/// Loads every dataset, expands plans, runs all (dataset, schema, detector,
/// task) units on `cfg.workers` threads, evaluates every criterion and writes
/// the output directory. Dataset and config problems throw; per-task problems
/// are recorded as failures.
inline RunReport run(const RunConfig& cfg) {
  validate_run_config(cfg);
  std::vector<detail::LoadedDataset> datasets;
  std::set<std::string> ds_names;
  for (const auto& root : cfg.datasets) {
    Dataset raw = load_dataset(root);
    if (!ds_names.insert(raw.name()).second)
      throw Error(ErrorCode::ConfigError, "two datasets are named '" + raw.name() + "'");
    detail::LoadedDataset ld;
    ld.data.manifest = raw.manifest;
    auto filtered = filter_anomaly_free(std::move(raw.series));
    ld.data.series = std::move(filtered.kept);
    ld.excluded = std::move(filtered.excluded);
    datasets.push_back(std::move(ld));
  }

  RunReport report;
  report.criteria = cfg.criteria;

  // Plans are kept alive here; work units point into them.
  std::vector<std::unique_ptr<BenchmarkPlan>> plans;
  std::vector<detail::WorkUnit> units;
  for (std::size_t di = 0; di < datasets.size(); ++di) {
    const auto& ds = datasets[di];
    const auto& name = ds.data.name();
    for (Schema schema : cfg.schemas) {
      const std::string sname(to_string(schema));
      for (const auto& id : ds.excluded)
        for (const auto& det : cfg.detectors) report.exclusions.push_back({name, id, det.name, sname, "anomaly_free_test_region"});
      if (ds.data.series.empty()) continue;
      std::unique_ptr<BenchmarkPlan> plan;
      try {
        plan = std::make_unique<BenchmarkPlan>(make_plan(schema, ds.data.series, cfg.seed));
      } catch (const Error& e) {
        for (const auto& s : ds.data.series)
          for (const auto& det : cfg.detectors)
            report.failures.push_back({name, s.id, det.name, sname, std::string(to_string(e.code())), e.what()});
        continue;
      }
      for (std::size_t k = 0; k < cfg.detectors.size(); ++k) {
        const auto& det = cfg.detectors[k];
        for (const auto& id : plan->held_out) report.exclusions.push_back({name, id, det.name, sname, "zero_shot_train_subset"});
        if (schema != Schema::naive && is_statistical(det) && !cfg.allow_statistical_pooling) {
          for (const auto& t : plan->tasks)
            for (const auto& ref : t.eval_refs)
              report.exclusions.push_back({name, ref.series_id, det.name, sname, "unsupported_schema"});
          continue;
        }
        for (const auto& t : plan->tasks) units.push_back({di, schema, k, &t});
      }
      plans.push_back(std::move(plan));
    }
  }

  std::vector<detail::UnitResult> results(units.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= units.size()) return;
      results[i] = detail::execute_unit(units[i], cfg, datasets[units[i].dataset]);
    }
  };
  const std::size_t n_workers = std::min(cfg.workers, std::max<std::size_t>(units.size(), 1));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }

  std::map<std::pair<std::string, std::string>, RuntimeStats> runtime;
  for (std::size_t i = 0; i < units.size(); ++i) {
    auto& r = results[i];
    report.metrics.insert(report.metrics.end(), r.metrics.begin(), r.metrics.end());
    report.failures.insert(report.failures.end(), r.failures.begin(), r.failures.end());
    const auto& det = cfg.detectors[units[i].detector];
    const std::string sname(to_string(units[i].schema));
    auto& rt = runtime[{det.name, sname}];
    rt.detector = det.name;
    rt.schema = sname;
    rt.fit_seconds += r.fit_seconds;
    rt.inference_seconds += r.inference_seconds;
    rt.scored_samples += r.scored_samples;
    rt.parameter_count = std::max(rt.parameter_count, r.parameter_count);
    rt.store_size = std::max(rt.store_size, r.store_size);
  }
  for (auto& [key, rt] : runtime) report.runtime.push_back(rt);
  report.sort();
  if (!report.metrics.empty()) emit_reports(report, cfg.output);
  return report;
}

// ---------------------------------------------------------------------------
// Re-evaluation from score dumps

/// Recomputes metrics from score dumps. Every directory below `score_dir`
/// holding <curve>.csv files is one detector run: its name is the detector
/// and its parent's name the schema (naive when the parent is not a schema).
/// Criteria already present in `previous` are copied instead of recomputed.
inline RunReport evaluate_scores(const std::filesystem::path& score_dir, const std::filesystem::path& dataset_root,
                                 const std::vector<CriterionEntry>& criteria, const RunConfig& k_cfg = {},
                                 const RunReport* previous = nullptr) {
  if (criteria.empty()) throw Error(ErrorCode::ConfigError, "at least one criterion is required");
  Dataset raw = load_dataset(dataset_root);
  const std::string dsname = raw.name();
  const auto manifest = raw.manifest;
  auto filtered = filter_anomaly_free(std::move(raw.series));

  std::set<std::string> known;
  if (previous)
    for (const auto& m : previous->metrics) known.insert(m.criterion);
  std::vector<CriterionEntry> todo;
  std::vector<std::optional<std::size_t>> ks;
  for (const auto& c : criteria)
    if (!known.count(c.name)) {
      todo.push_back(c);
      ks.push_back(resolve_k_delay(c, k_cfg, manifest));
    }

  RunReport report;
  if (previous) {
    report = *previous;
    for (const auto& c : criteria) {
      const bool listed = std::any_of(report.criteria.begin(), report.criteria.end(),
                                      [&](const CriterionEntry& e) { return e.name == c.name; });
      if (!listed) report.criteria.push_back(c);
    }
  } else {
    report.criteria = criteria;
  }

  if (!std::filesystem::is_directory(score_dir))
    throw Error(ErrorCode::IoError, "score directory " + score_dir.string() + " does not exist");
  std::vector<std::filesystem::path> leaves;
  auto has_csv = [](const std::filesystem::path& d) {
    for (const auto& e : std::filesystem::directory_iterator(d))
      if (e.is_regular_file() && e.path().extension() == ".csv") return true;
    return false;
  };
  if (has_csv(score_dir)) leaves.push_back(score_dir);
  for (const auto& e : std::filesystem::recursive_directory_iterator(score_dir))
    if (e.is_directory() && has_csv(e.path())) leaves.push_back(e.path());
  std::sort(leaves.begin(), leaves.end());

  std::set<std::tuple<std::string, std::string, std::string>> seen_runs;
  for (const auto& leaf : leaves) {
    const auto rel = std::filesystem::relative(leaf, score_dir);
    std::vector<std::string> parts;
    for (const auto& p : rel)
      if (p != ".") parts.push_back(p.string());
    if (parts.size() >= 3 && parts[parts.size() - 3] != detail::safe_file_name(dsname)) continue;
    const std::string detector = leaf.filename().string();
    const std::string parent = leaf.has_parent_path() ? leaf.parent_path().filename().string() : std::string();
    const std::string schema = parse_schema(parent) ? std::string(to_string(*parse_schema(parent))) : "naive";
    if (!seen_runs.insert({dsname, schema, detector}).second) continue;

    for (const auto& id : filtered.excluded) report.exclusions.push_back({dsname, id, detector, schema, "anomaly_free_test_region"});
    for (const auto& s : filtered.kept) {
      const auto file = leaf / (s.id + ".csv");
      if (!std::filesystem::exists(file)) continue;
      try {
        const auto scores = parse_score_dump(read_text_file(file), s.id, file.string());
        auto rows = detail::evaluate_curve(dsname, s, scores, detector, schema, todo, ks);
        report.metrics.insert(report.metrics.end(), rows.begin(), rows.end());
      } catch (const Error& e) {
        report.failures.push_back({dsname, s.id, detector, schema, std::string(to_string(e.code())), e.what()});
      }
    }
  }
  // Exclusions may repeat when merging with a previous report of the same runs.
  report.sort();
  report.exclusions.erase(std::unique(report.exclusions.begin(), report.exclusions.end(),
                                      [](const auto& a, const auto& b) { return a.key() == b.key(); }),
                          report.exclusions.end());
  report.failures.erase(std::unique(report.failures.begin(), report.failures.end(),
                                    [](const auto& a, const auto& b) { return a.key() == b.key() && a.message == b.message; }),
                        report.failures.end());
  return report;
}

}  // namespace tsadbench
