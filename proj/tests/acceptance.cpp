// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <string>

#include "oracle.hpp"
#include "tsadbench/bench.hpp"
#include "tsadbench/synth.hpp"

using namespace tsadbench;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("tsadbench_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string fmt(const char* f, double v) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const PaVariant kVariants[] = {PaVariant::point_wise_pa, PaVariant::event_wise_pa, PaVariant::reduced_length_pa};

// 1. Length-8 segment with one in-segment alarm and two isolated false alarms.
Outcome one_segment_two_false_alarms() {
  std::vector<double> x(40, 0.0);
  std::vector<std::uint8_t> y(40, 0);
  for (std::size_t i = 10; i <= 17; ++i) y[i] = 1;
  x[13] = x[2] = x[33] = 1.0;
  const auto segs = prolong_segments(extract_segments(y), 0, y.size());
  auto prf = [&](PaVariant v) { return prf_from_confusion(confusion_at_threshold(x, segs, 1.0, {v, std::nullopt, 0})); };
  const auto pw = prf(PaVariant::point_wise_pa);
  const auto ew = prf(PaVariant::event_wise_pa);
  const auto rl = prf(PaVariant::reduced_length_pa);
  // Hand evaluation of the severity-weighted counts.
  const double tp = std::log(8.0 + std::numbers::e), fp = 2.0 * std::log(1.0 + std::numbers::e);
  const double p_rl = tp / (tp + fp);
  const double f1_rl_hand = 2.0 * p_rl / (p_rl + 1.0);
  // The brute-force oracle agrees at the alarm threshold.
  const auto oc = oracle::confusion(x, y, 1.0, PaVariant::reduced_length_pa, 0, std::nullopt);
  const bool ok = pw.precision == 0.8 && std::abs(ew.precision - 1.0 / 3.0) <= 1e-12 && std::abs(ew.f1 - 0.5) <= 1e-12 &&
                  std::abs(rl.f1 - 0.6436) <= 1e-4 && std::abs(rl.f1 - f1_rl_hand) <= 1e-12 &&
                  std::abs(oc.tp - tp) <= 1e-12 && std::abs(oc.fp - fp) <= 1e-12;
  return {ok, "point-wise P=" + fmt("%.4f", pw.precision) + ", event-wise P=" + fmt("%.12f", ew.precision) +
                  " F1=" + fmt("%.12f", ew.f1) + ", reduced-length F1=" + fmt("%.6f", rl.f1)};
}

// 2. K = 3: first alarm at offset 3 detects, offset 4 misses.
Outcome kdelay() {
  std::vector<std::uint8_t> y(40, 0);
  for (std::size_t i = 10; i < 25; ++i) y[i] = 1;
  const auto segs = prolong_segments(extract_segments(y), 0, y.size());
  std::vector<double> at3(40, 0.0), at4(40, 0.0);
  at3[13] = 1.0;
  at4[14] = 1.0;
  const bool d3 = detected_within_delay(segs[0], at3, 1.0, 3);
  const bool d4 = detected_within_delay(segs[0], at4, 1.0, 3);
  const EvalCriterion ew{PaVariant::event_wise_pa, 3, 0};
  const bool c3 = confusion_at_threshold(at3, segs, 1.0, ew).tp == 1.0;
  const bool c4 = confusion_at_threshold(at4, segs, 1.0, ew).fn == 1.0;
  return {d3 && !d4 && c3 && c4, std::string("offset 3 detected=") + (d3 ? "true" : "false") +
                                     ", offset 4 detected=" + (d4 ? "true" : "false")};
}

// 3. Exhaustive label strings (n <= 10, <= 2 segments) x 200 score vectors.
Outcome oracle_equivalence() {
  std::mt19937_64 gen(20240601);
  std::size_t strings = 0, checks = 0;
  double worst = 0.0;
  const std::optional<std::size_t> ks[] = {std::nullopt, 0, 2};
  const std::size_t ls[] = {0, 3};
  for (std::size_t n = 1; n <= 10; ++n) {
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      std::vector<std::uint8_t> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = (mask >> i) & 1u;
      if (extract_segments(y).size() > 2) continue;
      ++strings;
      const bool any = mask != 0;
      std::vector<double> x(n);
      for (int r = 0; r < 200; ++r) {
        const bool ties = r % 2 == 0;
        for (auto& v : x) v = ties ? double(gen() % 4) : std::uniform_real_distribution<double>(-1.0, 1.0)(gen);
        for (auto var : kVariants)
          for (auto K : ks)
            for (auto L : ls) {
              const EvalCriterion crit{var, K, L};
              const auto want = oracle::evaluate(x, y, var, L, K);
              ++checks;
              if (any) {
                const auto got = evaluate(x, y, crit);
                const double err = std::max(std::abs(got.f1_best - want.best_f1), std::abs(got.auprc - want.auprc));
                worst = std::max(worst, err);
                if (err > 1e-12 || got.best_threshold != want.best_thr)
                  return {false, "mismatch n=" + std::to_string(n) + " mask=" + std::to_string(mask)};
              } else {
                const auto got = best_f1(x, y, crit);
                if (got.f1 != want.best_f1 || got.threshold != want.best_thr)
                  return {false, "mismatch on all-normal labels n=" + std::to_string(n)};
                try {
                  auprc(x, y, crit);
                  return {false, "auprc accepted labels without anomalies"};
                } catch (const Error& e) {
                  if (e.code() != ErrorCode::NoPositiveEvents) return {false, "wrong error code"};
                }
              }
            }
      }
    }
  }
  return {true, std::to_string(strings) + " label strings, " + std::to_string(checks) +
                    " comparisons, max |diff| = " + fmt("%.3g", worst)};
}

// 4. Prolonging never merges and follows the end rule exactly.
Outcome prolonging() {
  std::mt19937_64 gen(77);
  std::size_t layouts = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + gen() % 120;
    std::vector<std::uint8_t> y(n);
    const double density = std::uniform_real_distribution<double>(0.02, 0.6)(gen);
    for (auto& v : y) v = std::uniform_real_distribution<double>(0, 1)(gen) < density;
    const auto segs = extract_segments(y);
    ++layouts;
    for (std::size_t L = 0; L <= 20; ++L) {
      const auto e = prolong_segments(segs, L, n);
      if (e.size() != segs.size()) return {false, "event count changed"};
      for (std::size_t i = 0; i < e.size(); ++i) {
        std::size_t want = segs[i].end + L;
        if (i + 1 < segs.size()) want = std::min(want, segs[i + 1].start - 1);
        want = std::min(want, n - 1);
        if (e[i].end != want || e[i].start != segs[i].start || e[i].original_end != segs[i].end)
          return {false, "end rule violated"};
        if (i + 1 < e.size() && e[i].end >= e[i + 1].start) return {false, "segments overlap"};
      }
    }
  }
  return {true, std::to_string(layouts) + " layouts x L in 0..20"};
}

std::vector<SynthConfig> global_only_curves(std::size_t count) {
  std::vector<SynthConfig> cs;
  for (std::size_t i = 0; i < count; ++i) {
    SynthConfig c;
    c.id = "g" + std::to_string(i);
    c.length = 2000;
    c.sinusoids = {{50.0, 1.0}, {13.0, 0.25}};
    c.noise = 0.1;
    c.seed = 5000 + i;
    c.anomalies = {{AnomalyType::global, 3}};
    cs.push_back(c);
  }
  return cs;
}

// 5. First difference on point outliers.
Outcome first_diff_global() {
  const auto dir = scratch("c5");
  generate_dataset("global_only", global_only_curves(20), dir / "data");
  RunConfig cfg;
  cfg.datasets = {dir / "data"};
  cfg.detectors = {detector_from_json(nlohmann::json::parse(R"({"kind":"first_diff"})"))};
  cfg.criteria = {parse_criterion("point_wise_pa")};
  cfg.output = dir / "out";
  const auto report = run(cfg);
  if (report.metrics.size() != 20 || !report.failures.empty()) return {false, "expected 20 evaluated curves"};
  const auto agg = compute_aggregates(report).at(0).scores;
  return {agg.f1_best >= 0.9, "mean F1_best = " + fmt("%.4f", agg.f1_best) + " over 20 curves"};
}

// 6. Matrix profile on a noise-free periodic series with one shapelet.
Outcome matrix_profile_shapelet() {
  const std::size_t m = 8;
  double worst_normal = 0.0, min_anomaly = std::numeric_limits<double>::infinity();
  std::string f1s;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig c;
    c.id = "mp";
    c.length = 1000;
    c.sinusoids = {{40.0, 1.0}};
    c.noise = 0.0;
    c.seed = seed;
    c.anomalies = {{AnomalyType::shapelet, 1, 10, 30}};
    const auto syn = generate_detailed(c);
    const auto& s = syn.series;
    const auto seg = syn.anomalies.at(0).segment;
    const auto d = fit({DetectorKind::matrix_profile, m}, {s.values_in(s.train_region())});
    const auto scores = d.score(s, s.test_region());
    const auto rep = evaluate(scores, s.test_labels(), {PaVariant::event_wise_pa, std::nullopt, kDefaultProlong});
    ok = ok && rep.f1_best == 1.0;
    f1s += (f1s.empty() ? "" : ",") + fmt("%.3f", rep.f1_best);
    double anomaly_peak = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const std::size_t g = s.split.valid_end + i;
      const bool touches = g >= seg.start && g - (m - 1) <= seg.end;
      if (touches)
        anomaly_peak = std::max(anomaly_peak, scores[i]);
      else
        worst_normal = std::max(worst_normal, scores[i]);
    }
    min_anomaly = std::min(min_anomaly, anomaly_peak);
  }
  ok = ok && worst_normal <= 1e-6 && min_anomaly > 1e-6;
  return {ok, "F1_best per seed = [" + f1s + "], max score on matching windows = " + fmt("%.3g", worst_normal) +
                  ", min anomaly peak = " + fmt("%.3g", min_anomaly)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TSADBENCH_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// 7. Zero-shot plans: byte-identical serialization, valid partitions.
Outcome zero_shot_plans() {
  const auto dir = scratch("c7");
  auto cs = global_only_curves(10);
  for (auto& c : cs) c.length = 300;
  const auto ds = generate_dataset("zs", cs, dir / "data");
  const auto a = to_json(plan_zero_shot(ds.series, 42)).dump(2);
  const auto b = to_json(plan_zero_shot(ds.series, 42)).dump(2);
  if (a != b) return {false, "in-process serialization differs"};
  const std::string base = "split -d " + (dir / "data").string() + " --schema zero_shot --seed 42 -o ";
  if (run_cli(base + (dir / "p1.json").string()) != 0 || run_cli(base + (dir / "p2.json").string()) != 0)
    return {false, "split subcommand failed"};
  if (read_text_file(dir / "p1.json") != read_text_file(dir / "p2.json")) return {false, "CLI plans differ"};
  if (read_text_file(dir / "p1.json") != a + "\n") return {false, "CLI plan differs from library plan"};

  std::mt19937_64 gen(7);
  for (int i = 0; i < 100; ++i) {
    const auto plan = plan_zero_shot(ds.series, gen());
    std::set<std::string> train, eval;
    for (const auto& r : plan.tasks.at(0).train_refs) train.insert(r.series_id);
    for (const auto& r : plan.tasks.at(0).eval_refs) eval.insert(r.series_id);
    std::set<std::string> all = train;
    all.insert(eval.begin(), eval.end());
    if (train.size() != 5 || eval.size() != 5 || all.size() != 10) return {false, "bad partition"};
  }
  return {true, "2 CLI runs byte-identical; 100 seeds give disjoint 5/5 partitions of 10 series"};
}

// 8. Per-sample inference time on a 140,000-sample series.
Outcome runtime_bound() {
  const auto dir = scratch("c8");
  // 56,000 training points (the 4:1:5 train share of 140,000) precede a
  // 140,000-point test region that is scored one window per step.
  SynthConfig c;
  c.id = "long";
  c.length = 196000;
  c.sinusoids = {{50.0, 1.0}, {17.0, 0.3}};
  c.noise = 0.1;
  c.seed = 3;
  c.anomalies = {{AnomalyType::global, 20}, {AnomalyType::shapelet, 5, 20, 40}};
  Dataset ds;
  ds.manifest.name = "long";
  ds.manifest.default_ratio.reset();
  ds.series.push_back(generate(c));
  ds.series[0].split = {56000, 56000, SplitSource::predefined};
  write_dataset(ds, dir / "data");

  RunConfig cfg;
  cfg.datasets = {dir / "data"};
  for (const char* j : {R"({"kind":"ar","window":32})", R"({"kind":"first_diff"})",
                        R"({"kind":"sub_lof","window":32,"neighbors":10})", R"({"kind":"matrix_profile","window":32})"})
    cfg.detectors.push_back(detector_from_json(nlohmann::json::parse(j)));
  cfg.criteria = {parse_criterion("point_wise_pa")};
  cfg.output = dir / "out";
  run(cfg);

  const auto text = read_text_file(cfg.output / "runtime.csv");
  const auto lines = split_lines(text);
  std::string detail;
  bool ok = lines.size() >= 5;
  std::size_t rows = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cells = split_csv_line(lines[i]);
    const auto per_sample = parse_double(cells.at(5)).value_or(1e9);
    const auto samples = parse_double(cells.at(4)).value_or(0);
    ok = ok && per_sample < 0.05 && samples == 140000;
    ++rows;
    detail += (detail.empty() ? "" : ", ") + std::string(cells[0]) + " " + fmt("%.3g", per_sample * 1e3) + " ms";
  }
  return {ok && rows == 4, "per-sample inference over 140000 samples (runtime.csv): " + detail};
}

// 9. results.json identical for 1 and 8 workers on the synthetic benchmark config.
Outcome parallel_determinism() {
  const auto dir = scratch("c9");
  const fs::path src = TSADBENCH_SOURCE_DIR;
  const auto spec = synth_spec_from_json(nlohmann::json::parse(read_text_file(src / "configs/synth_benchmark.json")));
  generate_dataset(spec.name, spec.curves, dir / spec.name, spec.k_delay);
  auto cfg = run_config_from_json(nlohmann::json::parse(read_text_file(src / "configs/run_synthetic.json")), src / "configs");
  cfg.datasets = {dir / spec.name};
  cfg.workers = 1;
  cfg.output = dir / "w1";
  const auto r1 = run(cfg);
  cfg.workers = 8;
  cfg.output = dir / "w8";
  run(cfg);
  const bool same = read_text_file(dir / "w1/results.json") == read_text_file(dir / "w8/results.json");
  return {same && !r1.metrics.empty(), std::to_string(r1.metrics.size()) + " metric rows, results.json " +
                                           (same ? "byte-identical" : "DIFFERENT")};
}

// 10. Stub detector error paths become task failures; the run completes.
Outcome external_failures() {
  const auto dir = scratch("c10");
  auto cs = global_only_curves(3);
  for (auto& c : cs) c.length = 400;
  generate_dataset("ext", cs, dir / "data");
  RunConfig cfg;
  cfg.datasets = {dir / "data"};
  cfg.detectors = {detector_from_json(nlohmann::json::parse(R"({"kind":"first_diff"})"))};
  auto stub = [&](const std::string& name, const std::string& mode) {
    DetectorEntry d;
    d.name = name;
    d.external = true;
    d.ext.command = {STUB_DETECTOR_PATH, mode};
    d.ext.startup_timeout = 5.0;
    d.ext.message_timeout = 1.0;
    cfg.detectors.push_back(d);
  };
  stub("stub_short", "short");
  stub("stub_sleep", "sleep");
  stub("stub_crash", "crash");
  stub("stub_ok", "diff");
  cfg.criteria = {parse_criterion("event_wise_pa")};
  cfg.output = dir / "out";
  RunReport report;
  try {
    report = run(cfg);
  } catch (const std::exception& e) {
    return {false, std::string("run aborted: ") + e.what()};
  }
  std::map<std::string, std::set<std::string>> codes;
  for (const auto& f : report.failures) codes[f.detector].insert(f.code);
  std::size_t ok_rows = 0;
  for (const auto& m : report.metrics) ok_rows += m.detector == "first_diff" || m.detector == "stub_ok";
  const bool ok = codes["stub_short"] == std::set<std::string>{"LengthMismatch"} &&
                  codes["stub_sleep"] == std::set<std::string>{"Timeout"} &&
                  codes["stub_crash"] == std::set<std::string>{"NonZeroExit"} && ok_rows == 6 &&
                  report.failures.size() == 9 && fs::exists(cfg.output / "results.json");
  return {ok, std::to_string(report.failures.size()) + " curve failures (LengthMismatch, Timeout, NonZeroExit), " +
                  std::to_string(ok_rows) + " healthy metric rows"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
    double limit_seconds;  // 0: no bound
  };
  const std::vector<Criterion> criteria{
      {1, "one segment with two isolated false alarms", one_segment_two_false_alarms, 1.0},
      {2, "k-delay offsets 3 and 4 with K=3", kdelay, 0.0},
      {3, "optimized metrics equal brute force", oracle_equivalence, 120.0},
      {4, "prolonging never merges", prolonging, 0.0},
      {5, "first difference on global point anomalies", first_diff_global, 30.0},
      {6, "matrix profile on a shapelet anomaly", matrix_profile_shapelet, 0.0},
      {7, "zero-shot plan determinism", zero_shot_plans, 0.0},
      {8, "per-sample inference time below 50 ms", runtime_bound, 0.0},
      {9, "results.json identical for 1 and 8 workers", parallel_determinism, 0.0},
      {10, "external detector failures are recorded", external_failures, 0.0},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_seconds > 0 && secs >= c.limit_seconds) {
      o.pass = false;
      o.detail += " (took longer than " + fmt("%.0f", c.limit_seconds) + " s)";
    }
    std::printf("criterion %2d: %s  %s -- %s [%.2f s]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
