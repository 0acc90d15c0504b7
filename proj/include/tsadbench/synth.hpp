#pragma once
// Seeded synthetic series: sinusoidal base plus Gaussian noise, with injected
// global, contextual, seasonal, trend and shapelet anomalies.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsadbench/core.hpp"
#include "tsadbench/datasets.hpp"
#include "tsadbench/random.hpp"

namespace tsadbench {

enum class AnomalyType { global, contextual, seasonal, trend, shapelet };

inline std::string_view to_string(AnomalyType t) {
  switch (t) {
    case AnomalyType::global: return "global";
    case AnomalyType::contextual: return "contextual";
    case AnomalyType::seasonal: return "seasonal";
    case AnomalyType::trend: return "trend";
    case AnomalyType::shapelet: return "shapelet";
  }
  return "unknown";
}

inline std::optional<AnomalyType> parse_anomaly_type(std::string_view s) {
  for (auto t : {AnomalyType::global, AnomalyType::contextual, AnomalyType::seasonal, AnomalyType::trend,
                 AnomalyType::shapelet})
    if (s == to_string(t)) return t;
  return std::nullopt;
}

inline bool is_point_anomaly(AnomalyType t) { return t == AnomalyType::global || t == AnomalyType::contextual; }

enum class InjectRegion { test_only, anywhere };

struct Sinusoid {
  double period = 50.0;
  double amplitude = 1.0;
};

struct AnomalyRequest {
  AnomalyType type = AnomalyType::global;
  std::size_t count = 1;
  std::size_t min_length = 1;  // ignored for point types
  std::size_t max_length = 1;
};

struct SynthParams {
  double global_sigmas = 8.0;       // global: mu +- this * sigma_global
  double contextual_sigmas = 4.0;   // contextual: local mean +- this * local sigma
  std::size_t contextual_window = 32;
  double seasonal_factor = 2.0;     // frequency multiplier of the dominant sinusoid
  double trend_sigmas = 3.0;        // trend peak offset in units of sigma_global
};

struct SynthConfig {
  std::string id = "synthetic";
  std::size_t length = 1000;
  std::vector<Sinusoid> sinusoids{Sinusoid{}};
  double noise = 0.0;
  std::vector<AnomalyRequest> anomalies;
  InjectRegion inject_region = InjectRegion::test_only;
  std::uint64_t seed = 0;
  SynthParams params;
};

struct InjectedAnomaly {
  AnomalyType type;
  AnomalySegment segment;  // labeled extent
};

struct SyntheticSeries {
  TimeSeries series;
  std::vector<double> clean;  // base signal before injection
  std::vector<InjectedAnomaly> anomalies;
};

inline void validate_config(const SynthConfig& c) {
  if (c.length < 100) throw Error(ErrorCode::ConfigError, "synthetic length must be at least 100");
  if (c.sinusoids.empty()) throw Error(ErrorCode::ConfigError, "at least one sinusoid is required");
  for (const auto& s : c.sinusoids)
    if (!(s.period > 0.0) || !std::isfinite(s.amplitude))
      throw Error(ErrorCode::ConfigError, "sinusoid periods must be positive");
  if (!(c.noise >= 0.0)) throw Error(ErrorCode::ConfigError, "noise must be non-negative");
  for (const auto& a : c.anomalies) {
    if (a.count < 1) throw Error(ErrorCode::ConfigError, "anomaly count must be at least 1");
    if (!is_point_anomaly(a.type) && (a.min_length < 2 || a.min_length > a.max_length))
      throw Error(ErrorCode::ConfigError, "pattern anomalies need 2 <= min_length <= max_length");
  }
  if (c.params.contextual_window < 2) throw Error(ErrorCode::ConfigError, "contextual_window must be >= 2");
}

namespace detail {

struct Moments {
  double mean = 0.0;
  double std = 0.0;
};

inline Moments moments(std::span<const double> v) {
  if (v.empty()) return {};
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

// Finds a start for a footprint of `len` points inside [lo, hi) that keeps a
// one-point gap to anything already occupied.
inline std::optional<std::size_t> place(std::vector<std::uint8_t>& occupied, std::size_t lo, std::size_t hi,
                                        std::size_t len, SplitMix64& rng) {
  if (hi < lo || hi - lo < len) return std::nullopt;
  const std::size_t slots = hi - lo - len + 1;
  auto fits = [&](std::size_t s) {
    const std::size_t a = s > 0 ? s - 1 : 0;
    const std::size_t b = std::min(occupied.size() - 1, s + len);
    for (std::size_t i = a; i <= b; ++i)
      if (occupied[i]) return false;
    return true;
  };
  for (int attempt = 0; attempt < 64; ++attempt) {
    const std::size_t s = lo + static_cast<std::size_t>(rng.bounded(slots));
    if (fits(s)) return s;
  }
  const std::size_t offset = static_cast<std::size_t>(rng.bounded(slots));
  for (std::size_t k = 0; k < slots; ++k) {
    const std::size_t s = lo + (offset + k) % slots;
    if (fits(s)) return s;
  }
  return std::nullopt;
}

}  // namespace detail

/// Generates one labeled series. Labels are 1 exactly on the injected
/// indices; the trend relaxation window is modified but unlabeled.
inline SyntheticSeries generate_detailed(const SynthConfig& cfg) {
  validate_config(cfg);
  const std::size_t n = cfg.length;
  SplitMix64 master(cfg.seed);
  SplitMix64 phase_rng(master());
  SplitMix64 noise_rng(master());
  SplitMix64 place_rng(master());
  SplitMix64 shape_rng(master());

  std::vector<double> phases;
  for (std::size_t i = 0; i < cfg.sinusoids.size(); ++i) phases.push_back(2.0 * std::numbers::pi * phase_rng.uniform());

  std::vector<double> clean(n, 0.0);
  NormalSampler normal;
  for (std::size_t t = 0; t < n; ++t) {
    double v = 0.0;
    for (std::size_t i = 0; i < cfg.sinusoids.size(); ++i) {
      const auto& s = cfg.sinusoids[i];
      v += s.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / s.period + phases[i]);
    }
    if (cfg.noise > 0.0) v += cfg.noise * normal(noise_rng);
    clean[t] = v;
  }

  std::size_t dominant = 0;
  for (std::size_t i = 1; i < cfg.sinusoids.size(); ++i)
    if (std::abs(cfg.sinusoids[i].amplitude) > std::abs(cfg.sinusoids[dominant].amplitude)) dominant = i;
  const Sinusoid dom = cfg.sinusoids[dominant];
  const double dom_phase = phases[dominant];

  const auto global = detail::moments(clean);
  const double clean_min = *std::min_element(clean.begin(), clean.end());
  const double clean_max = *std::max_element(clean.begin(), clean.end());

  SyntheticSeries out;
  out.clean = clean;
  TimeSeries& series = out.series;
  series.id = cfg.id;
  series.values = clean;
  series.labels.assign(n, 0);
  series.split = split_series(n);

  const std::size_t lo = cfg.inject_region == InjectRegion::test_only ? series.split.valid_end : 0;
  std::vector<std::uint8_t> occupied(n, 0);

  for (const auto& req : cfg.anomalies) {
    for (std::size_t c = 0; c < req.count; ++c) {
      std::size_t len = 1;
      if (!is_point_anomaly(req.type))
        len = req.min_length + static_cast<std::size_t>(place_rng.bounded(req.max_length - req.min_length + 1));
      const std::size_t footprint = req.type == AnomalyType::trend ? 2 * len : len;
      const auto start = detail::place(occupied, lo, n, footprint, place_rng);
      if (!start)
        throw Error(ErrorCode::PlanInfeasible, "cannot place " + std::string(to_string(req.type)) +
                                                   " anomaly of length " + std::to_string(len) + " in '" +
                                                   cfg.id + "'");
      const std::size_t s = *start;
      const std::size_t e = s + len - 1;
      for (std::size_t i = s; i < s + footprint; ++i) occupied[i] = 1;
      const double sign = (shape_rng() & 1) ? 1.0 : -1.0;

      switch (req.type) {
        case AnomalyType::global:
          series.values[s] = global.mean + sign * cfg.params.global_sigmas * global.std;
          break;
        case AnomalyType::contextual: {
          const std::size_t w0 = s >= cfg.params.contextual_window ? s - cfg.params.contextual_window : 0;
          const auto local = w0 < s ? detail::moments(std::span<const double>(clean).subspan(w0, s - w0))
                                    : detail::Moments{clean[s], 0.0};
          const double delta = cfg.params.contextual_sigmas * local.std;
          const double a = std::clamp(local.mean + sign * delta, clean_min, clean_max);
          const double b = std::clamp(local.mean - sign * delta, clean_min, clean_max);
          series.values[s] = std::abs(b - clean[s]) > std::abs(a - clean[s]) ? b : a;
          break;
        }
        case AnomalyType::seasonal: {
          const double w = 2.0 * std::numbers::pi / dom.period;
          for (std::size_t t = s; t <= e; ++t) {
            const double orig = dom.amplitude * std::sin(w * static_cast<double>(t) + dom_phase);
            const double fast = dom.amplitude * std::sin(w * static_cast<double>(s) + dom_phase +
                                                         cfg.params.seasonal_factor * w * static_cast<double>(t - s));
            series.values[t] = clean[t] - orig + fast;
          }
          break;
        }
        case AnomalyType::trend: {
          const double slope = sign * cfg.params.trend_sigmas * global.std / static_cast<double>(len);
          const double peak = slope * static_cast<double>(len - 1);
          for (std::size_t t = s; t <= e; ++t) series.values[t] = clean[t] + slope * static_cast<double>(t - s);
          for (std::size_t r = 0; r < len; ++r)
            series.values[e + 1 + r] =
                clean[e + 1 + r] + peak * static_cast<double>(len - 1 - r) / static_cast<double>(len);
          break;
        }
        case AnomalyType::shapelet: {
          const auto seg = std::span<const double>(clean).subspan(s, len);
          const auto mom = detail::moments(seg);
          const double amp = (*std::max_element(seg.begin(), seg.end()) - *std::min_element(seg.begin(), seg.end())) / 2.0;
          // At least one full cycle inside the segment.
          const double period = std::min(dom.period, static_cast<double>(len));
          for (std::size_t t = s; t <= e; ++t) {
            const double phase = std::sin(2.0 * std::numbers::pi * static_cast<double>(t - s) / period);
            series.values[t] = mom.mean + (phase >= 0.0 ? amp : -amp);
          }
          break;
        }
      }
      for (std::size_t t = s; t <= e; ++t) series.labels[t] = 1;
      out.anomalies.push_back({req.type, {s, e}});
    }
  }
  std::sort(out.anomalies.begin(), out.anomalies.end(),
            [](const InjectedAnomaly& a, const InjectedAnomaly& b) { return a.segment.start < b.segment.start; });
  return out;
}

inline TimeSeries generate(const SynthConfig& cfg) { return generate_detailed(cfg).series; }

/// Writes one curve per config in the canonical dataset layout (4:1:5 split).
inline Dataset generate_dataset(const std::string& name, std::span<const SynthConfig> configs,
                                const std::filesystem::path& root,
                                std::optional<std::size_t> k_delay = std::nullopt) {
  if (configs.empty()) throw Error(ErrorCode::ConfigError, "no synthetic curves requested");
  std::set<std::string> ids;
  Dataset ds;
  ds.manifest.name = name;
  ds.manifest.k_delay = k_delay;
  for (const auto& c : configs) {
    if (!ids.insert(c.id).second) throw Error(ErrorCode::ConfigError, "duplicate curve id '" + c.id + "'");
    ds.series.push_back(generate(c));
  }
  write_dataset(ds, root);
  for (const auto& s : ds.series) ds.manifest.curves.push_back({s.id, "curves/" + s.id + ".csv", {}, {}});
  return ds;
}

// ---------------------------------------------------------------------------
// JSON configuration for the `gen` subcommand:
// {"name": str, "k_delay": int?, "curves": [{"id": str, "count": int?, "seed": int,
//   "length": int, "sinusoids": [{"period": f, "amplitude": f}], "noise": f,
//   "inject_region": "test_only"|"anywhere",
//   "anomalies": [{"type": str, "count": int, "min_length": int, "max_length": int}],
//   "params": {...}}]}
// An entry with "count" > 1 expands to ids <id>_000, <id>_001, ... with seeds seed+i.

struct SynthDatasetSpec {
  std::string name;
  std::optional<std::size_t> k_delay;
  std::vector<SynthConfig> curves;
};

inline SynthDatasetSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthDatasetSpec spec;
  try {
    spec.name = j.value("name", std::string("synthetic"));
    if (j.contains("k_delay") && !j.at("k_delay").is_null()) spec.k_delay = j.at("k_delay").get<std::size_t>();
    for (const auto& cj : j.at("curves")) {
      SynthConfig base;
      base.id = cj.value("id", std::string("curve"));
      base.length = cj.value("length", base.length);
      base.noise = cj.value("noise", base.noise);
      base.seed = cj.value("seed", std::uint64_t{0});
      if (cj.contains("sinusoids")) {
        base.sinusoids.clear();
        for (const auto& s : cj.at("sinusoids"))
          base.sinusoids.push_back({s.value("period", 50.0), s.value("amplitude", 1.0)});
      }
      const auto region = cj.value("inject_region", std::string("test_only"));
      if (region == "test_only") base.inject_region = InjectRegion::test_only;
      else if (region == "anywhere") base.inject_region = InjectRegion::anywhere;
      else throw Error(ErrorCode::ConfigError, "unknown inject_region '" + region + "'");
      if (cj.contains("anomalies")) {
        for (const auto& a : cj.at("anomalies")) {
          AnomalyRequest r;
          const auto type = a.at("type").get<std::string>();
          const auto t = parse_anomaly_type(type);
          if (!t) throw Error(ErrorCode::ConfigError, "unknown anomaly type '" + type + "'");
          r.type = *t;
          r.count = a.value("count", std::size_t{1});
          r.min_length = a.value("min_length", is_point_anomaly(r.type) ? std::size_t{1} : std::size_t{10});
          r.max_length = a.value("max_length", std::max(r.min_length, is_point_anomaly(r.type) ? std::size_t{1} : std::size_t{30}));
          base.anomalies.push_back(r);
        }
      }
      if (cj.contains("params")) {
        const auto& p = cj.at("params");
        base.params.global_sigmas = p.value("global_sigmas", base.params.global_sigmas);
        base.params.contextual_sigmas = p.value("contextual_sigmas", base.params.contextual_sigmas);
        base.params.contextual_window = p.value("contextual_window", base.params.contextual_window);
        base.params.seasonal_factor = p.value("seasonal_factor", base.params.seasonal_factor);
        base.params.trend_sigmas = p.value("trend_sigmas", base.params.trend_sigmas);
      }
      const auto count = cj.value("count", std::size_t{1});
      if (count <= 1) {
        spec.curves.push_back(base);
        continue;
      }
      for (std::size_t i = 0; i < count; ++i) {
        SynthConfig c = base;
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, "_%03zu", i);
        c.id = base.id + suffix;
        c.seed = base.seed + i;
        spec.curves.push_back(std::move(c));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("synthetic config: ") + e.what());
  }
  return spec;
}

}  // namespace tsadbench
