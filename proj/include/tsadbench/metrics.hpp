#pragma once
// Event-based evaluation: point adjustment variants, severity weighting,
// k-delay detection, segment prolonging, threshold sweep (F1_best, AUPRC)
// and dataset-level aggregation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsadbench/core.hpp"

namespace tsadbench {

enum class PaVariant { point_wise_pa, event_wise_pa, reduced_length_pa };

inline std::string_view to_string(PaVariant v) {
  switch (v) {
    case PaVariant::point_wise_pa: return "point_wise_pa";
    case PaVariant::event_wise_pa: return "event_wise_pa";
    case PaVariant::reduced_length_pa: return "reduced_length_pa";
  }
  return "unknown";
}

inline std::optional<PaVariant> parse_variant(std::string_view s) {
  if (s == "point_wise_pa" || s == "point_wise") return PaVariant::point_wise_pa;
  if (s == "event_wise_pa" || s == "event_wise") return PaVariant::event_wise_pa;
  if (s == "reduced_length_pa" || s == "reduced_length") return PaVariant::reduced_length_pa;
  return std::nullopt;
}

inline constexpr std::size_t kDefaultProlong = 9;

struct EvalCriterion {
  PaVariant variant = PaVariant::reduced_length_pa;
  std::optional<std::size_t> k_delay;  // absent: no latency constraint
  std::size_t prolong_len = kDefaultProlong;

  bool operator==(const EvalCriterion&) const = default;
};

/// Severity coefficient ln(k + e) of an anomaly segment of length k.
inline double severity_weight(std::size_t k) {
  return std::log(static_cast<double>(k) + std::numbers::e);
}

/// A true segment after prolonging; `original_end` keeps the labeled extent.
struct ExtendedSegment {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive, after prolonging
  std::size_t original_end = 0;

  std::size_t length() const { return end - start + 1; }
  std::size_t original_length() const { return original_end - start + 1; }
  bool operator==(const ExtendedSegment&) const = default;
};

/// Extends every segment by up to `prolong` points without touching the next
/// segment or running past the series: end_i = min(end_i + L, start_{i+1} - 1, n - 1).
inline std::vector<ExtendedSegment> prolong_segments(std::span<const AnomalySegment> segments,
                                                     std::size_t prolong, std::size_t n) {
  std::vector<ExtendedSegment> out;
  out.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    std::size_t end = s.end + prolong;
    if (i + 1 < segments.size()) end = std::min(end, segments[i + 1].start - 1);
    if (n > 0) end = std::min(end, n - 1);
    end = std::max(end, s.end);
    out.push_back({s.start, end, s.end});
  }
  return out;
}

// Last position an alarm may occur at and still detect the segment.
inline std::size_t detection_limit(const ExtendedSegment& seg, std::optional<std::size_t> k_delay) {
  if (!k_delay) return seg.end;
  const std::size_t room = seg.end - seg.start;
  return seg.start + std::min(*k_delay, room);
}

/// Point adjustment: each extended segment takes the maximum raw score found
/// within its detection window (the whole segment, or the first K+1 points
/// under a latency limit). Positions outside segments are unchanged.
inline std::vector<double> adjust_scores_pa(std::span<const double> scores,
                                            std::span<const ExtendedSegment> segments,
                                            std::optional<std::size_t> k_delay = std::nullopt) {
  std::vector<double> out(scores.begin(), scores.end());
  for (const auto& seg : segments) {
    const std::size_t limit = detection_limit(seg, k_delay);
    double best = scores[seg.start];
    for (std::size_t p = seg.start + 1; p <= limit; ++p) best = std::max(best, scores[p]);
    for (std::size_t p = seg.start; p <= seg.end; ++p) out[p] = best;
  }
  return out;
}

/// True iff some raw score >= threshold at offset p - start <= K (inclusive)
/// inside the extended segment.
inline bool detected_within_delay(const ExtendedSegment& seg, std::span<const double> scores,
                                  double threshold, std::optional<std::size_t> k_delay) {
  const std::size_t limit = detection_limit(seg, k_delay);
  for (std::size_t p = seg.start; p <= limit; ++p)
    if (scores[p] >= threshold) return true;
  return false;
}

struct WeightedConfusion {
  double tp = 0.0;
  double fp = 0.0;
  double fn = 0.0;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline Prf prf_from_confusion(const WeightedConfusion& c) {
  Prf r;
  r.precision = (c.tp + c.fp) > 0.0 ? c.tp / (c.tp + c.fp) : 0.0;
  r.recall = (c.tp + c.fn) > 0.0 ? c.tp / (c.tp + c.fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

/// Direct evaluation of one threshold. `segments` must already be prolonged
/// according to `criterion.prolong_len`.
inline WeightedConfusion confusion_at_threshold(std::span<const double> scores,
                                                std::span<const ExtendedSegment> segments,
                                                double threshold, const EvalCriterion& criterion) {
  WeightedConfusion c;
  std::vector<std::uint8_t> inside(scores.size(), 0);
  for (const auto& seg : segments)
    for (std::size_t p = seg.start; p <= seg.end; ++p) inside[p] = 1;

  if (criterion.variant == PaVariant::point_wise_pa) {
    const auto adjusted = adjust_scores_pa(scores, segments, criterion.k_delay);
    for (std::size_t p = 0; p < scores.size(); ++p) {
      const bool alarm = (inside[p] ? adjusted[p] : scores[p]) >= threshold;
      if (inside[p]) {
        (alarm ? c.tp : c.fn) += 1.0;
      } else if (alarm) {
        c.fp += 1.0;
      }
    }
    return c;
  }

  const bool weighted = criterion.variant == PaVariant::reduced_length_pa;
  for (const auto& seg : segments) {
    const double w = weighted ? severity_weight(seg.original_length()) : 1.0;
    (detected_within_delay(seg, scores, threshold, criterion.k_delay) ? c.tp : c.fn) += w;
  }
  std::size_t run = 0;
  for (std::size_t p = 0; p <= scores.size(); ++p) {
    const bool alarm = p < scores.size() && !inside[p] && scores[p] >= threshold;
    if (alarm) {
      ++run;
    } else if (run > 0) {
      c.fp += weighted ? severity_weight(run) : 1.0;
      run = 0;
    }
  }
  return c;
}

struct PRPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

namespace detail {

// Neumaier compensated accumulator; the sweep adds and removes run weights
// many times over long series.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

/// Precision/recall at every candidate threshold (+inf first, then every
/// unique score value in descending order), computed in one sweep.
inline std::vector<PRPoint> pr_curve(std::span<const double> scores,
                                     std::span<const ExtendedSegment> segments,
                                     const EvalCriterion& criterion) {
  const std::size_t n = scores.size();
  const bool point_wise = criterion.variant == PaVariant::point_wise_pa;
  const bool weighted = criterion.variant == PaVariant::reduced_length_pa;

  std::vector<std::uint8_t> inside(n, 0);
  for (const auto& seg : segments)
    for (std::size_t p = seg.start; p <= seg.end; ++p) inside[p] = 1;

  // Segments ordered by detection score; prefix sums give TP, suffix sums FN.
  struct SegEntry {
    double detect_score;
    double weight;
  };
  std::vector<SegEntry> segs;
  segs.reserve(segments.size());
  for (const auto& seg : segments) {
    const std::size_t limit = detection_limit(seg, criterion.k_delay);
    double best = scores[seg.start];
    for (std::size_t p = seg.start + 1; p <= limit; ++p) best = std::max(best, scores[p]);
    const double w = point_wise ? static_cast<double>(seg.length())
                                : (weighted ? severity_weight(seg.original_length()) : 1.0);
    segs.push_back({best, w});
  }
  std::stable_sort(segs.begin(), segs.end(),
                   [](const SegEntry& a, const SegEntry& b) { return a.detect_score > b.detect_score; });
  std::vector<double> fn_suffix(segs.size() + 1, 0.0);
  for (std::size_t i = segs.size(); i-- > 0;) fn_suffix[i] = fn_suffix[i + 1] + segs[i].weight;

  std::vector<std::size_t> outside;
  for (std::size_t p = 0; p < n; ++p)
    if (!inside[p]) outside.push_back(p);
  std::stable_sort(outside.begin(), outside.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<double> thresholds(scores.begin(), scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  // Run bookkeeping for false alarms: run_other_end[p] is valid at run endpoints.
  std::vector<std::uint8_t> active(n, 0);
  std::vector<std::size_t> run_other_end(n, 0);
  auto run_weight = [&](std::size_t len) { return weighted ? severity_weight(len) : 1.0; };

  std::vector<PRPoint> curve;
  curve.reserve(thresholds.size() + 1);
  curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0, 0.0});

  detail::CompensatedSum fp;
  double tp = 0.0;
  std::size_t seg_pos = 0;
  std::size_t out_pos = 0;
  for (double t : thresholds) {
    while (seg_pos < segs.size() && segs[seg_pos].detect_score >= t) tp += segs[seg_pos++].weight;
    while (out_pos < outside.size() && scores[outside[out_pos]] >= t) {
      const std::size_t p = outside[out_pos++];
      active[p] = 1;
      if (point_wise) {
        fp.add(1.0);
        continue;
      }
      const bool left = p > 0 && active[p - 1] && !inside[p - 1];
      const bool right = p + 1 < n && active[p + 1] && !inside[p + 1];
      std::size_t lo = p;
      std::size_t hi = p;
      if (left) {
        lo = run_other_end[p - 1];
        fp.add(-run_weight(p - lo));
      }
      if (right) {
        hi = run_other_end[p + 1];
        fp.add(-run_weight(hi - p));
      }
      fp.add(run_weight(hi - lo + 1));
      run_other_end[lo] = hi;
      run_other_end[hi] = lo;
    }
    const WeightedConfusion c{tp, std::max(0.0, fp.value()), fn_suffix[seg_pos]};
    const Prf prf = prf_from_confusion(c);
    curve.push_back({t, prf.precision, prf.recall, prf.f1});
  }
  return curve;
}

struct BestF1 {
  double f1 = 0.0;
  double threshold = std::numeric_limits<double>::infinity();
  double precision = 0.0;
  double recall = 0.0;
};

/// Maximum F1 over the curve; ties resolve to the lowest threshold.
inline BestF1 best_f1_from_curve(std::span<const PRPoint> curve) {
  BestF1 best;
  for (const auto& pt : curve) {
    if (pt.f1 >= best.f1) best = {pt.f1, pt.threshold, pt.precision, pt.recall};
  }
  return best;
}

/// Step integration sum_i (R_i - R_{i-1}) * P_i over descending thresholds, R_0 = 0.
inline double auprc_from_curve(std::span<const PRPoint> curve) {
  double area = 0.0;
  double prev_recall = 0.0;
  for (const auto& pt : curve) {
    area += (pt.recall - prev_recall) * pt.precision;
    prev_recall = pt.recall;
  }
  return std::clamp(area, 0.0, 1.0);
}

namespace detail {
inline std::vector<ExtendedSegment> true_segments(std::span<const std::uint8_t> labels,
                                                  const EvalCriterion& criterion) {
  const auto segs = extract_segments(labels);
  return prolong_segments(segs, criterion.prolong_len, labels.size());
}

inline void check_aligned(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(scores.size()) + " scores for " +
                                               std::to_string(labels.size()) + " labels");
}
}  // namespace detail

inline BestF1 best_f1(std::span<const double> scores, std::span<const std::uint8_t> labels,
                      const EvalCriterion& criterion) {
  detail::check_aligned(scores, labels);
  const auto segs = detail::true_segments(labels, criterion);
  return best_f1_from_curve(pr_curve(scores, segs, criterion));
}

inline double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels,
                    const EvalCriterion& criterion) {
  detail::check_aligned(scores, labels);
  const auto segs = detail::true_segments(labels, criterion);
  if (segs.empty()) throw Error(ErrorCode::NoPositiveEvents, "labels contain no anomaly");
  return auprc_from_curve(pr_curve(scores, segs, criterion));
}

struct MetricReport {
  double f1_best = 0.0;
  double best_threshold = 0.0;
  double precision_at_best = 0.0;
  double recall_at_best = 0.0;
  double auprc = 0.0;
  EvalCriterion criterion;
};

/// F1_best and AUPRC from a single sweep.
inline MetricReport evaluate(std::span<const double> scores, std::span<const std::uint8_t> labels,
                             const EvalCriterion& criterion) {
  detail::check_aligned(scores, labels);
  const auto segs = detail::true_segments(labels, criterion);
  if (segs.empty()) throw Error(ErrorCode::NoPositiveEvents, "labels contain no anomaly");
  const auto curve = pr_curve(scores, segs, criterion);
  const auto best = best_f1_from_curve(curve);
  return {best.f1, best.threshold, best.precision, best.recall, auprc_from_curve(curve), criterion};
}

// ---------------------------------------------------------------------------
// Aggregation

struct CurveMetric {
  std::string dataset;
  std::string curve;
  MetricReport report;
};

struct DatasetScore {
  std::string dataset;
  double f1_best = 0.0;
  double auprc = 0.0;
  std::size_t curves = 0;
};

struct AggregateReport {
  std::vector<DatasetScore> datasets;  // sorted by dataset name
  double f1_best = 0.0;
  double auprc = 0.0;
};

/// Mean that does not depend on input order, bit for bit.
inline double order_independent_mean(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

/// Unweighted mean of curves within each dataset, then of datasets.
inline AggregateReport aggregate(std::span<const CurveMetric> curves) {
  if (curves.empty()) throw Error(ErrorCode::EmptyDataset, "nothing to aggregate");
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_dataset;
  for (const auto& c : curves) {
    auto& slot = by_dataset[c.dataset];
    slot.first.push_back(c.report.f1_best);
    slot.second.push_back(c.report.auprc);
  }
  AggregateReport out;
  std::vector<double> f1s;
  std::vector<double> aps;
  for (auto& [name, slot] : by_dataset) {
    DatasetScore ds{name, order_independent_mean(slot.first), order_independent_mean(slot.second),
                    slot.first.size()};
    f1s.push_back(ds.f1_best);
    aps.push_back(ds.auprc);
    out.datasets.push_back(std::move(ds));
  }
  out.f1_best = order_independent_mean(std::move(f1s));
  out.auprc = order_independent_mean(std::move(aps));
  return out;
}

}  // namespace tsadbench
