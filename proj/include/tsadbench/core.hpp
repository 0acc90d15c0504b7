#pragma once
// Domain types shared by every part of the harness: labeled series, split
// boundaries, anomaly segments and score series.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tsadbench {

enum class ErrorCode {
  SeriesTooShort,
  LengthMismatch,
  NonFiniteScore,
  ParseError,
  InvariantViolation,
  MissingManifest,
  EmptyDataset,
  TooFewSeries,
  InsufficientTrainingData,
  PlanInfeasible,
  NoPositiveEvents,
  IoError,
  ProtocolError,
  Timeout,
  NonZeroExit,
  ConfigError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::SeriesTooShort: return "SeriesTooShort";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonFiniteScore: return "NonFiniteScore";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::MissingManifest: return "MissingManifest";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::TooFewSeries: return "TooFewSeries";
    case ErrorCode::InsufficientTrainingData: return "InsufficientTrainingData";
    case ErrorCode::PlanInfeasible: return "PlanInfeasible";
    case ErrorCode::NoPositiveEvents: return "NoPositiveEvents";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::NonZeroExit: return "NonZeroExit";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

enum class SplitSource { ratio, predefined };

// Region boundaries are exclusive ends: train [0, train_end),
// valid [train_end, valid_end), test [valid_end, n).
struct SplitSpec {
  std::size_t train_end = 0;
  std::size_t valid_end = 0;
  SplitSource source = SplitSource::ratio;

  bool operator==(const SplitSpec&) const = default;
};

struct Region {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const { return end - begin; }
  bool operator==(const Region&) const = default;
};

struct TimeSeries {
  std::string id;
  std::vector<double> values;
  std::vector<std::uint8_t> labels;
  SplitSpec split;

  std::size_t size() const { return values.size(); }
  Region train_region() const { return {0, split.train_end}; }
  Region valid_region() const { return {split.train_end, split.valid_end}; }
  Region test_region() const { return {split.valid_end, values.size()}; }
  std::size_t test_size() const { return values.size() - split.valid_end; }

  std::span<const double> values_in(Region r) const {
    return std::span<const double>(values).subspan(r.begin, r.size());
  }
  std::span<const std::uint8_t> labels_in(Region r) const {
    return std::span<const std::uint8_t>(labels).subspan(r.begin, r.size());
  }
  std::span<const double> test_values() const { return values_in(test_region()); }
  std::span<const std::uint8_t> test_labels() const { return labels_in(test_region()); }
  // Everything before the test region; detectors may use it as scoring context.
  std::span<const double> history() const { return values_in({0, split.valid_end}); }
};

// Throws InvariantViolation when the series breaks a TimeSeries invariant.
inline void validate_series(const TimeSeries& s) {
  if (s.values.empty())
    throw Error(ErrorCode::InvariantViolation, "series '" + s.id + "' is empty");
  if (s.values.size() != s.labels.size())
    throw Error(ErrorCode::InvariantViolation, "series '" + s.id + "' has " +
                                                   std::to_string(s.values.size()) + " values but " +
                                                   std::to_string(s.labels.size()) + " labels");
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (!std::isfinite(s.values[i]))
      throw Error(ErrorCode::InvariantViolation,
                  "series '" + s.id + "' has a non-finite value at index " + std::to_string(i));
    if (s.labels[i] > 1)
      throw Error(ErrorCode::InvariantViolation,
                  "series '" + s.id + "' has label outside {0,1} at index " + std::to_string(i));
  }
  const auto& sp = s.split;
  if (sp.train_end == 0 || sp.train_end > sp.valid_end || sp.valid_end >= s.values.size())
    throw Error(ErrorCode::InvariantViolation,
                "series '" + s.id + "' has an invalid split (train_end=" + std::to_string(sp.train_end) +
                    ", valid_end=" + std::to_string(sp.valid_end) + ", n=" +
                    std::to_string(s.values.size()) + ")");
}

/// One event: a maximal run of anomalous timestamps, `end` inclusive.
struct AnomalySegment {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start + 1; }
  bool operator==(const AnomalySegment&) const = default;
};

inline std::vector<AnomalySegment> extract_segments(std::span<const std::uint8_t> labels) {
  std::vector<AnomalySegment> out;
  std::size_t i = 0;
  while (i < labels.size()) {
    if (labels[i] == 0) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < labels.size() && labels[j + 1] != 0) ++j;
    out.push_back({i, j});
    i = j + 1;
  }
  return out;
}

inline std::vector<std::uint8_t> segments_to_mask(std::span<const AnomalySegment> segments,
                                                  std::size_t n) {
  std::vector<std::uint8_t> mask(n, 0);
  for (const auto& s : segments)
    for (std::size_t i = s.start; i <= s.end && i < n; ++i) mask[i] = 1;
  return mask;
}

struct SplitRatio {
  unsigned train = 4;
  unsigned valid = 1;
  unsigned test = 5;
};

/// Floor-based ratio split. The default 4:1:5 ratio gives
/// train [0, floor(0.4n)), valid [floor(0.4n), floor(0.5n)), test [floor(0.5n), n).
inline SplitSpec split_series(std::size_t n, SplitRatio ratio = {}) {
  const std::size_t total = std::size_t{ratio.train} + ratio.valid + ratio.test;
  if (total == 0 || ratio.train == 0 || ratio.valid == 0 || ratio.test == 0)
    throw Error(ErrorCode::ConfigError, "split ratio components must be positive");
  const std::size_t train_end = n * ratio.train / total;
  const std::size_t valid_end = n * (std::size_t{ratio.train} + ratio.valid) / total;
  if (train_end == 0 || valid_end == train_end || valid_end >= n)
    throw Error(ErrorCode::SeriesTooShort,
                "series of length " + std::to_string(n) + " cannot be split into non-empty regions");
  return {train_end, valid_end, SplitSource::ratio};
}

inline SplitSpec split_series(const TimeSeries& series, SplitRatio ratio = {}) {
  return split_series(series.size(), ratio);
}

/// Anomaly scores for the test region of one series.
struct ScoreSeries {
  std::string series_id;
  std::vector<double> scores;
};

inline void validate_scores(const ScoreSeries& scores, const TimeSeries& series) {
  if (scores.scores.size() != series.test_size())
    throw Error(ErrorCode::LengthMismatch, "series '" + series.id + "' expects " +
                                               std::to_string(series.test_size()) + " scores, got " +
                                               std::to_string(scores.scores.size()));
  for (std::size_t i = 0; i < scores.scores.size(); ++i)
    if (!std::isfinite(scores.scores[i]))
      throw Error(ErrorCode::NonFiniteScore,
                  "series '" + series.id + "' has a non-finite score at test offset " + std::to_string(i));
}

}  // namespace tsadbench
