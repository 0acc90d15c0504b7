#pragma once
// Built-in causal detectors: learned autoregression, first-order difference,
// subsequence LOF and matrix-profile AB-join. Every score at time t uses
// observations at or before t only, and attaches to the window's last index.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tsadbench/core.hpp"

namespace tsadbench {

enum class DetectorKind { ar, first_diff, sub_lof, matrix_profile };

inline std::string_view to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::ar: return "ar";
    case DetectorKind::first_diff: return "first_diff";
    case DetectorKind::sub_lof: return "sub_lof";
    case DetectorKind::matrix_profile: return "matrix_profile";
  }
  return "unknown";
}

inline std::optional<DetectorKind> parse_detector_kind(std::string_view s) {
  if (s == "ar") return DetectorKind::ar;
  if (s == "first_diff") return DetectorKind::first_diff;
  if (s == "sub_lof") return DetectorKind::sub_lof;
  if (s == "matrix_profile") return DetectorKind::matrix_profile;
  return std::nullopt;
}

struct DetectorConfig {
  DetectorKind kind = DetectorKind::first_diff;
  std::size_t window = 32;
  std::size_t neighbors = 10;  // sub_lof only
  double ridge = 1e-4;         // ar only
};

inline void validate_config(const DetectorConfig& c) {
  const bool windowed = c.kind != DetectorKind::first_diff;
  if (windowed && c.window < 1)
    throw Error(ErrorCode::ConfigError, "window must be positive");
  if ((c.kind == DetectorKind::sub_lof || c.kind == DetectorKind::matrix_profile) && c.window < 2)
    throw Error(ErrorCode::ConfigError, "window must be at least 2");
  if (c.neighbors < 1) throw Error(ErrorCode::ConfigError, "neighbors must be at least 1");
  if (!(c.ridge >= 0.0) || !std::isfinite(c.ridge)) throw Error(ErrorCode::ConfigError, "ridge must be >= 0");
}

// Standard deviations below this mark a window as constant.
inline constexpr double kConstantWindowStd = 1e-12;

namespace detail {

// Copies the window of `m` points ending at `g`, left-padding with the first
// observation when fewer than m points exist.
inline void window_ending_at(std::span<const double> series, std::size_t g, std::size_t m, double* out) {
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t back = m - 1 - i;
    out[i] = back > g ? series[0] : series[g - back];
  }
}

struct WindowStats {
  double mean = 0.0;
  double std = 0.0;
};

inline WindowStats window_stats(const double* w, std::size_t m) {
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum += w[i];
  const double mean = sum / static_cast<double>(m);
  double ss = 0.0;
  for (std::size_t i = 0; i < m; ++i) ss += (w[i] - mean) * (w[i] - mean);
  return {mean, std::sqrt(ss / static_cast<double>(m))};
}

// Constant windows normalize to all zeros.
inline WindowStats z_normalize(const double* w, std::size_t m, double* out) {
  const auto st = window_stats(w, m);
  const bool constant = st.std < kConstantWindowStd;
  for (std::size_t i = 0; i < m; ++i) out[i] = constant ? 0.0 : (w[i] - st.mean) / st.std;
  return st;
}

// Squared distance with early abandoning once the partial sum exceeds `bound`.
// Fully computed results do not depend on `bound`.
inline double squared_distance(const double* a, const double* b, std::size_t m, double bound) {
  double acc = 0.0;
  std::size_t i = 0;
  while (i < m) {
    const std::size_t stop = std::min(m, i + 8);
    for (; i < stop; ++i) {
      const double d = a[i] - b[i];
      acc += d * d;
    }
    if (acc > bound) return std::numeric_limits<double>::infinity();
  }
  return acc;
}

// Store rows sorted by their projection onto a unit vector u. Since
// |(a - b).u| <= |a - b|, a scan that walks outward from the query's key can
// stop once the key gap exceeds the current search radius.
struct ProjectionIndex {
  std::vector<double> unit;
  std::vector<double> keys;        // sorted ascending
  std::vector<std::size_t> order;  // row of keys[i]

  bool empty() const { return order.empty(); }

  double key_of(const double* w) const {
    double k = 0.0;
    for (std::size_t i = 0; i < unit.size(); ++i) k += w[i] * unit[i];
    return k;
  }

  static ProjectionIndex build(std::span<const double> store, std::size_t m, std::vector<double> unit) {
    ProjectionIndex idx;
    idx.unit = std::move(unit);
    const std::size_t rows = store.size() / m;
    std::vector<std::pair<double, std::size_t>> kv(rows);
    for (std::size_t j = 0; j < rows; ++j) kv[j] = {idx.key_of(store.data() + j * m), j};
    std::sort(kv.begin(), kv.end());
    idx.keys.reserve(rows);
    idx.order.reserve(rows);
    for (const auto& [k, j] : kv) {
      idx.keys.push_back(k);
      idx.order.push_back(j);
    }
    return idx;
  }

  // Visits rows in order of increasing key gap until `radius2()` (a squared
  // distance, +inf while unbounded) is provably exceeded.
  template <class Visit, class Radius2>
  void scan(double qkey, Visit&& visit, Radius2&& radius2) const {
    const std::size_t n = keys.size();
    std::size_t hi = static_cast<std::size_t>(std::lower_bound(keys.begin(), keys.end(), qkey) - keys.begin());
    std::size_t lo = hi;  // next candidate on the left is lo - 1
    const double slack = 1e-9 * (1.0 + std::abs(qkey));
    while (lo > 0 || hi < n) {
      const double gl = lo > 0 ? qkey - keys[lo - 1] : std::numeric_limits<double>::infinity();
      const double gh = hi < n ? keys[hi] - qkey : std::numeric_limits<double>::infinity();
      const bool left = gl <= gh;
      const double gap = left ? gl : gh;
      const double r2 = radius2();
      if (std::isfinite(r2) && gap > std::sqrt(r2) + slack) return;
      visit(order[left ? --lo : hi++]);
    }
  }
};

inline std::vector<double> mean_direction(std::size_t m) {
  return std::vector<double>(m, 1.0 / std::sqrt(static_cast<double>(m)));
}

// Centered ramp: separates z-normalized windows by their overall slope.
inline std::vector<double> ramp_direction(std::size_t m) {
  std::vector<double> u(m);
  double norm = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    u[i] = static_cast<double>(i) - static_cast<double>(m - 1) / 2.0;
    norm += u[i] * u[i];
  }
  for (double& v : u) v /= std::sqrt(norm);
  return u;
}

struct Neighbor {
  double dist2;
  std::size_t index;
  bool operator<(const Neighbor& o) const { return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index); }
};

// Exact k nearest rows of `store` (row-major, stride m) under (distance, index)
// order. `hints` are evaluated first to tighten the abandoning bound.
inline std::vector<Neighbor> k_nearest(std::span<const double> store, std::size_t m, const double* query,
                                       std::size_t k, std::optional<std::size_t> exclude,
                                       std::span<const std::size_t> hints, std::vector<std::uint32_t>& stamp,
                                       std::uint32_t& epoch, const ProjectionIndex* index = nullptr) {
  const std::size_t rows = store.size() / m;
  std::vector<Neighbor> best;  // sorted ascending, size <= k
  best.reserve(k + 1);
  if (++epoch == 0) {
    std::fill(stamp.begin(), stamp.end(), 0u);
    epoch = 1;
  }
  auto consider = [&](std::size_t j) {
    if (exclude && j == *exclude) return;
    if (stamp[j] == epoch) return;
    stamp[j] = epoch;
    const double bound = best.size() < k ? std::numeric_limits<double>::infinity() : best.back().dist2;
    const double d2 = squared_distance(query, store.data() + j * m, m, bound);
    if (!std::isfinite(d2)) return;
    const Neighbor cand{d2, j};
    if (best.size() == k && !(cand < best.back())) return;
    best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
    if (best.size() > k) best.pop_back();
  };
  for (std::size_t h : hints)
    if (h < rows) consider(h);
  if (index && !index->empty()) {
    index->scan(index->key_of(query), consider, [&] {
      return best.size() < k ? std::numeric_limits<double>::infinity() : best.back().dist2;
    });
  } else {
    for (std::size_t j = 0; j < rows; ++j) consider(j);
  }
  return best;
}

}  // namespace detail

/// Learned state of a detector. Immutable after fit; `score` may be called
/// concurrently.
class FittedDetector {
 public:
  const DetectorConfig& config() const { return config_; }

  /// ar: m+1 (bias plus lag weights); every other kind: 0.
  std::size_t parameter_count() const { return config_.kind == DetectorKind::ar ? ar_weights_.size() : 0; }

  /// Number of stored training windows (store-based kinds).
  std::size_t store_size() const { return store_rows_; }

  /// Bias first, then weights for x_{t-m} ... x_{t-1}.
  std::span<const double> ar_coefficients() const { return ar_weights_; }

  /// Scores every test point given the preceding history.
  std::vector<double> score(std::span<const double> context, std::span<const double> test) const {
    for (double v : context)
      if (!std::isfinite(v)) throw Error(ErrorCode::InvariantViolation, "context contains a non-finite value");
    for (double v : test)
      if (!std::isfinite(v)) throw Error(ErrorCode::InvariantViolation, "test values contain a non-finite value");
    std::vector<double> series;
    series.reserve(context.size() + test.size());
    series.insert(series.end(), context.begin(), context.end());
    series.insert(series.end(), test.begin(), test.end());
    std::vector<double> out(test.size());
    ScanState state(*this);
    for (std::size_t i = 0; i < test.size(); ++i) out[i] = score_point(series, context.size() + i, state);
    return out;
  }

  /// Scores `region` of `series`, using everything before it as context.
  std::vector<double> score(const TimeSeries& series, Region region) const {
    if (region.end > series.size() || region.begin > region.end)
      throw Error(ErrorCode::LengthMismatch, "region lies outside series '" + series.id + "'");
    return score(series.values_in({0, region.begin}), series.values_in(region));
  }

  /// Matrix-profile distance of one window (length m) to the training store.
  /// `early_abandon=false` forces a full scan; both give identical results.
  double nearest_distance(std::span<const double> window, bool early_abandon = true) const {
    std::vector<double> z(config_.window);
    const auto st = detail::z_normalize(window.data(), config_.window, z.data());
    return nearest_z_distance(z.data(), st, std::nullopt, early_abandon).first;
  }

  /// Local outlier factor of one window (length m) against the training store.
  double lof(std::span<const double> window) const {
    std::vector<std::uint32_t> stamp(store_rows_, 0);
    std::uint32_t epoch = 0;
    return lof_of(window.data(), {}, stamp, epoch).first;
  }

 private:
  friend FittedDetector fit(const DetectorConfig&, std::span<const std::span<const double>>);

  struct ScanState {
    explicit ScanState(const FittedDetector& d) : window(d.config_.window), z(d.config_.window), stamp(d.store_rows_, 0) {}
    std::vector<double> window;
    std::vector<double> z;
    std::vector<std::uint32_t> stamp;
    std::uint32_t epoch = 0;
    std::optional<std::size_t> last_best;
    std::vector<std::size_t> last_neighbors;
  };

  double score_point(std::span<const double> series, std::size_t g, ScanState& st) const {
    const std::size_t m = config_.window;
    switch (config_.kind) {
      case DetectorKind::first_diff:
        return g == 0 ? 0.0 : std::abs(series[g] - series[g - 1]);
      case DetectorKind::ar: {
        if (g == 0) return 0.0;
        // Lags x_{g-m} .. x_{g-1}; missing history repeats the first observation.
        detail::window_ending_at(series, g - 1, m, st.window.data());
        double pred = ar_weights_[0];
        for (std::size_t i = 0; i < m; ++i) pred += ar_weights_[i + 1] * st.window[i];
        return std::abs(pred - series[g]);
      }
      case DetectorKind::matrix_profile: {
        detail::window_ending_at(series, g, m, st.window.data());
        const auto stats = detail::z_normalize(st.window.data(), m, st.z.data());
        std::optional<std::size_t> hint;
        if (st.last_best && *st.last_best + 1 < store_rows_) hint = *st.last_best + 1;
        const auto [d, idx] = nearest_z_distance(st.z.data(), stats, hint, true);
        st.last_best = idx;
        return d;
      }
      case DetectorKind::sub_lof: {
        detail::window_ending_at(series, g, m, st.window.data());
        std::vector<std::size_t> hints;
        for (std::size_t j : st.last_neighbors)
          if (j + 1 < store_rows_) hints.push_back(j + 1);
        auto [value, nbrs] = lof_of(st.window.data(), hints, st.stamp, st.epoch);
        st.last_neighbors = std::move(nbrs);
        return value;
      }
    }
    return 0.0;
  }

  // Distance between z-normalized windows; constant windows are zero vectors,
  // and two constant windows compare by mean offset only.
  std::pair<double, std::size_t> nearest_z_distance(const double* zq, detail::WindowStats qs,
                                                    std::optional<std::size_t> hint, bool early_abandon) const {
    const std::size_t m = config_.window;
    const bool q_const = qs.std < kConstantWindowStd;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    auto consider = [&](std::size_t j) {
      double d2;
      if (q_const && store_constant_[j]) {
        const double off = qs.mean - store_mean_[j];
        d2 = static_cast<double>(m) * off * off;
      } else {
        const double bound = early_abandon ? best : std::numeric_limits<double>::infinity();
        d2 = detail::squared_distance(zq, store_.data() + j * m, m, bound);
      }
      if (d2 < best || (d2 == best && j < best_idx)) {
        best = d2;
        best_idx = j;
      }
    };
    if (hint) consider(*hint);
    if (early_abandon) {
      index_.scan(index_.key_of(zq), consider, [&] { return best; });
    } else {
      for (std::size_t j = 0; j < store_rows_; ++j) consider(j);
    }
    return {std::sqrt(best), best_idx};
  }

  // LOF = mean over neighbours o of lrd(o) / lrd(q), with lrd = 1 / mean
  // reachability distance. A query whose mean reachability distance is 0 has LOF 1.
  std::pair<double, std::vector<std::size_t>> lof_of(const double* q, std::span<const std::size_t> hints,
                                                     std::vector<std::uint32_t>& stamp,
                                                     std::uint32_t& epoch) const {
    const std::size_t m = config_.window;
    const auto nbrs = detail::k_nearest(store_, m, q, lof_k_, std::nullopt, hints, stamp, epoch, &index_);
    double reach_sum = 0.0;
    for (const auto& nb : nbrs) reach_sum += std::max(k_distance_[nb.index], std::sqrt(nb.dist2));
    const double mrd_q = reach_sum / static_cast<double>(nbrs.size());
    std::vector<std::size_t> idx;
    idx.reserve(nbrs.size());
    for (const auto& nb : nbrs) idx.push_back(nb.index);
    if (mrd_q == 0.0) return {1.0, std::move(idx)};
    double ratio_sum = 0.0;
    for (const auto& nb : nbrs) ratio_sum += mrd_q / std::max(mean_reach_[nb.index], kMinReach);
    return {ratio_sum / static_cast<double>(nbrs.size()), std::move(idx)};
  }

  static constexpr double kMinReach = 1e-12;

  DetectorConfig config_;
  std::vector<double> ar_weights_;
  // Store-based kinds: row-major windows (z-normalized for matrix_profile).
  std::vector<double> store_;
  std::size_t store_rows_ = 0;
  std::vector<double> store_mean_;
  std::vector<std::uint8_t> store_constant_;
  detail::ProjectionIndex index_;
  // sub_lof only.
  std::size_t lof_k_ = 0;
  std::vector<double> k_distance_;
  std::vector<double> mean_reach_;
};

/// Fits a detector on one or more training pools. Windows never cross pool
/// boundaries; pools shorter than m+1 are skipped for windowed kinds.
inline FittedDetector fit(const DetectorConfig& config, std::span<const std::span<const double>> pools) {
  validate_config(config);
  FittedDetector d;
  d.config_ = config;
  const std::size_t m = config.window;
  if (config.kind == DetectorKind::first_diff) return d;

  std::vector<std::span<const double>> usable;
  for (auto p : pools) {
    for (double v : p)
      if (!std::isfinite(v)) throw Error(ErrorCode::InvariantViolation, "training pool contains a non-finite value");
    if (p.size() >= m + 1) usable.push_back(p);
  }
  if (usable.empty())
    throw Error(ErrorCode::InsufficientTrainingData,
                "no training pool has at least " + std::to_string(m + 1) + " points");

  if (config.kind == DetectorKind::ar) {
    const auto dim = static_cast<Eigen::Index>(m + 1);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd row(dim);
    for (auto p : usable) {
      for (std::size_t t = m; t < p.size(); ++t) {
        row[0] = 1.0;
        for (std::size_t i = 0; i < m; ++i) row[static_cast<Eigen::Index>(i + 1)] = p[t - m + i];
        gram.selfadjointView<Eigen::Lower>().rankUpdate(row);
        rhs += row * p[t];
      }
    }
    gram = gram.selfadjointView<Eigen::Lower>();
    Eigen::VectorXd w;
    if (config.ridge > 0.0) {
      gram.diagonal().array() += config.ridge;
      w = gram.ldlt().solve(rhs);
    } else {
      w = gram.completeOrthogonalDecomposition().solve(rhs);
    }
    d.ar_weights_.assign(w.data(), w.data() + w.size());
    for (double& v : d.ar_weights_)
      if (!std::isfinite(v)) v = 0.0;
    return d;
  }

  const bool z_norm = config.kind == DetectorKind::matrix_profile;
  for (auto p : usable) {
    for (std::size_t end = m - 1; end < p.size(); ++end) {
      const double* w = p.data() + end + 1 - m;
      const std::size_t offset = d.store_.size();
      d.store_.resize(offset + m);
      if (z_norm) {
        const auto st = detail::z_normalize(w, m, d.store_.data() + offset);
        d.store_mean_.push_back(st.mean);
        d.store_constant_.push_back(st.std < kConstantWindowStd ? 1 : 0);
      } else {
        std::copy(w, w + m, d.store_.data() + offset);
      }
    }
  }
  d.store_rows_ = d.store_.size() / m;
  d.index_ = detail::ProjectionIndex::build(d.store_, m, z_norm ? detail::ramp_direction(m) : detail::mean_direction(m));
  if (!z_norm) {
    if (d.store_rows_ <= config.neighbors)
      throw Error(ErrorCode::InsufficientTrainingData,
                  "sub_lof needs more than " + std::to_string(config.neighbors) + " training windows, got " +
                      std::to_string(d.store_rows_));
    d.lof_k_ = config.neighbors;
    const std::size_t rows = d.store_rows_;
    std::vector<std::vector<detail::Neighbor>> knn(rows);
    std::vector<std::uint32_t> stamp(rows, 0);
    std::uint32_t epoch = 0;
    std::vector<std::size_t> hints;
    d.k_distance_.resize(rows);
    for (std::size_t j = 0; j < rows; ++j) {
      hints.clear();
      if (j > 0)
        for (const auto& nb : knn[j - 1])
          if (nb.index + 1 < rows) hints.push_back(nb.index + 1);
      knn[j] = detail::k_nearest(d.store_, m, d.store_.data() + j * m, d.lof_k_, j, hints, stamp, epoch, &d.index_);
      d.k_distance_[j] = std::sqrt(knn[j].back().dist2);
    }
    d.mean_reach_.resize(rows);
    for (std::size_t j = 0; j < rows; ++j) {
      double sum = 0.0;
      for (const auto& nb : knn[j]) sum += std::max(d.k_distance_[nb.index], std::sqrt(nb.dist2));
      d.mean_reach_[j] = sum / static_cast<double>(knn[j].size());
    }
  }
  return d;
}

inline FittedDetector fit(const DetectorConfig& config, std::initializer_list<std::span<const double>> pools) {
  std::vector<std::span<const double>> v(pools);
  return fit(config, std::span<const std::span<const double>>(v));
}

}  // namespace tsadbench
