#pragma once
// Brute-force reference evaluation written straight from the definitions.
// Shares nothing with the library beyond the plain enum/criterion types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "tsadbench/metrics.hpp"

namespace oracle {

struct Seg {
  std::size_t start, end, orig_end;  // inclusive
};

inline std::vector<Seg> segments(const std::vector<std::uint8_t>& labels, std::size_t L) {
  std::vector<Seg> out;
  const std::size_t n = labels.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] && (i == 0 || !labels[i - 1])) {
      std::size_t j = i;
      while (j + 1 < n && labels[j + 1]) ++j;
      out.push_back({i, j, j});
    }
  }
  for (std::size_t s = 0; s < out.size(); ++s) {
    std::size_t e = out[s].orig_end + L;
    if (s + 1 < out.size()) e = std::min(e, out[s + 1].start - 1);
    e = std::min(e, n - 1);
    out[s].end = e;
  }
  return out;
}

struct Conf {
  double tp = 0, fp = 0, fn = 0;
};

inline double w(std::size_t k) { return std::log(double(k) + std::numbers::e); }

inline Conf confusion(const std::vector<double>& x, const std::vector<std::uint8_t>& labels, double thr,
                      tsadbench::PaVariant variant, std::size_t L, std::optional<std::size_t> K) {
  const auto segs = segments(labels, L);
  const std::size_t n = x.size();
  std::vector<int> owner(n, -1);
  for (std::size_t s = 0; s < segs.size(); ++s)
    for (std::size_t p = segs[s].start; p <= segs[s].end; ++p) owner[p] = int(s);

  std::vector<bool> detected(segs.size(), false);
  for (std::size_t s = 0; s < segs.size(); ++s)
    for (std::size_t p = segs[s].start; p <= segs[s].end; ++p)
      if ((!K || p - segs[s].start <= *K) && x[p] >= thr) detected[s] = true;

  Conf c;
  if (variant == tsadbench::PaVariant::point_wise_pa) {
    for (std::size_t p = 0; p < n; ++p) {
      if (owner[p] >= 0)
        (detected[owner[p]] ? c.tp : c.fn) += 1;
      else if (x[p] >= thr)
        c.fp += 1;
    }
    return c;
  }
  const bool weighted = variant == tsadbench::PaVariant::reduced_length_pa;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const double wt = weighted ? w(segs[s].orig_end - segs[s].start + 1) : 1.0;
    (detected[s] ? c.tp : c.fn) += wt;
  }
  std::size_t p = 0;
  while (p < n) {
    if (owner[p] < 0 && x[p] >= thr) {
      std::size_t q = p;
      while (q + 1 < n && owner[q + 1] < 0 && x[q + 1] >= thr) ++q;
      c.fp += weighted ? w(q - p + 1) : 1.0;
      p = q + 1;
    } else {
      ++p;
    }
  }
  return c;
}

struct Result {
  double best_f1 = 0, best_thr = 0, auprc = 0;
};

inline Result evaluate(const std::vector<double>& x, const std::vector<std::uint8_t>& labels,
                       tsadbench::PaVariant variant, std::size_t L, std::optional<std::size_t> K) {
  std::vector<double> thr{std::numeric_limits<double>::infinity()};
  std::vector<double> u = x;
  std::sort(u.begin(), u.end(), std::greater<>());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  thr.insert(thr.end(), u.begin(), u.end());

  Result r;
  r.best_thr = thr.front();
  double prev_rec = 0;
  for (double t : thr) {
    const auto c = confusion(x, labels, t, variant, L, K);
    const double prec = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0;
    const double rec = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    if (f1 >= r.best_f1) {
      r.best_f1 = f1;
      r.best_thr = t;
    }
    r.auprc += (rec - prev_rec) * prec;
    prev_rec = rec;
  }
  return r;
}

}  // namespace oracle
