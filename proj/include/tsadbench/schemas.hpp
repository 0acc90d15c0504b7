#pragma once
// Learning schemas: how training pools map to evaluation targets.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsadbench/core.hpp"
#include "tsadbench/random.hpp"

namespace tsadbench {

enum class Schema { naive, all_in_one, zero_shot };

inline std::string_view to_string(Schema s) {
  switch (s) {
    case Schema::naive: return "naive";
    case Schema::all_in_one: return "all_in_one";
    case Schema::zero_shot: return "zero_shot";
  }
  return "unknown";
}

inline std::optional<Schema> parse_schema(std::string_view s) {
  if (s == "naive") return Schema::naive;
  if (s == "all_in_one" || s == "all-in-one") return Schema::all_in_one;
  if (s == "zero_shot" || s == "zero-shot") return Schema::zero_shot;
  return std::nullopt;
}

struct SeriesRef {
  std::string series_id;
  Region region;

  bool operator==(const SeriesRef&) const = default;
};

struct Task {
  std::vector<SeriesRef> train_refs;
  std::vector<SeriesRef> eval_refs;  // test regions only

  bool operator==(const Task&) const = default;
};

struct BenchmarkPlan {
  Schema schema = Schema::naive;
  std::vector<Task> tasks;
  std::uint64_t seed = 0;  // meaningful for zero_shot only
  // Series whose test region is not evaluated by this plan (zero-shot training subset).
  std::vector<std::string> held_out;
};

namespace detail {
inline void require_series(std::span<const TimeSeries> dataset) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "dataset has no series to plan");
}
}  // namespace detail

inline BenchmarkPlan plan_naive(std::span<const TimeSeries> dataset) {
  detail::require_series(dataset);
  BenchmarkPlan plan{Schema::naive, {}, 0, {}};
  for (const auto& s : dataset)
    plan.tasks.push_back({{{s.id, s.train_region()}}, {{s.id, s.test_region()}}});
  return plan;
}

/// One task: a pool holding every series' train region (kept as separate
/// segments), evaluated on every series' test region.
inline BenchmarkPlan plan_all_in_one(std::span<const TimeSeries> dataset) {
  detail::require_series(dataset);
  Task task;
  for (const auto& s : dataset) {
    task.train_refs.push_back({s.id, s.train_region()});
    task.eval_refs.push_back({s.id, s.test_region()});
  }
  return {Schema::all_in_one, {std::move(task)}, 0, {}};
}

/// Shuffles the series order with Fisher-Yates on SplitMix64(seed); the first
/// ceil(m/2) series train, the rest are evaluated on their test regions.
inline BenchmarkPlan plan_zero_shot(std::span<const TimeSeries> dataset, std::uint64_t seed) {
  if (dataset.size() < 2)
    throw Error(ErrorCode::TooFewSeries, "zero-shot planning needs at least 2 series, got " +
                                             std::to_string(dataset.size()));
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitMix64 rng(seed);
  fisher_yates_shuffle(std::span<std::size_t>(order), rng);

  const std::size_t n_train = (order.size() + 1) / 2;
  Task task;
  BenchmarkPlan plan{Schema::zero_shot, {}, seed, {}};
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& s = dataset[order[i]];
    if (i < n_train) {
      task.train_refs.push_back({s.id, s.train_region()});
      plan.held_out.push_back(s.id);
    } else {
      task.eval_refs.push_back({s.id, s.test_region()});
    }
  }
  plan.tasks.push_back(std::move(task));
  return plan;
}

inline BenchmarkPlan make_plan(Schema schema, std::span<const TimeSeries> dataset, std::uint64_t seed) {
  switch (schema) {
    case Schema::naive: return plan_naive(dataset);
    case Schema::all_in_one: return plan_all_in_one(dataset);
    case Schema::zero_shot: return plan_zero_shot(dataset, seed);
  }
  throw Error(ErrorCode::ConfigError, "unknown schema");
}

inline nlohmann::ordered_json to_json(const BenchmarkPlan& plan) {
  auto refs = [](const std::vector<SeriesRef>& v) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : v)
      arr.push_back({{"id", r.series_id}, {"begin", r.region.begin}, {"end", r.region.end}});
    return arr;
  };
  nlohmann::ordered_json j;
  j["schema"] = std::string(to_string(plan.schema));
  if (plan.schema == Schema::zero_shot) j["seed"] = plan.seed;
  auto tasks = nlohmann::ordered_json::array();
  for (const auto& t : plan.tasks) tasks.push_back({{"train", refs(t.train_refs)}, {"eval", refs(t.eval_refs)}});
  j["tasks"] = std::move(tasks);
  if (!plan.held_out.empty()) j["held_out"] = plan.held_out;
  return j;
}

}  // namespace tsadbench
