// tsadbench command line.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 dataset error,
// 3 run finished with failed tasks.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tsadbench/bench.hpp"
#include "tsadbench/datasets.hpp"
#include "tsadbench/schemas.hpp"
#include "tsadbench/synth.hpp"

namespace fs = std::filesystem;
using namespace tsadbench;

namespace {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError:
    case ErrorCode::InvariantViolation:
    case ErrorCode::MissingManifest:
    case ErrorCode::SeriesTooShort:
    case ErrorCode::EmptyDataset:
    case ErrorCode::TooFewSeries:
    case ErrorCode::LengthMismatch:
    case ErrorCode::NonFiniteScore:
      return 2;
    default:
      return 1;
  }
}

nlohmann::json read_json(const fs::path& p) {
  const auto text = read_text_file(p);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, p.string() + ": " + e.what());
  }
}

void summarize(const RunReport& r) {
  std::fprintf(stderr, "metrics: %zu  exclusions: %zu  failures: %zu\n", r.metrics.size(), r.exclusions.size(),
               r.failures.size());
  for (const auto& f : r.failures)
    std::fprintf(stderr, "failed %s/%s %s %s: %s\n", f.dataset.c_str(), f.curve.c_str(), f.detector.c_str(),
                 f.schema.c_str(), f.message.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-series anomaly detection benchmark"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "Run detectors over datasets and write reports");
  fs::path run_config, run_out;
  std::size_t workers = 0;
  bool allow_pooling = false;
  std::optional<std::size_t> run_k;
  run_cmd->add_option("-c,--config", run_config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("-o,--output", run_out, "Output directory (overrides the config)");
  run_cmd->add_option("-w,--workers", workers, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
  run_cmd->add_flag("--allow-statistical-pooling", allow_pooling, "Let statistical detectors run under pooled schemas");
  run_cmd->add_option("-k,--k-delay", run_k, "K for every delayed criterion");

  auto* eval_cmd = app.add_subcommand("eval", "Compute metrics from score dumps");
  fs::path eval_scores, eval_data, eval_out = "tsadbench_eval", eval_merge;
  std::vector<std::string> eval_criteria;
  std::optional<std::size_t> eval_k;
  eval_cmd->add_option("-s,--scores", eval_scores, "Score dump directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("-d,--dataset", eval_data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--criteria", eval_criteria, "variant[:L=n][:k=n|:k=dataset][:name=s]")->required();
  eval_cmd->add_option("-o,--output", eval_out, "Output directory");
  eval_cmd->add_option("--merge", eval_merge, "Existing results.json; only new criteria are computed")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("-k,--k-delay", eval_k, "K for every delayed criterion");

  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  fs::path gen_config, gen_out;
  gen_cmd->add_option("-c,--config", gen_config, "Synthetic dataset spec (JSON)")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("-o,--output", gen_out, "Dataset root to write")->required();

  auto* split_cmd = app.add_subcommand("split", "Print the plan of a schema as JSON");
  fs::path split_data, split_out;
  std::string split_schema = "naive";
  std::uint64_t split_seed = 0;
  split_cmd->add_option("-d,--dataset", split_data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  split_cmd->add_option("--schema", split_schema, "naive, all_in_one or zero_shot");
  split_cmd->add_option("--seed", split_seed, "Shuffle seed");
  split_cmd->add_option("-o,--output", split_out, "Write the plan here instead of stdout");

  auto* report_cmd = app.add_subcommand("report", "Rebuild tables from results.json");
  fs::path report_in, report_out;
  report_cmd->add_option("-i,--input", report_in, "results.json")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("-o,--output", report_out, "Table directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*run_cmd) {
      RunConfig cfg = run_config_from_json(read_json(run_config), run_config.parent_path());
      if (!run_out.empty()) cfg.output = run_out;
      if (workers) cfg.workers = workers;
      if (allow_pooling) cfg.allow_statistical_pooling = true;
      if (run_k) cfg.k_delay_cli = run_k;
      const auto report = run(cfg);
      summarize(report);
      if (report.metrics.empty()) {
        std::fprintf(stderr, "error: no curve was evaluated\n");
        return 3;
      }
      return report.failures.empty() ? 0 : 3;
    }
    if (*eval_cmd) {
      std::vector<CriterionEntry> criteria;
      for (const auto& c : eval_criteria) criteria.push_back(parse_criterion(c));
      RunConfig k_cfg;
      k_cfg.k_delay_cli = eval_k;
      std::optional<RunReport> previous;
      if (!eval_merge.empty()) previous = report_from_json(read_json(eval_merge));
      const auto report = evaluate_scores(eval_scores, eval_data, criteria, k_cfg, previous ? &*previous : nullptr);
      summarize(report);
      write_text_file(eval_out / "results.json", report_to_json(report).dump(2) + "\n");
      emit_tables(report, eval_out / "tables");
      return report.failures.empty() ? 0 : 3;
    }
    if (*gen_cmd) {
      const auto spec = synth_spec_from_json(read_json(gen_config));
      const auto ds = generate_dataset(spec.name, spec.curves, gen_out, spec.k_delay);
      std::fprintf(stderr, "wrote %zu curves to %s\n", ds.series.size(), gen_out.c_str());
      return 0;
    }
    if (*split_cmd) {
      const auto schema = parse_schema(split_schema);
      if (!schema) throw Error(ErrorCode::ConfigError, "unknown schema '" + split_schema + "'");
      auto filtered = filter_anomaly_free(load_dataset(split_data).series);
      const auto text = to_json(make_plan(*schema, filtered.kept, split_seed)).dump(2) + "\n";
      if (split_out.empty())
        std::cout << text;
      else
        write_text_file(split_out, text);
      return 0;
    }
    if (*report_cmd) {
      emit_tables(report_from_json(read_json(report_in)), report_out);
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
