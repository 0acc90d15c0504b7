#pragma once
// Canonical on-disk dataset layout:
//   <root>/manifest.json
//   <root>/curves/<id>.csv   header "index,value,label", LF line endings
// plus loaders, writers, anomaly-free filtering and a generic CSV importer.

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsadbench/core.hpp"

namespace tsadbench {

struct CurveDescriptor {
  std::string id;
  std::string file;  // relative to the dataset root
  std::optional<std::size_t> train_end;
  std::optional<std::size_t> valid_end;
};

struct DatasetManifest {
  std::string name;
  std::vector<CurveDescriptor> curves;
  // Absent ratio means every curve carries predefined boundaries.
  std::optional<SplitRatio> default_ratio = SplitRatio{};
  std::optional<std::size_t> k_delay;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<TimeSeries> series;

  const std::string& name() const { return manifest.name; }
  const TimeSeries* find(std::string_view id) const {
    for (const auto& s : series)
      if (s.id == id) return &s;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Text helpers

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::optional<double> parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = nl + 1;
  }
  return lines;
}

// ---------------------------------------------------------------------------
// Curves

inline std::string curve_csv(std::span<const double> values, std::span<const std::uint8_t> labels) {
  std::string out = "index,value,label\n";
  out.reserve(values.size() * 24);
  for (std::size_t i = 0; i < values.size(); ++i) {
    out += std::to_string(i);
    out += ',';
    out += format_double(values[i]);
    out += ',';
    out += labels[i] ? '1' : '0';
    out += '\n';
  }
  return out;
}

/// Parses a canonical curve file. Row numbers in errors count data rows from 1.
inline void parse_curve_csv(std::string_view text, const std::string& origin, std::vector<double>& values,
                            std::vector<std::uint8_t>& labels) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines.front() != "index,value,label")
    throw Error(ErrorCode::ParseError, origin + ": expected header 'index,value,label'");
  values.clear();
  labels.clear();
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty() && li + 1 == lines.size()) break;
    const std::size_t row = li;
    const std::string where = origin + " row " + std::to_string(row);
    const auto cells = split_csv_line(lines[li]);
    if (cells.size() != 3) throw Error(ErrorCode::ParseError, where + ": expected 3 columns");
    const auto index = parse_double(cells[0]);
    if (!index || *index != static_cast<double>(values.size()))
      throw Error(ErrorCode::ParseError, where + ": index must be " + std::to_string(values.size()));
    const auto value = parse_double(cells[1]);
    if (!value) throw Error(ErrorCode::ParseError, where + ": value is not a number");
    if (!std::isfinite(*value)) throw Error(ErrorCode::InvariantViolation, where + ": value is not finite");
    const auto label = parse_double(cells[2]);
    if (!label) throw Error(ErrorCode::ParseError, where + ": label is not a number");
    if (*label != 0.0 && *label != 1.0)
      throw Error(ErrorCode::InvariantViolation, where + ": label must be 0 or 1");
    values.push_back(*value);
    labels.push_back(*label == 1.0 ? 1 : 0);
  }
  if (values.empty()) throw Error(ErrorCode::InvariantViolation, origin + ": curve has no rows");
}

// ---------------------------------------------------------------------------
// Manifest

inline DatasetManifest parse_manifest(const nlohmann::json& j, const std::string& origin) {
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    const auto& split = j.contains("default_split") ? j.at("default_split") : nlohmann::json();
    if (split.is_null()) {
      m.default_ratio = SplitRatio{};
    } else if (split.is_string() && split.get<std::string>() == "predefined") {
      m.default_ratio.reset();
    } else if (split.is_object() && split.contains("ratio")) {
      const auto r = split.at("ratio").get<std::vector<unsigned>>();
      if (r.size() != 3) throw Error(ErrorCode::ParseError, origin + ": ratio needs 3 components");
      m.default_ratio = SplitRatio{r[0], r[1], r[2]};
    } else {
      throw Error(ErrorCode::ParseError, origin + ": default_split must be {\"ratio\":[a,b,c]} or \"predefined\"");
    }
    if (j.contains("k_delay") && !j.at("k_delay").is_null()) {
      const auto k = j.at("k_delay").get<long long>();
      if (k < 0) throw Error(ErrorCode::InvariantViolation, origin + ": k_delay must be non-negative");
      m.k_delay = static_cast<std::size_t>(k);
    }
    std::set<std::string> seen;
    for (const auto& c : j.at("curves")) {
      CurveDescriptor d;
      d.id = c.at("id").get<std::string>();
      d.file = c.contains("file") ? c.at("file").get<std::string>() : "curves/" + d.id + ".csv";
      if (c.contains("train_end") && !c.at("train_end").is_null()) d.train_end = c.at("train_end").get<std::size_t>();
      if (c.contains("valid_end") && !c.at("valid_end").is_null()) d.valid_end = c.at("valid_end").get<std::size_t>();
      if (!seen.insert(d.id).second)
        throw Error(ErrorCode::InvariantViolation, origin + ": duplicate curve id '" + d.id + "'");
      m.curves.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, origin + ": " + e.what());
  }
  return m;
}

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["name"] = m.name;
  if (m.default_ratio)
    j["default_split"] = {{"ratio", {m.default_ratio->train, m.default_ratio->valid, m.default_ratio->test}}};
  else
    j["default_split"] = "predefined";
  if (m.k_delay) j["k_delay"] = *m.k_delay;
  auto curves = nlohmann::ordered_json::array();
  for (const auto& c : m.curves) {
    nlohmann::ordered_json cj{{"id", c.id}, {"file", c.file}};
    if (c.train_end) cj["train_end"] = *c.train_end;
    if (c.valid_end) cj["valid_end"] = *c.valid_end;
    curves.push_back(std::move(cj));
  }
  j["curves"] = std::move(curves);
  return j;
}

inline SplitSpec resolve_split(const CurveDescriptor& c, const DatasetManifest& m, std::size_t n) {
  if (c.train_end) {
    return {*c.train_end, c.valid_end.value_or(*c.train_end), SplitSource::predefined};
  }
  if (!m.default_ratio)
    throw Error(ErrorCode::InvariantViolation,
                "curve '" + c.id + "' needs train_end because the dataset split is predefined");
  return split_series(n, *m.default_ratio);
}

// ---------------------------------------------------------------------------
// Load / write

inline Dataset load_dataset(const std::filesystem::path& root) {
  const auto manifest_path = root / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw Error(ErrorCode::MissingManifest, "no manifest.json in " + root.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  ds.manifest = parse_manifest(j, manifest_path.string());
  for (const auto& c : ds.manifest.curves) {
    const auto path = root / c.file;
    if (!std::filesystem::exists(path))
      throw Error(ErrorCode::MissingManifest, "curve file " + path.string() + " does not exist");
    TimeSeries s;
    s.id = c.id;
    parse_curve_csv(read_text_file(path), path.string(), s.values, s.labels);
    try {
      s.split = resolve_split(c, ds.manifest, s.size());
    } catch (const Error& e) {
      throw Error(e.code() == ErrorCode::SeriesTooShort ? ErrorCode::InvariantViolation : e.code(),
                  "curve '" + c.id + "': " + e.what());
    }
    validate_series(s);
    ds.series.push_back(std::move(s));
  }
  return ds;
}

/// Writes the canonical layout. Curve files go to curves/<id>.csv.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& root) {
  DatasetManifest m = ds.manifest;
  m.curves.clear();
  for (const auto& s : ds.series) {
    CurveDescriptor d{s.id, "curves/" + s.id + ".csv", std::nullopt, std::nullopt};
    if (s.split.source == SplitSource::predefined || !m.default_ratio) {
      d.train_end = s.split.train_end;
      d.valid_end = s.split.valid_end;
    }
    write_text_file(root / d.file, curve_csv(s.values, s.labels));
    m.curves.push_back(std::move(d));
  }
  write_text_file(root / "manifest.json", manifest_to_json(m).dump(2) + "\n");
}

struct FilterResult {
  std::vector<TimeSeries> kept;
  std::vector<std::string> excluded;
};

/// Drops every series whose test region holds no anomaly.
inline FilterResult filter_anomaly_free(std::vector<TimeSeries> series) {
  FilterResult r;
  for (auto& s : series) {
    bool any = false;
    for (auto l : s.test_labels()) any = any || l != 0;
    if (any)
      r.kept.push_back(std::move(s));
    else
      r.excluded.push_back(s.id);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Import

struct ColumnMap {
  std::string value = "value";
  // Empty: first of "label", "is_anomaly", "anomaly" present in the header.
  std::string label;
};

/// Converts a headered CSV with arbitrary column order into the canonical
/// curve format. Running it on its own output reproduces the same bytes.
inline std::string import_generic_csv_text(std::string_view text, const ColumnMap& columns,
                                           const std::string& origin = "input") {
  const auto lines = split_lines(text);
  if (lines.empty()) throw Error(ErrorCode::ParseError, origin + ": empty file");
  const auto header = split_csv_line(lines.front());
  auto find_col = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      auto h = header[i];
      while (!h.empty() && h.front() == ' ') h.remove_prefix(1);
      while (!h.empty() && h.back() == ' ') h.remove_suffix(1);
      if (h == name) return i;
    }
    return std::nullopt;
  };
  const auto value_col = find_col(columns.value);
  if (!value_col) throw Error(ErrorCode::ParseError, origin + ": no value column '" + columns.value + "'");
  std::optional<std::size_t> label_col;
  if (!columns.label.empty()) {
    label_col = find_col(columns.label);
  } else {
    for (const char* name : {"label", "is_anomaly", "anomaly"})
      if (!label_col) label_col = find_col(name);
  }
  if (!label_col) throw Error(ErrorCode::ParseError, origin + ": no label column");

  std::vector<double> values;
  std::vector<std::uint8_t> labels;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const std::string where = origin + " row " + std::to_string(li);
    const auto cells = split_csv_line(lines[li]);
    if (cells.size() <= std::max(*value_col, *label_col))
      throw Error(ErrorCode::ParseError, where + ": missing columns");
    const auto v = parse_double(cells[*value_col]);
    if (!v || !std::isfinite(*v)) throw Error(ErrorCode::ParseError, where + ": bad value");
    const auto l = parse_double(cells[*label_col]);
    if (!l || (*l != 0.0 && *l != 1.0)) throw Error(ErrorCode::ParseError, where + ": bad label");
    values.push_back(*v);
    labels.push_back(*l == 1.0 ? 1 : 0);
  }
  return curve_csv(values, labels);
}

inline void import_generic_csv(const std::filesystem::path& input, const ColumnMap& columns,
                               const std::filesystem::path& output) {
  write_text_file(output, import_generic_csv_text(read_text_file(input), columns, input.string()));
}

}  // namespace tsadbench
