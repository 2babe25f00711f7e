#pragma once

// CSV artifacts with declared schemas, the schema checker, and the JSON run
// manifest.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <ctime>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nal/bound_eval.hpp"
#include "nal/certifier.hpp"
#include "nal/config.hpp"
#include "nal/dataset.hpp"
#include "nal/error.hpp"
#include "nal/rng.hpp"
#include "nal/trainers.hpp"

namespace nal {

enum class ColumnKind { integer, real, probability, nonnegative, flag, text };

struct Column {
  std::string_view name;
  ColumnKind kind;
};

struct CsvSchema {
  std::string_view file;
  std::vector<Column> columns;
};

inline const std::vector<CsvSchema>& csv_schemas() {
  static const std::vector<CsvSchema> schemas = {
      {"certify.csv",
       {{"index", ColumnKind::integer}, {"label", ColumnKind::integer}, {"predicted", ColumnKind::integer},
        {"pA_lower", ColumnKind::probability}, {"pB_upper", ColumnKind::probability},
        {"radius", ColumnKind::nonnegative}, {"abstain", ColumnKind::flag}, {"correct", ColumnKind::flag}}},
      {"curve.csv", {{"radius", ColumnKind::nonnegative}, {"certified_accuracy", ColumnKind::probability}}},
      {"bound.csv",
       {{"gamma", ColumnKind::nonnegative}, {"rho", ColumnKind::nonnegative}, {"bound", ColumnKind::real},
        {"rho_test", ColumnKind::nonnegative}, {"worst_case_loss", ColumnKind::real}}},
      {"transfer.csv", {{"source", ColumnKind::text}, {"target", ColumnKind::text}, {"accuracy", ColumnKind::probability}}},
      {"history.csv",
       {{"epoch", ColumnKind::integer}, {"surrogate_loss", ColumnKind::real}, {"clean_loss", ColumnKind::real}}},
      {"attack.csv",
       {{"epsilon", ColumnKind::nonnegative}, {"k_pgd", ColumnKind::integer}, {"clean_acc", ColumnKind::probability},
        {"robust_acc", ColumnKind::probability}, {"test_noise", ColumnKind::flag}}},
  };
  return schemas;
}

inline const CsvSchema* find_schema(std::string_view file) {
  for (const auto& s : csv_schemas())
    if (s.file == file) return &s;
  return nullptr;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool cell_ok(ColumnKind kind, const std::string& cell) {
  switch (kind) {
    case ColumnKind::integer: return parse_int(cell).has_value();
    case ColumnKind::real: return parse_real(cell).has_value();
    case ColumnKind::probability: {
      const auto v = parse_real(cell);
      return v && *v >= 0.0 && *v <= 1.0;
    }
    case ColumnKind::nonnegative: {
      const auto v = parse_real(cell);
      return v && *v >= 0.0;
    }
    case ColumnKind::flag: return cell == "0" || cell == "1";
    case ColumnKind::text: return !cell.empty() && cell.find('"') == std::string::npos;
  }
  return false;
}

}  // namespace detail

/// Problems found in `text` against `schema`; empty when it conforms.
inline std::vector<std::string> check_csv(const CsvSchema& schema, const std::string& text) {
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::string line;
  std::string expected;
  for (std::size_t i = 0; i < schema.columns.size(); ++i) expected += (i ? "," : "") + std::string(schema.columns[i].name);
  if (!std::getline(in, line) || line != expected) {
    problems.push_back(std::string(schema.file) + ": header must be '" + expected + "'");
    return problems;
  }
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    const auto cells = detail::split_csv_line(line);
    const std::string where = std::string(schema.file) + " line " + std::to_string(number);
    if (cells.size() != schema.columns.size()) {
      problems.push_back(where + ": expected " + std::to_string(schema.columns.size()) + " cells");
      continue;
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!detail::cell_ok(schema.columns[c].kind, cells[c])) {
        problems.push_back(where + ": bad value '" + cells[c] + "' in column " + std::string(schema.columns[c].name));
      }
    }
  }
  if (!text.empty() && text.back() != '\n') problems.push_back(std::string(schema.file) + ": missing final newline");
  return problems;
}

/// Dataset CSVs (x0,...,x{d-1},label) are recognized by their header.
inline std::vector<std::string> check_dataset_csv(const std::string& name, const std::string& text) {
  try {
    (void)dataset_from_csv(text, 1 << 20, name);
  } catch (const Error& e) {
    return {name + ": " + e.what()};
  }
  return {};
}

struct SchemaReport {
  std::size_t files_checked = 0;
  std::vector<std::string> problems;
};

/// Validates every CSV in dir (recursively) whose name has a declared schema,
/// plus dataset CSVs; unknown CSV names are reported.
inline SchemaReport check_run_directory(const std::filesystem::path& dir) {
  SchemaReport rep;
  if (!std::filesystem::is_directory(dir)) {
    rep.problems.push_back(dir.string() + ": not a directory");
    return rep;
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    const std::string text = detail::read_file(f.string());
    ++rep.files_checked;
    std::vector<std::string> p;
    if (const auto* schema = find_schema(name)) {
      p = check_csv(*schema, text);
    } else if (text.rfind("x0,", 0) == 0) {
      p = check_dataset_csv(name, text);
    } else {
      p = {name + ": no declared schema"};
    }
    for (auto& s : p) rep.problems.push_back(f.string() + ": " + s);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// writers

inline std::string csv_flag(bool b) { return b ? "1" : "0"; }

inline std::string history_csv(const TrainHistory& h) {
  std::string out = "epoch,surrogate_loss,clean_loss\n";
  for (std::size_t e = 0; e < h.size(); ++e) {
    out += std::to_string(e + 1) + "," + format_double(h[e].surrogate_loss) + "," + format_double(h[e].clean_loss) + "\n";
  }
  return out;
}

inline std::string certify_csv(std::span<const CertResult> results, std::span<const int> labels) {
  std::string out = "index,label,predicted,pA_lower,pB_upper,radius,abstain,correct\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    out += std::to_string(i) + "," + std::to_string(labels[i]) + "," + std::to_string(r.c_hat) + "," +
           format_double(r.pA_lower) + "," + format_double(r.pB_upper) + "," + format_double(r.radius) + "," +
           csv_flag(r.abstain) + "," + csv_flag(!r.abstain && r.c_hat == labels[i]) + "\n";
  }
  return out;
}

inline std::string curve_csv(std::span<const CurvePoint> curve) {
  std::string out = "radius,certified_accuracy\n";
  for (const auto& p : curve) out += format_double(p.radius) + "," + format_double(p.certified_accuracy) + "\n";
  return out;
}

inline std::string bound_csv(std::span<const BoundReport> reports) {
  std::string out = "gamma,rho,bound,rho_test,worst_case_loss\n";
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.rho_grid.size(); ++i) {
      out += format_double(r.point.gamma) + "," + format_double(r.rho_grid[i]) + "," + format_double(r.bound_values[i]) +
             "," + format_double(r.point.rho_test) + "," + format_double(r.point.worst_case_loss) + "\n";
    }
  }
  return out;
}

struct AttackRow {
  double epsilon = 0.0;
  int k_pgd = 0;
  EvalResult result;
  bool test_noise = false;
};

inline std::string attack_csv(std::span<const AttackRow> rows) {
  std::string out = "epsilon,k_pgd,clean_acc,robust_acc,test_noise\n";
  for (const auto& r : rows) {
    out += format_double(r.epsilon) + "," + std::to_string(r.k_pgd) + "," + format_double(r.result.clean_acc) + "," +
           format_double(r.result.robust_acc) + "," + csv_flag(r.test_noise) + "\n";
  }
  return out;
}

struct TransferCell {
  std::string source, target;
  double accuracy = 0.0;
};

inline std::string transfer_csv(std::span<const TransferCell> cells) {
  std::string out = "source,target,accuracy\n";
  for (const auto& c : cells) out += c.source + "," + c.target + "," + format_double(c.accuracy) + "\n";
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw Error("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// manifest

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline nlohmann::json dataset_json(const Dataset& ds) {
  return {{"name", ds.name}, {"size", ds.size()}, {"dim", ds.dim()}, {"classes", ds.num_classes},
          {"checksum_fnv1a64", hex64(dataset_checksum(ds))}};
}

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& cfg) : start_(std::chrono::steady_clock::now()) {
    json_["command"] = std::move(command);
    json_["config"] = cfg.values();
    json_["seed"] = cfg.seed();
    json_["threads"] = cfg.threads();
    json_["prng"] = std::string(kPrngName);
    json_["normal_sampler"] = std::string(kNormalName);
    json_["tie_break"] = "lowest class index";
    json_["relu_derivative_at_zero"] = 0;
    json_["started_at"] = timestamp();
    json_["artifacts"] = nlohmann::json::array();
  }

  nlohmann::json& json() { return json_; }

  void add_dataset(const std::string& role, const Dataset& ds) { json_["datasets"][role] = dataset_json(ds); }
  void add_artifact(const std::filesystem::path& p) { json_["artifacts"].push_back(p.string()); }

  void write(const std::filesystem::path& dir) {
    json_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const auto path = dir / "manifest.json";
    json_["artifacts"].push_back(path.string());
    write_text(path, json_.dump(2) + "\n");
  }

 private:
  static std::string timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
    return buf;
  }

  nlohmann::json json_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace nal
