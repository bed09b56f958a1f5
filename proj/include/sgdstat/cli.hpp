#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace sgdstat::cli {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitUsage = 2 };

enum class Experiment { Predict, Simulate, Compare, Escape, Kramers, BayesLr, Stability, Ratio };

const char* to_string(Experiment e);
std::optional<Experiment> parse_experiment(const std::string& s);

// Result rows. The first CSV column is the series label, the rest are numbers.
struct Table {
  std::vector<std::string> columns;  // numeric columns, without "series"
  std::vector<std::string> series;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const;  // throws ConfigError if missing
  bool has_column(const std::string& name) const;
  void add_row(std::string label, std::vector<double> values);
};

// 17 significant digits; nan and inf spelled as such.
std::string format_double(double x);
void write_csv(const Table& table, std::ostream& out);
Table read_csv(std::istream& in);

// ‖empirical − predicted‖_F / ‖predicted‖_F over matched entries.
double relative_error(const std::vector<double>& predicted, const std::vector<double>& empirical);
// Recomputes every rel_error-style column of a compare/escape table from its
// stored prediction and empirical columns; used for round-trip audits.
std::vector<std::pair<std::string, std::vector<double>>> recompute_errors(const Table& table);

// Every violation, each prefixed by its field path. Empty means valid.
std::vector<std::string> validate_config(const Json& config);

struct RunOptions {
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

struct CheckResult {
  std::string description;
  bool passed = false;
  std::string detail;
};

struct RunResult {
  Experiment experiment = Experiment::Predict;
  Table table;
  Json summary;
  std::vector<CheckResult> checks;
};

// Throws ConfigError on invalid configs.
RunResult run_experiment(const Json& config, const RunOptions& options);
RunResult run_experiment(const Json& config, Experiment experiment, const RunOptions& options);

std::vector<CheckResult> evaluate_checks(const Json& checks, const Table& table,
                                         const Json& summary);

// Presets shipped with the repository.
std::string preset_directory();
std::vector<std::string> preset_names();
Json load_preset(const std::string& name);
Json load_config_file(const std::string& path);

// Entry point of the sgdstat tool.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace sgdstat::cli
