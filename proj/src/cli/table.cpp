#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "sgdstat/cli.hpp"
#include "sgdstat/errors.hpp"

namespace sgdstat::cli {

std::size_t Table::column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ConfigError("table has no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

bool Table::has_column(const std::string& name) const {
  return std::find(columns.begin(), columns.end(), name) != columns.end();
}

void Table::add_row(std::string label, std::vector<double> values) {
  if (values.size() != columns.size()) throw Error("table row width mismatch");
  series.push_back(std::move(label));
  rows.push_back(std::move(values));
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("csv: cannot parse number '" + s + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_csv(const Table& table, std::ostream& out) {
  out << "series";
  for (const auto& c : table.columns) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out << table.series[r];
    for (double v : table.rows[r]) out << ',' << format_double(v);
    out << '\n';
  }
}

Table read_csv(std::istream& in) {
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("csv: empty input");
  auto header = split(line);
  if (header.empty() || header[0] != "series") throw ConfigError("csv: first column must be series");
  t.columns.assign(header.begin() + 1, header.end());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) throw ConfigError("csv: ragged row");
    std::vector<double> v;
    v.reserve(cells.size() - 1);
    for (std::size_t i = 1; i < cells.size(); ++i) v.push_back(parse_double(cells[i]));
    t.add_row(cells[0], std::move(v));
  }
  return t;
}

double relative_error(const std::vector<double>& predicted, const std::vector<double>& empirical) {
  if (predicted.size() != empirical.size()) throw Error("relative_error: size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    double d = empirical[i] - predicted[i];
    num += d * d;
    den += predicted[i] * predicted[i];
  }
  return std::sqrt(num) / std::sqrt(den);
}

namespace {

// Columns named <prefix>_<suffix> in table order.
std::vector<std::size_t> with_prefix(const Table& t, const std::string& prefix) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    const std::string& c = t.columns[i];
    if (c.rfind(prefix + "_", 0) != 0) continue;
    std::string rest = c.substr(prefix.size() + 1);
    bool entry = !rest.empty() && std::all_of(rest.begin(), rest.end(), [](char ch) {
      return ch == '_' || (ch >= '0' && ch <= '9');
    });
    if (entry) idx.push_back(i);
  }
  return idx;
}

std::vector<double> pick(const std::vector<double>& row, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(row[i]);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, std::vector<double>>> recompute_errors(const Table& table) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  if (table.has_column("rel_error") && !with_prefix(table, "pred").empty()) {
    // Matrix-valued compare table.
    auto pred = with_prefix(table, "pred");
    auto cont = with_prefix(table, "cont");
    auto emp = with_prefix(table, "emp");
    std::vector<double> rel, crel;
    for (const auto& row : table.rows) {
      rel.push_back(relative_error(pick(row, pred), pick(row, emp)));
      crel.push_back(relative_error(pick(row, cont), pick(row, emp)));
    }
    out.emplace_back("rel_error", std::move(rel));
    out.emplace_back("cont_rel_error", std::move(crel));
    std::vector<std::size_t> diag;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
      if (table.columns[i].rfind("diag_rel_error_", 0) == 0) diag.push_back(i);
    }
    for (auto c : diag) {
      std::string suffix = table.columns[c].substr(std::string("diag_rel_error_").size());
      auto p = table.column("pred_" + suffix + "_" + suffix);
      auto e = table.column("emp_" + suffix + "_" + suffix);
      std::vector<double> v;
      for (const auto& row : table.rows) v.push_back(relative_error({row[p]}, {row[e]}));
      out.emplace_back(table.columns[c], std::move(v));
    }
  } else if (table.has_column("rel_error") && table.has_column("predicted") &&
             table.has_column("empirical")) {
    auto p = table.column("predicted");
    auto e = table.column("empirical");
    std::vector<double> v;
    for (const auto& row : table.rows) v.push_back(relative_error({row[p]}, {row[e]}));
    out.emplace_back("rel_error", std::move(v));
  }
  return out;
}

}  // namespace sgdstat::cli
