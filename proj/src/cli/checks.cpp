#include <cmath>
#include <limits>
#include <sstream>

#include "sgdstat/cli.hpp"
#include "sgdstat/errors.hpp"

namespace sgdstat::cli {

namespace {

struct Filter {
  double lo = -INFINITY;
  double hi = INFINITY;
  std::string series;

  bool keep(const Table& t, std::size_t r) const {
    double x = t.rows[r][0];
    if (!series.empty() && t.series[r] != series) return false;
    if (std::isnan(x)) return true;
    return x >= lo && x <= hi;
  }

  std::string describe() const {
    std::string s;
    if (std::isfinite(lo) || std::isfinite(hi)) {
      s += " for sweep in [" + format_double(lo) + ", " + format_double(hi) + "]";
    }
    if (!series.empty()) s += " (series " + series + ")";
    return s;
  }
};

Filter parse_filter(const Json& c) {
  Filter f;
  f.lo = c.value("sweep_min", -std::numeric_limits<double>::infinity());
  f.hi = c.value("sweep_max", std::numeric_limits<double>::infinity());
  f.series = c.value("series", std::string());
  return f;
}

const Json* lookup(const Json& j, const std::string& dotted) {
  const Json* cur = &j;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!cur->is_object() || !cur->contains(part)) return nullptr;
    cur = &(*cur)[part];
  }
  return cur;
}

CheckResult bounded(const Json& c, const Table& t, bool is_max) {
  CheckResult r;
  const std::string col = c.at("column").get<std::string>();
  const double limit = c.at("limit").get<double>();
  Filter f = parse_filter(c);
  r.description = col + (is_max ? " < " : " > ") + format_double(limit) + f.describe();
  std::size_t k = t.column(col);
  std::size_t n = 0;
  double worst = is_max ? -INFINITY : INFINITY;
  double worst_x = NAN;
  bool ok = true;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (!f.keep(t, i)) continue;
    ++n;
    double v = t.rows[i][k];
    bool pass = is_max ? v < limit : v > limit;
    if (!pass) ok = false;
    if (std::isnan(v) || (is_max ? v > worst : v < worst)) {
      if (!std::isnan(worst) || std::isnan(v)) {
        worst = v;
        worst_x = t.rows[i][0];
      }
    }
  }
  r.passed = ok && n > 0;
  r.detail = n == 0 ? "no rows selected"
                    : "worst " + format_double(worst) + " at sweep " + format_double(worst_x) +
                          " over " + std::to_string(n) + " rows";
  return r;
}

CheckResult divergence(const Json& c, const Table& t, bool all) {
  CheckResult r;
  Filter f = parse_filter(c);
  r.description = std::string(all ? "all chains diverge" : "no chain diverges") + f.describe();
  std::size_t kd = t.column("n_diverged"), kn = t.column("n_chains");
  std::size_t n = 0, bad = 0;
  std::string where;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (!f.keep(t, i)) continue;
    ++n;
    double d = t.rows[i][kd], total = t.rows[i][kn];
    bool pass = all ? d == total : d == 0.0;
    if (!pass) {
      ++bad;
      where += " " + format_double(t.rows[i][0]) + "(" + format_double(d) + "/" + format_double(total) + ")";
    }
  }
  r.passed = n > 0 && bad == 0;
  r.detail = n == 0 ? "no rows selected"
                    : std::to_string(bad) + " of " + std::to_string(n) + " rows violate" + where;
  return r;
}

CheckResult increasing(const Json& c, const Table& t) {
  CheckResult r;
  const std::string col = c.at("column").get<std::string>();
  Filter f = parse_filter(c);
  r.description = col + " strictly increasing in the sweep value" + f.describe();
  std::size_t k = t.column(col);
  double prev = -INFINITY;
  std::size_t n = 0;
  r.passed = true;
  std::string values;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (!f.keep(t, i)) continue;
    double v = t.rows[i][k];
    values += (n ? ", " : "") + format_double(v);
    ++n;
    if (!(v > prev)) r.passed = false;
    prev = v;
  }
  if (n < 2) r.passed = false;
  r.detail = "values " + values;
  return r;
}

CheckResult summary_bound(const Json& c, const Json& summary, bool is_min) {
  CheckResult r;
  const std::string key = c.at("key").get<std::string>();
  const double limit = c.at("limit").get<double>();
  r.description = key + (is_min ? " > " : " < ") + format_double(limit);
  const Json* v = lookup(summary, key);
  if (!v || !v->is_number()) {
    r.passed = false;
    r.detail = "summary has no numeric " + key;
    return r;
  }
  double x = v->get<double>();
  r.passed = is_min ? x > limit : x < limit;
  r.detail = "value " + format_double(x);
  return r;
}

}  // namespace

std::vector<CheckResult> evaluate_checks(const Json& checks, const Table& table, const Json& summary) {
  std::vector<CheckResult> out;
  for (const auto& c : checks) {
    std::string type = c.value("type", std::string());
    try {
      if (type == "max") {
        out.push_back(bounded(c, table, true));
      } else if (type == "min") {
        out.push_back(bounded(c, table, false));
      } else if (type == "all_diverged") {
        out.push_back(divergence(c, table, true));
      } else if (type == "none_diverged") {
        out.push_back(divergence(c, table, false));
      } else if (type == "increasing") {
        out.push_back(increasing(c, table));
      } else if (type == "summary_min") {
        out.push_back(summary_bound(c, summary, true));
      } else if (type == "summary_max") {
        out.push_back(summary_bound(c, summary, false));
      } else {
        out.push_back({"unknown check type '" + type + "'", false, ""});
      }
    } catch (const std::exception& e) {
      out.push_back({type + " check", false, e.what()});
    }
    if (c.contains("label")) out.back().description = c["label"].get<std::string>() + ": " + out.back().description;
  }
  return out;
}

}  // namespace sgdstat::cli
