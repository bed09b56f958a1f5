#include "config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sgdstat/errors.hpp"

#ifndef SGDSTAT_PRESET_DIR
#define SGDSTAT_PRESET_DIR "presets"
#endif

namespace sgdstat::cli {

const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::Predict: return "predict";
    case Experiment::Simulate: return "simulate";
    case Experiment::Compare: return "compare";
    case Experiment::Escape: return "escape";
    case Experiment::Kramers: return "kramers";
    case Experiment::BayesLr: return "bayes-lr";
    case Experiment::Stability: return "stability";
    case Experiment::Ratio: return "ratio";
  }
  return "?";
}

std::optional<Experiment> parse_experiment(const std::string& s) {
  for (auto e : {Experiment::Predict, Experiment::Simulate, Experiment::Compare, Experiment::Escape,
                 Experiment::Kramers, Experiment::BayesLr, Experiment::Stability, Experiment::Ratio}) {
    if (s == to_string(e)) return e;
  }
  return std::nullopt;
}

namespace detail {

SymMatrix parse_matrix(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a non-empty square matrix");
  const Index n = static_cast<Index>(j.size());
  Matrix m(n, n);
  for (Index i = 0; i < n; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != n) {
      throw ConfigError(path + ": matrix is not square");
    }
    for (Index k = 0; k < n; ++k) {
      const Json& v = row[static_cast<std::size_t>(k)];
      if (!v.is_number()) throw ConfigError(path + ": entries must be numbers");
      m(i, k) = v.get<double>();
    }
  }
  try {
    return SymMatrix(m);
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

SymMatrix problem_hessian(const Json& config) {
  if (!config.contains("problem")) throw ConfigError("problem: missing");
  const Json& p = config["problem"];
  if (p.contains("hessian")) return parse_matrix(p["hessian"], "problem.hessian");
  if (p.contains("eigenvalues")) {
    const Json& e = p["eigenvalues"];
    if (!e.is_array() || e.empty()) throw ConfigError("problem.eigenvalues: expected a non-empty list");
    Vector v(static_cast<Index>(e.size()));
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (!e[i].is_number()) throw ConfigError("problem.eigenvalues: entries must be numbers");
      v(static_cast<Index>(i)) = e[i].get<double>();
    }
    return SymMatrix::diagonal(v);
  }
  throw ConfigError("problem: needs hessian or eigenvalues");
}

namespace {

double number(const Json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) throw ConfigError(std::string(key) + ": expected a number");
  return j[key].get<double>();
}

}  // namespace

OptimizerSpec parse_optimizer(const Json& j, Index dim) {
  if (!j.is_object()) throw ConfigError("optimizer: expected an object");
  std::string kind_name = j.value("kind", std::string("sgd"));
  auto kind = parse_optimizer_kind(kind_name);
  if (!kind) throw ConfigError("optimizer.kind: unknown optimizer '" + kind_name + "'");
  OptimizerSpec o;
  o.kind = *kind;
  o.momentum = number(j, "momentum", 0.0);
  o.qhm_nu = number(j, "nu", 0.0);
  if (j.contains("preconditioner")) {
    o.preconditioner = parse_matrix(j["preconditioner"], "optimizer.preconditioner");
    if (o.preconditioner->dim() != dim) {
      throw ConfigError("optimizer.preconditioner: dimension differs from problem");
    }
  } else {
    if (!j.contains("lr")) throw ConfigError("optimizer.lr: missing");
    o.lr = number(j, "lr", 0.0);
  }
  return o;
}

NoiseEntry parse_noise(const Json& j, Index dim) {
  if (!j.is_object()) throw ConfigError("noise: expected an object");
  NoiseEntry e;
  std::string kind = j.value("kind", std::string("isotropic"));
  e.label = j.value("label", kind);
  if (kind == "regression") {
    e.regression = true;
    e.n_data = static_cast<long>(number(j, "n_data", 1000));
    e.batch = static_cast<long>(number(j, "batch", 100));
    e.label_noise_sd = number(j, "label_noise_sd", 1.0);
    e.data_seed = static_cast<std::uint64_t>(number(j, "data_seed", 0));
    e.w_star = Vector::Ones(dim);
    if (j.contains("w_star")) {
      const Json& w = j["w_star"];
      if (!w.is_array() || static_cast<Index>(w.size()) != dim) {
        throw ConfigError("noise.w_star: expected a vector of the problem dimension");
      }
      for (Index i = 0; i < dim; ++i) e.w_star(i) = w[static_cast<std::size_t>(i)].get<double>();
    }
    return e;
  }
  auto nk = parse_noise_kind(kind);
  if (!nk) throw ConfigError("noise.kind: unknown noise '" + kind + "'");
  NoiseSpec& s = e.spec;
  s.kind = *nk;
  s.sigma2 = number(j, "sigma2", 0.0);
  s.a = number(j, "a", 0.0);
  s.n_data = static_cast<long>(number(j, "n_data", 0));
  s.batch = static_cast<long>(number(j, "batch", 0));
  s.coefficient = number(j, "coefficient", 0.0);
  s.dof = number(j, "dof", 0.0);
  s.scale = number(j, "scale", 1.0);
  if (j.contains("covariance")) {
    s.covariance = parse_matrix(j["covariance"], "noise.covariance");
    if (s.covariance->dim() != dim) throw ConfigError("noise.covariance: dimension differs from problem");
  }
  return e;
}

std::vector<Json> noise_list(const Json& config) {
  if (!config.contains("noise")) return {};
  const Json& n = config["noise"];
  if (n.is_array()) return std::vector<Json>(n.begin(), n.end());
  return {n};
}

const std::vector<std::string>& sweepable_paths() {
  static const std::vector<std::string> paths = {
      "optimizer.lr",  "optimizer.momentum", "optimizer.nu", "noise.sigma2",  "noise.a",
      "noise.batch",   "noise.n_data",       "noise.dof",    "noise.scale",   "noise.coefficient",
      "kramers.r",     "kramers.lr",         "kramers.batch", "bayes.batch",  "bayes.n_data",
      "ratio.dim",     "ratio.d",            "ratio.l",      "escape.lr"};
  return paths;
}

Json with_value(const Json& config, const std::string& path, double value) {
  Json out = config;
  auto dot = path.find('.');
  if (dot == std::string::npos) throw ConfigError("sweep.parameter: expected section.field");
  std::string section = path.substr(0, dot);
  std::string field = path.substr(dot + 1);
  bool integral = field == "batch" || field == "n_data" || field == "dim" || field == "l";
  Json v = integral ? Json(static_cast<long>(std::llround(value))) : Json(value);
  if (section == "noise" && out.contains("noise") && out["noise"].is_array()) {
    for (auto& n : out["noise"]) n[field] = v;
  } else {
    out[section][field] = v;
  }
  return out;
}

}  // namespace detail

using detail::noise_list;
using detail::parse_noise;
using detail::parse_optimizer;
using detail::problem_hessian;

namespace {

bool needs_quadratic(Experiment e) {
  return e != Experiment::Kramers && e != Experiment::Ratio;
}

bool needs_optimizer(Experiment e) {
  return e == Experiment::Predict || e == Experiment::Simulate || e == Experiment::Compare ||
         e == Experiment::Stability;
}

bool needs_noise(Experiment e) {
  return e == Experiment::Predict || e == Experiment::Simulate || e == Experiment::Compare ||
         e == Experiment::Escape;
}

bool simulates(Experiment e) { return e == Experiment::Simulate || e == Experiment::Compare; }

void check_point(const Json& config, Experiment exp, std::vector<std::string>& v) {
  auto add = [&](const std::string& msg) {
    const std::string& line = msg;
    if (std::find(v.begin(), v.end(), line) == v.end()) v.push_back(line);
  };
  Index dim = 0;
  if (needs_quadratic(exp)) {
    try {
      SymMatrix k = problem_hessian(config);
      dim = k.dim();
      if (!linalg::is_positive_definite(k)) add("problem.hessian: must be positive definite");
    } catch (const Error& e) {
      add(e.what());
    }
  }
  if (needs_optimizer(exp) && dim > 0) {
    if (!config.contains("optimizer")) {
      add("optimizer: missing");
    } else {
      try {
        OptimizerSpec o = parse_optimizer(config["optimizer"], dim);
        if (!(o.momentum >= 0.0 && o.momentum < 1.0)) {
          add("optimizer.momentum: momentum must be in [0,1)");
        } else if (o.lr && !(*o.lr > 0.0)) {
          add("optimizer.lr: learning rate must be positive");
        } else {
          try {
            o.validate();
          } catch (const Error& e) {
            add(std::string("optimizer: ") + e.what());
          }
        }
      } catch (const Error& e) {
        add(e.what());
      }
    }
  }
  if (needs_noise(exp) && dim > 0) {
    auto list = noise_list(config);
    if (list.empty()) add("noise: missing");
    for (std::size_t i = 0; i < list.size(); ++i) {
      std::string field = list.size() > 1 ? "noise[" + std::to_string(i) + "]" : "noise";
      try {
        auto e = parse_noise(list[i], dim);
        long n = e.regression ? e.n_data : e.spec.n_data;
        long s = e.regression ? e.batch : e.spec.batch;
        bool batched = e.regression || e.spec.kind == NoiseKind::Minibatch;
        if (batched && s > n) {
          add(field + ".batch, " + field + ".n_data: batch size S = " + std::to_string(s) +
              " exceeds dataset size N = " + std::to_string(n));
        } else if (batched && s < 1) {
          add(field + ".batch: batch size must be >= 1");
        } else if (e.regression && n < dim) {
          add(field + ".n_data: need N >= D for a regression dataset");
        } else if (!e.regression) {
          try {
            e.spec.validate();
          } catch (const Error& err) {
            add(field + ": " + err.what());
          }
        }
      } catch (const Error& e) {
        add(e.what());
      }
    }
  }
  if (exp == Experiment::BayesLr) {
    const Json b = config.value("bayes", Json::object());
    long n = b.value("n_data", 0L), s = b.value("batch", 0L);
    if (s > n) {
      add("bayes.batch, bayes.n_data: batch size S = " + std::to_string(s) +
          " exceeds dataset size N = " + std::to_string(n));
    } else if (s < 1) {
      add("bayes.batch: batch size must be >= 1");
    }
  }
  if (exp == Experiment::Kramers) {
    const Json k = config.value("kramers", Json::object());
    double r = k.value("r", 1.0), lr = k.value("lr", 0.1);
    if (!(r > 0.0)) add("kramers.r: rescaling must be positive");
    if (!(lr > 0.0)) add("kramers.lr: learning rate must be positive");
    if (!(k.value("batch", 1.0) > 0.0)) add("kramers.batch: must be positive");
    double l = k.value("midpoint", 0.5);
    if (!(l > 0.0 && l < 1.0)) add("kramers.midpoint: must be in (0,1)");
    if (!(r * lr * 8.0 < 2.0)) add("kramers.r, kramers.lr: r·λ·k_a must be below 2");
  }
  if (exp == Experiment::Ratio) {
    const Json q = config.value("ratio", Json::object());
    long d = q.value("dim", 0L), l = q.value("l", 1L);
    if (d < 1) add("ratio.dim: must be >= 1");
    if (l < 1 || l > d) add("ratio.l: must be in [1, ratio.dim]");
    if (!(q.value("d", 1.0) > 0.5)) add("ratio.d: must exceed 1/2");
  }
  if (exp == Experiment::Escape) {
    const Json q = config.value("escape", Json::object());
    if (q.value("t_max", 50L) < 0) add("escape.t_max: must be >= 0");
    if (q.value("n_runs", 0L) < 2) add("escape.n_runs: must be >= 2");
  }
  (void)simulates;
}

}  // namespace

std::vector<std::string> validate_config(const Json& config) {
  std::vector<std::string> v;
  if (!config.is_object()) return {"<root>: config must be a JSON object"};
  if (!config.contains("schema_version")) {
    v.push_back("schema_version: missing");
  } else if (config["schema_version"] != kSchemaVersion) {
    v.push_back("schema_version: unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  if (!config.contains("experiment") || !config["experiment"].is_string()) {
    v.push_back("experiment: missing");
    return v;
  }
  auto exp = parse_experiment(config["experiment"].get<std::string>());
  if (!exp) {
    v.push_back("experiment: unknown experiment '" + config["experiment"].get<std::string>() + "'");
    return v;
  }
  if (simulates(*exp) || *exp == Experiment::Kramers || *exp == Experiment::Escape) {
    if (!config.contains("master_seed") || !config["master_seed"].is_number_unsigned()) {
      v.push_back("master_seed: expected a non-negative integer");
    }
  }
  if (simulates(*exp)) {
    if (config.value("n_chains", 0L) < 2) v.push_back("n_chains: must be >= 2");
    if (config.contains("n_steps")) {
      const Json& n = config["n_steps"];
      bool ok = (n.is_string() && n.get<std::string>() == "auto") ||
                (n.is_number_integer() && n.get<long>() >= 1);
      if (!ok) v.push_back("n_steps: expected an integer >= 1 or \"auto\"");
    }
  }
  if (config.contains("checks") && !config["checks"].is_array()) {
    v.push_back("checks: expected a list");
  }

  if (!config.contains("sweep")) {
    check_point(config, *exp, v);
    return v;
  }
  const Json& sweep = config["sweep"];
  std::string param = sweep.value("parameter", std::string());
  const auto& allowed = detail::sweepable_paths();
  if (std::find(allowed.begin(), allowed.end(), param) == allowed.end()) {
    v.push_back("sweep.parameter: '" + param + "' is not sweepable");
    check_point(config, *exp, v);
    return v;
  }
  if (!sweep.contains("grid") || !sweep["grid"].is_array() || sweep["grid"].empty()) {
    v.push_back("sweep.grid: sweep grid is empty");
    check_point(config, *exp, v);
    return v;
  }
  std::vector<std::pair<std::string, std::vector<double>>> found;
  for (const auto& g : sweep["grid"]) {
    if (!g.is_number()) {
      v.push_back("sweep.grid: entries must be numbers");
      return v;
    }
    std::vector<std::string> here;
    check_point(detail::with_value(config, param, g.get<double>()), *exp, here);
    for (auto& msg : here) {
      auto it = std::find_if(found.begin(), found.end(), [&](const auto& f) { return f.first == msg; });
      if (it == found.end()) {
        found.emplace_back(msg, std::vector<double>{g.get<double>()});
      } else {
        it->second.push_back(g.get<double>());
      }
    }
  }
  for (auto& [msg, at] : found) {
    if (at.size() == sweep["grid"].size()) {
      v.push_back(msg);
      continue;
    }
    std::string list;
    for (double x : at) list += (list.empty() ? "" : ", ") + format_double(x);
    v.push_back(msg + " (at " + param + " = " + list + ")");
  }
  return v;
}

std::string preset_directory() {
  if (const char* env = std::getenv("SGDSTAT_PRESETS")) return env;
  return SGDSTAT_PRESET_DIR;
}

Json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::vector<std::string> preset_names() {
  return {"fig2a", "fig2b", "fig3", "fig4a", "fig5", "fig6b", "fig8"};
}

Json load_preset(const std::string& name) {
  return load_config_file(preset_directory() + "/" + name + ".json");
}

}  // namespace sgdstat::cli
