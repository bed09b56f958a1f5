#include <algorithm>
#include <cmath>
#include <limits>

#include "config.hpp"
#include "sgdstat/applications.hpp"
#include "sgdstat/dynamics.hpp"
#include "sgdstat/errors.hpp"
#include "sgdstat/regression.hpp"
#include "sgdstat/stationary.hpp"

namespace sgdstat::cli {

namespace {

using detail::NoiseEntry;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct Context {
  Json config;
  Experiment experiment;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string parameter;  // empty without a sweep
  std::vector<double> grid;
};

std::uint64_t point_seed(const Context& ctx, std::size_t series, std::size_t point) {
  return dynamics::chain_seed(dynamics::splitmix64(ctx.seed + series), point);
}

Json at(const Context& ctx, std::size_t point) {
  if (ctx.parameter.empty()) return ctx.config;
  return detail::with_value(ctx.config, ctx.parameter, ctx.grid[point]);
}

double sweep_value(const Context& ctx, std::size_t point) {
  return ctx.parameter.empty() ? kNan : ctx.grid[point];
}

std::vector<std::string> matrix_columns(const std::string& prefix, Index d) {
  std::vector<std::string> out;
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) out.push_back(prefix + "_" + std::to_string(i) + "_" + std::to_string(j));
  }
  return out;
}

std::vector<double> flatten(const SymMatrix* m, Index d) {
  std::vector<double> out;
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) out.push_back(m ? (*m)(i, j) : kNan);
  }
  return out;
}

void append(std::vector<double>& row, const std::vector<double>& more) {
  row.insert(row.end(), more.begin(), more.end());
}

// Everything needed to predict or simulate one (noise series, sweep point).
struct Point {
  std::unique_ptr<regression::RegressionDataset> data;
  std::optional<QuadraticProblem> problem;
  OptimizerSpec optimizer;
  NoiseEntry noise;
  NoiseSpec prediction_noise;  // regression noise is replaced by C = scale·K̂
};

Point make_point(const Json& cfg, const Json& noise_json) {
  Point p;
  SymMatrix k = detail::problem_hessian(cfg);
  p.noise = detail::parse_noise(noise_json, k.dim());
  p.optimizer = detail::parse_optimizer(cfg.at("optimizer"), k.dim());
  if (p.noise.regression) {
    p.data = std::make_unique<regression::RegressionDataset>(regression::make_regression_dataset(
        p.noise.n_data, k.dim(), k, p.noise.w_star, p.noise.label_noise_sd, p.noise.data_seed));
    SymMatrix kh = p.data->hessian();
    p.problem.emplace(kh);
    p.prediction_noise =
        NoiseSpec::explicit_covariance(kh * regression::noise_scale(*p.data, p.noise.batch));
  } else {
    p.problem.emplace(k);
    p.prediction_noise = p.noise.spec;
  }
  return p;
}

bool scalar_second_order(const OptimizerSpec& o) {
  return !o.preconditioner && (o.kind == OptimizerKind::Ngd || o.kind == OptimizerKind::Adam);
}

double stability_margin(const QuadraticProblem& problem, const OptimizerSpec& o,
                        const std::optional<stationary::StationaryPrediction>& pred,
                        const NoiseSpec& noise) {
  if (o.kind == OptimizerKind::Qhm && o.lr) {
    return stationary::qhm_stability_check(problem, *o.lr, o.momentum, o.qhm_nu).margin;
  }
  if (o.preconditioner) return stationary::stability_check(problem, *o.preconditioner, o.momentum).margin;
  if (o.kind == OptimizerKind::Dnm) {
    return stationary::stability_check(problem, linalg::spd_inverse(problem.hessian()) * *o.lr,
                                       o.momentum)
        .margin;
  }
  if (scalar_second_order(o)) {
    if (!pred) return kNan;
    SymMatrix c = stationary::noise_covariance_at(problem, o, noise, pred->sigma);
    SymMatrix lambda = stationary::idealized_preconditioner(problem, o.kind, *o.lr, pred->sigma, c);
    return stationary::stability_check(problem, lambda, o.momentum).margin;
  }
  return stationary::stability_check(problem, *o.lr, o.momentum).margin;
}

struct Prediction {
  std::optional<stationary::StationaryPrediction> discrete;
  std::optional<SymMatrix> continuous;
  double margin = kNan;
  std::string error;
};

Prediction predict_point(const Point& p) {
  Prediction out;
  const QuadraticProblem& problem = *p.problem;
  try {
    out.discrete = stationary::predict(problem, p.optimizer, p.prediction_noise);
  } catch (const Error& e) {
    out.error = e.what();
  }
  try {
    out.margin = stability_margin(problem, p.optimizer, out.discrete, p.prediction_noise);
  } catch (const Error&) {
  }
  const auto& o = p.optimizer;
  bool first_order = o.lr && !o.preconditioner &&
                     (o.kind == OptimizerKind::Sgd || o.kind == OptimizerKind::Sgdm ||
                      o.kind == OptimizerKind::Qhm);
  if (first_order) {
    try {
      SymMatrix c = out.discrete ? stationary::noise_covariance_at(problem, o, p.prediction_noise,
                                                                   out.discrete->sigma)
                                 : p.prediction_noise.covariance_for(problem);
      double mu = o.kind == OptimizerKind::Qhm ? 0.0 : o.momentum;
      out.continuous = stationary::continuous_covariance(problem, c, *o.lr, mu).sigma;
    } catch (const Error&) {
    }
  }
  return out;
}

struct Simulation {
  dynamics::EnsembleStats stats;
  long n_steps = 0;
  std::string error;
};

Simulation simulate_point(const Context& ctx, const Json& cfg, const Point& p, const Prediction& pred,
                          std::uint64_t seed) {
  Simulation out;
  const QuadraticProblem& problem = *p.problem;
  OptimizerSpec opt = p.optimizer;
  std::unique_ptr<dynamics::NoiseSource> owned;
  std::optional<regression::MinibatchNoise> minibatch;
  const dynamics::NoiseSource* source = nullptr;
  try {
    const bool state = p.prediction_noise.depends_on_state() ||
                       (scalar_second_order(opt) && p.prediction_noise.kind == NoiseKind::Minibatch);
    if ((scalar_second_order(opt) || state) && !pred.discrete) {
      throw InstabilityError("no stationary prediction to freeze the preconditioner/noise at");
    }
    if (scalar_second_order(opt)) {
      SymMatrix c = stationary::noise_covariance_at(problem, opt, p.prediction_noise, pred.discrete->sigma);
      opt = OptimizerSpec::preconditioned(
          opt.kind,
          stationary::idealized_preconditioner(problem, opt.kind, *opt.lr, pred.discrete->sigma, c),
          opt.momentum);
    }
    if (p.noise.regression) {
      minibatch.emplace(*p.data, p.noise.batch);
      source = &*minibatch;
    } else if (state) {
      owned = std::make_unique<dynamics::NoiseSampler>(stationary::noise_covariance_at(
          problem, p.optimizer, p.prediction_noise, pred.discrete->sigma));
      source = owned.get();
    } else {
      owned = std::make_unique<dynamics::NoiseSampler>(p.noise.spec, problem);
      source = owned.get();
    }
    dynamics::EnsembleOptions eo;
    eo.n_chains = cfg.value("n_chains", std::size_t{10000});
    const Json steps = cfg.value("n_steps", Json("auto"));
    eo.n_steps = steps.is_string() ? dynamics::default_steps(problem, opt) : steps.get<long>();
    eo.master_seed = seed;
    eo.threads = ctx.threads;
    eo.throw_on_empty = false;
    out.n_steps = eo.n_steps;
    out.stats = dynamics::run_ensemble(problem, opt, *source, eo).stats;
  } catch (const Error& e) {
    out.error = e.what();
    out.stats.valid = false;
    out.stats.n_chains = cfg.value("n_chains", std::size_t{10000});
  }
  return out;
}

std::string series_label(const NoiseEntry& n, std::size_t n_series) {
  return n_series > 1 || !n.label.empty() ? n.label : "default";
}

void note_error(Json& errors, const std::string& label, double x, const std::string& what) {
  if (what.empty()) return;
  errors.push_back({{"series", label}, {"sweep_value", x}, {"error", what}});
}

RunResult run_quadratic(const Context& ctx) {
  RunResult res;
  res.experiment = ctx.experiment;
  const bool predicts = ctx.experiment != Experiment::Simulate;
  const bool sims = ctx.experiment != Experiment::Predict;
  const auto noises = detail::noise_list(ctx.config);
  const Index d = detail::problem_hessian(ctx.config).dim();

  Table& t = res.table;
  t.columns = {"sweep_value"};
  if (predicts) {
    for (auto& c : matrix_columns("pred", d)) t.columns.push_back(c);
    for (auto& c : matrix_columns("cont", d)) t.columns.push_back(c);
  }
  if (sims) {
    for (auto& c : matrix_columns("emp", d)) t.columns.push_back(c);
  }
  if (predicts && sims) {
    t.columns.push_back("rel_error");
    t.columns.push_back("cont_rel_error");
    for (Index i = 0; i < d; ++i) t.columns.push_back("diag_rel_error_" + std::to_string(i));
  }
  if (predicts) {
    t.columns.insert(t.columns.end(), {"train_error", "cont_train_error", "margin", "stable"});
  }
  if (sims) {
    t.columns.insert(t.columns.end(), {"emp_train_error", "n_diverged", "n_chains", "n_steps"});
  }

  Json errors = Json::array();
  for (std::size_t s = 0; s < noises.size(); ++s) {
    for (std::size_t g = 0; g < std::max<std::size_t>(1, ctx.grid.size()); ++g) {
      const Json cfg = at(ctx, g);
      const Json nj = detail::noise_list(cfg)[s];
      Point p = make_point(cfg, nj);
      const std::string label = series_label(p.noise, noises.size());
      const double x = sweep_value(ctx, g);
      const QuadraticProblem& problem = *p.problem;
      Prediction pred = predict_point(p);
      note_error(errors, label, x, pred.error);

      std::vector<double> row{x};
      const SymMatrix* ps = pred.discrete ? &pred.discrete->sigma : nullptr;
      const SymMatrix* cs = pred.continuous ? &*pred.continuous : nullptr;
      if (predicts) {
        append(row, flatten(ps, d));
        append(row, flatten(cs, d));
      }
      Simulation sim;
      if (sims) {
        sim = simulate_point(ctx, cfg, p, pred, point_seed(ctx, s, g));
        note_error(errors, label, x, sim.error);
        append(row, flatten(sim.stats.valid ? &sim.stats.empirical_cov : nullptr, d));
      }
      if (predicts && sims) {
        auto pv = flatten(ps, d), cv = flatten(cs, d);
        auto ev = flatten(sim.stats.valid ? &sim.stats.empirical_cov : nullptr, d);
        row.push_back(relative_error(pv, ev));
        row.push_back(relative_error(cv, ev));
        for (Index i = 0; i < d; ++i) {
          auto k = static_cast<std::size_t>(i * d + i);
          row.push_back(relative_error({pv[k]}, {ev[k]}));
        }
      }
      if (predicts) {
        row.push_back(ps ? pred.discrete->train_error : kNan);
        row.push_back(cs ? stationary::half_trace(problem.hessian(), *cs) : kNan);
        row.push_back(pred.margin);
        row.push_back(ps && pred.discrete->stable ? 1.0 : 0.0);
      }
      if (sims) {
        row.push_back(sim.stats.valid ? stationary::half_trace(problem.hessian(), sim.stats.empirical_cov)
                                      : kNan);
        row.push_back(static_cast<double>(sim.stats.n_diverged));
        row.push_back(static_cast<double>(sim.stats.n_chains));
        row.push_back(static_cast<double>(sim.n_steps));
      }
      t.add_row(label, std::move(row));
    }
  }
  res.summary["point_errors"] = errors;
  return res;
}

RunResult run_escape(const Context& ctx) {
  RunResult res;
  res.experiment = ctx.experiment;
  Table& t = res.table;
  t.columns = {"sweep_value", "lr", "t", "predicted", "continuous", "empirical", "std_error",
               "rel_error", "discrete_minus_continuous"};
  const auto noises = detail::noise_list(ctx.config);
  for (std::size_t s = 0; s < noises.size(); ++s) {
    for (std::size_t g = 0; g < std::max<std::size_t>(1, ctx.grid.size()); ++g) {
      const Json cfg = at(ctx, g);
      SymMatrix k = detail::problem_hessian(cfg);
      QuadraticProblem problem(k);
      auto noise = detail::parse_noise(detail::noise_list(cfg)[s], k.dim());
      if (noise.regression) throw ConfigError("escape: regression noise is not supported");
      SymMatrix c = noise.spec.covariance_for(problem);
      const Json esc = cfg.value("escape", Json::object());
      double lr = esc.contains("lr") ? esc["lr"].get<double>()
                                     : cfg.at("optimizer").at("lr").get<double>();
      long t_max = esc.value("t_max", 50L);
      auto n_runs = esc.value("n_runs", std::size_t{50000});
      const std::string label = series_label(noise, noises.size());
      auto curve = dynamics::escape_efficiency_empirical(problem, c, lr, t_max, n_runs,
                                                         point_seed(ctx, s, g), ctx.threads);
      // t = 0 is identically zero and carries no relative error.
      for (std::size_t i = 1; i < curve.t.size(); ++i) {
        double ed = applications::escape_efficiency_discrete(k, c, lr, curve.t[i]);
        double ec = applications::escape_efficiency_continuous(k, c, lr, static_cast<double>(curve.t[i]));
        t.add_row(label, {sweep_value(ctx, g), lr, static_cast<double>(curve.t[i]), ed, ec,
                          curve.mean[i], curve.std_error[i], relative_error({ed}, {curve.mean[i]}),
                          ed - ec});
      }
    }
  }
  return res;
}

RunResult run_kramers(const Context& ctx) {
  RunResult res;
  res.experiment = ctx.experiment;
  Table& t = res.table;
  t.columns = {"sweep_value", "r",           "measured_rate",      "rate_std_error",
               "measured_over_kb", "discrete_over_kb", "continuous_over_kb", "fitted_over_kb",
               "mean_passage", "n_escaped", "n_censored"};
  std::vector<double> pred, meas;
  std::vector<std::size_t> fit_rows;
  for (std::size_t g = 0; g < std::max<std::size_t>(1, ctx.grid.size()); ++g) {
    const Json cfg = at(ctx, g);
    const Json kc = cfg.value("kramers", Json::object());
    double r = kc.value("r", 1.0);
    applications::KramersSetting base;
    base.k_a = dynamics::DoubleWell::kCurvatureMin;
    base.k_b = dynamics::DoubleWell::kCurvatureBarrier;
    base.delta_l = dynamics::DoubleWell::kBarrierHeight;
    base.lr = kc.value("lr", 0.1);
    base.batch = kc.value("batch", 1.0);
    base.midpoint = kc.value("midpoint", 0.5);
    auto s = base.rescaled(r);
    auto m = dynamics::double_well_escape_experiment(
        r, s.lr, s.batch, kc.value("n_runs", std::size_t{4000}), kc.value("t_limit", 1000000L),
        point_seed(ctx, 0, g), ctx.threads);
    double kb = std::abs(s.k_b);
    double gd = applications::kramers_rate_discrete(s);
    double gc = applications::kramers_rate_continuous(s);
    if (m.n_escaped > 0) {
      pred.push_back(gd);
      meas.push_back(m.rate);
      fit_rows.push_back(t.rows.size());
    }
    t.add_row("double_well", {sweep_value(ctx, g), r, m.n_escaped ? m.rate : kNan,
                              m.n_escaped ? m.rate_std_error : kNan, m.n_escaped ? m.rate / kb : kNan,
                              gd / kb, gc / kb, kNan, m.n_escaped ? m.mean_passage : kNan,
                              static_cast<double>(m.n_escaped), static_cast<double>(m.n_censored)});
  }
  Json fit = Json::object();
  if (pred.size() >= 2) {
    auto f = applications::fit_log_constant(pred, meas);
    std::size_t col = t.column("fitted_over_kb");
    for (std::size_t i = 0; i < fit_rows.size(); ++i) {
      auto& row = t.rows[fit_rows[i]];
      row[col] = f.constant * row[t.column("discrete_over_kb")];
    }
    fit = {{"constant", f.constant},
           {"log_constant", f.log_constant},
           {"pearson", f.pearson},
           {"rms_log_error", f.rms_log_error},
           {"n_points", pred.size()}};
  }
  res.summary["fit"] = fit;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& row : t.rows) {
    lo = std::min(lo, row[t.column("continuous_over_kb")]);
    hi = std::max(hi, row[t.column("continuous_over_kb")]);
  }
  res.summary["continuous_relative_spread"] = hi > 0 ? (hi - lo) / hi : 0.0;
  return res;
}

RunResult run_bayes(const Context& ctx) {
  RunResult res;
  res.experiment = ctx.experiment;
  Table& t = res.table;
  t.columns = {"sweep_value", "lr_star", "small_lr_approximation", "approximation_gap",
               "relative_residual", "n_roots", "kl", "dkl_below", "dkl_above"};
  Json errors = Json::array();
  for (std::size_t g = 0; g < std::max<std::size_t>(1, ctx.grid.size()); ++g) {
    const Json cfg = at(ctx, g);
    const Json b = cfg.value("bayes", Json::object());
    applications::BayesSetting s{detail::problem_hessian(cfg), b.value("n_data", 1000L),
                                 b.value("batch", 10L)};
    try {
      auto o = applications::optimal_bayes_lr(s);
      const double h = 1e-5 * o.lr;
      auto dkl = [&](double lr) {
        double n = static_cast<double>(s.n_data);
        return (applications::kl_divergence(applications::bayes_covariance(s, lr + h), s.hessian, n) -
                applications::kl_divergence(applications::bayes_covariance(s, lr - h), s.hessian, n)) /
               (2.0 * h);
      };
      t.add_row("bayes", {sweep_value(ctx, g), o.lr, o.small_lr_approximation,
                          std::abs(o.lr - o.small_lr_approximation) / o.small_lr_approximation,
                          o.relative_residual, static_cast<double>(o.n_roots), o.kl,
                          dkl(o.lr * 0.99), dkl(o.lr * 1.01)});
    } catch (const Error& e) {
      note_error(errors, "bayes", sweep_value(ctx, g), e.what());
      t.add_row("bayes", {sweep_value(ctx, g), kNan, kNan, kNan, kNan, 0.0, kNan, kNan, kNan});
    }
  }
  res.summary["point_errors"] = errors;
  return res;
}

RunResult run_stability(const Context& ctx) {
  RunResult res;
  res.experiment = ctx.experiment;
  Table& t = res.table;
  t.columns = {"sweep_value", "margin", "stable", "spectral_radius", "boundary_momentum", "regime"};
  for (std::size_t g = 0; g < std::max<std::size_t>(1, ctx.grid.size()); ++g) {
    const Json cfg = at(ctx, g);
    SymMatrix k = detail::problem_hessian(cfg);
    QuadraticProblem problem(k);
    OptimizerSpec o = detail::parse_optimizer(cfg.at("optimizer"), k.dim());
    double margin = kNan, rho = kNan, boundary = kNan, regime = kNan;
    if (scalar_second_order(o)) throw ConfigError("stability: ngd/adam need an explicit preconditioner");
    margin = stability_margin(problem, o, std::nullopt, NoiseSpec{});
    rho = linalg::spectral_radius(dynamics::transition_matrix(problem, dynamics::update_rule(problem, o)));
    if (o.lr && o.kind != OptimizerKind::Qhm && o.kind != OptimizerKind::Dnm) {
      boundary = (*o.lr * problem.max_curvature() - 2.0) / 2.0;
      if (k.dim() == 1 && o.momentum == 0.0) {
        regime = static_cast<double>(stationary::classify_regime_1d(k(0, 0), *o.lr));
      }
    }
    t.add_row(to_string(o.kind), {sweep_value(ctx, g), margin, margin > 0.0 ? 1.0 : 0.0, rho,
                                  boundary, regime});
  }
  return res;
}

RunResult run_ratio(const Context& ctx) {
  RunResult res;
  res.experiment = ctx.experiment;
  Table& t = res.table;
  t.columns = {"sweep_value", "dim", "ratio", "bound", "a", "overlap", "trace_k", "ratio_over_dim",
               "degenerate"};
  for (std::size_t g = 0; g < std::max<std::size_t>(1, ctx.grid.size()); ++g) {
    const Json cfg = at(ctx, g);
    const Json q = cfg.value("ratio", Json::object());
    long dim = q.value("dim", 100L);
    auto h = applications::make_ill_conditioned_hessian(dim, q.value("d", 1.0), q.value("l", 2L),
                                                        q.value("k1", 1.0));
    std::string noise = q.value("noise", std::string("aligned"));
    SymMatrix c = noise == "isotropic" ? SymMatrix::identity(dim) : h.hessian;
    double ratio = applications::efficiency_ratio(h.hessian, c);
    auto b = applications::alignment_bound(h.hessian, c);
    t.add_row(noise, {sweep_value(ctx, g), static_cast<double>(dim), ratio, b.bound, b.a, b.overlap,
                      h.hessian.trace(), ratio / static_cast<double>(dim), h.degenerate ? 1.0 : 0.0});
  }
  return res;
}

}  // namespace

RunResult run_experiment(const Json& config, const RunOptions& options) {
  auto e = parse_experiment(config.value("experiment", std::string()));
  if (!e) throw ConfigError("experiment: missing or unknown");
  return run_experiment(config, *e, options);
}

RunResult run_experiment(const Json& config, Experiment experiment, const RunOptions& options) {
  Json cfg = config;
  cfg["experiment"] = to_string(experiment);
  auto violations = validate_config(cfg);
  if (!violations.empty()) {
    std::string msg = "invalid config:";
    for (auto& v : violations) msg += "\n  " + v;
    throw ConfigError(msg);
  }
  Context ctx;
  ctx.config = cfg;
  ctx.experiment = experiment;
  ctx.seed = options.seed ? *options.seed : cfg.value("master_seed", std::uint64_t{0});
  ctx.threads = dynamics::resolve_threads(options.threads);
  if (cfg.contains("sweep")) {
    ctx.parameter = cfg["sweep"]["parameter"].get<std::string>();
    ctx.grid = cfg["sweep"]["grid"].get<std::vector<double>>();
  }
  RunResult res;
  switch (experiment) {
    case Experiment::Predict:
    case Experiment::Simulate:
    case Experiment::Compare: res = run_quadratic(ctx); break;
    case Experiment::Escape: res = run_escape(ctx); break;
    case Experiment::Kramers: res = run_kramers(ctx); break;
    case Experiment::BayesLr: res = run_bayes(ctx); break;
    case Experiment::Stability: res = run_stability(ctx); break;
    case Experiment::Ratio: res = run_ratio(ctx); break;
  }
  res.summary["schema_version"] = kSchemaVersion;
  res.summary["name"] = cfg.value("name", std::string("experiment"));
  res.summary["experiment"] = to_string(experiment);
  res.summary["master_seed"] = ctx.seed;
  res.summary["sweep_parameter"] = ctx.parameter;
  res.summary["n_rows"] = res.table.rows.size();
  res.summary["columns"] = res.table.columns;
  if (cfg.contains("checks")) {
    res.checks = evaluate_checks(cfg["checks"], res.table, res.summary);
  }
  return res;
}

}  // namespace sgdstat::cli
