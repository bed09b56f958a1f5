#include <filesystem>
#include <fstream>
#include <ostream>

#include "CLI11.hpp"
#include "sgdstat/cli.hpp"
#include "sgdstat/errors.hpp"
#include "sgdstat/kernels.hpp"

namespace sgdstat::cli {

namespace {

struct Args {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 0;
  bool check = false;
};

Json resolve_config(const Args& a) {
  if (!a.config.empty() && !a.preset.empty()) throw ConfigError("give either --config or --preset, not both");
  if (!a.config.empty()) return load_config_file(a.config);
  if (!a.preset.empty()) return load_preset(a.preset);
  throw ConfigError("one of --config or --preset is required");
}

void write_outputs(const RunResult& r, const Json& config, const Args& a, std::ostream& out) {
  std::string dir = a.out.empty() ? config.value("output_dir", std::string("out")) : a.out;
  std::filesystem::create_directories(dir);
  const std::string name = config.value("name", std::string("experiment"));
  const std::string csv_path = dir + "/" + name + ".csv";
  const std::string json_path = dir + "/" + name + ".json";
  {
    std::ofstream f(csv_path);
    if (!f) throw ConfigError("cannot write " + csv_path);
    write_csv(r.table, f);
  }
  Json summary = r.summary;
  summary["csv"] = csv_path;
  summary["config"] = config;
  summary["isa"] = kernels::to_string(kernels::best_isa());
  Json checks = Json::array();
  for (const auto& c : r.checks) {
    checks.push_back({{"description", c.description}, {"passed", c.passed}, {"detail", c.detail}});
  }
  summary["checks"] = checks;
  {
    std::ofstream f(json_path);
    if (!f) throw ConfigError("cannot write " + json_path);
    f << summary.dump(2) << '\n';
  }
  out << "wrote " << csv_path << " and " << json_path << '\n';
}

int execute(Experiment e, const Args& a, std::ostream& out, std::ostream& err) {
  Json config = resolve_config(a);
  if (a.check) {
    auto declared = parse_experiment(config.value("experiment", std::string()));
    if (declared && *declared != e) {
      err << "--check needs the config's own experiment (" << to_string(*declared) << ")\n";
      return kExitUsage;
    }
    if (!config.contains("checks") || config["checks"].empty()) {
      err << "--check: config has no checks\n";
      return kExitUsage;
    }
  }
  RunOptions opts;
  opts.seed = a.seed;
  opts.threads = a.threads;
  RunResult r = run_experiment(config, e, opts);
  if (a.seed) config["master_seed"] = *a.seed;
  write_outputs(r, config, a, out);
  if (r.summary.contains("point_errors")) {
    for (const auto& pe : r.summary["point_errors"]) {
      err << "note: " << pe["series"].get<std::string>() << " at " << pe["sweep_value"].dump()
          << ": " << pe["error"].get<std::string>() << '\n';
    }
  }
  if (!a.check) return kExitOk;
  bool ok = true;
  for (const auto& c : r.checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.description << " [" << c.detail << "]\n";
    ok = ok && c.passed;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

int validate(const Args& a, std::ostream& out, std::ostream& err) {
  Json config;
  try {
    config = resolve_config(a);
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return kExitUsage;
  }
  auto v = validate_config(config);
  if (v.empty()) {
    out << "ok\n";
    return kExitOk;
  }
  for (const auto& line : v) out << line << '\n';
  return kExitUsage;
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Exact stationary fluctuations of discrete-time SGD and its variants"};
  app.require_subcommand(1);
  Args a;
  struct Sub {
    const char* name;
    const char* help;
    std::optional<Experiment> experiment;
  };
  const Sub subs[] = {
      {"predict", "Stationary covariance predictions over the sweep", Experiment::Predict},
      {"simulate", "Monte Carlo ensembles over the sweep", Experiment::Simulate},
      {"compare", "Predictions next to ensembles with relative errors", Experiment::Compare},
      {"escape", "Escape efficiency curves E(t)", Experiment::Escape},
      {"kramers", "Double-well escape rates against Kramers predictions", Experiment::Kramers},
      {"bayes-lr", "KL-optimal learning rate under minibatch noise", Experiment::BayesLr},
      {"stability", "Stability margins and spectral radii", Experiment::Stability},
      {"ratio", "Anisotropic/isotropic escape efficiency ratio", Experiment::Ratio},
      {"validate", "Check a config against the schema", std::nullopt},
  };
  std::vector<std::pair<CLI::App*, std::optional<Experiment>>> commands;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", a.config, "JSON config file");
    sub->add_option("--preset", a.preset, "Preset name (" + std::string("see presets/") + ")");
    if (s.experiment) {
      sub->add_option("--seed", a.seed, "Override master_seed");
      sub->add_option("--out", a.out, "Output directory");
      sub->add_option("--threads", a.threads, "Worker threads (0: all cores)");
      sub->add_flag("--check", a.check, "Evaluate the config's acceptance checks; exit 1 on failure");
    }
    commands.emplace_back(sub, s.experiment);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, x;
    int code = app.exit(e, o, x);
    out << o.str();
    err << x.str();
    return code == 0 ? kExitOk : kExitUsage;
  }
  try {
    for (auto& [sub, exp] : commands) {
      if (!sub->parsed()) continue;
      if (!exp) return validate(a, out, err);
      return execute(*exp, a, out, err);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace sgdstat::cli
