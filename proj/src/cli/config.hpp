#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sgdstat/cli.hpp"
#include "sgdstat/problem.hpp"
#include "sgdstat/regression.hpp"

namespace sgdstat::cli::detail {

// A noise entry of the config: either a NoiseSpec or a regression dataset.
struct NoiseEntry {
  std::string label;
  bool regression = false;
  NoiseSpec spec;
  long n_data = 0;
  long batch = 0;
  double label_noise_sd = 1.0;
  Vector w_star;
  std::uint64_t data_seed = 0;
};

SymMatrix parse_matrix(const Json& j, const std::string& path);
SymMatrix problem_hessian(const Json& config);
OptimizerSpec parse_optimizer(const Json& j, Index dim);
NoiseEntry parse_noise(const Json& j, Index dim);
std::vector<Json> noise_list(const Json& config);

// Copy of config with the dotted path set to value.
Json with_value(const Json& config, const std::string& path, double value);
const std::vector<std::string>& sweepable_paths();

}  // namespace sgdstat::cli::detail
