#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "gnnmapf/datastore.hpp"
#include "gnnmapf/policy.hpp"
#include "gnnmapf/training.hpp"

namespace gnnmapf {

// Every tunable of a run. Resolved once (defaults, then config file, then
// flags) and echoed into each artifact.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  // world
  int width = 20;
  int height = 20;
  double density = 0.1;
  int robots = 10;
  int maps = 1;
  int cases_per_map = 50;
  double timeout_s = 300.0;
  int fov_radius = 4;
  double comm_radius = 5.0;

  // model
  int k = 3;
  int gnn_layers = 1;

  // training
  int epochs = 150;
  double lr = 1e-3;
  double lr_min = 1e-6;
  int batch = 64;
  double l2 = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int oe_interval = 4;
  int oe_cases = 500;
  std::array<double, 3> split{0.70, 0.15, 0.15};

  // execution
  std::string select = "greedy";  // greedy | sample

  nlohmann::json to_json() const;
  // Overrides the fields present in `j`; unknown keys raise ConfigError.
  void merge(const nlohmann::json& j);
  // Throws ConfigError on out-of-range values.
  void validate() const;

  TrainConfig train_config() const;
  BuildConfig build_config() const;
  PolicyArch arch() const;
  SelectMode select_mode() const;
};

// Reads a JSON object from disk and merges it into `config`.
void merge_config_file(RunConfig& config, const std::filesystem::path& path);

// Path named by GNNMAPF_CONFIG, if set and non-empty.
std::optional<std::filesystem::path> default_config_path();

}  // namespace gnnmapf
