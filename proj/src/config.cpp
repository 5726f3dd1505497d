#include "gnnmapf/config.hpp"

#include <cstdlib>

#include "gnnmapf/error.hpp"

namespace gnnmapf {

using nlohmann::json;

json RunConfig::to_json() const {
  return {{"seed", seed},
          {"workers", workers},
          {"width", width},
          {"height", height},
          {"density", density},
          {"robots", robots},
          {"maps", maps},
          {"cases_per_map", cases_per_map},
          {"timeout_s", timeout_s},
          {"fov_radius", fov_radius},
          {"comm_radius", comm_radius},
          {"k", k},
          {"gnn_layers", gnn_layers},
          {"epochs", epochs},
          {"lr", lr},
          {"lr_min", lr_min},
          {"batch", batch},
          {"l2", l2},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"oe_interval", oe_interval},
          {"oe_cases", oe_cases},
          {"split", split},
          {"select", select}};
}

namespace {
template <typename T>
void take(const json& j, const char* key, T& dst) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    dst = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}
}  // namespace

void RunConfig::merge(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const json known = to_json();
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  take(j, "seed", seed);
  take(j, "workers", workers);
  take(j, "width", width);
  take(j, "height", height);
  take(j, "density", density);
  take(j, "robots", robots);
  take(j, "maps", maps);
  take(j, "cases_per_map", cases_per_map);
  take(j, "timeout_s", timeout_s);
  take(j, "fov_radius", fov_radius);
  take(j, "comm_radius", comm_radius);
  take(j, "k", k);
  take(j, "gnn_layers", gnn_layers);
  take(j, "epochs", epochs);
  take(j, "lr", lr);
  take(j, "lr_min", lr_min);
  take(j, "batch", batch);
  take(j, "l2", l2);
  take(j, "beta1", beta1);
  take(j, "beta2", beta2);
  take(j, "adam_eps", adam_eps);
  take(j, "oe_interval", oe_interval);
  take(j, "oe_cases", oe_cases);
  take(j, "split", split);
  take(j, "select", select);
}

void RunConfig::validate() const {
  if (width < 2 || height < 2) throw ConfigError("width and height must be >= 2");
  if (!(density >= 0.0 && density < 1.0)) throw ConfigError("density must lie in [0, 1)");
  if (robots < 1) throw ConfigError("robots must be >= 1");
  if (maps < 0 || cases_per_map < 0) throw ConfigError("maps and cases_per_map must be >= 0");
  if (!(timeout_s > 0.0)) throw ConfigError("timeout_s must be positive");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (select != "greedy" && select != "sample")
    throw ConfigError("select must be 'greedy' or 'sample'");
  validate_arch(arch());
  validate_train_config(train_config());
  double total = 0.0;
  for (double r : split) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("split ratios must lie in [0, 1]");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lr_max = lr;
  t.lr_min = lr_min;
  t.epochs = epochs;
  t.batch_size = batch;
  t.l2 = l2;
  t.beta1 = beta1;
  t.beta2 = beta2;
  t.adam_eps = adam_eps;
  t.oe_interval = oe_interval;
  t.oe_cases = oe_cases;
  t.expert_timeout_s = timeout_s;
  t.comm_radius = comm_radius;
  t.seed = seed;
  t.workers = workers;
  return t;
}

BuildConfig RunConfig::build_config() const {
  BuildConfig b;
  b.width = width;
  b.height = height;
  b.density = density;
  b.maps = maps;
  b.cases_per_map = cases_per_map;
  b.robots = robots;
  b.seed = seed;
  b.expert_timeout_s = timeout_s;
  b.workers = workers;
  return b;
}

PolicyArch RunConfig::arch() const {
  PolicyArch a;
  a.filter_taps = k;
  a.gnn_layers = gnn_layers;
  a.fov_radius = fov_radius;
  return a;
}

SelectMode RunConfig::select_mode() const {
  return select == "sample" ? SelectMode::Sample : SelectMode::Greedy;
}

void merge_config_file(RunConfig& config, const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
  config.merge(j);
}

std::optional<std::filesystem::path> default_config_path() {
  const char* env = std::getenv("GNNMAPF_CONFIG");
  if (env == nullptr || *env == '\0') return std::nullopt;
  return std::filesystem::path(env);
}

}  // namespace gnnmapf
