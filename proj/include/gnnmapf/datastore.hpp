#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gnnmapf/cbs.hpp"
#include "gnnmapf/executor.hpp"
#include "gnnmapf/grid.hpp"
#include "gnnmapf/policy.hpp"

namespace gnnmapf {

inline constexpr const char* kSchemaVersion = "gnnmapf/1";

// Deterministic solver metadata. Wall-clock runtime is deliberately absent
// so that rebuilt pools are byte-identical.
struct SolverInfo {
  double timeout_s = 0.0;
  bool timed_out = false;
  bool infeasible = false;
  std::uint64_t nodes_expanded = 0;

  friend bool operator==(const SolverInfo&, const SolverInfo&) = default;
};

struct CaseRecord {
  std::string id;  // "<map id>/caseNNNN"
  Case problem;
  std::optional<Plan> plan;
  SolverInfo solver;

  friend bool operator==(const CaseRecord&, const CaseRecord&) = default;
};

// One team snapshot along an expert trajectory. Observations and the GSO are
// rebuilt from positions on load.
struct SampleRecord {
  std::string case_id;
  std::string map_id;
  int t = 0;
  std::vector<Cell> positions;
  std::vector<Cell> goals;
  std::vector<Action> labels;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

// Map lookup by id.
class MapPool {
 public:
  MapPool() = default;
  explicit MapPool(std::vector<GridMap> maps);
  const GridMap& at(const std::string& id) const;
  const std::vector<GridMap>& maps() const noexcept { return maps_; }

 private:
  std::vector<GridMap> maps_;
  std::vector<std::pair<std::string, std::size_t>> index_;  // sorted by id
};

std::string map_id(std::size_t index);
std::string case_id(const std::string& map, std::size_t index);

struct BuildConfig {
  int width = 20;
  int height = 20;
  double density = 0.1;
  int maps = 1;
  int cases_per_map = 50;
  int robots = 10;
  std::uint64_t seed = 0;
  double expert_timeout_s = 300.0;
  std::size_t workers = 1;
};

struct BuildResult {
  std::vector<GridMap> maps;
  std::vector<CaseRecord> cases;  // solved cases only, in (map, case) order
  std::size_t attempted = 0;
  std::size_t dropped_timeout = 0;
  std::size_t dropped_infeasible = 0;
  std::size_t dropped_duplicate = 0;
  std::size_t generation_failures = 0;
  std::vector<std::string> log;

  std::size_t dropped() const noexcept {
    return dropped_timeout + dropped_infeasible + dropped_duplicate + generation_failures;
  }
};

// generate_map -> generate_case -> cbs_solve for every (map, case) slot.
// Per-item failures are counted and logged, never thrown.
BuildResult build_dataset(const BuildConfig& config);

// The stages of build_dataset. Maps get ids map0000, map0001, ...
std::vector<GridMap> generate_maps(const BuildConfig& config);
// Unsolved records for cases_per_map slots per map; duplicates and failed
// draws are counted in `stats` and left out.
std::vector<CaseRecord> generate_cases(std::span<const GridMap> maps, const BuildConfig& config,
                                       BuildResult& stats);
// Solved records only; timeouts and infeasible cases are counted in `stats`.
std::vector<CaseRecord> solve_cases(std::span<const CaseRecord> cases, const MapPool& maps,
                                    const BuildConfig& config, BuildResult& stats);

// Solves a case and fills plan and solver metadata; failures are recorded in
// the metadata instead of thrown.
CaseRecord solve_case(const GridMap& map, std::string id, Case problem, double timeout_s);

// One sample per timestep t in [0, makespan) of every solved case.
std::vector<SampleRecord> expand_samples(std::span<const CaseRecord> pool);
std::vector<SampleRecord> expand_samples(const std::string& case_id, const Case& problem,
                                         const Plan& plan);

// --- files --------------------------------------------------------------
// JSON-lines files carry {"schema", "kind", "config"} on line 1 and one record
// per following line. The config object is echoed from the producing run.

template <typename T>
struct Loaded {
  nlohmann::json config;
  std::vector<T> records;
};

void save_maps(const std::filesystem::path& path, std::span<const GridMap> maps,
               const nlohmann::json& config);
Loaded<GridMap> load_maps(const std::filesystem::path& path);

void save_cases(const std::filesystem::path& path, std::span<const CaseRecord> cases,
                const nlohmann::json& config);
Loaded<CaseRecord> load_cases(const std::filesystem::path& path);

void save_samples(const std::filesystem::path& path, std::span<const SampleRecord> samples,
                  const nlohmann::json& config);
Loaded<SampleRecord> load_samples(const std::filesystem::path& path);

nlohmann::json map_to_json(const GridMap& map);
GridMap map_from_json(const nlohmann::json& j);
nlohmann::json case_to_json(const CaseRecord& record);
CaseRecord case_from_json(const nlohmann::json& j);
nlohmann::json sample_to_json(const SampleRecord& sample);
SampleRecord sample_from_json(const nlohmann::json& j);
nlohmann::json plan_to_json(const Plan& plan);
Plan plan_from_json(const nlohmann::json& j);
nlohmann::json arch_to_json(const PolicyArch& arch);
PolicyArch arch_from_json(const nlohmann::json& j);

// Single JSON documents: {"schema", "kind", "config", ...payload}.
void save_json_document(const std::filesystem::path& path, const std::string& kind,
                        const nlohmann::json& config, nlohmann::json payload);
nlohmann::json load_json_document(const std::filesystem::path& path, const std::string& kind);

void save_model(const std::filesystem::path& path, const PolicyParams& params,
                const nlohmann::json& config);
PolicyParams load_model(const std::filesystem::path& path, nlohmann::json* config = nullptr);

void save_trace(const std::filesystem::path& path, const Trajectory& trajectory,
                const nlohmann::json& config);
Trajectory load_trace(const std::filesystem::path& path, nlohmann::json* config = nullptr);

// report.csv: one row of metrics, the config echoed as a JSON column.
// hist.csv: robots_at_goal,case_count,proportion, after a "# {schema, config}" comment line.
void save_report(const std::filesystem::path& path, const std::string& label,
                 const MetricsReport& report, const nlohmann::json& config);
void save_histogram(const std::filesystem::path& path, const MetricsReport& report,
                    const nlohmann::json& config);

// "# {"config":..., "schema":...}" provenance line for CSV outputs.
std::string csv_provenance(const nlohmann::json& config);

// Writes `text` atomically enough for single-writer use (temp file + rename).
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

// Quotes a field for CSV when needed.
std::string csv_escape(const std::string& field);

}  // namespace gnnmapf
