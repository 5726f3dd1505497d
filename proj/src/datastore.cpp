#include "gnnmapf/datastore.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "gnnmapf/error.hpp"
#include "gnnmapf/parallel.hpp"
#include "gnnmapf/rng.hpp"

namespace gnnmapf {

using nlohmann::json;
namespace fs = std::filesystem;

MapPool::MapPool(std::vector<GridMap> maps) : maps_(std::move(maps)) {
  for (std::size_t i = 0; i < maps_.size(); ++i) index_.emplace_back(maps_[i].id(), i);
  std::sort(index_.begin(), index_.end());
  auto dup = std::adjacent_find(index_.begin(), index_.end(),
                                [](const auto& a, const auto& b) { return a.first == b.first; });
  if (dup != index_.end()) throw std::invalid_argument("duplicate map id '" + dup->first + "'");
}

const GridMap& MapPool::at(const std::string& id) const {
  auto it = std::lower_bound(index_.begin(), index_.end(), std::make_pair(id, std::size_t{0}));
  if (it == index_.end() || it->first != id) throw std::out_of_range("unknown map id '" + id + "'");
  return maps_[it->second];
}

namespace {

std::string numbered(const char* prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04zu", prefix, index);
  return buf;
}

}  // namespace

std::string map_id(std::size_t index) { return numbered("map", index); }
std::string case_id(const std::string& map, std::size_t index) {
  return map + "/" + numbered("case", index);
}

CaseRecord solve_case(const GridMap& map, std::string id, Case problem, double timeout_s) {
  CaseRecord rec{std::move(id), std::move(problem), std::nullopt, SolverInfo{}};
  rec.solver.timeout_s = timeout_s;
  CbsStats stats;
  try {
    rec.plan = cbs_solve(map, rec.problem, timeout_s, &stats);
  } catch (const Timeout&) {
    rec.solver.timed_out = true;
  } catch (const Infeasible&) {
    rec.solver.infeasible = true;
  }
  rec.solver.nodes_expanded = stats.nodes_expanded;
  return rec;
}

std::vector<GridMap> generate_maps(const BuildConfig& config) {
  if (config.maps < 0) throw ConfigError("map count must be non-negative");
  std::vector<GridMap> maps;
  for (int m = 0; m < config.maps; ++m) {
    GridMap map = generate_map(config.width, config.height, config.density,
                               derive_seed(config.seed, 0, static_cast<std::uint64_t>(m)));
    map.set_id(map_id(static_cast<std::size_t>(m)));
    maps.push_back(std::move(map));
  }
  return maps;
}

std::vector<CaseRecord> generate_cases(std::span<const GridMap> maps, const BuildConfig& config,
                                       BuildResult& stats) {
  if (config.cases_per_map < 0 || config.robots < 1)
    throw ConfigError("cases per map must be non-negative and robots positive");
  const auto per_map = static_cast<std::size_t>(config.cases_per_map);
  const std::size_t slots = maps.size() * per_map;
  stats.attempted += slots;
  std::vector<std::optional<Case>> generated(slots);
  std::vector<std::string> gen_error(slots);
  parallel_for(slots, config.workers, [&](std::size_t s) {
    const std::size_t m = s / per_map;
    const std::size_t k = s % per_map;
    try {
      Case c = generate_case(maps[m], config.robots, derive_seed(config.seed, 1 + m, k));
      c.map_id = maps[m].id();
      generated[s] = std::move(c);
    } catch (const InfeasibleCase& e) {
      gen_error[s] = e.what();
    }
  });

  std::vector<CaseRecord> out;
  std::vector<std::set<std::pair<std::vector<Cell>, std::vector<Cell>>>> seen(maps.size());
  for (std::size_t s = 0; s < slots; ++s) {
    std::string id = case_id(maps[s / per_map].id(), s % per_map);
    if (!generated[s]) {
      ++stats.generation_failures;
      stats.log.push_back(id + ": generation failed: " + gen_error[s]);
      continue;
    }
    if (!seen[s / per_map].emplace(generated[s]->starts, generated[s]->goals).second) {
      ++stats.dropped_duplicate;
      stats.log.push_back(id + ": duplicate of an earlier case");
      continue;
    }
    out.push_back(CaseRecord{std::move(id), std::move(*generated[s]), std::nullopt, SolverInfo{}});
  }
  return out;
}

std::vector<CaseRecord> solve_cases(std::span<const CaseRecord> cases, const MapPool& maps,
                                    const BuildConfig& config, BuildResult& stats) {
  std::vector<CaseRecord> solved(cases.size());
  parallel_for(cases.size(), config.workers, [&](std::size_t u) {
    solved[u] = solve_case(maps.at(cases[u].problem.map_id), cases[u].id, cases[u].problem,
                           config.expert_timeout_s);
  });
  std::vector<CaseRecord> out;
  for (CaseRecord& rec : solved) {
    if (rec.solver.timed_out) {
      ++stats.dropped_timeout;
      stats.log.push_back(rec.id + ": expert timeout");
    } else if (rec.solver.infeasible) {
      ++stats.dropped_infeasible;
      stats.log.push_back(rec.id + ": expert found no solution");
    } else {
      out.push_back(std::move(rec));
    }
  }
  return out;
}

BuildResult build_dataset(const BuildConfig& config) {
  BuildResult out;
  out.maps = generate_maps(config);
  const std::vector<CaseRecord> drawn = generate_cases(out.maps, config, out);
  out.cases = solve_cases(drawn, MapPool(out.maps), config, out);
  return out;
}

std::vector<SampleRecord> expand_samples(const std::string& case_id, const Case& problem,
                                         const Plan& plan) {
  const auto labels = plan_to_labels(plan);
  std::vector<SampleRecord> out;
  out.reserve(labels.size());
  for (int t = 0; t < plan.makespan; ++t) {
    SampleRecord s;
    s.case_id = case_id;
    s.map_id = problem.map_id;
    s.t = t;
    s.goals = problem.goals;
    for (std::size_t i = 0; i < plan.paths.size(); ++i) s.positions.push_back(plan.at(i, t));
    s.labels = labels[static_cast<std::size_t>(t)];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SampleRecord> expand_samples(std::span<const CaseRecord> pool) {
  std::vector<SampleRecord> out;
  for (const CaseRecord& rec : pool) {
    if (!rec.plan) throw std::invalid_argument("case '" + rec.id + "' has no expert plan");
    auto samples = expand_samples(rec.id, rec.problem, *rec.plan);
    std::move(samples.begin(), samples.end(), std::back_inserter(out));
  }
  return out;
}

// --- JSON conversion ----------------------------------------------------

namespace {

struct FieldError : std::runtime_error {
  FieldError(std::string f, const std::string& what) : std::runtime_error(what), field(std::move(f)) {}
  std::string field;
};

const json& member(const json& j, const char* name) {
  if (!j.is_object()) throw FieldError(name, "record is not a JSON object");
  auto it = j.find(name);
  if (it == j.end()) throw FieldError(name, "missing");
  return *it;
}

template <typename T>
T field(const json& j, const char* name) {
  const json& v = member(j, name);
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw FieldError(name, e.what());
  }
}

json cell_json(Cell c) { return json::array({c.x, c.y}); }

Cell cell_from(const json& v, const char* name) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
    throw FieldError(name, "expected [x, y] integer pair");
  return {v[0].get<int>(), v[1].get<int>()};
}

json cells_json(std::span<const Cell> cells) {
  json out = json::array();
  for (Cell c : cells) out.push_back(cell_json(c));
  return out;
}

std::vector<Cell> cells_from(const json& j, const char* name) {
  const json& v = member(j, name);
  if (!v.is_array()) throw FieldError(name, "expected a list of cells");
  std::vector<Cell> out;
  out.reserve(v.size());
  for (const json& c : v) out.push_back(cell_from(c, name));
  return out;
}

}  // namespace

json map_to_json(const GridMap& map) {
  const auto obstacles = map.obstacles();
  return {{"id", map.id()},         {"width", map.width()},
          {"height", map.height()}, {"density", map.density()},
          {"seed", map.seed()},     {"obstacles", cells_json(obstacles)}};
}

GridMap map_from_json(const json& j) {
  const int w = field<int>(j, "width");
  const int h = field<int>(j, "height");
  if (w < 1 || h < 1) throw FieldError("width", "map dimensions must be positive");
  const auto obstacles = cells_from(j, "obstacles");
  for (Cell c : obstacles)
    if (c.x < 0 || c.y < 0 || c.x >= w || c.y >= h)
      throw FieldError("obstacles", "obstacle outside the map");
  return GridMap(w, h, obstacles, field<double>(j, "density"), field<std::uint64_t>(j, "seed"),
                 field<std::string>(j, "id"));
}

json plan_to_json(const Plan& plan) {
  json paths = json::array();
  for (const Path& p : plan.paths) paths.push_back(cells_json(p));
  return {{"flowtime", plan.flowtime}, {"makespan", plan.makespan}, {"paths", std::move(paths)}};
}

Plan plan_from_json(const json& j) {
  const json& paths = member(j, "paths");
  if (!paths.is_array()) throw FieldError("paths", "expected a list of paths");
  std::vector<Path> raw;
  for (const json& p : paths) {
    if (!p.is_array() || p.empty()) throw FieldError("paths", "expected a non-empty cell list");
    Path path;
    for (const json& c : p) path.push_back(cell_from(c, "paths"));
    raw.push_back(std::move(path));
  }
  Plan plan = make_plan(std::move(raw));
  if (plan.flowtime != field<int>(j, "flowtime"))
    throw FieldError("flowtime", "does not match the paths");
  if (plan.makespan != field<int>(j, "makespan"))
    throw FieldError("makespan", "does not match the paths");
  return plan;
}

json case_to_json(const CaseRecord& r) {
  return {{"id", r.id},
          {"map_id", r.problem.map_id},
          {"starts", cells_json(r.problem.starts)},
          {"goals", cells_json(r.problem.goals)},
          {"plan", r.plan ? plan_to_json(*r.plan) : json(nullptr)},
          {"solver",
           {{"name", "cbs"},
            {"timeout_s", r.solver.timeout_s},
            {"timed_out", r.solver.timed_out},
            {"infeasible", r.solver.infeasible},
            {"nodes_expanded", r.solver.nodes_expanded}}}};
}

CaseRecord case_from_json(const json& j) {
  CaseRecord r;
  r.id = field<std::string>(j, "id");
  r.problem.map_id = field<std::string>(j, "map_id");
  r.problem.starts = cells_from(j, "starts");
  r.problem.goals = cells_from(j, "goals");
  if (r.problem.starts.size() != r.problem.goals.size())
    throw FieldError("goals", "start and goal counts differ");
  const json& plan = member(j, "plan");
  if (!plan.is_null()) {
    r.plan = plan_from_json(plan);
    if (r.plan->robots() != r.problem.robots()) throw FieldError("plan", "team size mismatch");
    if (detect_first_conflict(r.plan->paths)) throw FieldError("plan", "plan has a conflict");
  }
  const json& s = member(j, "solver");
  r.solver.timeout_s = field<double>(s, "timeout_s");
  r.solver.timed_out = field<bool>(s, "timed_out");
  r.solver.infeasible = field<bool>(s, "infeasible");
  r.solver.nodes_expanded = field<std::uint64_t>(s, "nodes_expanded");
  return r;
}

json sample_to_json(const SampleRecord& s) {
  json labels = json::array();
  for (Action a : s.labels) labels.push_back(static_cast<int>(a));
  return {{"case_id", s.case_id},           {"map_id", s.map_id},
          {"t", s.t},                       {"positions", cells_json(s.positions)},
          {"goals", cells_json(s.goals)},   {"labels", std::move(labels)}};
}

SampleRecord sample_from_json(const json& j) {
  SampleRecord s;
  s.case_id = field<std::string>(j, "case_id");
  s.map_id = field<std::string>(j, "map_id");
  s.t = field<int>(j, "t");
  s.positions = cells_from(j, "positions");
  s.goals = cells_from(j, "goals");
  for (int a : field<std::vector<int>>(j, "labels")) {
    if (a < 0 || a >= kNumActions) throw FieldError("labels", "action index out of range");
    s.labels.push_back(static_cast<Action>(a));
  }
  if (s.labels.size() != s.positions.size() || s.goals.size() != s.positions.size())
    throw FieldError("labels", "one label, position and goal per robot required");
  return s;
}

json arch_to_json(const PolicyArch& a) {
  return {{"filter_taps", a.filter_taps},
          {"gnn_layers", a.gnn_layers},
          {"fov_radius", a.fov_radius},
          {"channels", a.channels}};
}

PolicyArch arch_from_json(const json& j) {
  PolicyArch a;
  a.filter_taps = field<int>(j, "filter_taps");
  a.gnn_layers = field<int>(j, "gnn_layers");
  a.fov_radius = field<int>(j, "fov_radius");
  a.channels = field<std::array<int, PolicyArch::kConvBlocks>>(j, "channels");
  return a;
}

// --- files --------------------------------------------------------------

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out.flush()) throw IoError("write to '" + path.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace '" + path.string() + "': " + ec.message());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

json header(const std::string& kind, const json& config, std::size_t count) {
  return {{"schema", kSchemaVersion}, {"kind", kind}, {"config", config}, {"count", count}};
}

void check_header(const json& h, const std::string& file, std::size_t line,
                  const std::string& kind) {
  try {
    const auto schema = field<std::string>(h, "schema");
    if (schema != kSchemaVersion)
      throw VersionMismatch(file + ": schema '" + schema + "', expected '" + kSchemaVersion + "'");
    if (field<std::string>(h, "kind") != kind)
      throw FieldError("kind", "expected '" + kind + "'");
    member(h, "config");
  } catch (const FieldError& e) {
    throw ParseError(file, line, e.field, e.what());
  }
}

json parse_line(const std::string& text, const std::string& file, std::size_t line) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(file, line, "<json>", e.what());
  }
}

template <typename T, typename ToJson>
void save_jsonl(const fs::path& path, const std::string& kind, std::span<const T> records,
                const json& config, ToJson to_json) {
  std::string text = header(kind, config, records.size()).dump() + "\n";
  for (const T& r : records) text += to_json(r).dump() + "\n";
  write_text_file(path, text);
}

template <typename T, typename FromJson>
Loaded<T> load_jsonl(const fs::path& path, const std::string& kind, FromJson from_json) {
  const std::string file = path.string();
  std::istringstream in(read_text_file(path));
  std::string text;
  std::size_t line = 0;
  Loaded<T> out;
  std::size_t expected = 0;
  while (std::getline(in, text)) {
    ++line;
    if (line == 1) {
      const json h = parse_line(text, file, line);
      check_header(h, file, line, kind);
      out.config = h["config"];
      try {
        expected = field<std::size_t>(h, "count");
      } catch (const FieldError& e) {
        throw ParseError(file, line, e.field, e.what());
      }
      continue;
    }
    if (text.empty()) throw ParseError(file, line, "<json>", "empty line");
    const json j = parse_line(text, file, line);
    try {
      out.records.push_back(from_json(j));
    } catch (const FieldError& e) {
      throw ParseError(file, line, e.field, e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(file, line, "<record>", e.what());
    }
  }
  if (line == 0) throw ParseError(file, 1, "schema", "empty file");
  if (out.records.size() != expected)
    throw ParseError(file, line + 1, "count",
                     "header promises " + std::to_string(expected) + " records, found " +
                         std::to_string(out.records.size()));
  return out;
}

}  // namespace

void save_maps(const fs::path& path, std::span<const GridMap> maps, const json& config) {
  save_jsonl<GridMap>(path, "maps", maps, config, map_to_json);
}
Loaded<GridMap> load_maps(const fs::path& path) {
  return load_jsonl<GridMap>(path, "maps", map_from_json);
}

void save_cases(const fs::path& path, std::span<const CaseRecord> cases, const json& config) {
  save_jsonl<CaseRecord>(path, "cases", cases, config, case_to_json);
}
Loaded<CaseRecord> load_cases(const fs::path& path) {
  return load_jsonl<CaseRecord>(path, "cases", case_from_json);
}

void save_samples(const fs::path& path, std::span<const SampleRecord> samples,
                  const json& config) {
  save_jsonl<SampleRecord>(path, "samples", samples, config, sample_to_json);
}
Loaded<SampleRecord> load_samples(const fs::path& path) {
  return load_jsonl<SampleRecord>(path, "samples", sample_from_json);
}

void save_json_document(const fs::path& path, const std::string& kind, const json& config,
                        json payload) {
  payload["schema"] = kSchemaVersion;
  payload["kind"] = kind;
  payload["config"] = config;
  write_text_file(path, payload.dump() + "\n");
}

json load_json_document(const fs::path& path, const std::string& kind) {
  const std::string file = path.string();
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + static_cast<std::size_t>(
                              std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    throw ParseError(file, line, "<json>", e.what());
  }
  check_header(j, file, 1, kind);
  return j;
}

void save_model(const fs::path& path, const PolicyParams& params, const json& config) {
  std::map<std::string, Tensor> values;
  for (const auto& [name, p] : params.store().parameters()) values.emplace(name, p.value);
  save_json_document(path, "model", config,
                     {{"arch", arch_to_json(params.arch())},
                      {"params", tensors_to_json(values)},
                      {"buffers", tensors_to_json(params.store().buffers())}});
}

PolicyParams load_model(const fs::path& path, json* config) {
  const json j = load_json_document(path, "model");
  const std::string file = path.string();
  try {
    PolicyArch arch = arch_from_json(member(j, "arch"));
    ParamStore store;
    try {
      for (auto& [name, t] : tensors_from_json(member(j, "params"))) store.add(name, std::move(t));
      for (auto& [name, t] : tensors_from_json(member(j, "buffers")))
        store.add_buffer(name, std::move(t));
    } catch (const std::invalid_argument& e) {
      throw FieldError("params", e.what());
    } catch (const json::exception& e) {
      throw FieldError("params", e.what());
    }
    if (config) *config = j["config"];
    try {
      return PolicyParams(arch, std::move(store));
    } catch (const ShapeMismatch& e) {
      throw FieldError("params", e.what());
    } catch (const ConfigError& e) {
      throw FieldError("arch", e.what());
    }
  } catch (const FieldError& e) {
    throw ParseError(file, 1, e.field, e.what());
  }
}

void save_trace(const fs::path& path, const Trajectory& trajectory, const json& config) {
  save_json_document(path, "trace", config, {{"trajectory", trajectory_to_json(trajectory)}});
}

Trajectory load_trace(const fs::path& path, json* config) {
  const json j = load_json_document(path, "trace");
  if (config) *config = j["config"];
  try {
    return trajectory_from_json(member(j, "trajectory"));
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 1, "trajectory", e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(path.string(), 1, "trajectory", e.what());
  } catch (const FieldError& e) {
    throw ParseError(path.string(), 1, e.field, e.what());
  }
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

namespace {
std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void save_report(const fs::path& path, const std::string& label, const MetricsReport& r,
                 const json& config) {
  std::string text =
      "label,cases,successes,alpha,delta_ft,flowtime,expert_flowtime,config\n";
  text += csv_escape(label) + "," + std::to_string(r.cases) + "," + std::to_string(r.successes) +
          "," + real(r.success_rate) + "," + real(r.flowtime_increase) + "," +
          std::to_string(r.flowtime) + "," + std::to_string(r.expert_flowtime) + "," +
          csv_escape(config.dump()) + "\n";
  write_text_file(path, text);
}

std::string csv_provenance(const json& config) {
  return "# " + json{{"schema", kSchemaVersion}, {"config", config}}.dump() + "\n";
}

void save_histogram(const fs::path& path, const MetricsReport& r, const json& config) {
  std::string text = csv_provenance(config) + "robots_at_goal,case_count,proportion\n";
  for (std::size_t k = 0; k < r.reached_histogram.size(); ++k)
    text += std::to_string(k) + "," + std::to_string(r.reached_histogram[k]) + "," +
            real(static_cast<double>(r.reached_histogram[k]) / static_cast<double>(r.cases)) +
            "\n";
  write_text_file(path, text);
}

}  // namespace gnnmapf
