// Command-line front end: generation, expert solving, dataset building,
// training, evaluation and report emission.

#include <malloc.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gnnmapf/cbs.hpp"
#include "gnnmapf/config.hpp"
#include "gnnmapf/datastore.hpp"
#include "gnnmapf/error.hpp"
#include "gnnmapf/executor.hpp"
#include "gnnmapf/parallel.hpp"
#include "gnnmapf/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gnnmapf;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDropped = 3;
constexpr int kExitIo = 4;

constexpr std::uint64_t kInitStream = 0x494e4954ULL;
constexpr std::uint64_t kEvalStream = 0x4556414cULL;

class CheckFailed : public Error {
 public:
  explicit CheckFailed(const std::string& what) : Error("CheckFailed", what) {}
};

class DroppedRun : public Error {
 public:
  explicit DroppedRun(const std::string& what) : Error("DroppedRun", what) {}
};

// RunConfig flags shared by every subcommand.
struct ConfigFlags {
  RunConfig values;
  std::vector<double> split;
  std::string config_file;
  std::vector<std::pair<CLI::Option*, std::string>> options;
  CLI::Option* split_option = nullptr;

  void attach(CLI::App* app) {
    auto& v = values;
    auto add = [&](const std::string& flag, auto& field, const char* key, const std::string& help) {
      options.emplace_back(app->add_option(flag, field, help), key);
    };
    app->add_option("--config", config_file, "JSON config file (default: $GNNMAPF_CONFIG)");
    add("--seed", v.seed, "seed", "Base random seed");
    add("--workers", v.workers, "workers", "Worker threads for parallel sections");
    add("--width", v.width, "width", "Map width W");
    add("--height", v.height, "height", "Map height H");
    add("--density", v.density, "density", "Obstacle density rho");
    add("--robots", v.robots, "robots", "Robots per case N");
    add("--num-maps", v.maps, "maps", "Number of maps");
    add("--cases-per-map", v.cases_per_map, "cases_per_map", "Cases drawn per map");
    add("--timeout-s", v.timeout_s, "timeout_s", "Expert time budget per case (s)");
    add("--fov", v.fov_radius, "fov_radius", "Field-of-view radius r_FOV");
    add("--comm", v.comm_radius, "comm_radius", "Communication radius r_COMM");
    add("--k", v.k, "k", "Graph filter taps K");
    add("--gnn-layers", v.gnn_layers, "gnn_layers", "Graph layers L");
    add("--epochs", v.epochs, "epochs", "Training epochs");
    add("--lr", v.lr, "lr", "Initial learning rate");
    add("--lr-min", v.lr_min, "lr_min", "Final learning rate");
    add("--batch", v.batch, "batch", "Timestep samples per minibatch");
    add("--l2", v.l2, "l2", "L2 coefficient");
    add("--beta1", v.beta1, "beta1", "Adam beta1");
    add("--beta2", v.beta2, "beta2", "Adam beta2");
    add("--adam-eps", v.adam_eps, "adam_eps", "Adam epsilon");
    add("--oe-interval", v.oe_interval, "oe_interval", "Online expert every C epochs (0: off)");
    add("--oe-cases", v.oe_cases, "oe_cases", "Cases rolled out per online-expert round");
    add("--select", v.select, "select", "Action selection: greedy | sample");
    split_option = app->add_option("--split-ratios", split, "Train/valid/test ratios")->expected(3);
  }

  RunConfig resolve() const {
    RunConfig config;
    std::optional<fs::path> path;
    if (!config_file.empty()) path = config_file;
    else path = default_config_path();
    if (path) merge_config_file(config, *path);
    const json given = values.to_json();
    json over = json::object();
    for (const auto& [opt, key] : options)
      if (opt->count() > 0) over[key] = given[key];
    if (split_option->count() > 0) over["split"] = split;
    config.merge(over);
    config.validate();
    return config;
  }
};

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << std::endl;
}

void check_dropped(const BuildResult& stats, std::size_t attempted) {
  for (const std::string& line : stats.log) std::cerr << "note: " << line << "\n";
  const std::size_t dropped = stats.dropped();
  if (attempted > 0 && 2 * dropped > attempted)
    throw DroppedRun(std::to_string(dropped) + " of " + std::to_string(attempted) +
                     " cases were dropped");
}

fs::path data_file(const std::string& dir, const std::string& name) { return fs::path(dir) / name; }

MapPool load_map_pool(const fs::path& path) { return MapPool(load_maps(path).records); }

void cmd_gen_maps(const RunConfig& cfg, const std::string& out) {
  const auto maps = generate_maps(cfg.build_config());
  save_maps(out, maps, cfg.to_json());
  std::cout << "maps: " << maps.size() << "\n";
}

void cmd_gen_cases(const RunConfig& cfg, const std::string& maps_path, const std::string& out) {
  const auto maps = load_maps(maps_path).records;
  BuildResult stats;
  const auto cases = generate_cases(maps, cfg.build_config(), stats);
  save_cases(out, cases, cfg.to_json());
  std::cout << "cases: " << cases.size() << " dropped: " << stats.dropped() << "\n";
  check_dropped(stats, stats.attempted);
}

void cmd_expert(const RunConfig& cfg, const std::string& maps_path, const std::string& cases_path,
                const std::string& out) {
  const MapPool maps = load_map_pool(maps_path);
  const auto cases = load_cases(cases_path).records;
  BuildResult stats;
  const auto solved = solve_cases(cases, maps, cfg.build_config(), stats);
  save_cases(out, solved, cfg.to_json());
  std::cout << "solved: " << solved.size() << " timeout: " << stats.dropped_timeout
            << " infeasible: " << stats.dropped_infeasible << "\n";
  check_dropped(stats, cases.size());
}

void cmd_build_dataset(const RunConfig& cfg, const std::string& maps_path,
                       const std::string& cases_path, const std::string& out_dir) {
  const json config = cfg.to_json();
  std::vector<GridMap> maps;
  std::vector<CaseRecord> cases;
  if (cases_path.empty()) {
    BuildResult built = build_dataset(cfg.build_config());
    save_maps(data_file(out_dir, "maps.jsonl"), built.maps, config);
    save_cases(data_file(out_dir, "cases.jsonl"), built.cases, config);
    std::cout << "generated: " << built.attempted << " solved: " << built.cases.size()
              << " dropped: " << built.dropped() << "\n";
    check_dropped(built, built.attempted);
    maps = std::move(built.maps);
    cases = std::move(built.cases);
  } else {
    if (maps_path.empty()) throw ConfigError("--cases requires --maps");
    maps = load_maps(maps_path).records;
    cases = load_cases(cases_path).records;
    for (const CaseRecord& c : cases)
      if (!c.plan) throw ConfigError("case '" + c.id + "' has no expert plan; run 'expert' first");
    save_maps(data_file(out_dir, "maps.jsonl"), maps, config);
    save_cases(data_file(out_dir, "cases.jsonl"), cases, config);
  }
  const CaseSplit split = split_dataset(cases, cfg.split, cfg.seed);
  const std::pair<const char*, const std::vector<CaseRecord>*> parts[] = {
      {"train", &split.train}, {"valid", &split.valid}, {"test", &split.test}};
  for (const auto& [name, part] : parts) {
    save_cases(data_file(out_dir, std::string("cases.") + name + ".jsonl"), *part, config);
    const auto samples = expand_samples(*part);
    save_samples(data_file(out_dir, std::string("dataset.") + name + ".jsonl"), samples, config);
    std::cout << name << ": " << part->size() << " cases, " << samples.size() << " samples\n";
  }
}

std::string log_csv(const std::vector<LogRow>& rows, const json& config) {
  std::string text = csv_provenance(config) + log_header() + "\n";
  for (const LogRow& r : rows) text += log_line(r) + "\n";
  return text;
}

void cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  const json config = cfg.to_json();
  const MapPool maps = load_map_pool(data_file(data_dir, "maps.jsonl"));
  const auto train_cases = load_cases(data_file(data_dir, "cases.train.jsonl")).records;
  const int fov = cfg.fov_radius;
  Dataset train_set = make_dataset(Split::Train,
                                   load_samples(data_file(data_dir, "dataset.train.jsonl")).records,
                                   maps, fov, cfg.comm_radius);
  const Dataset valid_set = make_dataset(
      Split::Valid, load_samples(data_file(data_dir, "dataset.valid.jsonl")).records, maps, fov,
      cfg.comm_radius);
  if (train_set.size() == 0) throw EmptyInput("train split has no samples");

  PolicyParams params(cfg.arch(), derive_seed(cfg.seed, kInitStream));
  AdamState adam;
  std::vector<LogRow> rows;
  TrainHooks hooks;
  hooks.on_epoch = [&](const LogRow& row, const PolicyParams& p, const AdamState& a) {
    rows.push_back(row);
    save_model(data_file(out_dir, "model.json"), p, config);
    save_json_document(data_file(out_dir, "optimizer.json"), "optimizer", config,
                       {{"epoch", row.epoch}, {"adam", adam_to_json(a)}});
    write_text_file(data_file(out_dir, "train_log.csv"), log_csv(rows, config));
    std::cout << log_line(row) << std::endl;
  };
  hooks.on_aggregate = [&](int epoch, const AggregationReport& rep) {
    std::cout << "online expert after epoch " << epoch << ": selected " << rep.selected
              << ", failures " << rep.failures << ", repaired " << rep.repaired << ", skipped "
              << rep.skipped << ", samples +" << rep.samples_added << std::endl;
    for (const std::string& line : rep.log) std::cerr << "note: " << line << "\n";
  };
  train(params, adam, train_set, valid_set, train_cases, maps, cfg.train_config(), hooks);
  save_samples(data_file(out_dir, "dataset.train.aggregated.jsonl"), train_set.records, config);
}

std::unique_ptr<Controller> make_controller(const std::string& kind, const PolicyParams* params,
                                            const RunConfig& cfg, const Plan* expert) {
  if (kind == "gnn") {
    if (!params) throw ConfigError("--model is required for the gnn controller");
    return std::make_unique<GnnController>(*params, cfg.select_mode(), cfg.comm_radius);
  }
  if (kind == "expert") return std::make_unique<ExpertReplayController>(*expert);
  if (kind == "idle") return std::make_unique<IdleController>();
  if (kind == "random") return std::make_unique<RandomController>();
  throw ConfigError("unknown controller '" + kind + "' (gnn | expert | idle | random)");
}

std::optional<PolicyParams> maybe_model(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_model(path);
}

void cmd_eval(const RunConfig& cfg, const std::string& data_dir, const std::string& split,
              const std::string& model_path, const std::string& controller,
              const std::string& out_dir) {
  const MapPool maps = load_map_pool(data_file(data_dir, "maps.jsonl"));
  const auto cases = load_cases(data_file(data_dir, "cases." + split + ".jsonl")).records;
  if (cases.empty()) throw EmptyInput("split '" + split + "' has no cases");
  const auto params = maybe_model(model_path);
  std::vector<Trajectory> trajectories(cases.size());
  std::vector<Plan> plans(cases.size());
  parallel_for(cases.size(), cfg.workers, [&](std::size_t i) {
    const CaseRecord& rec = cases[i];
    if (!rec.plan) throw ConfigError("case '" + rec.id + "' has no expert plan");
    const auto ctrl = make_controller(controller, params ? &*params : nullptr, cfg, &*rec.plan);
    trajectories[i] = rollout(*ctrl, maps.at(rec.problem.map_id), rec.problem, *rec.plan,
                              derive_seed(cfg.seed, kEvalStream, i), rec.id);
    plans[i] = *rec.plan;
  });
  const MetricsReport report = compute_metrics(trajectories, plans);
  const json config = cfg.to_json();
  save_report(data_file(out_dir, "report.csv"), controller + ":" + split, report, config);
  save_histogram(data_file(out_dir, "hist.csv"), report, config);
  std::size_t deadlocks = 0;
  for (const Trajectory& t : trajectories) deadlocks += detect_deadlock(t).deadlocked ? 1 : 0;
  std::cout << "cases: " << report.cases << " alpha: " << report.success_rate
            << " delta_ft: " << report.flowtime_increase << " deadlocks: " << deadlocks << "\n";
}

void cmd_rollout(const RunConfig& cfg, const std::string& data_dir, const std::string& split,
                 const std::string& case_id, const std::string& model_path,
                 const std::string& controller, const std::string& out) {
  const MapPool maps = load_map_pool(data_file(data_dir, "maps.jsonl"));
  const auto cases = load_cases(data_file(data_dir, "cases." + split + ".jsonl")).records;
  if (cases.empty()) throw EmptyInput("split '" + split + "' has no cases");
  std::size_t index = 0;
  if (!case_id.empty()) {
    while (index < cases.size() && cases[index].id != case_id) ++index;
    if (index == cases.size()) throw ConfigError("no case '" + case_id + "' in split " + split);
  }
  const CaseRecord& rec = cases[index];
  if (!rec.plan) throw ConfigError("case '" + rec.id + "' has no expert plan");
  const auto params = maybe_model(model_path);
  const auto ctrl = make_controller(controller, params ? &*params : nullptr, cfg, &*rec.plan);
  const Trajectory traj = rollout(*ctrl, maps.at(rec.problem.map_id), rec.problem, *rec.plan,
                                  derive_seed(cfg.seed, kEvalStream, index), rec.id);
  save_trace(out, traj, cfg.to_json());
  std::cout << "case: " << rec.id << " success: " << (traj.success() ? 1 : 0)
            << " steps: " << traj.steps() << "\n";
}

void cmd_oracle_check(const RunConfig& cfg, OracleCheckConfig check) {
  check.seed = cfg.seed;
  const OracleCheckReport r = oracle_check(check);
  for (const std::string& d : r.details) std::cerr << "mismatch: " << d << "\n";
  std::cout << "instances: " << r.instances << " solved: " << r.solved
            << " infeasible: " << r.infeasible << "\nmismatches: " << r.mismatches << "\n";
  if (r.mismatches > 0) throw CheckFailed(std::to_string(r.mismatches) + " mismatches");
}

// Minimal RFC 4180 reader: quoted fields, doubled quotes, '#' comment lines.
std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  const std::string text = read_text_file(path);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool line_start = true;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (line_start && c == '#') {
      while (i < text.size() && text[i] != '\n') ++i;
      continue;
    }
    line_start = false;
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      line_start = true;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw ParseError(path.string(), rows.size() + 1, "<csv>", "unterminated quote");
  if (!field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

void cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::string text = "source,row,column,value\n";
  for (const std::string& input : inputs) {
    const auto rows = read_csv(input);
    if (rows.empty()) continue;
    const auto& header = rows.front();
    const std::string source = fs::path(input).filename().string();
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].size() != header.size())
        throw ParseError(input, r + 1, "<csv>", "row has " + std::to_string(rows[r].size()) +
                                                    " fields, header has " +
                                                    std::to_string(header.size()));
      for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "config") continue;
        text += csv_escape(source) + "," + std::to_string(r - 1) + "," + csv_escape(header[c]) +
                "," + csv_escape(rows[r][c]) + "\n";
      }
    }
  }
  write_text_file(out, text);
  std::cout << "wrote " << out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  // Keep large activation buffers on the heap instead of fresh mmaps.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);

  CLI::App app{"Decentralized multi-robot path planning: expert data, GNN training, evaluation"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<ConfigFlags>> flags;
  auto sub = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    flags.push_back(std::make_unique<ConfigFlags>());
    flags.back()->attach(s);
    return std::make_pair(s, flags.back().get());
  };

  std::string out, maps_path, cases_path, data_dir = "data", out_dir = "run", split = "test";
  std::string model_path, controller = "gnn", case_name;
  std::vector<std::string> inputs;
  OracleCheckConfig check;

  auto [gen_maps, gen_maps_flags] = sub("gen-maps", "Generate random obstacle maps");
  gen_maps->add_option("--out", out, "Output maps.jsonl")->required();
  auto [gen_cases, gen_cases_flags] = sub("gen-cases", "Draw start/goal cases on maps");
  gen_cases->add_option("--maps", maps_path, "Input maps.jsonl")->required();
  gen_cases->add_option("--out", out, "Output cases.jsonl")->required();
  auto [expert, expert_flags] = sub("expert", "Solve cases with the CBS expert");
  expert->add_option("--maps", maps_path, "Input maps.jsonl")->required();
  expert->add_option("--cases", cases_path, "Input cases.jsonl")->required();
  expert->add_option("--out", out, "Output solved cases.jsonl")->required();
  auto [build, build_flags] = sub("build-dataset", "Split solved cases and expand samples");
  build->add_option("--maps", maps_path, "Input maps.jsonl (with --cases)");
  build->add_option("--cases", cases_path, "Solved cases.jsonl; omitted: generate and solve");
  build->add_option("--out-dir", data_dir, "Output directory");
  auto [train_cmd, train_flags] = sub("train", "Imitation training with online expert");
  train_cmd->add_option("--data", data_dir, "Dataset directory");
  train_cmd->add_option("--out", out_dir, "Output directory for checkpoints and log");
  auto [eval, eval_flags] = sub("eval", "Roll out a controller on a split and score it");
  eval->add_option("--data", data_dir, "Dataset directory");
  eval->add_option("--split", split, "train | valid | test");
  eval->add_option("--model", model_path, "model.json (gnn controller)");
  eval->add_option("--controller", controller, "gnn | expert | idle | random");
  eval->add_option("--out", out_dir, "Output directory for report.csv and hist.csv");
  auto [roll, roll_flags] = sub("rollout", "Roll out one case and write its trace");
  roll->add_option("--data", data_dir, "Dataset directory");
  roll->add_option("--split", split, "train | valid | test");
  roll->add_option("--case", case_name, "Case id (default: first case of the split)");
  roll->add_option("--model", model_path, "model.json (gnn controller)");
  roll->add_option("--controller", controller, "gnn | expert | idle | random");
  roll->add_option("--out", out, "Output trace.json")->required();
  auto [oracle, oracle_flags] = sub("oracle-check", "Compare CBS with the exhaustive joint search");
  oracle->add_option("--instances", check.instances, "Number of instances");
  oracle->add_option("--max-robots", check.max_robots, "Largest team size");
  oracle->add_option("--max-size", check.max_size, "Largest width/height");
  oracle->add_option("--max-density", check.max_density, "Largest obstacle density");
  oracle->add_option("--cbs-timeout-s", check.cbs_timeout_s, "CBS budget per instance (s)");
  auto [report, report_flags] = sub("report", "Convert CSV outputs to long-format plot tables");
  report->add_option("--inputs", inputs, "CSV files (report.csv, hist.csv, train_log.csv)")
      ->required();
  report->add_option("--out", out, "Output long-format CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("UsageError", e.what());
    return kExitConfig;
  }

  try {
    if (gen_maps->parsed()) cmd_gen_maps(gen_maps_flags->resolve(), out);
    else if (gen_cases->parsed()) cmd_gen_cases(gen_cases_flags->resolve(), maps_path, out);
    else if (expert->parsed()) cmd_expert(expert_flags->resolve(), maps_path, cases_path, out);
    else if (build->parsed())
      cmd_build_dataset(build_flags->resolve(), maps_path, cases_path, data_dir);
    else if (train_cmd->parsed()) cmd_train(train_flags->resolve(), data_dir, out_dir);
    else if (eval->parsed())
      cmd_eval(eval_flags->resolve(), data_dir, split, model_path, controller, out_dir);
    else if (roll->parsed())
      cmd_rollout(roll_flags->resolve(), data_dir, split, case_name, model_path, controller, out);
    else if (oracle->parsed()) cmd_oracle_check(oracle_flags->resolve(), check);
    else if (report->parsed()) {
      report_flags->resolve();
      cmd_report(inputs, out);
    }
  } catch (const ConfigError& e) {
    print_error(e.code(), e.what());
    return kExitConfig;
  } catch (const DroppedRun& e) {
    print_error(e.code(), e.what());
    return kExitDropped;
  } catch (const Timeout& e) {
    print_error(e.code(), e.what());
    return kExitDropped;
  } catch (const Infeasible& e) {
    print_error(e.code(), e.what());
    return kExitDropped;
  } catch (const IoError& e) {
    print_error(e.code(), e.what());
    return kExitIo;
  } catch (const ParseError& e) {
    print_error(e.code(), e.what());
    return kExitIo;
  } catch (const VersionMismatch& e) {
    print_error(e.code(), e.what());
    return kExitIo;
  } catch (const Error& e) {
    print_error(e.code(), e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    print_error("InternalError", e.what());
    return kExitFailure;
  }
  return 0;
}
