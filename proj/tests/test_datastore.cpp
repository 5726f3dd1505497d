#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "gnnmapf/datastore.hpp"
#include "gnnmapf/error.hpp"

using namespace gnnmapf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gnnmapf_test_datastore";
  fs::create_directories(dir);
  return dir / name;
}

BuildConfig small_build(int cases_per_map = 5) {
  BuildConfig bc;
  bc.width = 8;
  bc.height = 8;
  bc.maps = 2;
  bc.cases_per_map = cases_per_map;
  bc.robots = 3;
  bc.seed = 12;
  bc.expert_timeout_s = 30.0;
  return bc;
}

const BuildResult& pool() {
  static const BuildResult built = build_dataset(small_build());
  return built;
}

const nlohmann::json kConfig = {{"seed", 12}, {"note", "test"}};

}  // namespace

TEST_CASE("ids are zero padded") {
  CHECK(map_id(3) == "map0003");
  CHECK(case_id("map0003", 12) == "map0003/case0012");
}

TEST_CASE("build_dataset stores at most the requested cases and solves each") {
  const BuildResult& b = pool();
  CHECK(b.maps.size() == 2);
  CHECK(b.maps[1].id() == "map0001");
  CHECK(b.attempted == 10);
  CHECK(b.cases.size() + b.dropped() == 10);
  CHECK(b.cases.size() <= 10);
  const MapPool maps(b.maps);
  for (const auto& c : b.cases) {
    REQUIRE(c.plan);
    CHECK(validate_plan(maps.at(c.problem.map_id), c.problem, *c.plan).empty());
    CHECK(c.id.rfind(c.problem.map_id + "/case", 0) == 0);
  }
  CHECK(build_dataset(small_build(0)).cases.empty());
}

TEST_CASE("build_dataset is independent of the worker count") {
  BuildConfig bc = small_build();
  bc.workers = 3;
  const BuildResult par = build_dataset(bc);
  CHECK(par.cases == pool().cases);
  CHECK(par.maps == pool().maps);
}

TEST_CASE("expand_samples emits one sample per expert timestep") {
  const GridMap m(10, 1, std::span<const Cell>{});
  const Case straight{"m", {{0, 0}}, {{3, 0}}};
  const Plan p = cbs_solve(m, straight, 5.0);
  const auto samples = expand_samples("m/case0000", straight, p);
  REQUIRE(samples.size() == 3);
  for (int t = 0; t < 3; ++t) {
    CHECK(samples[t].t == t);
    CHECK(samples[t].labels == std::vector<Action>{Action::Right});
    CHECK(samples[t].positions[0] == Cell{t, 0});
  }
  std::size_t total = 0;
  for (const auto& c : pool().cases) total += c.plan->makespan;
  CHECK(expand_samples(pool().cases).size() == total);
  CaseRecord unsolved = pool().cases[0];
  unsolved.plan.reset();
  CHECK_THROWS(expand_samples(std::span<const CaseRecord>(&unsolved, 1)));
}

TEST_CASE("save, load, save is byte identical") {
  const BuildResult& b = pool();
  const auto samples = expand_samples(b.cases);
  save_maps(scratch("maps.jsonl"), b.maps, kConfig);
  save_cases(scratch("cases.jsonl"), b.cases, kConfig);
  save_samples(scratch("samples.jsonl"), samples, kConfig);

  const auto maps = load_maps(scratch("maps.jsonl"));
  const auto cases = load_cases(scratch("cases.jsonl"));
  const auto loaded = load_samples(scratch("samples.jsonl"));
  CHECK(maps.records == b.maps);
  CHECK(cases.records == b.cases);
  CHECK(loaded.records == samples);
  CHECK(cases.config == kConfig);

  save_maps(scratch("maps2.jsonl"), maps.records, maps.config);
  save_cases(scratch("cases2.jsonl"), cases.records, cases.config);
  save_samples(scratch("samples2.jsonl"), loaded.records, loaded.config);
  CHECK(read_text_file(scratch("maps.jsonl")) == read_text_file(scratch("maps2.jsonl")));
  CHECK(read_text_file(scratch("cases.jsonl")) == read_text_file(scratch("cases2.jsonl")));
  CHECK(read_text_file(scratch("samples.jsonl")) == read_text_file(scratch("samples2.jsonl")));
}

TEST_CASE("unsolved cases keep their solver metadata") {
  CaseRecord r = pool().cases[0];
  r.plan.reset();
  r.solver.timed_out = true;
  const CaseRecord back = case_from_json(case_to_json(r));
  CHECK(back == r);
  CHECK(case_to_json(r)["solver"]["name"] == "cbs");
}

TEST_CASE("truncated files raise ParseError naming the line") {
  save_cases(scratch("trunc.jsonl"), pool().cases, kConfig);
  std::string text = read_text_file(scratch("trunc.jsonl"));
  // Cut the third line in half.
  std::size_t pos = 0;
  for (int i = 0; i < 2; ++i) pos = text.find('\n', pos) + 1;
  write_text_file(scratch("trunc.jsonl"), text.substr(0, pos + 20));
  try {
    load_cases(scratch("trunc.jsonl"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  // Dropping whole trailing records is caught by the header count.
  write_text_file(scratch("trunc.jsonl"), text.substr(0, pos));
  try {
    load_cases(scratch("trunc.jsonl"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(e.field() == "count");
  }
}

TEST_CASE("malformed fields name the field") {
  save_maps(scratch("bad.jsonl"), pool().maps, kConfig);
  std::string text = read_text_file(scratch("bad.jsonl"));
  const auto at = text.find("\"width\"");
  text.replace(at, 7, "\"wodth\"");
  write_text_file(scratch("bad.jsonl"), text);
  try {
    load_maps(scratch("bad.jsonl"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.field() == "width");
    CHECK(e.line() == 2);
  }
}

TEST_CASE("schema mismatch raises VersionMismatch") {
  save_maps(scratch("old.jsonl"), pool().maps, kConfig);
  std::string text = read_text_file(scratch("old.jsonl"));
  text.replace(text.find(kSchemaVersion), std::string(kSchemaVersion).size(), "gnnmapf/0");
  write_text_file(scratch("old.jsonl"), text);
  CHECK_THROWS_AS(load_maps(scratch("old.jsonl")), VersionMismatch);
  CHECK_THROWS_AS(load_cases(scratch("maps.jsonl")), ParseError);
  CHECK_THROWS_AS(load_maps(scratch("missing.jsonl")), IoError);
}

TEST_CASE("model weights survive a round trip bit for bit") {
  PolicyArch arch;
  arch.filter_taps = 2;
  arch.channels = {4, 4, 8, 8, 16, 16};
  PolicyParams params(arch, 99);
  params.store().buffer(PolicyParams::bn_mean(3))[1] = 0.1 + 0.2;
  save_model(scratch("model.json"), params, kConfig);
  nlohmann::json config;
  const PolicyParams back = load_model(scratch("model.json"), &config);
  CHECK(back.arch() == arch);
  CHECK(back.store() == params.store());
  CHECK(config == kConfig);
  save_model(scratch("model2.json"), back, config);
  CHECK(read_text_file(scratch("model.json")) == read_text_file(scratch("model2.json")));
}

TEST_CASE("trace round trip") {
  const GridMap& m = pool().maps[0];
  const CaseRecord& rec = pool().cases[0];
  const Trajectory t = rollout(RandomController{}, m, rec.problem, *rec.plan, 5, rec.id);
  save_trace(scratch("trace.json"), t, kConfig);
  const Trajectory back = load_trace(scratch("trace.json"));
  CHECK(back.positions == t.positions);
  CHECK(back.arrival == t.arrival);
  save_trace(scratch("trace2.json"), back, kConfig);
  CHECK(read_text_file(scratch("trace.json")) == read_text_file(scratch("trace2.json")));
}

TEST_CASE("report and histogram CSV layout") {
  MetricsReport r;
  r.cases = 4;
  r.successes = 3;
  r.success_rate = 0.75;
  r.flowtime_increase = 0.125;
  r.flowtime = 45;
  r.expert_flowtime = 40;
  r.reached_histogram = {0, 1, 0, 3};
  save_report(scratch("report.csv"), "gnn", r, kConfig);
  const std::string report = read_text_file(scratch("report.csv"));
  CHECK(report.rfind("label,cases,successes,alpha,delta_ft,flowtime,expert_flowtime,config\n", 0) == 0);
  CHECK(report.find("gnn,4,3,0.75,0.125,45,40,") != std::string::npos);
  save_histogram(scratch("hist.csv"), r, kConfig);
  const std::string hist = read_text_file(scratch("hist.csv"));
  CHECK(hist.rfind("# ", 0) == 0);
  CHECK(hist.find("robots_at_goal,case_count,proportion\n0,0,0\n1,1,0.25\n2,0,0\n3,3,0.75\n") !=
        std::string::npos);
}

TEST_CASE("csv escaping") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
}
