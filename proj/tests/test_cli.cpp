#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "doctest.h"

#include "gnnmapf/datastore.hpp"

using namespace gnnmapf;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "gnnmapf_test_cli";

struct Result {
  int status = -1;
  std::string out;
  std::string err;
};

Result run(const std::string& args) {
  const fs::path out = kDir / "stdout.txt", err = kDir / "stderr.txt";
  const std::string cmd = std::string(GNNMAPF_CLI) + " " + args + " >" + out.string() + " 2>" +
                          err.string();
  const int raw = std::system(cmd.c_str());
  Result r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_text_file(out);
  r.err = read_text_file(err);
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

const std::string kWorld =
    " --seed 5 --width 8 --height 8 --robots 3 --num-maps 2 --cases-per-map 10 --timeout-s 30";

}  // namespace

TEST_CASE("end-to-end pipeline through the command line") {
  fs::remove_all(kDir);
  fs::create_directories(kDir);
  const std::string data = (kDir / "data").string();
  const std::string runs = (kDir / "run").string();

  Result r = run("build-dataset" + kWorld + " --out-dir " + data);
  REQUIRE_MESSAGE(r.status == 0, r.err);
  for (const char* f : {"maps.jsonl", "cases.jsonl", "cases.train.jsonl", "cases.test.jsonl",
                        "dataset.train.jsonl", "dataset.valid.jsonl", "dataset.test.jsonl"})
    CHECK(fs::exists(kDir / "data" / f));
  CHECK(load_cases(kDir / "data" / "cases.test.jsonl").records.size() == 3);

  r = run("train" + kWorld + " --data " + data + " --out " + runs +
          " --epochs 2 --lr 1e-3 --lr-min 1e-6 --batch 64 --l2 1e-5 --oe-interval 4"
          " --oe-cases 500 --k 3");
  REQUIRE_MESSAGE(r.status == 0, r.err);
  const auto log = lines(read_text_file(kDir / "run" / "train_log.csv"));
  REQUIRE(log.size() == 4);
  CHECK(log[0].rfind("# ", 0) == 0);
  CHECK(log[1] == "epoch,lr,train_loss,train_acc,valid_loss,valid_acc,train_size");
  CHECK(log[2].rfind("0,0.001,", 0) == 0);
  CHECK(fs::exists(kDir / "run" / "model.json"));
  CHECK(fs::exists(kDir / "run" / "optimizer.json"));

  r = run("eval --data " + data + " --split test --controller expert --out " +
          (kDir / "eval_expert").string());
  REQUIRE_MESSAGE(r.status == 0, r.err);
  const auto report = lines(read_text_file(kDir / "eval_expert" / "report.csv"));
  REQUIRE(report.size() == 2);
  CHECK(report[1].rfind("expert:test,3,3,1,0,", 0) == 0);

  r = run("eval" + kWorld + " --data " + data + " --split test --controller gnn --model " + runs +
          "/model.json --out " + (kDir / "eval_gnn").string());
  REQUIRE_MESSAGE(r.status == 0, r.err);
  CHECK(fs::exists(kDir / "eval_gnn" / "hist.csv"));

  r = run("rollout --data " + data + " --split test --controller random --out " +
          (kDir / "trace.json").string());
  REQUIRE_MESSAGE(r.status == 0, r.err);
  CHECK(load_trace(kDir / "trace.json").positions.size() >= 1);

  r = run("report --inputs " + (kDir / "eval_expert" / "report.csv").string() + " " +
          (kDir / "run" / "train_log.csv").string() + " --out " + (kDir / "long.csv").string());
  REQUIRE_MESSAGE(r.status == 0, r.err);
  CHECK(lines(read_text_file(kDir / "long.csv"))[0] == "source,row,column,value");
}

TEST_CASE("oracle-check prints the mismatch count") {
  fs::create_directories(kDir);
  const Result r = run("oracle-check --instances 20 --max-robots 3 --max-size 4");
  CHECK(r.status == 0);
  CHECK(r.out.find("mismatches: 0") != std::string::npos);
}

TEST_CASE("errors map to exit codes and a JSON line on stderr") {
  fs::create_directories(kDir);
  Result r = run("gen-maps --out " + (kDir / "m.jsonl").string() + " --density 1.5");
  CHECK(r.status == 2);
  CHECK(nlohmann::json::parse(r.err)["error"] == "ConfigError");

  r = run("gen-cases --maps " + (kDir / "nope.jsonl").string() + " --out " +
          (kDir / "c.jsonl").string());
  CHECK(r.status == 4);
  CHECK(nlohmann::json::parse(r.err)["error"] == "IoError");

  write_text_file(kDir / "cfg.json", R"({"bogus": 1})");
  r = run("gen-maps --config " + (kDir / "cfg.json").string() + " --out " +
          (kDir / "m.jsonl").string());
  CHECK(r.status == 2);

  r = run("no-such-command");
  CHECK(r.status == 2);
}

TEST_CASE("staged generation matches the one-shot build") {
  fs::create_directories(kDir);
  const std::string maps = (kDir / "s_maps.jsonl").string();
  const std::string cases = (kDir / "s_cases.jsonl").string();
  const std::string solved = (kDir / "s_solved.jsonl").string();
  REQUIRE(run("gen-maps" + kWorld + " --out " + maps).status == 0);
  REQUIRE(run("gen-cases" + kWorld + " --maps " + maps + " --out " + cases).status == 0);
  REQUIRE(run("expert" + kWorld + " --maps " + maps + " --cases " + cases + " --out " + solved)
              .status == 0);
  REQUIRE(run("build-dataset" + kWorld + " --out-dir " + (kDir / "oneshot").string()).status == 0);
  CHECK(load_cases(solved).records == load_cases(kDir / "oneshot" / "cases.jsonl").records);
}
