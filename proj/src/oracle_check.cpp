#include "gnnmapf/cbs.hpp"
#include "gnnmapf/error.hpp"
#include "gnnmapf/rng.hpp"

namespace gnnmapf {

namespace {

struct Instance {
  GridMap map;
  Case problem;
};

Instance draw_instance(const OracleCheckConfig& cfg, int index) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index), attempt));
    const int w = 2 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.max_size - 1)));
    const int h = 2 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.max_size - 1)));
    const double density = uniform_real(rng, 0.0, cfg.max_density);
    const int robots = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.max_robots)));
    GridMap map = generate_map(w, h, density, rng());
    try {
      Case c = generate_case(map, robots, rng(), 50);
      return {std::move(map), std::move(c)};
    } catch (const InfeasibleCase&) {
      // too crowded for this draw; try another
    }
  }
}

}  // namespace

OracleCheckReport oracle_check(const OracleCheckConfig& cfg) {
  if (cfg.instances < 0 || cfg.max_robots < 1 || cfg.max_size < 2 ||
      !(cfg.max_density >= 0.0 && cfg.max_density < 1.0))
    throw ConfigError("oracle-check needs instances >= 0, max robots >= 1, max size >= 2, "
                      "density in [0, 1)");
  OracleCheckReport report;
  for (int i = 0; i < cfg.instances; ++i) {
    const Instance inst = draw_instance(cfg, i);
    ++report.instances;
    const std::string tag = "instance " + std::to_string(i) + " (" +
                            std::to_string(inst.map.width()) + "x" +
                            std::to_string(inst.map.height()) + ", " +
                            std::to_string(inst.problem.robots()) + " robots)";
    std::optional<Plan> oracle;
    try {
      oracle = joint_bfs_oracle(inst.map, inst.problem);
    } catch (const Infeasible&) {
    }
    std::optional<Plan> cbs;
    std::string cbs_failure;
    try {
      cbs = cbs_solve(inst.map, inst.problem, cfg.cbs_timeout_s);
    } catch (const Infeasible& e) {
      cbs_failure = e.what();
    } catch (const Timeout& e) {
      cbs_failure = e.what();
    }

    if (!oracle) {
      if (cbs) {
        ++report.mismatches;
        report.details.push_back(tag + ": CBS returned a plan for an unsolvable case");
      } else {
        ++report.infeasible;
      }
      continue;
    }
    if (!cbs) {
      ++report.mismatches;
      report.details.push_back(tag + ": CBS failed (" + cbs_failure + "), oracle flowtime " +
                               std::to_string(oracle->flowtime));
      continue;
    }
    const std::string invalid = validate_plan(inst.map, inst.problem, *cbs);
    if (!invalid.empty()) {
      ++report.mismatches;
      report.details.push_back(tag + ": invalid CBS plan: " + invalid);
    } else if (cbs->flowtime != oracle->flowtime) {
      ++report.mismatches;
      report.details.push_back(tag + ": CBS flowtime " + std::to_string(cbs->flowtime) +
                               ", oracle " + std::to_string(oracle->flowtime));
    } else {
      ++report.solved;
    }
  }
  return report;
}

}  // namespace gnnmapf
