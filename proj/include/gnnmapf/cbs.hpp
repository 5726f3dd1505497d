#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gnnmapf/grid.hpp"

namespace gnnmapf {

using Path = std::vector<Cell>;

// Collision-free joint plan. Each path runs from the start to the time the
// robot comes to rest at its goal for good; afterwards it occupies the goal.
struct Plan {
  std::vector<Path> paths;
  int flowtime = 0;
  int makespan = 0;

  int robots() const noexcept { return static_cast<int>(paths.size()); }
  // Position of `robot` at `t`, holding the last cell after the path ends.
  Cell at(std::size_t robot, int t) const;
  friend bool operator==(const Plan&, const Plan&) = default;
};

// Cost of a path: the step after which the robot never leaves its final cell.
int path_cost(const Path& path);

// Builds a Plan from raw paths, trimming trailing waits and computing the
// flowtime (sum of costs) and makespan (largest cost).
Plan make_plan(std::vector<Path> paths);

struct Constraint {
  enum class Kind : std::uint8_t { Vertex, Edge };
  int robot = 0;
  Kind kind = Kind::Vertex;
  Cell cell;     // vertex cell, or the origin of the forbidden move
  Cell to;       // destination of the forbidden move (edge only)
  int time = 0;  // arrival time of the forbidden state or move

  static Constraint vertex(int robot, Cell c, int t) { return {robot, Kind::Vertex, c, c, t}; }
  static Constraint edge(int robot, Cell from, Cell to, int t) {
    return {robot, Kind::Edge, from, to, t};
  }
};

struct Conflict {
  enum class Kind : std::uint8_t { Vertex, Edge };
  Kind kind = Kind::Vertex;
  int a = 0;
  int b = 0;
  Cell cell;  // vertex cell, or a's origin for an edge conflict
  Cell to;    // a's destination (edge only)
  int time = 0;
};

// Space-time A* for one robot. Returns the minimum-cost path honouring the
// robot's constraints, or nullopt when none exists within `horizon` steps.
std::optional<Path> low_level_search(const GridMap& map, Cell start, Cell goal,
                                     std::span<const Constraint> constraints, int horizon);

// Same search reusing a precomputed goal-distance table (distances_to(goal)).
std::optional<Path> low_level_search(const GridMap& map, Cell start, Cell goal,
                                     std::span<const Constraint> constraints, int horizon,
                                     const std::vector<int>& goal_distance);

// Earliest conflict among the paths (paths are held at their last cell after
// they end). Vertex conflicts come before edge conflicts at equal time; ties
// are broken by the robot pair in lexicographic order.
std::optional<Conflict> detect_first_conflict(std::span<const Path> paths);

struct CbsStats {
  std::uint64_t nodes_expanded = 0;
  std::uint64_t nodes_generated = 0;
  double runtime_s = 0.0;
};

// Low-level horizon used by CBS: 4 * (W + H).
int default_horizon(const GridMap& map);

// Sum-of-costs optimal Conflict-Based Search. Throws Timeout when the
// wall-clock budget runs out and Infeasible when the constraint tree is
// exhausted.
Plan cbs_solve(const GridMap& map, const Case& c, double timeout_s, CbsStats* stats = nullptr);

inline constexpr std::uint64_t kJointStateLimit = 10'000'000;

// Exhaustive Dijkstra over the joint configuration space (positions plus a
// "resting for good" flag per robot) under the same conflict rules as CBS.
// Throws TooLarge when free_cells^N * 2^N exceeds kJointStateLimit and
// Infeasible when no collision-free plan exists.
Plan joint_bfs_oracle(const GridMap& map, const Case& c);

struct OracleCheckConfig {
  int instances = 200;
  int max_robots = 3;
  int max_size = 4;
  double max_density = 0.2;
  std::uint64_t seed = 0;
  double cbs_timeout_s = 10.0;
};

struct OracleCheckReport {
  int instances = 0;
  int solved = 0;      // both solvers returned a plan
  int infeasible = 0;  // oracle proved no plan exists and CBS returned none
  int mismatches = 0;
  std::vector<std::string> details;  // one line per mismatch
};

// Seeded random instances (W, H in [2, max_size], density in [0, max_density],
// 1..max_robots robots) solved by both cbs_solve and joint_bfs_oracle. A
// mismatch is a flowtime difference, an invalid CBS plan, or disagreement on
// solvability.
OracleCheckReport oracle_check(const OracleCheckConfig& config);

// Per-timestep labels: labels[t][robot] for t in [0, makespan). Robots that
// finish early emit Idle.
std::vector<std::vector<Action>> plan_to_labels(const Plan& plan);

// Empty string when the plan is a valid solution of the case on the map;
// otherwise a description of the first problem found.
std::string validate_plan(const GridMap& map, const Case& c, const Plan& plan);

}  // namespace gnnmapf
