#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gnnmapf/cbs.hpp"
#include "gnnmapf/grid.hpp"
#include "gnnmapf/policy.hpp"
#include "gnnmapf/rng.hpp"

namespace gnnmapf {

// What a team sees at one decision step.
struct TeamState {
  const GridMap& map;
  std::span<const Cell> positions;
  std::span<const Cell> goals;
  int t = 0;
};

// Produces one proposed action per robot. Implementations must be safe to
// call concurrently from several rollouts.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::vector<Action> act(const TeamState& state, Rng& rng) const = 0;
};

// Decentralized GNN policy: local observations + communication graph.
class GnnController final : public Controller {
 public:
  GnnController(const PolicyParams& params, SelectMode mode, double comm_radius)
      : params_(params), mode_(mode), comm_radius_(comm_radius) {}
  std::vector<Action> act(const TeamState& state, Rng& rng) const override;

 private:
  const PolicyParams& params_;
  SelectMode mode_;
  double comm_radius_;
};

class IdleController final : public Controller {
 public:
  std::vector<Action> act(const TeamState& state, Rng& rng) const override;
};

// Uniform over the five primitives.
class RandomController final : public Controller {
 public:
  std::vector<Action> act(const TeamState& state, Rng& rng) const override;
};

// Replays an expert plan step by step.
class ExpertReplayController final : public Controller {
 public:
  explicit ExpertReplayController(Plan plan) : plan_(std::move(plan)) {}
  std::vector<Action> act(const TeamState& state, Rng& rng) const override;

 private:
  Plan plan_;
};

struct ShieldResult {
  std::vector<Action> actions;
  std::vector<bool> shielded;  // true where the proposal was replaced by idle
  int iterations = 0;          // passes that changed at least one action
};

// Replaces unsafe proposals with idle until nothing changes: moves into
// obstacles or off the map, swaps, several robots entering one cell, and
// moves into a cell whose occupant stays put. Entering a cell that its
// occupant is leaving is allowed.
ShieldResult collision_shield(const GridMap& map, std::span<const Cell> positions,
                              std::span<const Action> proposed);

struct Trajectory {
  std::string case_id;
  int t_max = 0;
  std::vector<std::vector<Cell>> positions;  // [t][robot], t = 0..steps
  std::vector<std::vector<bool>> shielded;   // [t][robot], one row per step
  std::vector<int> arrival;                  // T^i, or t_max if never settled
  std::vector<bool> reached;
  int max_shield_iterations = 0;

  int steps() const noexcept { return static_cast<int>(shielded.size()); }
  bool success() const;
  int robots_at_goal() const;
};

// Makespan-based timeout: 3 * T_MP*.
int timeout_steps(const Plan& expert);

// Closed-loop execution for at most t_max steps; stops early once every
// robot sits on its goal.
Trajectory rollout(const Controller& controller, const GridMap& map, const Case& c, int t_max,
                   std::uint64_t seed, const std::string& case_id = {});
Trajectory rollout(const Controller& controller, const GridMap& map, const Case& c,
                   const Plan& expert, std::uint64_t seed, const std::string& case_id = {});

// Empty string when no two robots share a cell or swap cells at any step.
std::string check_trajectory_safety(const Trajectory& trajectory);

struct MetricsReport {
  std::size_t cases = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;      // alpha
  double flowtime_increase = 0.0;  // delta_FT
  long long flowtime = 0;          // FT
  long long expert_flowtime = 0;   // FT*
  std::vector<std::size_t> reached_histogram;  // [robots at goal] -> case count
};

// Throws EmptyInput on no trajectories and std::invalid_argument when the
// lists are not aligned.
MetricsReport compute_metrics(std::span<const Trajectory> trajectories,
                              std::span<const Plan> expert_plans);

struct DeadlockInfo {
  bool deadlocked = false;
  int stuck_since = -1;  // first step of the final motionless stretch
};

// A failed trajectory whose team configuration did not change over the last
// `window` steps.
DeadlockInfo detect_deadlock(const Trajectory& trajectory, int window = 5);

nlohmann::json trajectory_to_json(const Trajectory& trajectory);
Trajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace gnnmapf
