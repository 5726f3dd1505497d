#include "gnnmapf/executor.hpp"

#include <algorithm>
#include <stdexcept>

#include "gnnmapf/error.hpp"

namespace gnnmapf {

std::vector<Action> GnnController::act(const TeamState& state, Rng& rng) const {
  const std::size_t n = state.positions.size();
  std::vector<LocalObservation> obs;
  obs.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    obs.push_back(build_local_observation(state.map, state.positions, state.goals, i,
                                          params_.arch().fov_radius));
  const Gso gso = build_gso(state.positions, comm_radius_);
  const auto dists = policy_forward(params_, obs, gso);
  std::vector<Action> out;
  out.reserve(n);
  for (const auto& d : dists) out.push_back(select_action(d, mode_, rng));
  return out;
}

std::vector<Action> IdleController::act(const TeamState& state, Rng&) const {
  return std::vector<Action>(state.positions.size(), Action::Idle);
}

std::vector<Action> RandomController::act(const TeamState& state, Rng& rng) const {
  std::vector<Action> out;
  out.reserve(state.positions.size());
  for (std::size_t i = 0; i < state.positions.size(); ++i)
    out.push_back(static_cast<Action>(uniform_index(rng, kNumActions)));
  return out;
}

std::vector<Action> ExpertReplayController::act(const TeamState& state, Rng&) const {
  if (state.positions.size() != plan_.paths.size())
    throw std::invalid_argument("expert plan has a different team size");
  std::vector<Action> out;
  out.reserve(state.positions.size());
  for (std::size_t i = 0; i < state.positions.size(); ++i) {
    const Cell next = plan_.at(i, state.t + 1);
    const Cell here = state.positions[i];
    out.push_back(manhattan(here, next) == 1 ? action_between(here, next) : Action::Idle);
  }
  return out;
}

ShieldResult collision_shield(const GridMap& map, std::span<const Cell> positions,
                              std::span<const Action> proposed) {
  const std::size_t n = positions.size();
  if (proposed.size() != n) throw std::invalid_argument("one action per robot required");
  ShieldResult out;
  out.actions.assign(proposed.begin(), proposed.end());
  out.shielded.assign(n, false);

  std::vector<int> occupant(static_cast<std::size_t>(map.area()), -1);
  for (std::size_t i = 0; i < n; ++i) occupant[map.index(positions[i])] = static_cast<int>(i);

  std::vector<Cell> target(n);
  std::vector<int> entering(static_cast<std::size_t>(map.area()), 0);
  std::vector<bool> stop(n);
  for (;;) {
    std::fill(stop.begin(), stop.end(), false);
    for (std::size_t i = 0; i < n; ++i) {
      target[i] = positions[i] + offset(out.actions[i]);
      if (out.actions[i] != Action::Idle && !map.is_free(target[i])) stop[i] = true;
    }
    for (std::size_t i = 0; i < n; ++i)
      if (out.actions[i] != Action::Idle && !stop[i]) ++entering[map.index(target[i])];
    for (std::size_t i = 0; i < n; ++i) {
      if (out.actions[i] == Action::Idle || stop[i]) continue;
      const int cell = map.index(target[i]);
      if (entering[cell] > 1) stop[i] = true;
      const int j = occupant[cell];
      if (j >= 0) {
        const auto uj = static_cast<std::size_t>(j);
        if (out.actions[uj] == Action::Idle) stop[i] = true;
        else if (target[uj] == positions[i]) stop[i] = stop[uj] = true;
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      if (out.actions[i] != Action::Idle && map.in_bounds(target[i]))
        entering[map.index(target[i])] = 0;
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!stop[i]) continue;
      out.actions[i] = Action::Idle;
      out.shielded[i] = true;
      changed = true;
    }
    if (!changed) break;
    ++out.iterations;
  }
  return out;
}

bool Trajectory::success() const {
  return std::all_of(reached.begin(), reached.end(), [](bool r) { return r; });
}

int Trajectory::robots_at_goal() const {
  return static_cast<int>(std::count(reached.begin(), reached.end(), true));
}

int timeout_steps(const Plan& expert) { return 3 * expert.makespan; }

Trajectory rollout(const Controller& controller, const GridMap& map, const Case& c, int t_max,
                   std::uint64_t seed, const std::string& case_id) {
  if (t_max < 0) throw std::invalid_argument("t_max must be non-negative");
  const std::size_t n = c.starts.size();
  Rng rng(seed);
  Trajectory traj;
  traj.case_id = case_id;
  traj.t_max = t_max;
  traj.positions.push_back(c.starts);
  auto all_home = [&](const std::vector<Cell>& pos) {
    for (std::size_t i = 0; i < n; ++i)
      if (pos[i] != c.goals[i]) return false;
    return true;
  };
  for (int t = 0; t < t_max && !all_home(traj.positions.back()); ++t) {
    const std::vector<Cell>& pos = traj.positions.back();
    const TeamState state{map, pos, c.goals, t};
    const std::vector<Action> proposed = controller.act(state, rng);
    ShieldResult shield = collision_shield(map, pos, proposed);
    traj.max_shield_iterations = std::max(traj.max_shield_iterations, shield.iterations);
    std::vector<Cell> next = step_positions(map, pos, shield.actions);
    traj.shielded.push_back(std::move(shield.shielded));
    traj.positions.push_back(std::move(next));
  }

  const std::size_t last = traj.positions.size() - 1;
  traj.arrival.assign(n, t_max);
  traj.reached.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (traj.positions[last][i] != c.goals[i]) continue;
    std::size_t s = last;
    while (s > 0 && traj.positions[s - 1][i] == c.goals[i]) --s;
    traj.arrival[i] = static_cast<int>(s);
    traj.reached[i] = true;
  }
  return traj;
}

Trajectory rollout(const Controller& controller, const GridMap& map, const Case& c,
                   const Plan& expert, std::uint64_t seed, const std::string& case_id) {
  return rollout(controller, map, c, timeout_steps(expert), seed, case_id);
}

std::string check_trajectory_safety(const Trajectory& trajectory) {
  const auto& P = trajectory.positions;
  for (std::size_t t = 0; t < P.size(); ++t) {
    std::vector<Cell> sorted = P[t];
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      return "vertex collision at t=" + std::to_string(t);
    if (t == 0) continue;
    for (std::size_t i = 0; i < P[t].size(); ++i)
      for (std::size_t j = i + 1; j < P[t].size(); ++j)
        if (P[t][i] == P[t - 1][j] && P[t][j] == P[t - 1][i] && P[t][i] != P[t][j])
          return "swap between robots " + std::to_string(i) + " and " + std::to_string(j) +
                 " at t=" + std::to_string(t);
  }
  return {};
}

MetricsReport compute_metrics(std::span<const Trajectory> trajectories,
                              std::span<const Plan> expert_plans) {
  if (trajectories.empty()) throw EmptyInput("no trajectories to score");
  if (trajectories.size() != expert_plans.size())
    throw std::invalid_argument("one expert plan per trajectory required");
  MetricsReport r;
  r.cases = trajectories.size();
  std::size_t max_team = 0;
  for (const auto& tr : trajectories) max_team = std::max(max_team, tr.reached.size());
  r.reached_histogram.assign(max_team + 1, 0);
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const Trajectory& tr = trajectories[k];
    if (tr.arrival.size() != expert_plans[k].paths.size())
      throw std::invalid_argument("trajectory and expert plan differ in team size");
    if (tr.success()) ++r.successes;
    ++r.reached_histogram[static_cast<std::size_t>(tr.robots_at_goal())];
    for (int a : tr.arrival) r.flowtime += a;
    r.expert_flowtime += expert_plans[k].flowtime;
  }
  r.success_rate = static_cast<double>(r.successes) / static_cast<double>(r.cases);
  r.flowtime_increase =
      r.expert_flowtime == 0
          ? 0.0
          : static_cast<double>(r.flowtime - r.expert_flowtime) /
                static_cast<double>(r.expert_flowtime);
  return r;
}

DeadlockInfo detect_deadlock(const Trajectory& trajectory, int window) {
  DeadlockInfo info;
  if (window < 1) throw std::invalid_argument("deadlock window must be positive");
  if (trajectory.success()) return info;
  const auto& P = trajectory.positions;
  std::size_t s = P.size() - 1;
  while (s > 0 && P[s - 1] == P.back()) --s;
  const auto still = static_cast<int>(P.size() - 1 - s);
  if (still >= window) {
    info.deadlocked = true;
    info.stuck_since = static_cast<int>(s);
  }
  return info;
}

nlohmann::json trajectory_to_json(const Trajectory& trajectory) {
  nlohmann::json positions = nlohmann::json::array();
  for (const auto& row : trajectory.positions) {
    nlohmann::json cells = nlohmann::json::array();
    for (const Cell& c : row) cells.push_back({c.x, c.y});
    positions.push_back(std::move(cells));
  }
  return {{"case_id", trajectory.case_id},
          {"t_max", trajectory.t_max},
          {"positions", std::move(positions)},
          {"shielded", trajectory.shielded},
          {"arrival", trajectory.arrival},
          {"reached", trajectory.reached},
          {"success", trajectory.success()},
          {"max_shield_iterations", trajectory.max_shield_iterations}};
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory tr;
  tr.case_id = j.at("case_id").get<std::string>();
  tr.t_max = j.at("t_max").get<int>();
  for (const auto& row : j.at("positions")) {
    std::vector<Cell> cells;
    for (const auto& c : row) cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
    tr.positions.push_back(std::move(cells));
  }
  tr.shielded = j.at("shielded").get<std::vector<std::vector<bool>>>();
  tr.arrival = j.at("arrival").get<std::vector<int>>();
  tr.reached = j.at("reached").get<std::vector<bool>>();
  tr.max_shield_iterations = j.at("max_shield_iterations").get<int>();
  if (tr.positions.empty() || tr.shielded.size() + 1 != tr.positions.size())
    throw std::invalid_argument("trace needs one shielded row per step");
  return tr;
}

}  // namespace gnnmapf
