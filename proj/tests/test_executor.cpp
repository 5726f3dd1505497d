#include <set>

#include "doctest.h"

#include "gnnmapf/error.hpp"
#include "gnnmapf/executor.hpp"

using namespace gnnmapf;

namespace {

GridMap empty_map(int w, int h) { return GridMap(w, h, std::span<const Cell>{}); }

ShieldResult run_shield(const GridMap& m, const std::vector<Cell>& pos,
                        const std::vector<Action>& proposed) {
  return collision_shield(m, pos, proposed);
}

std::vector<Action> shield(const GridMap& m, const std::vector<Cell>& pos,
                           const std::vector<Action>& proposed) {
  return collision_shield(m, pos, proposed).actions;
}

// Steps every robot one cell along x toward its goal.
class TowardGoalX final : public Controller {
 public:
  std::vector<Action> act(const TeamState& s, Rng&) const override {
    std::vector<Action> out;
    for (std::size_t i = 0; i < s.positions.size(); ++i) {
      const int dx = s.goals[i].x - s.positions[i].x;
      out.push_back(dx > 0 ? Action::Right : dx < 0 ? Action::Left : Action::Idle);
    }
    return out;
  }
};

// Alternates right and left forever.
class Oscillate final : public Controller {
 public:
  std::vector<Action> act(const TeamState& s, Rng&) const override {
    return std::vector<Action>(s.positions.size(), s.t % 2 == 0 ? Action::Right : Action::Left);
  }
};

Trajectory fake(std::vector<bool> reached, std::vector<int> arrival) {
  Trajectory t;
  t.reached = std::move(reached);
  t.arrival = std::move(arrival);
  return t;
}

}  // namespace

TEST_CASE("shield stops a swap") {
  const GridMap m = empty_map(4, 4);
  CHECK(shield(m, {{0, 0}, {1, 0}}, {Action::Right, Action::Left}) ==
        std::vector<Action>{Action::Idle, Action::Idle});
}

TEST_CASE("shield stops moves into obstacles and off the map only") {
  const std::vector<Cell> obstacles{{1, 1}};
  const GridMap m(4, 4, obstacles);
  const auto r = run_shield(m, {{1, 0}, {3, 3}, {2, 2}},
                                  std::vector<Action>{Action::Down, Action::Right, Action::Up});
  CHECK(r.actions == std::vector<Action>{Action::Idle, Action::Idle, Action::Up});
  CHECK(r.shielded == std::vector<bool>{true, true, false});
}

TEST_CASE("shield lets a conflict-free chain through") {
  const GridMap m = empty_map(4, 4);
  const auto r = run_shield(m, {{0, 0}, {1, 0}}, {Action::Right, Action::Right});
  CHECK(r.actions == std::vector<Action>{Action::Right, Action::Right});
  CHECK(r.iterations == 0);
}

TEST_CASE("shield stops every robot entering a shared cell") {
  const GridMap m = empty_map(3, 3);
  CHECK(shield(m, {{0, 1}, {2, 1}, {1, 0}}, {Action::Right, Action::Left, Action::Down}) ==
        std::vector<Action>(3, Action::Idle));
}

TEST_CASE("shield cascades through a blocked chain") {
  const GridMap m = empty_map(5, 1);
  // Head runs into the wall; everyone behind must stop too.
  const auto r = run_shield(m, {{2, 0}, {3, 0}, {4, 0}},
                                  std::vector<Action>(3, Action::Right));
  CHECK(r.actions == std::vector<Action>(3, Action::Idle));
  CHECK(r.iterations == 3);
  CHECK(shield(m, {{0, 0}, {1, 0}}, {Action::Right, Action::Idle}) ==
        std::vector<Action>{Action::Idle, Action::Idle});
}

TEST_CASE("shield allows a rotation around a square") {
  const GridMap m = empty_map(2, 2);
  const std::vector<Action> cycle{Action::Right, Action::Down, Action::Left, Action::Up};
  CHECK(shield(m, {{0, 0}, {1, 0}, {1, 1}, {0, 1}}, cycle) == cycle);
}

TEST_CASE("property: shielded actions are safe and a fixed point") {
  Rng rng(31);
  const GridMap m = generate_map(8, 8, 0.1, 31);
  for (int trial = 0; trial < 500; ++trial) {
    const Case c = generate_case(m, 12, trial);
    std::vector<Action> proposed;
    for (int i = 0; i < 12; ++i) proposed.push_back(static_cast<Action>(uniform_index(rng, kNumActions)));
    const auto r = collision_shield(m, c.starts, proposed);
    CHECK(r.iterations <= 12);
    const auto next = step_positions(m, c.starts, r.actions);
    std::set<Cell> cells(next.begin(), next.end());
    CHECK(cells.size() == next.size());
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(m.is_free(next[i]));
      CHECK(r.shielded[i] == (r.actions[i] != proposed[i]));
      for (std::size_t j = i + 1; j < 12; ++j)
        CHECK_FALSE((next[i] == c.starts[j] && next[j] == c.starts[i] && next[i] != next[j]));
    }
    CHECK(collision_shield(m, c.starts, r.actions).actions == r.actions);
  }
}

TEST_CASE("expert replay reproduces the expert flowtime") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const GridMap m = generate_map(10, 10, 0.1, seed);
    const Case c = generate_case(m, 4, seed);
    const Plan p = cbs_solve(m, c, 30.0);
    const Trajectory t = rollout(ExpertReplayController(p), m, c, p, seed);
    CHECK(t.success());
    CHECK(t.steps() == p.makespan);
    int ft = 0;
    for (int a : t.arrival) ft += a;
    CHECK(ft == p.flowtime);
    CHECK(t.max_shield_iterations == 0);
  }
}

TEST_CASE("idle policy fails with off-goal robots at the timeout") {
  const GridMap m = empty_map(6, 6);
  const Case c{"", {{0, 0}, {3, 3}}, {{5, 5}, {3, 4}}};
  const Plan p = cbs_solve(m, c, 10.0);
  CHECK(timeout_steps(p) == 3 * p.makespan);
  const Trajectory t = rollout(IdleController{}, m, c, p, 0);
  CHECK_FALSE(t.success());
  CHECK(t.steps() == timeout_steps(p));
  CHECK(t.arrival == std::vector<int>{t.t_max, t.t_max});
  CHECK(t.robots_at_goal() == 0);
}

TEST_CASE("arrival is the start of the final stay at the goal") {
  const GridMap m = empty_map(4, 1);
  // Robot passes its goal at t=1, leaves, and returns at t=3 via oscillation.
  const Case c{"", {{0, 0}}, {{1, 0}}};
  const Trajectory t = rollout(Oscillate{}, m, c, 4, 0);
  CHECK(t.steps() == 1);
  CHECK(t.arrival[0] == 1);
  const Case far{"", {{0, 0}}, {{2, 0}}};
  const Trajectory u = rollout(Oscillate{}, m, far, 6, 0);
  CHECK_FALSE(u.success());
  CHECK(u.arrival[0] == 6);
}

TEST_CASE("rollouts are reproducible in their seed") {
  const GridMap m = generate_map(10, 10, 0.1, 2);
  const Case c = generate_case(m, 6, 2);
  const Trajectory a = rollout(RandomController{}, m, c, 30, 9);
  const Trajectory b = rollout(RandomController{}, m, c, 30, 9);
  CHECK(a.positions == b.positions);
  CHECK(check_trajectory_safety(a).empty());
}

TEST_CASE("safety checker flags collisions") {
  Trajectory t;
  t.positions = {{{0, 0}, {1, 0}}, {{1, 0}, {0, 0}}};
  CHECK_FALSE(check_trajectory_safety(t).empty());
  t.positions = {{{0, 0}, {2, 0}}, {{1, 0}, {1, 0}}};
  CHECK_FALSE(check_trajectory_safety(t).empty());
  t.positions = {{{0, 0}, {1, 0}}, {{1, 0}, {2, 0}}};
  CHECK(check_trajectory_safety(t).empty());
}

TEST_CASE("metrics on a hand-built fixture") {
  const std::vector<Trajectory> trajs{fake({true}, {5}), fake({true, false}, {3, 4})};
  const std::vector<Plan> plans{make_plan({{{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}}}),
                                make_plan({{{0, 1}, {1, 1}, {2, 1}}, {{0, 2}, {1, 2}, {2, 2}, {3, 2}}})};
  REQUIRE(plans[0].flowtime + plans[1].flowtime == 10);
  const MetricsReport r = compute_metrics(trajs, plans);
  CHECK(r.success_rate == 0.5);
  CHECK(r.flowtime == 12);
  CHECK(r.expert_flowtime == 10);
  CHECK(r.flowtime_increase == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(r.reached_histogram == std::vector<std::size_t>{0, 2, 0});
  CHECK_THROWS_AS(compute_metrics({}, {}), EmptyInput);
  CHECK_THROWS_AS(compute_metrics(trajs, std::span<const Plan>(plans.data(), 1)),
                  std::invalid_argument);
}

TEST_CASE("deadlock: mutual shielding in a corridor") {
  const GridMap m = empty_map(8, 1);
  const Case c{"", {{0, 0}, {7, 0}}, {{7, 0}, {0, 0}}};
  const Trajectory t = rollout(TowardGoalX{}, m, c, 20, 0);
  CHECK_FALSE(t.success());
  CHECK(t.positions[3] == std::vector<Cell>{{3, 0}, {4, 0}});
  const DeadlockInfo d = detect_deadlock(t);
  CHECK(d.deadlocked);
  CHECK(d.stuck_since == 3);
  CHECK(t.shielded[3] == std::vector<bool>{true, true});
}

TEST_CASE("deadlock: success and livelock are not deadlocks") {
  const GridMap m = empty_map(8, 1);
  const Case go{"", {{0, 0}}, {{3, 0}}};
  CHECK_FALSE(detect_deadlock(rollout(TowardGoalX{}, m, go, 10, 0)).deadlocked);
  const Case far{"", {{0, 0}}, {{5, 0}}};
  const Trajectory live = rollout(Oscillate{}, m, far, 20, 0);
  CHECK_FALSE(live.success());
  CHECK_FALSE(detect_deadlock(live).deadlocked);
}

TEST_CASE("trajectory JSON round trip") {
  const GridMap m = generate_map(6, 6, 0.1, 4);
  const Case c = generate_case(m, 3, 4);
  const Trajectory t = rollout(RandomController{}, m, c, 12, 4, "map0000/case0001");
  const Trajectory back = trajectory_from_json(trajectory_to_json(t));
  CHECK(back.positions == t.positions);
  CHECK(back.shielded == t.shielded);
  CHECK(back.arrival == t.arrival);
  CHECK(back.case_id == t.case_id);
  auto j = trajectory_to_json(t);
  j["shielded"].push_back(std::vector<bool>{true, true, true});
  CHECK_THROWS_AS(trajectory_from_json(j), std::invalid_argument);
}
