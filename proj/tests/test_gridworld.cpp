#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"

#include "gnnmapf/error.hpp"
#include "gnnmapf/grid.hpp"
#include "gnnmapf/rng.hpp"

using namespace gnnmapf;

namespace {

GridMap empty_map(int w, int h) { return GridMap(w, h, std::span<const Cell>{}); }

int count_channel(const LocalObservation& obs, int channel) {
  int n = 0;
  const int r = obs.radius;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) n += obs.at(channel, dx, dy);
  return n;
}

// Largest |eigenvalue| by power iteration on S^2, independent of the
// library's eigen-solve.
double spectral_radius(const Gso& g) {
  const int n = g.n;
  std::vector<double> v(n, 1.0), w(n);
  for (int i = 0; i < n; ++i) v[i] += 0.01 * i;
  double lambda2 = 0.0;
  for (int it = 0; it < 2000; ++it) {
    std::vector<double> u(n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) u[i] += g(i, j) * v[j];
    for (int i = 0; i < n; ++i) {
      w[i] = 0.0;
      for (int j = 0; j < n; ++j) w[i] += g(i, j) * u[j];
    }
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    double vn = 0.0;
    for (double x : v) vn += x * x;
    lambda2 = norm / std::sqrt(vn);
    for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
  }
  return std::sqrt(lambda2);
}

std::vector<Cell> random_positions(Rng& rng, int n, int side) {
  std::set<Cell> used;
  std::vector<Cell> out;
  while (static_cast<int>(out.size()) < n) {
    const Cell c{static_cast<int>(uniform_index(rng, side)), static_cast<int>(uniform_index(rng, side))};
    if (used.insert(c).second) out.push_back(c);
  }
  return out;
}

}  // namespace

TEST_CASE("generate_map places floor(rho*W*H) obstacles") {
  const GridMap m = generate_map(20, 20, 0.10, 7);
  CHECK(m.obstacle_count() == 40);
  CHECK(m.obstacles().size() == 40);
  CHECK(m.free_count() == 360);
  CHECK(generate_map(5, 5, 0.0, 3).obstacle_count() == 0);
  CHECK(obstacle_budget(10, 10, 0.3) == 30);
}

TEST_CASE("generate_map is deterministic in its seed") {
  CHECK(generate_map(20, 20, 0.1, 42) == generate_map(20, 20, 0.1, 42));
  CHECK_FALSE(generate_map(20, 20, 0.1, 42) == generate_map(20, 20, 0.1, 43));
}

TEST_CASE("generate_map rejects bad arguments") {
  CHECK_THROWS_AS(generate_map(1, 5, 0.1, 0), ConfigError);
  CHECK_THROWS_AS(generate_map(5, 5, 1.0, 0), ConfigError);
  CHECK_THROWS_AS(generate_map(5, 5, -0.1, 0), ConfigError);
}

TEST_CASE("generate_case fills a 2x2 map with four robots") {
  const GridMap m = empty_map(2, 2);
  const Case c = generate_case(m, 4, 1);
  std::set<Cell> s(c.starts.begin(), c.starts.end()), g(c.goals.begin(), c.goals.end());
  CHECK(s.size() == 4);
  CHECK(g.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(c.starts[i] != c.goals[i]);
  CHECK(validate_case(m, c).empty());
}

TEST_CASE("generate_case with more robots than free cells is infeasible") {
  const GridMap m = generate_map(5, 5, 0.2, 9);
  CHECK_THROWS_AS(generate_case(m, m.free_count() + 1, 0), InfeasibleCase);
}

TEST_CASE("generate_case never uses an isolated free cell") {
  // (0,0) is cut off by obstacles at (1,0) and (0,1).
  const std::vector<Cell> obstacles{{1, 0}, {0, 1}};
  const GridMap m(4, 4, obstacles);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Case c = generate_case(m, 3, seed);
    REQUIRE(validate_case(m, c).empty());
    for (int i = 0; i < 3; ++i) {
      CHECK(c.starts[i] != Cell{0, 0});
      CHECK(c.goals[i] != Cell{0, 0});
    }
  }
}

TEST_CASE("property: generated cases satisfy the case invariants") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const GridMap m = generate_map(12, 9, 0.2, seed);
    const Case c = generate_case(m, 8, derive_seed(seed, 1));
    CHECK(validate_case(m, c).empty());
    const auto comp = m.components();
    for (int i = 0; i < c.robots(); ++i)
      CHECK(comp[m.index(c.starts[i])] == comp[m.index(c.goals[i])]);
  }
}

TEST_CASE("validate_case reports violations") {
  const GridMap m = empty_map(3, 3);
  Case c{"", {{0, 0}, {0, 0}}, {{1, 1}, {2, 2}}};
  CHECK_FALSE(validate_case(m, c).empty());
  c = Case{"", {{0, 0}}, {{0, 0}}};
  CHECK_FALSE(validate_case(m, c).empty());
  c = Case{"", {{0, 0}}, {{3, 0}}};
  CHECK_FALSE(validate_case(m, c).empty());
}

TEST_CASE("observation places the goal relative to the robot") {
  const GridMap m = empty_map(20, 20);
  const std::vector<Cell> pos{{5, 5}}, goal{{6, 5}};
  const LocalObservation obs = build_local_observation(m, pos, goal, 0, 4);
  CHECK(obs.side() == 9);
  CHECK(obs.values.size() == 3 * 81);
  CHECK(obs.at(1, 1, 0) == 1);
  CHECK(count_channel(obs, 1) == 1);
  CHECK(obs.at(2, 0, 0) == 1);
  CHECK(count_channel(obs, 2) == 1);
}

TEST_CASE("observation clamps a distant goal onto the window border") {
  const GridMap m = empty_map(60, 60);
  const std::vector<Cell> pos{{5, 5}}, goal{{5, 50}};
  const LocalObservation obs = build_local_observation(m, pos, goal, 0, 4);
  CHECK(obs.at(1, 0, 4) == 1);
  CHECK(count_channel(obs, 1) == 1);
  const std::vector<Cell> goal2{{40, 0}};
  CHECK(build_local_observation(m, pos, goal2, 0, 4).at(1, 4, -4) == 1);
}

TEST_CASE("observation pads outside the map as obstacles") {
  const GridMap m = empty_map(20, 20);
  const std::vector<Cell> pos{{1, 1}}, goal{{10, 10}};
  const LocalObservation obs = build_local_observation(m, pos, goal, 0, 4);
  for (int dy = -4; dy <= 4; ++dy)
    for (int dx = -4; dx <= 4; ++dx) {
      const bool outside = 1 + dx < 0 || 1 + dy < 0;
      CHECK(obs.at(0, dx, dy) == (outside ? 1 : 0));
    }
  const std::vector<Cell> mid{{10, 10}}, g2{{12, 12}};
  CHECK(count_channel(build_local_observation(m, mid, g2, 0, 4), 0) == 0);
}

TEST_CASE("observation shows obstacles and nearby robots") {
  const std::vector<Cell> obstacles{{6, 5}};
  const GridMap m(20, 20, obstacles);
  const std::vector<Cell> pos{{5, 5}, {5, 7}, {15, 15}}, goals{{0, 0}, {1, 1}, {2, 2}};
  const LocalObservation obs = build_local_observation(m, pos, goals, 0, 4);
  CHECK(obs.at(0, 1, 0) == 1);
  CHECK(count_channel(obs, 0) == 1);
  CHECK(obs.at(2, 0, 2) == 1);
  CHECK(count_channel(obs, 2) == 2);
}

TEST_CASE("property: exactly one goal cell per observation") {
  Rng rng(5);
  const GridMap m = generate_map(20, 20, 0.1, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const Case c = generate_case(m, 6, trial);
    for (std::size_t i = 0; i < 6; ++i)
      CHECK(count_channel(build_local_observation(m, c.starts, c.goals, i, 4), 1) == 1);
  }
}

TEST_CASE("gso examples") {
  const std::vector<Cell> two{{0, 0}, {3, 0}};
  const Gso g = build_gso(two, 5.0);
  CHECK(g.values == std::vector<double>{0, 1, 1, 0});
  const std::vector<Cell> one{{4, 4}};
  CHECK(build_gso(one, 5.0).values == std::vector<double>{0});
  const std::vector<Cell> far{{0, 0}, {6, 0}};
  CHECK(build_gso(far, 5.0).values == std::vector<double>{0, 0, 0, 0});
  const std::vector<Cell> edge{{0, 0}, {3, 4}};
  CHECK(build_gso(edge, 5.0)(0, 1) == 1.0);
}

TEST_CASE("property: gso is symmetric, zero-diagonal, spectrally normalized") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 12));
    const auto pos = random_positions(rng, n, 12);
    const Gso g = build_gso(pos, 5.0);
    bool any = false;
    for (int i = 0; i < n; ++i) {
      CHECK(g(i, i) == 0.0);
      for (int j = 0; j < n; ++j) {
        CHECK(g(i, j) == g(j, i));
        any = any || g(i, j) != 0.0;
      }
    }
    if (any) CHECK(std::abs(spectral_radius(g) - 1.0) < 1e-6);
  }
}

TEST_CASE("property: gso is translation and permutation invariant") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 10));
    auto pos = random_positions(rng, n, 10);
    const Gso g = build_gso(pos, 5.0);
    std::vector<Cell> moved;
    for (Cell c : pos) moved.push_back(c + Cell{7, 3});
    CHECK(build_gso(moved, 5.0).values == g.values);
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    shuffle(std::span<int>(perm), rng);
    std::vector<Cell> permuted(n);
    for (int i = 0; i < n; ++i) permuted[i] = pos[perm[i]];
    const Gso gp = build_gso(permuted, 5.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) CHECK(gp(i, j) == g(perm[i], perm[j]));
  }
}

TEST_CASE("step_positions follows the action convention") {
  const GridMap m = empty_map(5, 5);
  const std::vector<Cell> p{{1, 1}};
  CHECK(step_positions(m, p, std::vector<Action>{Action::Idle}) == p);
  CHECK(step_positions(m, p, std::vector<Action>{Action::Right})[0] == Cell{2, 1});
  CHECK(step_positions(m, p, std::vector<Action>{Action::Up})[0] == Cell{1, 0});
  CHECK(step_positions(m, p, std::vector<Action>{Action::Down})[0] == Cell{1, 2});
  CHECK(step_positions(m, p, std::vector<Action>{Action::Left})[0] == Cell{0, 1});
  const std::vector<Cell> corner{{0, 0}};
  CHECK_THROWS_AS(step_positions(m, corner, std::vector<Action>{Action::Left}), OutOfBounds);
}

TEST_CASE("action_between inverts offset") {
  for (Action a : kAllActions) CHECK(action_between({3, 3}, Cell{3, 3} + offset(a)) == a);
  CHECK_THROWS_AS(action_between({0, 0}, {2, 0}), std::invalid_argument);
}

TEST_CASE("effective density") {
  const DensitySpec d = effective_density(20, 20, 10, 0.1);
  CHECK(d.effective_density == doctest::Approx(50.0 / 400.0));
  CHECK(robots_for_density(20, 20, 0.125, 0.1) == 10);
  CHECK(robots_for_density(28, 28, 0.125, 0.1) == 20);
  CHECK(robots_for_density(4, 4, 0.0, 0.1) == 1);
}
