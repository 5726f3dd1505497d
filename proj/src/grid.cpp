#include "gnnmapf/grid.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <stdexcept>

#include "gnnmapf/error.hpp"
#include "gnnmapf/rng.hpp"

namespace gnnmapf {

Action action_between(Cell from, Cell to) {
  const Cell d = to - from;
  for (Action a : kAllActions) {
    if (offset(a) == d) return a;
  }
  throw std::invalid_argument("cells (" + std::to_string(from.x) + "," +
                              std::to_string(from.y) + ") and (" + std::to_string(to.x) +
                              "," + std::to_string(to.y) + ") are not adjacent");
}

const char* action_name(Action a) {
  switch (a) {
    case Action::Idle: return "idle";
    case Action::Up: return "up";
    case Action::Left: return "left";
    case Action::Down: return "down";
    case Action::Right: return "right";
  }
  return "?";
}

GridMap::GridMap(int width, int height, std::span<const Cell> obstacles, double density,
                 std::uint64_t seed, std::string id)
    : width_(width),
      height_(height),
      occupancy_(static_cast<std::size_t>(width) * height, 0),
      density_(density),
      seed_(seed),
      id_(std::move(id)) {
  if (width < 1 || height < 1) throw std::invalid_argument("map dimensions must be positive");
  for (Cell c : obstacles) {
    if (!in_bounds(c)) throw OutOfBounds("obstacle outside the map");
    auto& slot = occupancy_[index(c)];
    if (slot == 0) ++obstacle_count_;
    slot = 1;
  }
}

std::vector<Cell> GridMap::obstacles() const {
  std::vector<Cell> out;
  out.reserve(obstacle_count_);
  for (int i = 0; i < area(); ++i)
    if (occupancy_[i]) out.push_back(cell(i));
  return out;
}

std::vector<Cell> GridMap::free_cells() const {
  std::vector<Cell> out;
  out.reserve(free_count());
  for (int i = 0; i < area(); ++i)
    if (!occupancy_[i]) out.push_back(cell(i));
  return out;
}

std::vector<int> GridMap::components() const {
  std::vector<int> label(area(), -1);
  int next = 0;
  std::vector<int> stack;
  for (int s = 0; s < area(); ++s) {
    if (occupancy_[s] || label[s] >= 0) continue;
    label[s] = next;
    stack.push_back(s);
    while (!stack.empty()) {
      const Cell c = cell(stack.back());
      stack.pop_back();
      for (Action a : kAllActions) {
        if (a == Action::Idle) continue;
        const Cell n = c + offset(a);
        if (!is_free(n) || label[index(n)] >= 0) continue;
        label[index(n)] = next;
        stack.push_back(index(n));
      }
    }
    ++next;
  }
  return label;
}

std::vector<int> GridMap::distances_to(Cell target) const {
  std::vector<int> dist(area(), -1);
  if (!is_free(target)) return dist;
  std::deque<int> queue{index(target)};
  dist[index(target)] = 0;
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    const Cell c = cell(i);
    for (Action a : kAllActions) {
      if (a == Action::Idle) continue;
      const Cell n = c + offset(a);
      if (!is_free(n) || dist[index(n)] >= 0) continue;
      dist[index(n)] = dist[i] + 1;
      queue.push_back(index(n));
    }
  }
  return dist;
}

int obstacle_budget(int width, int height, double density) {
  // 1e-9 absorbs products such as 0.29 * 100 = 28.999999999999996.
  return static_cast<int>(std::floor(density * width * height + 1e-9));
}

GridMap generate_map(int width, int height, double density, std::uint64_t seed) {
  if (width < 2 || height < 2) throw ConfigError("map width and height must be >= 2");
  if (!(density >= 0.0 && density < 1.0)) throw ConfigError("obstacle density must lie in [0, 1)");

  const int budget = obstacle_budget(width, height, density);
  std::vector<int> cells(static_cast<std::size_t>(width) * height);
  std::iota(cells.begin(), cells.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first `budget` slots are a uniform sample.
  for (int i = 0; i < budget; ++i) {
    const auto j = i + static_cast<int>(uniform_index(rng, cells.size() - i));
    std::swap(cells[i], cells[j]);
  }
  std::vector<Cell> obstacles;
  obstacles.reserve(budget);
  for (int i = 0; i < budget; ++i) obstacles.push_back({cells[i] % width, cells[i] / width});
  std::sort(obstacles.begin(), obstacles.end(),
            [](Cell a, Cell b) { return std::pair(a.y, a.x) < std::pair(b.y, b.x); });
  return GridMap(width, height, obstacles, density, seed);
}

Case generate_case(const GridMap& map, int robots, std::uint64_t seed, int max_attempts) {
  if (robots < 1) throw ConfigError("robot count must be positive");
  const std::vector<Cell> free = map.free_cells();
  if (static_cast<std::size_t>(robots) > free.size()) {
    throw InfeasibleCase("need " + std::to_string(robots) + " free cells, map has " +
                         std::to_string(free.size()));
  }
  const std::vector<int> component = map.components();

  Rng rng(seed);
  std::vector<Cell> pool = free;
  std::vector<std::uint8_t> goal_taken(map.area());
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    shuffle(std::span(pool), rng);
    Case c;
    c.map_id = map.id();
    c.starts.assign(pool.begin(), pool.begin() + robots);
    std::fill(goal_taken.begin(), goal_taken.end(), 0);

    bool ok = true;
    std::vector<Cell> candidates;
    for (int r = 0; r < robots && ok; ++r) {
      const Cell start = c.starts[r];
      candidates.clear();
      for (Cell g : free) {
        if (g != start && !goal_taken[map.index(g)] &&
            component[map.index(g)] == component[map.index(start)])
          candidates.push_back(g);
      }
      if (candidates.empty()) {
        ok = false;
        break;
      }
      const Cell goal = candidates[uniform_index(rng, candidates.size())];
      goal_taken[map.index(goal)] = 1;
      c.goals.push_back(goal);
    }
    if (ok) return c;
  }
  throw InfeasibleCase("no valid start/goal assignment for " + std::to_string(robots) +
                       " robots after " + std::to_string(max_attempts) + " attempts");
}

std::string validate_case(const GridMap& map, const Case& c) {
  if (c.starts.size() != c.goals.size()) return "start and goal counts differ";
  if (c.starts.empty()) return "case has no robots";
  auto distinct = [](std::vector<Cell> cells) {
    std::sort(cells.begin(), cells.end());
    return std::adjacent_find(cells.begin(), cells.end()) == cells.end();
  };
  if (!distinct(c.starts)) return "starts are not pairwise distinct";
  if (!distinct(c.goals)) return "goals are not pairwise distinct";
  const std::vector<int> component = map.components();
  for (std::size_t i = 0; i < c.starts.size(); ++i) {
    const Cell s = c.starts[i];
    const Cell g = c.goals[i];
    const std::string who = "robot " + std::to_string(i);
    if (!map.is_free(s)) return who + ": start is not a free cell";
    if (!map.is_free(g)) return who + ": goal is not a free cell";
    if (s == g) return who + ": start equals goal";
    if (component[map.index(s)] != component[map.index(g)]) return who + ": goal unreachable";
  }
  return {};
}

LocalObservation build_local_observation(const GridMap& map, std::span<const Cell> positions,
                                         std::span<const Cell> goals, std::size_t robot,
                                         int fov_radius) {
  LocalObservation obs;
  obs.radius = fov_radius;
  const int side = obs.side();
  obs.values.assign(static_cast<std::size_t>(LocalObservation::kChannels) * side * side, 0);
  auto slot = [&](int channel, int dx, int dy) -> std::uint8_t& {
    return obs.values[(channel * side + (dy + fov_radius)) * side + (dx + fov_radius)];
  };

  const Cell self = positions[robot];
  for (int dy = -fov_radius; dy <= fov_radius; ++dy) {
    for (int dx = -fov_radius; dx <= fov_radius; ++dx) {
      const Cell c{self.x + dx, self.y + dy};
      if (!map.in_bounds(c) || map.is_obstacle(c)) slot(0, dx, dy) = 1;
    }
  }

  const Cell rel = goals[robot] - self;
  slot(1, std::clamp(rel.x, -fov_radius, fov_radius), std::clamp(rel.y, -fov_radius, fov_radius)) = 1;

  slot(2, 0, 0) = 1;
  for (std::size_t j = 0; j < positions.size(); ++j) {
    if (j == robot) continue;
    const Cell d = positions[j] - self;
    if (std::abs(d.x) <= fov_radius && std::abs(d.y) <= fov_radius) slot(2, d.x, d.y) = 1;
  }
  return obs;
}

Gso build_gso(std::span<const Cell> positions, double comm_radius,
              GsoNormalization normalization) {
  Gso gso;
  gso.n = static_cast<int>(positions.size());
  gso.comm_radius = comm_radius;
  gso.normalization = normalization;
  const int n = gso.n;
  gso.values.assign(static_cast<std::size_t>(n) * n, 0.0);

  const double r2 = comm_radius * comm_radius;
  bool any_edge = false;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const Cell d = positions[i] - positions[j];
      if (static_cast<double>(d.x) * d.x + static_cast<double>(d.y) * d.y <= r2) {
        gso.values[i * n + j] = 1.0;
        any_edge = true;
      }
    }
  }
  if (!any_edge || normalization == GsoNormalization::None) return gso;

  // The eigen-solve runs on the adjacency with robots sorted by cell, so the
  // scale is identical for every ordering of the same team.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return positions[a] < positions[b]; });
  Eigen::MatrixXd sorted(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) sorted(i, j) = gso.values[order[i] * n + order[j]];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sorted, Eigen::EigenvaluesOnly);
  double lambda = solver.eigenvalues().cwiseAbs().maxCoeff();
  // Integer spectral radii (pairs, cliques) come back a few ulps off.
  const double nearest = std::round(lambda);
  if (std::abs(lambda - nearest) <= 1e-12 * nearest) lambda = nearest;
  for (double& v : gso.values) v /= lambda;
  return gso;
}

std::vector<Cell> step_positions(const GridMap& map, std::span<const Cell> positions,
                                 std::span<const Action> actions) {
  if (positions.size() != actions.size())
    throw std::invalid_argument("step_positions: positions/actions length mismatch");
  std::vector<Cell> next(positions.begin(), positions.end());
  for (std::size_t i = 0; i < next.size(); ++i) {
    next[i] = positions[i] + offset(actions[i]);
    if (!map.in_bounds(next[i])) {
      throw OutOfBounds("robot " + std::to_string(i) + " moved off the map by action " +
                        action_name(actions[i]));
    }
  }
  return next;
}

DensitySpec effective_density(int width, int height, int robots, double obstacle_density) {
  const double area = static_cast<double>(width) * height;
  return {robots, obstacle_density,
          (robots + obstacle_budget(width, height, obstacle_density)) / area};
}

int robots_for_density(int width, int height, double beta, double obstacle_density) {
  const double area = static_cast<double>(width) * height;
  const long n = std::lround(beta * area) - obstacle_budget(width, height, obstacle_density);
  return static_cast<int>(std::max(1L, n));
}

}  // namespace gnnmapf
