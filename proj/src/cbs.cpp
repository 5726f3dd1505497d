#include "gnnmapf/cbs.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <queue>
#include <stdexcept>
#include <tuple>
#include <unordered_set>

#include "gnnmapf/error.hpp"

namespace gnnmapf {

Cell Plan::at(std::size_t robot, int t) const {
  const Path& p = paths.at(robot);
  return p[std::min<std::size_t>(static_cast<std::size_t>(std::max(t, 0)), p.size() - 1)];
}

int path_cost(const Path& path) {
  if (path.empty()) return 0;
  std::size_t last = path.size() - 1;
  while (last > 0 && path[last - 1] == path.back()) --last;
  return static_cast<int>(last);
}

Plan make_plan(std::vector<Path> paths) {
  Plan plan;
  for (Path& p : paths) {
    if (p.empty()) throw std::invalid_argument("make_plan: empty path");
    p.resize(static_cast<std::size_t>(path_cost(p)) + 1);
    plan.flowtime += path_cost(p);
    plan.makespan = std::max(plan.makespan, path_cost(p));
  }
  plan.paths = std::move(paths);
  return plan;
}

int default_horizon(const GridMap& map) { return 4 * (map.width() + map.height()); }

namespace {

std::uint64_t vertex_key(int cell, int t) {
  return (static_cast<std::uint64_t>(t) << 32) | static_cast<std::uint32_t>(cell);
}

std::uint64_t edge_key(int from, int to, int t) {
  return (static_cast<std::uint64_t>(t) << 40) | (static_cast<std::uint64_t>(from) << 20) |
         static_cast<std::uint64_t>(to);
}

struct SearchNode {
  int cell;
  int t;
  int parent;
};

}  // namespace

std::optional<Path> low_level_search(const GridMap& map, Cell start, Cell goal,
                                     std::span<const Constraint> constraints, int horizon) {
  return low_level_search(map, start, goal, constraints, horizon, map.distances_to(goal));
}

std::optional<Path> low_level_search(const GridMap& map, Cell start, Cell goal,
                                     std::span<const Constraint> constraints, int horizon,
                                     const std::vector<int>& goal_distance) {
  if (!map.is_free(start) || !map.is_free(goal)) return std::nullopt;
  if (goal_distance[map.index(start)] < 0) return std::nullopt;

  std::unordered_set<std::uint64_t> vertex_blocked;
  std::unordered_set<std::uint64_t> edge_blocked;
  int goal_block = -1;  // latest time the goal cell is forbidden
  for (const Constraint& c : constraints) {
    if (c.kind == Constraint::Kind::Vertex) {
      vertex_blocked.insert(vertex_key(map.index(c.cell), c.time));
      if (c.cell == goal) goal_block = std::max(goal_block, c.time);
    } else {
      edge_blocked.insert(edge_key(map.index(c.cell), map.index(c.to), c.time));
    }
  }
  if (vertex_blocked.contains(vertex_key(map.index(start), 0))) return std::nullopt;

  const int area = map.area();
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(area) * (horizon + 1), 0);
  std::vector<SearchNode> nodes;
  // (f, g, insertion order, node index); g equals t since every step costs 1.
  using Entry = std::tuple<int, int, std::size_t, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;

  auto push = [&](int cell, int t, int parent) {
    seen[static_cast<std::size_t>(t) * area + cell] = 1;
    nodes.push_back({cell, t, parent});
    const int idx = static_cast<int>(nodes.size()) - 1;
    open.emplace(t + goal_distance[cell], t, nodes.size(), idx);
  };
  push(map.index(start), 0, -1);

  const int goal_index = map.index(goal);
  while (!open.empty()) {
    const int idx = std::get<3>(open.top());
    open.pop();
    const SearchNode node = nodes[idx];
    if (node.cell == goal_index && node.t > goal_block) {
      Path path(static_cast<std::size_t>(node.t) + 1);
      for (int i = idx; i >= 0; i = nodes[i].parent) path[nodes[i].t] = map.cell(nodes[i].cell);
      return path;
    }
    if (node.t >= horizon) continue;
    const Cell here = map.cell(node.cell);
    const int nt = node.t + 1;
    for (Action a : kAllActions) {
      const Cell next = here + offset(a);
      if (!map.is_free(next)) continue;
      const int ni = map.index(next);
      if (goal_distance[ni] < 0 || seen[static_cast<std::size_t>(nt) * area + ni]) continue;
      if (vertex_blocked.contains(vertex_key(ni, nt))) continue;
      if (a != Action::Idle && edge_blocked.contains(edge_key(node.cell, ni, nt))) continue;
      push(ni, nt, idx);
    }
  }
  return std::nullopt;
}

std::optional<Conflict> detect_first_conflict(std::span<const Path> paths) {
  std::size_t longest = 0;
  for (const Path& p : paths) longest = std::max(longest, p.size());
  auto at = [&](std::size_t i, std::size_t t) {
    const Path& p = paths[i];
    return p[std::min(t, p.size() - 1)];
  };
  const std::size_t n = paths.size();
  for (std::size_t t = 0; t < longest; ++t) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (at(i, t) == at(j, t)) {
          return Conflict{Conflict::Kind::Vertex, static_cast<int>(i), static_cast<int>(j),
                          at(i, t), at(i, t), static_cast<int>(t)};
        }
    if (t == 0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (at(i, t - 1) == at(i, t)) continue;
      for (std::size_t j = i + 1; j < n; ++j)
        if (at(i, t - 1) == at(j, t) && at(j, t - 1) == at(i, t)) {
          return Conflict{Conflict::Kind::Edge, static_cast<int>(i), static_cast<int>(j),
                          at(i, t - 1), at(i, t), static_cast<int>(t)};
        }
    }
  }
  return std::nullopt;
}

namespace {

struct CtNode {
  int parent = -1;
  Constraint constraint;  // the constraint added by this node (unused at root)
  std::vector<Path> paths;
  int cost = 0;
};

}  // namespace

Plan cbs_solve(const GridMap& map, const Case& c, double timeout_s, CbsStats* stats) {
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();
  const auto deadline = started + std::chrono::duration_cast<Clock::duration>(
                                      std::chrono::duration<double>(timeout_s));
  CbsStats local;
  CbsStats& st = stats ? *stats : local;
  st = {};
  auto finish = [&] { st.runtime_s = std::chrono::duration<double>(Clock::now() - started).count(); };

  const int n = c.robots();
  if (c.goals.size() != c.starts.size() || n == 0)
    throw std::invalid_argument("cbs_solve: malformed case");
  const int horizon = default_horizon(map);
  std::vector<std::vector<int>> goal_distance;
  goal_distance.reserve(n);
  for (Cell g : c.goals) goal_distance.push_back(map.distances_to(g));

  std::vector<CtNode> tree;
  CtNode root;
  for (int r = 0; r < n; ++r) {
    auto path = low_level_search(map, c.starts[r], c.goals[r], {}, horizon, goal_distance[r]);
    if (!path) {
      finish();
      throw Infeasible("robot " + std::to_string(r) + " cannot reach its goal");
    }
    root.cost += path_cost(*path);
    root.paths.push_back(std::move(*path));
  }
  tree.push_back(std::move(root));
  st.nodes_generated = 1;

  // (cost, insertion order) min-heap over tree indices.
  using Entry = std::pair<int, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  open.emplace(tree[0].cost, 0);

  std::vector<Constraint> robot_constraints;
  while (!open.empty()) {
    if (Clock::now() > deadline) {
      finish();
      throw Timeout("CBS exceeded " + std::to_string(timeout_s) + " s after " +
                    std::to_string(st.nodes_expanded) + " expansions");
    }
    const std::size_t idx = open.top().second;
    open.pop();
    ++st.nodes_expanded;

    const auto conflict = detect_first_conflict(tree[idx].paths);
    if (!conflict) {
      finish();
      return make_plan(tree[idx].paths);
    }

    std::array<Constraint, 2> branches;
    if (conflict->kind == Conflict::Kind::Vertex) {
      branches = {Constraint::vertex(conflict->a, conflict->cell, conflict->time),
                  Constraint::vertex(conflict->b, conflict->cell, conflict->time)};
    } else {
      branches = {Constraint::edge(conflict->a, conflict->cell, conflict->to, conflict->time),
                  Constraint::edge(conflict->b, conflict->to, conflict->cell, conflict->time)};
    }

    for (const Constraint& added : branches) {
      const int r = added.robot;
      robot_constraints.assign(1, added);
      for (int k = static_cast<int>(idx); k > 0; k = tree[k].parent)
        if (tree[k].constraint.robot == r) robot_constraints.push_back(tree[k].constraint);

      auto path = low_level_search(map, c.starts[r], c.goals[r], robot_constraints, horizon,
                                   goal_distance[r]);
      if (!path) continue;
      CtNode child;
      child.parent = static_cast<int>(idx);
      child.constraint = added;
      child.paths = tree[idx].paths;
      child.cost = tree[idx].cost - path_cost(child.paths[r]) + path_cost(*path);
      child.paths[r] = std::move(*path);
      tree.push_back(std::move(child));
      ++st.nodes_generated;
      open.emplace(tree.back().cost, tree.size() - 1);
    }
  }
  finish();
  throw Infeasible("constraint tree exhausted after " + std::to_string(st.nodes_expanded) +
                   " expansions");
}

std::vector<std::vector<Action>> plan_to_labels(const Plan& plan) {
  std::vector<std::vector<Action>> labels(plan.makespan,
                                          std::vector<Action>(plan.paths.size(), Action::Idle));
  for (int t = 0; t < plan.makespan; ++t)
    for (std::size_t i = 0; i < plan.paths.size(); ++i)
      labels[t][i] = action_between(plan.at(i, t), plan.at(i, t + 1));
  return labels;
}

std::string validate_plan(const GridMap& map, const Case& c, const Plan& plan) {
  if (plan.paths.size() != c.starts.size()) return "plan robot count differs from case";
  int flowtime = 0;
  int makespan = 0;
  for (std::size_t i = 0; i < plan.paths.size(); ++i) {
    const Path& p = plan.paths[i];
    const std::string who = "robot " + std::to_string(i);
    if (p.empty()) return who + ": empty path";
    if (p.front() != c.starts[i]) return who + ": path does not begin at the start";
    if (p.back() != c.goals[i]) return who + ": path does not end at the goal";
    for (std::size_t t = 0; t < p.size(); ++t) {
      if (!map.is_free(p[t])) return who + ": path enters a blocked cell";
      if (t > 0 && manhattan(p[t - 1], p[t]) > 1) return who + ": path jumps";
    }
    flowtime += path_cost(p);
    makespan = std::max(makespan, path_cost(p));
  }
  if (flowtime != plan.flowtime) return "stored flowtime disagrees with paths";
  if (makespan != plan.makespan) return "stored makespan disagrees with paths";
  if (auto conflict = detect_first_conflict(plan.paths)) {
    return std::string(conflict->kind == Conflict::Kind::Vertex ? "vertex" : "edge") +
           " conflict between robots " + std::to_string(conflict->a) + " and " +
           std::to_string(conflict->b) + " at t=" + std::to_string(conflict->time);
  }
  return {};
}

}  // namespace gnnmapf
