#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>

#include "gnnmapf/cbs.hpp"
#include "gnnmapf/error.hpp"

namespace gnnmapf {

namespace {

// Choice index kFinish means "rest at the goal from now on".
constexpr int kFinish = kNumActions;

}  // namespace

Plan joint_bfs_oracle(const GridMap& map, const Case& c) {
  const int n = c.robots();
  if (n == 0 || c.goals.size() != c.starts.size())
    throw std::invalid_argument("joint_bfs_oracle: malformed case");

  const std::vector<Cell> free = map.free_cells();
  const auto f = static_cast<std::uint64_t>(free.size());
  const double estimate = std::pow(static_cast<double>(f), n) * std::pow(2.0, n);
  if (estimate > static_cast<double>(kJointStateLimit)) {
    throw TooLarge("joint state space of " + std::to_string(static_cast<long long>(estimate)) +
                   " states exceeds the limit of " + std::to_string(kJointStateLimit));
  }
  std::vector<int> slot_of(map.area(), -1);
  for (std::size_t i = 0; i < free.size(); ++i) slot_of[map.index(free[i])] = static_cast<int>(i);

  const std::uint64_t masks = 1ULL << n;
  const std::uint64_t total = static_cast<std::uint64_t>(estimate);
  const std::uint64_t all_done = masks - 1;

  auto encode = [&](const std::vector<int>& slots, std::uint64_t mask) {
    std::uint64_t id = 0;
    for (int i = n - 1; i >= 0; --i) id = id * f + static_cast<std::uint64_t>(slots[i]);
    return id * masks + mask;
  };
  auto decode = [&](std::uint64_t id, std::vector<int>& slots) {
    const std::uint64_t mask = id % masks;
    id /= masks;
    for (int i = 0; i < n; ++i) {
      slots[i] = static_cast<int>(id % f);
      id /= f;
    }
    return mask;
  };

  std::vector<int> goal_slot(n);
  std::vector<int> start_slot(n);
  for (int i = 0; i < n; ++i) {
    start_slot[i] = slot_of[map.index(c.starts[i])];
    goal_slot[i] = slot_of[map.index(c.goals[i])];
    if (start_slot[i] < 0 || goal_slot[i] < 0)
      throw std::invalid_argument("joint_bfs_oracle: start or goal on a blocked cell");
  }

  constexpr int kUnseen = -1;
  std::vector<int> dist(total, kUnseen);
  std::vector<std::uint64_t> parent(total, 0);
  std::vector<std::uint8_t> closed(total, 0);

  using Entry = std::pair<int, std::uint64_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  const std::uint64_t source = encode(start_slot, 0);
  dist[source] = 0;
  parent[source] = source;
  open.emplace(0, source);

  std::vector<int> slots(n);
  std::vector<int> next(n);
  std::vector<int> choice(n);
  std::vector<int> active;
  std::uint64_t target = total;

  while (!open.empty()) {
    const auto [d, id] = open.top();
    open.pop();
    if (closed[id]) continue;
    closed[id] = 1;
    const std::uint64_t mask = decode(id, slots);
    if (mask == all_done) {
      target = id;
      break;
    }
    active.clear();
    for (int i = 0; i < n; ++i)
      if (!(mask >> i & 1ULL)) active.push_back(i);

    // Enumerate every combination of choices for the robots still active.
    std::fill(choice.begin(), choice.end(), 0);
    for (;;) {
      bool valid = true;
      std::uint64_t next_mask = mask;
      int step_cost = 0;
      next = slots;
      for (int i : active) {
        if (choice[i] == kFinish) {
          if (slots[i] != goal_slot[i]) {
            valid = false;
            break;
          }
          next_mask |= 1ULL << i;
        } else {
          const Cell to = free[slots[i]] + offset(static_cast<Action>(choice[i]));
          if (!map.is_free(to)) {
            valid = false;
            break;
          }
          next[i] = slot_of[map.index(to)];
          ++step_cost;
        }
      }
      if (valid) {
        for (int i = 0; i < n && valid; ++i)
          for (int j = i + 1; j < n && valid; ++j) {
            if (next[i] == next[j]) valid = false;
            if (next[i] == slots[j] && next[j] == slots[i] && next[i] != slots[i]) valid = false;
          }
      }
      if (valid) {
        const std::uint64_t to_id = encode(next, next_mask);
        const int nd = d + step_cost;
        if (!closed[to_id] && (dist[to_id] == kUnseen || nd < dist[to_id])) {
          dist[to_id] = nd;
          parent[to_id] = id;
          open.emplace(nd, to_id);
        }
      }
      // Odometer increment over the active robots' choices.
      std::size_t k = 0;
      for (; k < active.size(); ++k) {
        if (++choice[active[k]] <= kFinish) break;
        choice[active[k]] = 0;
      }
      if (k == active.size()) break;
    }
  }
  if (target == total) throw Infeasible("joint configuration space exhausted without a solution");

  // Rebuild the state chain; a transition advances time unless every robot
  // that was still active chose to finish.
  std::vector<std::uint64_t> chain{target};
  while (chain.back() != source) chain.push_back(parent[chain.back()]);
  std::reverse(chain.begin(), chain.end());

  std::vector<Path> paths(n);
  std::vector<int> prev_slots(n);
  std::uint64_t prev_mask = decode(chain[0], prev_slots);
  for (int i = 0; i < n; ++i) paths[i].push_back(free[prev_slots[i]]);
  for (std::size_t k = 1; k < chain.size(); ++k) {
    const std::uint64_t mask = decode(chain[k], slots);
    bool advances = false;
    for (int i = 0; i < n; ++i)
      if (!(prev_mask >> i & 1ULL) && !(mask >> i & 1ULL)) advances = true;
    if (advances)
      for (int i = 0; i < n; ++i) paths[i].push_back(free[slots[i]]);
    prev_mask = mask;
  }
  Plan plan = make_plan(std::move(paths));
  if (plan.flowtime != dist[target])
    throw std::logic_error("joint_bfs_oracle: reconstructed flowtime disagrees with search");
  return plan;
}

}  // namespace gnnmapf
