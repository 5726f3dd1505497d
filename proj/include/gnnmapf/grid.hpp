#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gnnmapf {

// Grid cell. x grows rightward, y grows downward.
struct Cell {
  int x = 0;
  int y = 0;
  friend constexpr auto operator<=>(const Cell&, const Cell&) = default;
};

constexpr Cell operator+(Cell a, Cell b) { return {a.x + b.x, a.y + b.y}; }
constexpr Cell operator-(Cell a, Cell b) { return {a.x - b.x, a.y - b.y}; }

inline int manhattan(Cell a, Cell b) {
  return (a.x > b.x ? a.x - b.x : b.x - a.x) + (a.y > b.y ? a.y - b.y : b.y - a.y);
}

// Motion primitives in their fixed label order.
enum class Action : std::uint8_t { Idle = 0, Up = 1, Left = 2, Down = 3, Right = 4 };

inline constexpr int kNumActions = 5;
inline constexpr std::array<Action, kNumActions> kAllActions{
    Action::Idle, Action::Up, Action::Left, Action::Down, Action::Right};

constexpr Cell offset(Action a) {
  switch (a) {
    case Action::Up: return {0, -1};
    case Action::Left: return {-1, 0};
    case Action::Down: return {0, 1};
    case Action::Right: return {1, 0};
    case Action::Idle: break;
  }
  return {0, 0};
}

// Action that moves `from` to `to`; throws std::invalid_argument if the two
// cells are not equal or 4-adjacent.
Action action_between(Cell from, Cell to);

const char* action_name(Action a);

class GridMap {
 public:
  GridMap() = default;
  GridMap(int width, int height, std::span<const Cell> obstacles,
          double density = 0.0, std::uint64_t seed = 0, std::string id = {});

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int area() const noexcept { return width_ * height_; }
  double density() const noexcept { return density_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::string& id() const noexcept { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }

  bool in_bounds(Cell c) const noexcept {
    return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_;
  }
  bool is_obstacle(Cell c) const noexcept { return occupancy_[index(c)] != 0; }
  bool is_free(Cell c) const noexcept { return in_bounds(c) && !is_obstacle(c); }

  int index(Cell c) const noexcept { return c.y * width_ + c.x; }
  Cell cell(int index) const noexcept { return {index % width_, index / width_}; }

  // Obstacles in row-major order.
  std::vector<Cell> obstacles() const;
  std::vector<Cell> free_cells() const;
  int free_count() const noexcept { return area() - obstacle_count_; }
  int obstacle_count() const noexcept { return obstacle_count_; }

  // 4-connected component label per cell (-1 for obstacles).
  std::vector<int> components() const;

  // BFS distance from `target` to every cell ignoring robots; -1 if unreachable.
  std::vector<int> distances_to(Cell target) const;

  friend bool operator==(const GridMap& a, const GridMap& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ &&
           a.occupancy_ == b.occupancy_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> occupancy_;
  int obstacle_count_ = 0;
  double density_ = 0.0;
  std::uint64_t seed_ = 0;
  std::string id_;
};

// floor(density * cells), tolerant to the representation error of density.
int obstacle_budget(int width, int height, double density);

// Places exactly obstacle_budget(W, H, density) obstacles uniformly without
// replacement. Requires W, H >= 2 and 0 <= density < 1.
GridMap generate_map(int width, int height, double density, std::uint64_t seed);

struct Case {
  std::string map_id;
  std::vector<Cell> starts;
  std::vector<Cell> goals;

  int robots() const noexcept { return static_cast<int>(starts.size()); }
  friend bool operator==(const Case&, const Case&) = default;
};

// Draws distinct free starts and distinct free goals with start != goal and
// each goal reachable from its start. Throws InfeasibleCase when no valid
// assignment is found within the retry budget.
Case generate_case(const GridMap& map, int robots, std::uint64_t seed,
                   int max_attempts = 1000);

// Checks the Case invariants; returns an empty string when valid, otherwise a
// description of the first violation.
std::string validate_case(const GridMap& map, const Case& c);

// 3 x (2r+1) x (2r+1) binary tensor, channel-major, row = dy + r, col = dx + r.
// Channel 0: obstacles (outside the map counts as obstacle). Channel 1: goal
// or its componentwise clamp onto the window border. Channel 2: self at the
// centre plus every other robot inside the window.
struct LocalObservation {
  static constexpr int kChannels = 3;

  int radius = 0;
  std::vector<std::uint8_t> values;

  int side() const noexcept { return 2 * radius + 1; }
  std::uint8_t at(int channel, int dx, int dy) const {
    return values[(channel * side() + (dy + radius)) * side() + (dx + radius)];
  }
};

LocalObservation build_local_observation(const GridMap& map,
                                         std::span<const Cell> positions,
                                         std::span<const Cell> goals,
                                         std::size_t robot, int fov_radius);

enum class GsoNormalization { Spectral, None };

// Graph shift operator over robots, row-major N x N.
struct Gso {
  int n = 0;
  double comm_radius = 0.0;
  GsoNormalization normalization = GsoNormalization::Spectral;
  std::vector<double> values;

  double operator()(int i, int j) const { return values[i * n + j]; }
};

// Binary adjacency on Euclidean distance <= comm_radius, zero diagonal,
// divided by its largest eigenvalue magnitude when any edge exists.
Gso build_gso(std::span<const Cell> positions, double comm_radius,
              GsoNormalization normalization = GsoNormalization::Spectral);

// Translates every position by its action. No legality checks beyond the map
// border: throws OutOfBounds if a robot would leave the map.
std::vector<Cell> step_positions(const GridMap& map, std::span<const Cell> positions,
                                 std::span<const Action> actions);

struct DensitySpec {
  int robots = 0;
  double obstacle_density = 0.0;
  double effective_density = 0.0;
};

// (N + floor(rho * W * H)) / (W * H).
DensitySpec effective_density(int width, int height, int robots, double obstacle_density);

// Robot count for a W x H world that keeps `beta` at the given obstacle
// density; rounds to the nearest integer and never returns less than 1.
int robots_for_density(int width, int height, double beta, double obstacle_density);

}  // namespace gnnmapf
