#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mopsan::env {

enum class Tile : std::uint8_t { Floor, Counter, Pot, OnionDispenser, DishDispenser, Serving };
enum class Item : std::uint8_t { None, Onion, Dish, Soup };
enum class Dir : std::uint8_t { North, South, East, West };

enum Action : int { Up = 0, Down = 1, Left = 2, Right = 3, Stay = 4, Interact = 5 };
inline constexpr int kNumActions = 6;
inline constexpr int kCookTime = 20;
inline constexpr double kServeReward = 20.0;

using JointAction = std::array<int, 2>;
using Obs = std::vector<double>;

class LayoutError : public std::runtime_error {
 public:
  LayoutError(const std::string& what, int row, int col);
  [[nodiscard]] int row() const { return row_; }
  [[nodiscard]] int col() const { return col_; }

 private:
  int row_;
  int col_;
};

/// Static map data. Cells are row-major indices r * cols + c.
struct Layout {
  int rows = 0;
  int cols = 0;
  int horizon = 400;
  std::vector<Tile> tiles;
  std::array<int, 2> start{};
  std::vector<int> floor_cells;    // cell index per feature slot
  std::vector<int> floor_slot;     // cell -> slot or -1
  std::vector<int> counter_cells;  // plain counters, in row-major order
  std::vector<int> counter_slot;   // cell -> slot or -1

  [[nodiscard]] Tile at(int cell) const { return tiles[static_cast<std::size_t>(cell)]; }
  [[nodiscard]] int cell(int r, int c) const { return r * cols + c; }
};

/// Parses `horizon=<int>` followed by the ASCII grid. Legend: C counter, P pot,
/// N onion dispenser, D dish dispenser, S serving, '.' floor, '-' floor where
/// the second player starts. The first player starts on the first '.' in
/// row-major order.
Layout parse_layout(const std::string& text);
Layout load_layout(const std::filesystem::path& path);
Layout default_layout();
std::string default_layout_text();

struct Player {
  int pos = 0;
  Dir dir = Dir::North;
  Item held = Item::None;

  bool operator==(const Player&) const = default;
};

struct GridState {
  std::array<Player, 2> players{};
  int pot_onions = 0;
  int pot_timer = 0;
  bool pot_ready = false;
  std::vector<Item> counter_items;  // indexed by counter slot
  int step = 0;

  bool operator==(const GridState&) const = default;
};

struct StepInfo {
  int onions_taken = 0;
  int onions_loaded = 0;
  int dishes_taken = 0;
  int soups_scooped = 0;
  int soups_served = 0;
  int items_placed = 0;
  int items_picked = 0;
};

struct StepResult {
  GridState state;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class CookGrid {
 public:
  explicit CookGrid(Layout layout);

  /// Initial state. The dynamics are deterministic, so the seed only exists to
  /// keep the environment interface uniform.
  [[nodiscard]] GridState reset(std::uint64_t seed = 0) const;
  [[nodiscard]] StepResult step(const GridState& s, const JointAction& joint) const;
  [[nodiscard]] Obs featurize(const GridState& s, int player) const;
  [[nodiscard]] int obs_size() const;
  [[nodiscard]] const Layout& layout() const { return layout_; }

  /// Cell in front of a player.
  [[nodiscard]] int facing(const Player& p) const;

  /// Returns an empty string when the state satisfies every structural invariant.
  [[nodiscard]] std::string check_invariants(const GridState& s) const;

 private:
  void interact(GridState& s, int who, StepInfo& info, double& reward) const;
  Layout layout_;
};

int onion_count(const GridState& s);
int soup_count(const GridState& s);

}  // namespace mopsan::env
