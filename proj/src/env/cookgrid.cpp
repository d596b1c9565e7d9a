#include "mopsan/env/cookgrid.hpp"

#include <fstream>
#include <sstream>

namespace mopsan::env {

LayoutError::LayoutError(const std::string& what, int row, int col)
    : std::runtime_error(row >= 0 ? "layout error at row " + std::to_string(row) + ", column " + std::to_string(col) +
                                        ": " + what
                                  : "layout error: " + what),
      row_(row),
      col_(col) {}

std::string default_layout_text() {
  return "horizon=400\n"
         "CCPCC\n"
         "N..-N\n"
         "C...C\n"
         "CDCSC\n";
}

Layout default_layout() { return parse_layout(default_layout_text()); }

Layout load_layout(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LayoutError("cannot open layout file " + path.string(), -1, -1);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_layout(ss.str());
}

Layout parse_layout(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> grid;
  bool have_horizon = false;
  Layout L;
  int line_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++line_no;
    if (!have_horizon) {
      if (line.empty()) continue;
      const std::string key = "horizon=";
      if (line.rfind(key, 0) != 0) throw LayoutError("expected header 'horizon=<int>'", -1, -1);
      try {
        std::size_t used = 0;
        L.horizon = std::stoi(line.substr(key.size()), &used);
        if (used != line.size() - key.size()) throw std::invalid_argument("trailing text");
      } catch (const std::exception&) {
        throw LayoutError("horizon is not an integer: '" + line + "'", -1, -1);
      }
      if (L.horizon < 1) throw LayoutError("horizon must be positive", -1, -1);
      have_horizon = true;
      continue;
    }
    if (line.empty()) continue;
    grid.push_back(line);
  }
  if (!have_horizon) throw LayoutError("missing header 'horizon=<int>'", -1, -1);
  if (grid.empty()) throw LayoutError("empty grid", -1, -1);

  L.rows = static_cast<int>(grid.size());
  L.cols = static_cast<int>(grid.front().size());
  L.tiles.resize(static_cast<std::size_t>(L.rows * L.cols));
  L.floor_slot.assign(L.tiles.size(), -1);
  L.counter_slot.assign(L.tiles.size(), -1);
  int pots = 0, onions = 0, dishes = 0, serves = 0;
  int first_floor = -1, second_start = -1;
  for (int r = 0; r < L.rows; ++r) {
    if (static_cast<int>(grid[static_cast<std::size_t>(r)].size()) != L.cols) {
      throw LayoutError("row length " + std::to_string(grid[static_cast<std::size_t>(r)].size()) +
                            " differs from " + std::to_string(L.cols),
                        r, static_cast<int>(std::min(grid[static_cast<std::size_t>(r)].size(),
                                                     static_cast<std::size_t>(L.cols))));
    }
    for (int c = 0; c < L.cols; ++c) {
      const char ch = grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      const int cell = L.cell(r, c);
      Tile t;
      switch (ch) {
        case 'C': t = Tile::Counter; break;
        case 'P': t = Tile::Pot; ++pots; break;
        case 'N': t = Tile::OnionDispenser; ++onions; break;
        case 'D': t = Tile::DishDispenser; ++dishes; break;
        case 'S': t = Tile::Serving; ++serves; break;
        case '.':
        case '-': t = Tile::Floor; break;
        default: throw LayoutError(std::string("unknown tile '") + ch + "'", r, c);
      }
      if (t == Tile::Pot && pots > 1) throw LayoutError("more than one pot", r, c);
      if (t == Tile::Floor) {
        if (r == 0 || c == 0 || r == L.rows - 1 || c == L.cols - 1) throw LayoutError("floor on the border", r, c);
        if (ch == '-') {
          if (second_start >= 0) throw LayoutError("more than one '-' start", r, c);
          second_start = cell;
        } else if (first_floor < 0) {
          first_floor = cell;
        }
        L.floor_slot[static_cast<std::size_t>(cell)] = static_cast<int>(L.floor_cells.size());
        L.floor_cells.push_back(cell);
      }
      if (t == Tile::Counter) {
        L.counter_slot[static_cast<std::size_t>(cell)] = static_cast<int>(L.counter_cells.size());
        L.counter_cells.push_back(cell);
      }
      L.tiles[static_cast<std::size_t>(cell)] = t;
    }
  }
  if (pots == 0) throw LayoutError("missing pot 'P'", -1, -1);
  if (onions == 0) throw LayoutError("missing onion dispenser 'N'", -1, -1);
  if (dishes == 0) throw LayoutError("missing dish dispenser 'D'", -1, -1);
  if (serves == 0) throw LayoutError("missing serving tile 'S'", -1, -1);
  if (second_start < 0) throw LayoutError("missing second start '-'", -1, -1);
  if (first_floor < 0) throw LayoutError("missing first start '.'", -1, -1);
  L.start = {first_floor, second_start};
  return L;
}

namespace {

int dr(Dir d) { return d == Dir::North ? -1 : d == Dir::South ? 1 : 0; }
int dc(Dir d) { return d == Dir::West ? -1 : d == Dir::East ? 1 : 0; }

Dir action_dir(int a) {
  switch (a) {
    case Up: return Dir::North;
    case Down: return Dir::South;
    case Left: return Dir::West;
    default: return Dir::East;
  }
}

}  // namespace

CookGrid::CookGrid(Layout layout) : layout_(std::move(layout)) {}

GridState CookGrid::reset(std::uint64_t /*seed*/) const {
  GridState s;
  for (int i = 0; i < 2; ++i) {
    s.players[static_cast<std::size_t>(i)].pos = layout_.start[static_cast<std::size_t>(i)];
    s.players[static_cast<std::size_t>(i)].dir = Dir::North;
    s.players[static_cast<std::size_t>(i)].held = Item::None;
  }
  s.counter_items.assign(layout_.counter_cells.size(), Item::None);
  return s;
}

int CookGrid::facing(const Player& p) const {
  const int r = p.pos / layout_.cols + dr(p.dir);
  const int c = p.pos % layout_.cols + dc(p.dir);
  return layout_.cell(r, c);
}

void CookGrid::interact(GridState& s, int who, StepInfo& info, double& reward) const {
  Player& p = s.players[static_cast<std::size_t>(who)];
  const int target = facing(p);
  switch (layout_.at(target)) {
    case Tile::Floor:
      return;
    case Tile::OnionDispenser:
      if (p.held == Item::None) {
        p.held = Item::Onion;
        ++info.onions_taken;
      }
      return;
    case Tile::DishDispenser:
      if (p.held == Item::None) {
        p.held = Item::Dish;
        ++info.dishes_taken;
      }
      return;
    case Tile::Pot:
      if (p.held == Item::Onion && s.pot_onions < 3) {
        ++s.pot_onions;
        p.held = Item::None;
        ++info.onions_loaded;
      } else if (p.held == Item::Dish && s.pot_ready) {
        p.held = Item::Soup;
        s.pot_onions = 0;
        s.pot_timer = 0;
        s.pot_ready = false;
        ++info.soups_scooped;
      }
      return;
    case Tile::Serving:
      if (p.held == Item::Soup) {
        p.held = Item::None;
        reward += kServeReward;
        ++info.soups_served;
      }
      return;
    case Tile::Counter: {
      Item& slot = s.counter_items[static_cast<std::size_t>(layout_.counter_slot[static_cast<std::size_t>(target)])];
      if (p.held != Item::None && slot == Item::None) {
        slot = p.held;
        p.held = Item::None;
        ++info.items_placed;
      } else if (p.held == Item::None && slot != Item::None) {
        p.held = slot;
        slot = Item::None;
        ++info.items_picked;
      }
      return;
    }
  }
}

StepResult CookGrid::step(const GridState& s, const JointAction& joint) const {
  for (int a : joint) {
    if (a < 0 || a >= kNumActions) throw std::invalid_argument("action out of range: " + std::to_string(a));
  }
  StepResult out;
  out.state = s;
  GridState& n = out.state;
  const bool cooking = s.pot_onions == 3 && !s.pot_ready;

  for (int i = 0; i < 2; ++i) {
    if (joint[static_cast<std::size_t>(i)] == Interact) interact(n, i, out.info, out.reward);
  }

  std::array<int, 2> cur{n.players[0].pos, n.players[1].pos};
  std::array<int, 2> want = cur;
  for (std::size_t i = 0; i < 2; ++i) {
    const int a = joint[i];
    if (a > Right) continue;
    Player& p = n.players[i];
    p.dir = action_dir(a);
    const int target = facing(p);
    if (layout_.at(target) == Tile::Floor) want[i] = target;
  }
  if (want[0] == want[1] || (want[0] == cur[1] && want[1] == cur[0])) {
    want = cur;
  }
  // A player may step into a cell its partner is leaving, but not one the
  // partner keeps. Reverting one player can block the other, so iterate.
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < 2; ++i) {
      const std::size_t j = 1 - i;
      if (want[i] == want[j] && want[j] == cur[j]) want[i] = cur[i];
    }
  }
  n.players[0].pos = want[0];
  n.players[1].pos = want[1];

  if (cooking && n.pot_onions == 3) {
    ++n.pot_timer;
    if (n.pot_timer >= kCookTime) {
      n.pot_timer = kCookTime;
      n.pot_ready = true;
    }
  }
  ++n.step;
  out.done = n.step >= layout_.horizon;
  return out;
}

int CookGrid::obs_size() const {
  const int f = static_cast<int>(layout_.floor_cells.size());
  return 2 * (f + 4 + 4) + 4 + 3 + 4 * static_cast<int>(layout_.counter_cells.size());
}

Obs CookGrid::featurize(const GridState& s, int player) const {
  if (player < 0 || player > 1) throw std::invalid_argument("player index must be 0 or 1");
  Obs o(static_cast<std::size_t>(obs_size()), 0.0);
  std::size_t off = 0;
  const std::size_t f = layout_.floor_cells.size();
  for (int k = 0; k < 2; ++k) {
    const Player& p = s.players[static_cast<std::size_t>(k == 0 ? player : 1 - player)];
    o[off + static_cast<std::size_t>(layout_.floor_slot[static_cast<std::size_t>(p.pos)])] = 1.0;
    off += f;
    o[off + static_cast<std::size_t>(p.dir)] = 1.0;
    off += 4;
    o[off + static_cast<std::size_t>(p.held)] = 1.0;
    off += 4;
  }
  o[off + static_cast<std::size_t>(s.pot_onions)] = 1.0;
  off += 4;
  o[off++] = static_cast<double>(s.pot_timer) / kCookTime;
  o[off++] = s.pot_ready ? 1.0 : 0.0;
  o[off++] = std::min(1.0, static_cast<double>(s.step) / layout_.horizon);
  for (Item it : s.counter_items) {
    o[off + static_cast<std::size_t>(it)] = 1.0;
    off += 4;
  }
  return o;
}

std::string CookGrid::check_invariants(const GridState& s) const {
  std::ostringstream why;
  for (int i = 0; i < 2; ++i) {
    const int pos = s.players[static_cast<std::size_t>(i)].pos;
    if (pos < 0 || pos >= static_cast<int>(layout_.tiles.size()) || layout_.at(pos) != Tile::Floor) {
      why << "player " << i << " off floor; ";
    }
    if (static_cast<int>(s.players[static_cast<std::size_t>(i)].held) > 3) why << "player " << i << " bad item; ";
  }
  if (s.players[0].pos == s.players[1].pos) why << "players overlap; ";
  if (s.pot_onions < 0 || s.pot_onions > 3) why << "onion count out of range; ";
  if (s.pot_timer < 0 || s.pot_timer > kCookTime) why << "timer out of range; ";
  if (s.pot_timer > 0 && s.pot_onions != 3) why << "timer running without three onions; ";
  if (s.pot_ready && (s.pot_timer != kCookTime || s.pot_onions != 3)) why << "ready before timer reached 20; ";
  if (!s.pot_ready && s.pot_timer >= kCookTime) why << "timer at 20 but not ready; ";
  if (s.counter_items.size() != layout_.counter_cells.size()) why << "counter table size; ";
  if (s.step < 0 || s.step > layout_.horizon) why << "step out of range; ";
  return why.str();
}

int onion_count(const GridState& s) {
  int n = s.pot_onions;
  for (const Player& p : s.players) n += p.held == Item::Onion;
  for (Item it : s.counter_items) n += it == Item::Onion;
  return n;
}

int soup_count(const GridState& s) {
  int n = 0;
  for (const Player& p : s.players) n += p.held == Item::Soup;
  for (Item it : s.counter_items) n += it == Item::Soup;
  return n;
}

}  // namespace mopsan::env
