#include "mopsan/env/cookgrid.hpp"

#include "../support/planner.hpp"
#include "../support/scripted.hpp"

#include <doctest.h>

#include <random>

using namespace mopsan::env;

namespace {

GridState with_player(const CookGrid& env, int who, int r, int c, Dir d, Item held) {
  GridState s = env.reset();
  auto& p = s.players[static_cast<std::size_t>(who)];
  p.pos = env.layout().cell(r, c);
  p.dir = d;
  p.held = held;
  return s;
}

}  // namespace

TEST_CASE("default layout shape") {
  const Layout L = default_layout();
  CHECK(L.rows == 4);
  CHECK(L.cols == 5);
  CHECK(L.horizon == 400);
  CHECK(L.floor_cells.size() == 6);
  CHECK(L.counter_cells.size() == 9);
  CHECK(L.start[0] == L.cell(1, 1));
  CHECK(L.start[1] == L.cell(1, 3));
  CHECK(CookGrid(L).obs_size() == 71);
}

TEST_CASE("reset") {
  CookGrid env(default_layout());
  const GridState a = env.reset(0);
  CHECK(a.players[0].pos == env.layout().start[0]);
  CHECK(a.players[1].pos == env.layout().start[1]);
  CHECK(a.players[0].held == Item::None);
  CHECK(a.pot_onions == 0);
  CHECK(a.step == 0);
  CHECK(env.reset(0) == a);
  CHECK(env.check_invariants(a).empty());
}

TEST_CASE("layout validation reports position") {
  CHECK_THROWS_AS(parse_layout("horizon=10\nCCCCC\nN..-N\nC...C\nCDCSC\n"), LayoutError);
  try {
    (void)parse_layout("horizon=10\nCCPCC\nN..-N\nC.X.C\nCDCSC\n");
    FAIL("expected error");
  } catch (const LayoutError& e) {
    CHECK(e.row() == 2);
    CHECK(e.col() == 2);
  }
  try {
    (void)parse_layout("horizon=10\nCCPCC\nN..-N\nC...C\nCDC\n");
    FAIL("expected error");
  } catch (const LayoutError& e) {
    CHECK(e.row() == 3);
  }
  try {
    (void)parse_layout("horizon=10\nCCPCC\n...-N\nC...C\nCDCSC\n");
    FAIL("expected error");
  } catch (const LayoutError& e) {
    CHECK(e.row() == 1);
    CHECK(e.col() == 0);
  }
  CHECK_THROWS_AS(parse_layout("CCPCC\nN..-N\nC...C\nCDCSC\n"), LayoutError);
  CHECK_THROWS_AS(parse_layout("horizon=abc\nCCPCC\nN..-N\nC...C\nCDCSC\n"), LayoutError);
  CHECK_THROWS_AS(parse_layout("horizon=10\nCCPPC\nN..-N\nC...C\nCDCSC\n"), LayoutError);
  CHECK_THROWS_AS(parse_layout("horizon=10\nCCPCC\nN...N\nC...C\nCDCSC\n"), LayoutError);
  CHECK_THROWS_AS(parse_layout("horizon=10\nCCPCC\nN..-N\nC...C\nCCCSC\n"), LayoutError);
  const Layout ok = parse_layout("horizon=25\nCCPCC\nN..-N\nC...C\nCDCSC\n");
  CHECK(ok.horizon == 25);
}

TEST_CASE("serving soup pays 20") {
  CookGrid env(default_layout());
  GridState s = with_player(env, 0, 2, 3, Dir::South, Item::Soup);
  const auto r = env.step(s, {Interact, Stay});
  CHECK(r.reward == 20.0);
  CHECK(r.state.players[0].held == Item::None);
  CHECK(r.info.soups_served == 1);
}

TEST_CASE("pot is ready exactly 20 steps after the third onion") {
  CookGrid env(default_layout());
  GridState s = with_player(env, 0, 1, 2, Dir::North, Item::Onion);
  s.pot_onions = 2;
  auto r = env.step(s, {Interact, Stay});
  CHECK(r.state.pot_onions == 3);
  CHECK_FALSE(r.state.pot_ready);
  s = r.state;
  for (int i = 1; i <= 20; ++i) {
    r = env.step(s, {Stay, Stay});
    s = r.state;
    CHECK(s.pot_ready == (i == 20));
    if (i == 10) {
      CHECK(env.featurize(s, 0)[6 + 4 + 4 + 6 + 4 + 4 + 4] == doctest::Approx(0.5));
    }
  }
  s.players[0].held = Item::Dish;
  r = env.step(s, {Interact, Stay});
  CHECK(r.state.players[0].held == Item::Soup);
  CHECK(r.state.pot_onions == 0);
  CHECK_FALSE(r.state.pot_ready);
}

TEST_CASE("movement conflicts") {
  CookGrid env(default_layout());
  const Layout& L = env.layout();
  SUBCASE("same target blocks both, orientations update") {
    GridState s = env.reset();
    s.players[0].pos = L.cell(1, 1);
    s.players[1].pos = L.cell(1, 3);
    const auto r = env.step(s, {Right, Left});
    CHECK(r.state.players[0].pos == L.cell(1, 1));
    CHECK(r.state.players[1].pos == L.cell(1, 3));
    CHECK(r.state.players[0].dir == Dir::East);
    CHECK(r.state.players[1].dir == Dir::West);
  }
  SUBCASE("swap is blocked") {
    GridState s = env.reset();
    s.players[0].pos = L.cell(1, 1);
    s.players[1].pos = L.cell(1, 2);
    const auto r = env.step(s, {Right, Left});
    CHECK(r.state.players[0].pos == L.cell(1, 1));
    CHECK(r.state.players[1].pos == L.cell(1, 2));
  }
  SUBCASE("cannot enter a cell the partner keeps") {
    GridState s = env.reset();
    s.players[0].pos = L.cell(1, 1);
    s.players[1].pos = L.cell(1, 2);
    const auto r = env.step(s, {Right, Stay});
    CHECK(r.state.players[0].pos == L.cell(1, 1));
    CHECK(r.state.players[0].dir == Dir::East);
  }
  SUBCASE("following into a vacated cell works") {
    GridState s = env.reset();
    s.players[0].pos = L.cell(1, 1);
    s.players[1].pos = L.cell(1, 2);
    const auto r = env.step(s, {Right, Right});
    CHECK(r.state.players[0].pos == L.cell(1, 2));
    CHECK(r.state.players[1].pos == L.cell(1, 3));
  }
  SUBCASE("walls only turn") {
    GridState s = env.reset();
    const auto r = env.step(s, {Up, Stay});
    CHECK(r.state.players[0].pos == s.players[0].pos);
    CHECK(r.state.players[0].dir == Dir::North);
  }
}

TEST_CASE("interaction rules") {
  CookGrid env(default_layout());
  SUBCASE("take onion and dish") {
    GridState s = with_player(env, 0, 1, 1, Dir::West, Item::None);
    CHECK(env.step(s, {Interact, Stay}).state.players[0].held == Item::Onion);
    s = with_player(env, 0, 2, 1, Dir::South, Item::None);
    CHECK(env.step(s, {Interact, Stay}).state.players[0].held == Item::Dish);
  }
  SUBCASE("counter place and pickup") {
    GridState s = with_player(env, 0, 2, 1, Dir::West, Item::Onion);
    auto r = env.step(s, {Interact, Stay});
    CHECK(r.state.players[0].held == Item::None);
    CHECK(r.state.counter_items[static_cast<std::size_t>(env.layout().counter_slot[env.layout().cell(2, 0)])] ==
          Item::Onion);
    r = env.step(r.state, {Interact, Stay});
    CHECK(r.state.players[0].held == Item::Onion);
  }
  SUBCASE("invalid interactions are no-ops") {
    GridState s = with_player(env, 0, 1, 2, Dir::North, Item::Dish);
    const auto r = env.step(s, {Interact, Stay});
    CHECK(r.state.players[0].held == Item::Dish);
    CHECK(r.reward == 0.0);
    GridState t = with_player(env, 0, 1, 1, Dir::West, Item::Soup);
    CHECK(env.step(t, {Interact, Stay}).state.players[0].held == Item::Soup);
  }
  SUBCASE("full pot refuses onions") {
    GridState s = with_player(env, 0, 1, 2, Dir::North, Item::Onion);
    s.pot_onions = 3;
    s.pot_timer = 4;
    const auto r = env.step(s, {Interact, Stay});
    CHECK(r.state.players[0].held == Item::Onion);
    CHECK(r.state.pot_timer == 5);
  }
}

TEST_CASE("horizon ends the episode") {
  CookGrid env(parse_layout("horizon=3\nCCPCC\nN..-N\nC...C\nCDCSC\n"));
  GridState s = env.reset();
  for (int i = 0; i < 3; ++i) {
    const auto r = env.step(s, {Stay, Stay});
    CHECK(r.done == (i == 2));
    s = r.state;
  }
}

TEST_CASE("featurize") {
  CookGrid env(default_layout());
  const GridState s = env.reset();
  const Obs o0 = env.featurize(s, 0);
  const Obs o1 = env.featurize(s, 1);
  CHECK(o0.size() == 71);
  // held one-hot "none" for self and partner
  CHECK(o0[6 + 4 + 0] == 1.0);
  CHECK(o0[14 + 6 + 4 + 0] == 1.0);
  // own/partner blocks swap between the two views
  for (std::size_t i = 0; i < 14; ++i) {
    CHECK(o0[i] == o1[14 + i]);
    CHECK(o0[14 + i] == o1[i]);
  }
  for (std::size_t i = 28; i < o0.size(); ++i) CHECK(o0[i] == o1[i]);
}

TEST_CASE("property: random play preserves invariants and conserves items") {
  CookGrid env(default_layout());
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> act(0, kNumActions - 1);
  GridState s = env.reset();
  long failures = 0;
  long serves = 0;
  for (long t = 0; t < 1000000; ++t) {
    const JointAction a{act(rng), act(rng)};
    const auto r = env.step(s, a);
    const int donion = onion_count(r.state) - onion_count(s);
    const int dsoup = soup_count(r.state) - soup_count(s);
    bool ok = env.check_invariants(r.state).empty();
    ok = ok && donion == r.info.onions_taken - 3 * r.info.soups_scooped;
    ok = ok && dsoup == r.info.soups_scooped - r.info.soups_served;
    ok = ok && r.reward == kServeReward * r.info.soups_served;
    for (const Obs& o : {env.featurize(r.state, 0), env.featurize(r.state, 1)}) {
      for (double v : o) ok = ok && v >= 0.0 && v <= 1.0;
    }
    failures += ok ? 0 : 1;
    serves += r.info.soups_served;
    s = r.done ? env.reset() : r.state;
  }
  CHECK(failures == 0);
  MESSAGE("random-play serves: " << serves);
}

TEST_CASE("scripted pair matches the exhaustive planner") {
  CookGrid env(default_layout());
  planner::Planner plan(env);
  const int best = plan.max_soups(env.layout().horizon);
  const int scripted_soups = scripted::play(env);
  CHECK(best == 12);
  CHECK(scripted_soups == best);
}
