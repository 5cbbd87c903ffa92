// Environment semantics: Monster-Treasure dynamics against worked examples
// and a brute-force value-iteration oracle; PixelGrid rendering, scoreboard
// and clean-state behaviour.
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <set>
#include <vector>

#include "cdrl/env.hpp"
#include "cdrl/monster_treasure.hpp"
#include "cdrl/pixel_grid.hpp"
#include "support/vi_oracle.hpp"

using cdrl::MonsterTreasure;
using cdrl::PixelGrid;
using cdrl::PixelState;
using cdrl::RewardVector;
using cdrl::StepResult;
using cdrl::VectorState;

TEST_CASE("mt reset is deterministic and places pieces on distinct cells") {
  MonsterTreasure env;
  VectorState a = env.reset(7);
  VectorState b = env.reset(7);
  REQUIRE(a.values == b.values);
  REQUIRE(a.dim_labels ==
          std::vector<std::string>{"agent_x", "agent_y", "monster_x", "monster_y", "treasure_x",
                                   "treasure_y"});
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    VectorState s = env.reset(seed);
    const int agent = static_cast<int>(s.values[1]) * 4 + static_cast<int>(s.values[0]);
    const int monster = static_cast<int>(s.values[3]) * 4 + static_cast<int>(s.values[2]);
    const int treasure = static_cast<int>(s.values[5]) * 4 + static_cast<int>(s.values[4]);
    REQUIRE(agent != monster);
    REQUIRE(agent != treasure);
    REQUIRE(monster != treasure);
    for (double v : s.values) {
      REQUIRE(v == std::floor(v));
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 3.0);
    }
  }
}

TEST_CASE("mt: one cell left of treasure, move right, treasure reward ends episode") {
  MonsterTreasure env;
  env.reset_to(1, 2, 3, 0, 2, 2);  // agent (1,2), treasure (2,2)
  StepResult<VectorState> r = env.step(MonsterTreasure::kActionRight);
  REQUIRE(r.reward.components == std::vector<double>{2.0, 0.0});
  REQUIRE(r.reward.total == 2.0);
  REQUIRE(r.done);
}

TEST_CASE("mt: one cell right of monster, move left, monster penalty ends episode") {
  MonsterTreasure env;
  env.reset_to(2, 1, 1, 1, 3, 3);  // agent (2,1), monster (1,1)
  StepResult<VectorState> r = env.step(MonsterTreasure::kActionLeft);
  REQUIRE(r.reward.components == std::vector<double>{0.0, -2.0});
  REQUIRE(r.reward.total == -2.0);
  REQUIRE(r.done);
}

TEST_CASE("mt: off-grid move clamps with zero reward") {
  MonsterTreasure env;
  env.reset_to(0, 2, 2, 0, 3, 3);
  StepResult<VectorState> r = env.step(MonsterTreasure::kActionLeft);
  REQUIRE(r.state.values[0] == 0.0);
  REQUIRE(r.state.values[1] == 2.0);
  REQUIRE(r.reward.total == 0.0);
  REQUIRE_FALSE(r.done);
}

TEST_CASE("mt: truncation at horizon reports done with zero reward") {
  MonsterTreasure env;
  env.reset_to(0, 0, 2, 2, 3, 3);
  StepResult<VectorState> r{};
  for (int t = 0; t < 64; ++t) {
    REQUIRE_FALSE(env.done());
    r = env.step(MonsterTreasure::kActionLeft);  // bounce off the wall forever
  }
  REQUIRE(r.done);
  REQUIRE(r.reward.total == 0.0);
  REQUIRE_THROWS_AS(env.step(MonsterTreasure::kActionLeft), cdrl::StepAfterDone);
}

TEST_CASE("mt rewards are additive on random rollouts") {
  MonsterTreasure env;
  cdrl::Rng rng(99);
  for (int ep = 0; ep < 30; ++ep) {
    env.reset(1000 + static_cast<std::uint64_t>(ep));
    while (!env.done()) {
      StepResult<VectorState> r = env.step(cdrl::uniform_index(rng, 4));
      REQUIRE(r.reward.additive());
    }
  }
}

TEST_CASE("mt trajectories are fully determined by seed and actions") {
  MonsterTreasure::Config cfg;
  cfg.distractor_dims = 2;
  MonsterTreasure env1(cfg), env2(cfg);
  env1.reset(42);
  env2.reset(42);
  cdrl::Rng rng(5);
  for (int t = 0; t < 40 && !env1.done(); ++t) {
    const int a = cdrl::uniform_index(rng, 4);
    StepResult<VectorState> r1 = env1.step(a);
    StepResult<VectorState> r2 = env2.step(a);
    REQUIRE(r1.state.values == r2.state.values);
    REQUIRE(r1.reward.total == r2.reward.total);
    REQUIRE(r1.done == r2.done);
  }
}

TEST_CASE("mt observation normalizes coordinates, raw state keeps integers") {
  MonsterTreasure env;
  env.reset_to(3, 0, 1, 2, 0, 3);
  std::vector<double> obs = env.observe(env.state());
  REQUIRE(obs == std::vector<double>{1.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 0.0, 1.0});
  REQUIRE(env.state().values == std::vector<double>{3, 0, 1, 2, 0, 3});
}

TEST_CASE("mt ideal masks match the ground-truth channel structure") {
  MonsterTreasure env;
  std::vector<std::vector<double>> masks = env.ideal_masks();
  REQUIRE(masks.size() == 2);
  REQUIRE(masks[0] == std::vector<double>{1, 1, 0, 0, 1, 1});  // treasure channel
  REQUIRE(masks[1] == std::vector<double>{1, 1, 1, 1, 0, 0});  // monster channel
}

TEST_CASE("mt distractor dims are uniform noise, cleaned by clean_state only there") {
  MonsterTreasure::Config cfg;
  cfg.distractor_dims = 3;
  MonsterTreasure env(cfg);
  VectorState s = env.reset(11);
  REQUIRE(s.values.size() == 9);
  REQUIRE(env.obs_dim() == 9);
  REQUIRE(env.noncausal_dims() == std::vector<int>{6, 7, 8});
  for (int d = 6; d < 9; ++d) {
    REQUIRE(s.values[static_cast<std::size_t>(d)] >= 0.0);
    REQUIRE(s.values[static_cast<std::size_t>(d)] < 1.0);
  }
  VectorState cleaned = env.clean_state(s);
  for (int d = 0; d < 6; ++d) {
    REQUIRE(cleaned.values[static_cast<std::size_t>(d)] == s.values[static_cast<std::size_t>(d)]);
  }
  bool any_changed = false;
  for (int d = 6; d < 9; ++d) {
    any_changed = any_changed ||
                  cleaned.values[static_cast<std::size_t>(d)] != s.values[static_cast<std::size_t>(d)];
  }
  REQUIRE(any_changed);
  // Ideal masks mark distractors non-causal for both channels.
  std::vector<std::vector<double>> masks = env.ideal_masks();
  for (const auto& m : masks) {
    REQUIRE(m.size() == 9);
    REQUIRE(m[6] == 0.0);
    REQUIRE(m[7] == 0.0);
    REQUIRE(m[8] == 0.0);
  }
}

TEST_CASE("mt without distractors: clean_state is the identity") {
  MonsterTreasure env;
  VectorState s = env.reset(3);
  VectorState cleaned = env.clean_state(s);
  REQUIRE(cleaned.values == s.values);
}

TEST_CASE("value-iteration oracle: greedy policy earns 2 from every layout") {
  // Exhaustive over all distinct (agent, monster, treasure) placements.
  MonsterTreasure env;
  for (int m = 0; m < 16; ++m) {
    for (int t = 0; t < 16; ++t) {
      if (t == m) continue;
      cdrl_test::MtLayoutVi vi = cdrl_test::mt_value_iteration(4, m, t, 0.95);
      for (int a = 0; a < 16; ++a) {
        if (a == m || a == t) continue;
        env.reset_to(a % 4, a / 4, m % 4, m / 4, t % 4, t / 4);
        double episode_return = 0.0;
        int guard = 0;
        while (!env.done()) {
          const int cell = static_cast<int>(env.state().values[1]) * 4 +
                           static_cast<int>(env.state().values[0]);
          StepResult<VectorState> r = env.step(vi.greedy[static_cast<std::size_t>(cell)]);
          episode_return += r.reward.total;
          REQUIRE(++guard <= 64);
        }
        REQUIRE(episode_return == 2.0);
      }
    }
  }
}

// ---- PixelGrid ----------------------------------------------------------

namespace {

// Locates the coarse board cell whose 4x4 block carries `intensity`.
int find_cell(const PixelState& img, float intensity) {
  for (int cy = 0; cy < PixelGrid::kBoard; ++cy) {
    for (int cx = 0; cx < PixelGrid::kBoard; ++cx) {
      if (img.at(PixelGrid::kStripRows + cy * PixelGrid::kCell, cx * PixelGrid::kCell) ==
          intensity) {
        return cy * PixelGrid::kBoard + cx;
      }
    }
  }
  return -1;
}

}  // namespace

TEST_CASE("pixel_grid reset: values in range, scoreboard strip declared") {
  PixelGrid env;
  PixelState s = env.reset(21);
  REQUIRE(s.h == 32);
  REQUIRE(s.w == 32);
  REQUIRE(s.c == 1);
  for (float v : s.pixels) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
  REQUIRE(s.has_noncausal_region);
  REQUIRE(s.noncausal_region.row0 == 0);
  REQUIRE(s.noncausal_region.row1 == 4);
  REQUIRE(s.noncausal_region.col0 == 0);
  REQUIRE(s.noncausal_region.col1 == 32);
  // Fresh episode: zero score, blank strip.
  for (int r = 0; r < 4; ++r)
    for (int col = 0; col < 32; ++col) REQUIRE(s.at(r, col) == 0.0f);
  // Agent, gold and dust blocks all present and distinct.
  const int agent = find_cell(s, 1.0f), gold = find_cell(s, 0.75f), dust = find_cell(s, 0.45f);
  REQUIRE(agent >= 0);
  REQUIRE(gold >= 0);
  REQUIRE(dust >= 0);
  REQUIRE(agent != gold);
  REQUIRE(gold != dust);
}

TEST_CASE("pixel_grid pickup pays channel rewards and fills the scoreboard") {
  PixelGrid env;
  PixelState s = env.reset(3);
  int agent = find_cell(s, 1.0f);
  int gold = find_cell(s, 0.75f);
  double got0 = 0.0, got1 = 0.0;
  // Walk toward the gold block: columns first, then rows.
  for (int guard = 0; guard < 40 && got0 == 0.0; ++guard) {
    REQUIRE_FALSE(env.done());
    int ax = agent % 7, ay = agent / 7;
    const int gx = gold % 7, gy = gold / 7;
    int action;
    if (ax < gx) action = PixelGrid::kActionRight;
    else if (ax > gx) action = PixelGrid::kActionLeft;
    else if (ay < gy) action = PixelGrid::kActionDown;
    else action = PixelGrid::kActionUp;
    StepResult<PixelState> r = env.step(action);
    REQUIRE(r.reward.additive());
    got0 += r.reward.components[0];
    got1 += r.reward.components[1];
    s = r.state;
    agent = find_cell(s, 1.0f);
    const int g = find_cell(s, 0.75f);
    if (g >= 0) gold = g;
  }
  REQUIRE(got0 == 0.8);
  // Scoreboard: score 0.8 = 16 units of 0.05 -> 16 bar pixels at 0.6.
  int lit = 0;
  for (int r = 0; r < 4; ++r)
    for (int col = 0; col < 32; ++col) lit += s.at(r, col) == 0.6f ? 1 : 0;
  REQUIRE(lit == 16 + static_cast<int>(std::lround(got1 / 0.05)));
}

TEST_CASE("pixel_grid clean_state blanks only the strip and is idempotent") {
  PixelGrid env;
  env.reset(5);
  // Accumulate some score so the strip is non-trivial.
  cdrl::Rng rng(17);
  PixelState s = env.state();
  for (int t = 0; t < 60 && !env.done(); ++t) s = env.step(cdrl::uniform_index(rng, 4)).state;
  PixelState cleaned = env.clean_state(s);
  for (int r = 0; r < 32; ++r) {
    for (int col = 0; col < 32; ++col) {
      if (r < 4) REQUIRE(cleaned.at(r, col) == 0.0f);
      else REQUIRE(cleaned.at(r, col) == s.at(r, col));
    }
  }
  PixelState twice = env.clean_state(cleaned);
  REQUIRE(twice.pixels == cleaned.pixels);
}

TEST_CASE("pixel_grid without scoreboard declares no non-causal region") {
  PixelGrid::Config cfg;
  cfg.scoreboard = false;
  PixelGrid env(cfg);
  PixelState s = env.reset(2);
  REQUIRE_FALSE(s.has_noncausal_region);
  REQUIRE(s.pixels == env.clean_state(s).pixels);
}

TEST_CASE("pixel_grid trajectories are deterministic given seed and actions") {
  PixelGrid a, b;
  a.reset(77);
  b.reset(77);
  cdrl::Rng rng(8);
  for (int t = 0; t < 50 && !a.done(); ++t) {
    const int action = cdrl::uniform_index(rng, 4);
    StepResult<PixelState> ra = a.step(action);
    StepResult<PixelState> rb = b.step(action);
    REQUIRE(ra.state.pixels == rb.state.pixels);
    REQUIRE(ra.reward.total == rb.reward.total);
  }
}

TEST_CASE("pixel_grid truncates at horizon and rejects ideal_masks") {
  PixelGrid::Config cfg;
  cfg.horizon = 5;
  PixelGrid env(cfg);
  env.reset(1);
  for (int t = 0; t < 5; ++t) env.step(PixelGrid::kActionUp);
  REQUIRE(env.done());
  REQUIRE_THROWS_AS(env.step(PixelGrid::kActionUp), cdrl::StepAfterDone);
  REQUIRE_THROWS_AS(env.ideal_masks(), cdrl::NotAvailable);
}
