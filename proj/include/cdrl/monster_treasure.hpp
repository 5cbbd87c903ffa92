// Monster-Treasure gridworld.
//
// A grid_size x grid_size board hosts an agent, a monster and a treasure on
// pairwise-distinct cells.  Two reward channels: stepping onto the treasure
// ends the episode with components (2, 0); stepping onto the monster ends it
// with (0, -2); every other step is (0, 0).  Off-grid moves clamp.  Episodes
// truncate at `horizon` steps (reported as done) so training never sees an
// unbounded episode.
//
// State dimensions, in fixed order: agent_x, agent_y, monster_x, monster_y,
// treasure_x, treasure_y — raw integer coordinates.  Optional extra
// distractor dimensions carry fresh uniform noise each step; they are the
// declared non-causal content for vector-state interventions.  Observations
// normalize coordinates to [0,1] by grid_size-1; distractors are already
// in [0,1].
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdrl/env.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/rng.hpp"

namespace cdrl {

class MonsterTreasure {
 public:
  struct Config {
    int grid_size = 4;
    int horizon = 64;
    int distractor_dims = 0;
  };

  static constexpr bool kPixel = false;
  static constexpr int kActionUp = 0;
  static constexpr int kActionDown = 1;
  static constexpr int kActionLeft = 2;
  static constexpr int kActionRight = 3;

  MonsterTreasure() : MonsterTreasure(Config{}) {}

  explicit MonsterTreasure(Config cfg) : cfg_(cfg) {
    if (cfg_.grid_size < 2) throw ConfigError("monster_treasure: grid_size must be >= 2");
    if (cfg_.horizon < 1) throw ConfigError("monster_treasure: horizon must be >= 1");
    if (cfg_.distractor_dims < 0) throw ConfigError("monster_treasure: negative distractor_dims");
  }

  int action_count() const { return 4; }
  int k() const { return 2; }
  int obs_dim() const { return 6 + cfg_.distractor_dims; }
  int grid_size() const { return cfg_.grid_size; }
  const Config& config() const { return cfg_; }

  VectorState reset(std::uint64_t seed) {
    rng_ = make_rng(seed, "monster_treasure");
    // Distinct cells for agent, monster, treasure via seeded rejection.
    const int cells = cfg_.grid_size * cfg_.grid_size;
    int a = draw_cell(cells);
    int m = draw_cell(cells);
    while (m == a) m = draw_cell(cells);
    int t = draw_cell(cells);
    while (t == a || t == m) t = draw_cell(cells);
    state_ = make_state(a % cfg_.grid_size, a / cfg_.grid_size, m % cfg_.grid_size,
                        m / cfg_.grid_size, t % cfg_.grid_size, t / cfg_.grid_size);
    steps_ = 0;
    done_ = false;
    truncated_ = false;
    return state_;
  }

  // Places pieces exactly; used by evaluation probes and worked examples.
  VectorState reset_to(int ax, int ay, int mx, int my, int tx, int ty) {
    check_coord(ax);
    check_coord(ay);
    check_coord(mx);
    check_coord(my);
    check_coord(tx);
    check_coord(ty);
    if ((ax == mx && ay == my) || (ax == tx && ay == ty) || (mx == tx && my == ty)) {
      throw ConfigError("monster_treasure: agent, monster, treasure must occupy distinct cells");
    }
    state_ = make_state(ax, ay, mx, my, tx, ty);
    steps_ = 0;
    done_ = false;
    truncated_ = false;
    return state_;
  }

  StepResult<VectorState> step(int action) {
    if (done_) throw StepAfterDone("monster_treasure: step after episode end");
    if (action < 0 || action >= action_count()) {
      throw ConfigError("monster_treasure: action out of range");
    }
    int ax = static_cast<int>(state_.values[0]);
    int ay = static_cast<int>(state_.values[1]);
    switch (action) {
      case kActionUp: ay -= 1; break;
      case kActionDown: ay += 1; break;
      case kActionLeft: ax -= 1; break;
      case kActionRight: ax += 1; break;
    }
    ax = clamp_coord(ax);
    ay = clamp_coord(ay);
    state_.values[0] = ax;
    state_.values[1] = ay;
    refresh_distractors(state_, rng_);
    ++steps_;

    RewardVector reward = RewardVector::of({0.0, 0.0});
    const bool on_treasure =
        ax == static_cast<int>(state_.values[4]) && ay == static_cast<int>(state_.values[5]);
    const bool on_monster =
        ax == static_cast<int>(state_.values[2]) && ay == static_cast<int>(state_.values[3]);
    if (on_treasure) {
      reward = RewardVector::of({2.0, 0.0});
      done_ = true;
    } else if (on_monster) {
      reward = RewardVector::of({0.0, -2.0});
      done_ = true;
    } else if (steps_ >= cfg_.horizon) {
      done_ = true;  // truncation, no reward
      truncated_ = true;
    }
    return {state_, reward, done_};
  }

  const VectorState& state() const { return state_; }
  bool done() const { return done_; }

  // True when the last step ended the episode by hitting the horizon rather
  // than by a terminal event.  Time limits are an episode-management device,
  // not part of the task: learners should bootstrap through them instead of
  // treating the cut-off state as valueless.
  bool truncated() const { return truncated_; }

  std::vector<double> observe(const VectorState& s) const {
    std::vector<double> obs(s.values.size());
    const double denom = cfg_.grid_size - 1;
    for (int d = 0; d < 6; ++d) obs[static_cast<std::size_t>(d)] = s.values[d] / denom;
    for (std::size_t d = 6; d < s.values.size(); ++d) obs[d] = s.values[d];
    return obs;
  }

  // Resamples declared distractor dimensions from their U[0,1] marginal;
  // identity when none are declared.
  VectorState clean_state(const VectorState& s) {
    VectorState out = s;
    refresh_distractors(out, rng_);
    return out;
  }

  // Indices of the non-causal dimensions (the distractors).
  std::vector<int> noncausal_dims() const {
    std::vector<int> dims;
    for (int d = 0; d < cfg_.distractor_dims; ++d) dims.push_back(6 + d);
    return dims;
  }

  // Ground-truth masks over state dims: channel 0 (treasure) needs agent and
  // treasure coordinates, channel 1 (monster) needs agent and monster
  // coordinates.  Distractor dims are non-causal for both.
  std::vector<std::vector<double>> ideal_masks() const {
    std::vector<double> treasure{1, 1, 0, 0, 1, 1};
    std::vector<double> monster{1, 1, 1, 1, 0, 0};
    treasure.resize(static_cast<std::size_t>(obs_dim()), 0.0);
    monster.resize(static_cast<std::size_t>(obs_dim()), 0.0);
    return {treasure, monster};
  }

 private:
  Config cfg_;
  Rng rng_{0};
  VectorState state_;
  int steps_ = 0;
  bool done_ = true;
  bool truncated_ = false;

  int draw_cell(int cells) { return uniform_index(rng_, cells); }

  int clamp_coord(int v) const {
    if (v < 0) return 0;
    if (v >= cfg_.grid_size) return cfg_.grid_size - 1;
    return v;
  }

  void check_coord(int v) const {
    if (v < 0 || v >= cfg_.grid_size) throw ConfigError("monster_treasure: coordinate off grid");
  }

  VectorState make_state(int ax, int ay, int mx, int my, int tx, int ty) {
    VectorState s;
    s.values = {static_cast<double>(ax), static_cast<double>(ay), static_cast<double>(mx),
                static_cast<double>(my), static_cast<double>(tx), static_cast<double>(ty)};
    s.dim_labels = {"agent_x", "agent_y", "monster_x", "monster_y", "treasure_x", "treasure_y"};
    for (int d = 0; d < cfg_.distractor_dims; ++d) {
      s.values.push_back(0.0);
      s.dim_labels.push_back("distractor" + std::to_string(d));
    }
    refresh_distractors(s, rng_);
    return s;
  }

  void refresh_distractors(VectorState& s, Rng& rng) const {
    for (std::size_t d = 6; d < s.values.size(); ++d) {
      s.values[d] = uniform01(rng);
    }
  }
};

}  // namespace cdrl
