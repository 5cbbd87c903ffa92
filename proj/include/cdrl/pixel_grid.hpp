// PixelGrid: a 32x32 grayscale collection task with two reward channels and
// a deliberately non-causal scoreboard.
//
// Layout: rows 0..3 are a scoreboard strip that renders the cumulative score
// as filled bar pixels — it reflects reward history but never influences
// dynamics or future reward, making it the declared non-causal region.  Rows
// 4..31 are a 7x7 board of 4x4-pixel cells hosting the agent (intensity 1.0),
// a gold item (0.75, channel-0 reward 0.8 on pickup) and a dust item (0.45,
// channel-1 reward 0.15 on pickup).  Items respawn on a free cell after
// pickup; episodes truncate at `horizon` steps.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cdrl/env.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/rng.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

class PixelGrid {
 public:
  struct Config {
    int horizon = 128;
    bool scoreboard = true;
  };

  static constexpr bool kPixel = true;
  static constexpr int kImage = 32;     // square image side
  static constexpr int kStripRows = 4;  // scoreboard height in pixels
  static constexpr int kCell = 4;       // board cell size in pixels
  static constexpr int kBoard = 7;      // board side in cells
  static constexpr int kActionUp = 0;
  static constexpr int kActionDown = 1;
  static constexpr int kActionLeft = 2;
  static constexpr int kActionRight = 3;

  static constexpr double kGoldReward = 0.8;
  static constexpr double kDustReward = 0.15;

  PixelGrid() : PixelGrid(Config{}) {}

  explicit PixelGrid(Config cfg) : cfg_(cfg) {
    if (cfg_.horizon < 1) throw ConfigError("pixel_grid: horizon must be >= 1");
  }

  int action_count() const { return 4; }
  int k() const { return 2; }
  int obs_h() const { return kImage; }
  int obs_w() const { return kImage; }
  const Config& config() const { return cfg_; }

  PixelState reset(std::uint64_t seed) {
    rng_ = make_rng(seed, "pixel_grid");
    const int cells = kBoard * kBoard;
    agent_ = uniform_index(rng_, cells);
    gold_ = uniform_index(rng_, cells);
    while (gold_ == agent_) gold_ = uniform_index(rng_, cells);
    dust_ = uniform_index(rng_, cells);
    while (dust_ == agent_ || dust_ == gold_) dust_ = uniform_index(rng_, cells);
    score_ = 0.0;
    steps_ = 0;
    done_ = false;
    truncated_ = false;
    state_ = render();
    return state_;
  }

  StepResult<PixelState> step(int action) {
    if (done_) throw StepAfterDone("pixel_grid: step after episode end");
    if (action < 0 || action >= action_count()) throw ConfigError("pixel_grid: action out of range");
    int ax = agent_ % kBoard, ay = agent_ / kBoard;
    switch (action) {
      case kActionUp: ay -= 1; break;
      case kActionDown: ay += 1; break;
      case kActionLeft: ax -= 1; break;
      case kActionRight: ax += 1; break;
    }
    ax = ax < 0 ? 0 : (ax >= kBoard ? kBoard - 1 : ax);
    ay = ay < 0 ? 0 : (ay >= kBoard ? kBoard - 1 : ay);
    agent_ = ay * kBoard + ax;
    ++steps_;

    RewardVector reward = RewardVector::of({0.0, 0.0});
    if (agent_ == gold_) {
      reward = RewardVector::of({kGoldReward, 0.0});
      gold_ = respawn(gold_);
    } else if (agent_ == dust_) {
      reward = RewardVector::of({0.0, kDustReward});
      dust_ = respawn(dust_);
    }
    score_ += reward.total;
    if (steps_ >= cfg_.horizon) {
      done_ = true;
      truncated_ = true;
    }
    state_ = render();
    return {state_, reward, done_};
  }

  const PixelState& state() const { return state_; }
  bool done() const { return done_; }

  // True when the last step ended the episode by hitting the horizon rather
  // than by a terminal event.  Time limits are an episode-management device,
  // not part of the task: learners should bootstrap through them instead of
  // treating the cut-off state as valueless.
  bool truncated() const { return truncated_; }

  // Blanks the scoreboard strip to background; pixels outside the declared
  // non-causal region are untouched.  Identity when no region is declared.
  PixelState clean_state(const PixelState& s) const {
    PixelState out = s;
    if (!out.has_noncausal_region) return out;
    for (int r = out.noncausal_region.row0; r < out.noncausal_region.row1; ++r) {
      for (int col = out.noncausal_region.col0; col < out.noncausal_region.col1; ++col) {
        out.at(r, col) = 0.0f;
      }
    }
    return out;
  }

  std::vector<std::vector<double>> ideal_masks() const {
    throw NotAvailable("pixel_grid: no ground-truth masks defined");
  }

 private:
  Config cfg_;
  Rng rng_{0};
  PixelState state_;
  int agent_ = 0, gold_ = 1, dust_ = 2;
  double score_ = 0.0;
  int steps_ = 0;
  bool done_ = true;
  bool truncated_ = false;

  int respawn(int old) {
    const int cells = kBoard * kBoard;
    int cell = uniform_index(rng_, cells);
    while (cell == agent_ || cell == gold_ || cell == dust_ || cell == old) {
      cell = uniform_index(rng_, cells);
    }
    return cell;
  }

  void fill_cell(PixelState& img, int cell, float intensity) const {
    const int cx = cell % kBoard, cy = cell / kBoard;
    for (int r = 0; r < kCell; ++r) {
      for (int col = 0; col < kCell; ++col) {
        img.at(kStripRows + cy * kCell + r, cx * kCell + col) = intensity;
      }
    }
  }

  PixelState render() const {
    PixelState img;
    img.h = kImage;
    img.w = kImage;
    img.c = 1;
    img.pixels.assign(static_cast<std::size_t>(kImage) * kImage, 0.0f);
    fill_cell(img, gold_, 0.75f);
    fill_cell(img, dust_, 0.45f);
    fill_cell(img, agent_, 1.0f);
    if (cfg_.scoreboard) {
      img.has_noncausal_region = true;
      img.noncausal_region = Rect{0, 0, kStripRows, kImage};
      // Cumulative score in 0.05 units, wrapped to the strip's pixel count.
      const int units = static_cast<int>(std::lround(score_ / 0.05));
      const int filled = units % (kStripRows * kImage + 1);
      for (int i = 0; i < filled; ++i) img.at(i / kImage, i % kImage) = 0.6f;
    }
    return img;
  }
};

// [B x 1 x H x W] batch from pixel states.
template <typename T>
Tensor<T> pixel_batch(const std::vector<const PixelState*>& states) {
  if (states.empty()) throw ShapeMismatch("pixel_batch: empty batch");
  const int B = static_cast<int>(states.size());
  const int H = states[0]->h, W = states[0]->w;
  Tensor<T> t({B, 1, H, W});
  for (int b = 0; b < B; ++b) {
    const PixelState& s = *states[b];
    if (s.h != H || s.w != W || s.c != 1) throw ShapeMismatch("pixel_batch: mixed image shapes");
    for (int r = 0; r < H; ++r)
      for (int col = 0; col < W; ++col) t.at4(b, 0, r, col) = static_cast<T>(s.at(r, col));
  }
  return t;
}

}  // namespace cdrl
