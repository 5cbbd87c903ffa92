// Shared environment vocabulary: states, decomposed rewards, episode steps.
//
// Environments expose K reward channels whose components always sum to the
// scalar total (additivity), a "clean" counterpart of each state with
// non-causal content removed, and — where ground truth exists — ideal binary
// masks over state dimensions.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cdrl/errors.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

// Reward split across K channels.  `total` is stored, not recomputed, so the
// additivity invariant is checkable rather than true by construction.
struct RewardVector {
  std::vector<double> components;
  double total = 0.0;

  static RewardVector of(std::vector<double> comps) {
    RewardVector r;
    r.total = 0.0;
    for (double c : comps) r.total += c;
    r.components = std::move(comps);
    return r;
  }

  double additivity_gap() const {
    double sum = 0.0;
    for (double c : components) sum += c;
    return std::fabs(total - sum);
  }

  bool additive(double tol = 1e-6) const { return additivity_gap() <= tol; }
};

// Vector-valued state with named dimensions.
struct VectorState {
  std::vector<double> values;
  std::vector<std::string> dim_labels;
};

// Half-open pixel rectangle [row0,row1) x [col0,col1).
struct Rect {
  int row0 = 0;
  int col0 = 0;
  int row1 = 0;
  int col1 = 0;

  bool contains(int row, int col) const {
    return row >= row0 && row < row1 && col >= col0 && col < col1;
  }
};

// Grayscale (or multi-channel) image state, values in [0,1], stored
// row-major as [H][W][C].
struct PixelState {
  int h = 0;
  int w = 0;
  int c = 1;
  std::vector<float> pixels;
  bool has_noncausal_region = false;
  Rect noncausal_region;

  float& at(int row, int col, int ch = 0) {
    return pixels[(static_cast<std::size_t>(row) * w + col) * c + ch];
  }
  float at(int row, int col, int ch = 0) const {
    return pixels[(static_cast<std::size_t>(row) * w + col) * c + ch];
  }
};

template <typename S>
struct StepResult {
  S state;
  RewardVector reward;
  bool done = false;
};

// One stored transition.
template <typename S>
struct EpisodeStep {
  S state;
  int action = 0;
  RewardVector reward;
  S next_state;
  bool done = false;
};

// Converts a batch of observation vectors into a [B x D] tensor of T.
template <typename T>
Tensor<T> obs_batch(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeMismatch("obs_batch: empty batch");
  const int B = static_cast<int>(rows.size());
  const int D = static_cast<int>(rows[0].size());
  Tensor<T> t({B, D});
  for (int b = 0; b < B; ++b) {
    if (static_cast<int>(rows[b].size()) != D) {
      throw ShapeMismatch("obs_batch: ragged observation rows");
    }
    for (int d = 0; d < D; ++d) t.at2(b, d) = static_cast<T>(rows[b][d]);
  }
  return t;
}

}  // namespace cdrl
