// Causal-distillation core: mask application and the four loss objectives
// (intervention invariance, reward fidelity, sparsity, orthogonality).
//
// Losses exist in two forms sharing one formula path: tape builders returning
// a scalar node for training, and pure evaluators used by metrics and tests
// (which run the same builders on a scratch tape over constant leaves).
//
// Conventions:
//   - mask batches are [B x D] (pixel masks flattened to rows first);
//   - the intervention loss is a mean over non-degenerate sample pairs —
//     rows where either feature vector has norm < 1e-8 are skipped and
//     counted, not averaged in;
//   - the reward-fidelity residual is the batch mean of the absolute gap
//     between the summed per-channel predictions and the observed total.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cdrl/autodiff.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

// K masks over the masked substrate, values in [0,1].
template <typename T>
struct MaskSet {
  std::vector<Tensor<T>> masks;

  int k() const { return static_cast<int>(masks.size()); }
};

// Intervention magnitude: lambda is drawn from U(0, epsilon) per application.
struct InterventionSpec {
  double epsilon = 0.5;
};

inline constexpr double kDegenerateFeatureNorm = 1e-8;

// ---- mask application ----------------------------------------------------

// Elementwise product of a mask with the feature substrate.  Accepts equal
// shapes, or a [B x 1 x H x W] mask broadcast over [B x C x H x W] features.
template <typename T>
Tensor<T> distill_state(const Tensor<T>& mask, const Tensor<T>& features) {
  if (mask.same_shape(features)) {
    Tensor<T> out = features;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
    return out;
  }
  if (mask.rank() == 4 && features.rank() == 4 && mask.shape[0] == features.shape[0] &&
      mask.shape[1] == 1 && mask.shape[2] == features.shape[2] &&
      mask.shape[3] == features.shape[3]) {
    Tensor<T> out = features;
    for (int n = 0; n < out.shape[0]; ++n)
      for (int c = 0; c < out.shape[1]; ++c)
        for (int h = 0; h < out.shape[2]; ++h)
          for (int w = 0; w < out.shape[3]; ++w) out.at4(n, c, h, w) *= mask.at4(n, 0, h, w);
    return out;
  }
  throw ShapeMismatch("distill_state: mask " + shape_to_string(mask.shape) +
                      " does not fit features " + shape_to_string(features.shape));
}

// ---- loss builders (tape) -----------------------------------------------

// Mean cosine similarity between paired feature rows, skipping rows where
// either side is degenerate (norm < 1e-8).  To be MAXIMIZED.  `skipped`
// receives the number of excluded rows, if given.
template <typename T>
int loss_intervention_node(Tape<T>& tape, int feat_a, int feat_b, int* skipped = nullptr) {
  const Tensor<T>& va = tape.value(feat_a);
  const Tensor<T>& vb = tape.value(feat_b);
  require_rank(va, 2, "loss_intervention lhs");
  require_same_shape(va, vb, "loss_intervention");
  const int B = va.shape[0], D = va.shape[1];
  std::vector<char> keep(static_cast<std::size_t>(B), 1);
  int dropped = 0;
  for (int n = 0; n < B; ++n) {
    double na = 0.0, nb = 0.0;
    for (int d = 0; d < D; ++d) {
      na += static_cast<double>(va.at2(n, d)) * static_cast<double>(va.at2(n, d));
      nb += static_cast<double>(vb.at2(n, d)) * static_cast<double>(vb.at2(n, d));
    }
    if (std::sqrt(na) < kDegenerateFeatureNorm || std::sqrt(nb) < kDegenerateFeatureNorm) {
      keep[static_cast<std::size_t>(n)] = 0;
      ++dropped;
    }
  }
  if (skipped) *skipped = dropped;
  return tape.mean_selected(tape.cosine_rows(feat_a, feat_b), keep);
}

// Batch-mean absolute residual between the summed channel predictions and the
// observed total reward.  `head_outputs` are K nodes of shape [B]; `rewards`
// is a constant [B] node.  To be MINIMIZED.
template <typename T>
int loss_reward_fidelity_node(Tape<T>& tape, const std::vector<int>& head_outputs, int rewards) {
  if (head_outputs.empty()) throw ShapeMismatch("loss_reward_fidelity: no reward heads");
  int sum = head_outputs[0];
  for (std::size_t i = 1; i < head_outputs.size(); ++i) sum = tape.add(sum, head_outputs[i]);
  return tape.mean_all(tape.abs(tape.sub(sum, rewards)));
}

template <typename T>
struct SparsityWeights {
  T w_log = T(0.1);
  T w_l1 = T(1.0);
  T eps_log = T(1e-6);
};

// Sum over channels of  w_log * log(sum_d m_d + eps_log) + w_l1 * mean_d m_d,
// averaged over the batch.  Masks are [B x D] nodes.  To be MINIMIZED.
template <typename T>
int loss_sparsity_node(Tape<T>& tape, const std::vector<int>& masks, SparsityWeights<T> w) {
  if (masks.empty()) throw ShapeMismatch("loss_sparsity: no masks");
  std::vector<int> per_channel;
  std::vector<T> ones;
  for (int m : masks) {
    const Tensor<T>& vm = tape.value(m);
    require_rank(vm, 2, "loss_sparsity mask");
    const int D = vm.shape[1];
    int s = tape.sum_rows(m);
    int log_term = tape.log(tape.add_const(s, w.eps_log));
    int l1_term = tape.scale(s, T(1) / static_cast<T>(D));
    per_channel.push_back(
        tape.mean_all(tape.add(tape.scale(log_term, w.w_log), tape.scale(l1_term, w.w_l1))));
    ones.push_back(T(1));
  }
  return tape.weighted_sum(per_channel, ones);
}

// Sum over ordered channel pairs i != j of the mean elementwise mask product
// (batch- and dimension-averaged).  Zero iff supports are pairwise disjoint.
// To be MINIMIZED.
template <typename T>
int loss_orthogonality_node(Tape<T>& tape, const std::vector<int>& masks) {
  if (masks.size() < 2) throw ShapeMismatch("loss_orthogonality: need at least two masks");
  for (int m : masks) require_rank(tape.value(m), 2, "loss_orthogonality mask");
  std::vector<int> pair_terms;
  std::vector<T> ones;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    for (std::size_t j = 0; j < masks.size(); ++j) {
      if (i == j) continue;
      pair_terms.push_back(tape.mean_all(tape.mul(masks[i], masks[j])));
      ones.push_back(T(1));
    }
  }
  return tape.weighted_sum(pair_terms, ones);
}

// ---- pure evaluators -----------------------------------------------------

inline double loss_intervention_value(const Tensor<double>& feat_a, const Tensor<double>& feat_b,
                                      int* skipped = nullptr) {
  Tape<double> tape;
  return tape.value(
      loss_intervention_node(tape, tape.leaf(feat_a), tape.leaf(feat_b), skipped))[0];
}

inline double loss_reward_fidelity_value(const std::vector<Tensor<double>>& head_outputs,
                                         const Tensor<double>& rewards) {
  Tape<double> tape;
  std::vector<int> ids;
  for (const auto& h : head_outputs) ids.push_back(tape.leaf(h));
  return tape.value(loss_reward_fidelity_node(tape, ids, tape.leaf(rewards)))[0];
}

inline double loss_sparsity_value(const std::vector<Tensor<double>>& masks,
                                  SparsityWeights<double> w = {}) {
  Tape<double> tape;
  std::vector<int> ids;
  for (const auto& m : masks) ids.push_back(tape.leaf(m));
  return tape.value(loss_sparsity_node(tape, ids, w))[0];
}

inline double loss_orthogonality_value(const std::vector<Tensor<double>>& masks) {
  Tape<double> tape;
  std::vector<int> ids;
  for (const auto& m : masks) ids.push_back(tape.leaf(m));
  return tape.value(loss_orthogonality_node(tape, ids))[0];
}

// Guards a computed training loss.
inline void require_finite(double value, const std::string& what) {
  if (!std::isfinite(value)) throw NonFiniteLoss(what + " evaluated to a non-finite value");
}

}  // namespace cdrl
