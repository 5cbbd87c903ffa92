// Evaluation metrics over a set of states: decision fidelity under masking,
// mask sparsity and pairwise mask overlap, distance of the learned masks from
// per-channel ideal masks, action criticality, and reward-difference
// explanations between two actions.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "cdrl/bundle.hpp"
#include "cdrl/env.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

// Default evaluation-set size: up to kEvalStateCap states drawn from
// kEvalEpisodes greedy episodes.
inline constexpr int kEvalEpisodes = 16;
inline constexpr int kEvalStateCap = 512;

// ---- action criticality --------------------------------------------------

// best/second are the top two actions by summed component Q; gap is their
// difference. A state is critical when the best action clearly dominates the
// runner-up: by ratio (1 + tau) when the runner-up value is positive, and by
// any positive gap otherwise.
struct Criticality {
  int best_action = 0;
  int second_action = 0;
  double gap = 0.0;
  bool critical = false;
};

inline Criticality action_criticality(const Tensor<double>& component_q, double tau = 0.1) {
  require_rank(component_q, 2, "action_criticality");
  const int K = component_q.shape[0], A = component_q.shape[1];
  if (A < 2) throw ShapeMismatch("action_criticality: need at least two actions");
  std::vector<double> sums(static_cast<std::size_t>(A), 0.0);
  for (int a = 0; a < A; ++a) {
    for (int i = 0; i < K; ++i) sums[static_cast<std::size_t>(a)] += component_q.at2(i, a);
  }
  Criticality out;
  for (int a = 1; a < A; ++a) {
    if (sums[static_cast<std::size_t>(a)] > sums[static_cast<std::size_t>(out.best_action)]) {
      out.best_action = a;
    }
  }
  out.second_action = out.best_action == 0 ? 1 : 0;
  for (int a = 0; a < A; ++a) {
    if (a == out.best_action) continue;
    if (sums[static_cast<std::size_t>(a)] > sums[static_cast<std::size_t>(out.second_action)]) {
      out.second_action = a;
    }
  }
  const double best = sums[static_cast<std::size_t>(out.best_action)];
  const double second = sums[static_cast<std::size_t>(out.second_action)];
  out.gap = best - second;
  out.critical = second > 0.0 ? best >= (1.0 + tau) * second : out.gap > 0.0;
  return out;
}

// ---- reward-difference explanation ---------------------------------------

// Per-channel Q gaps explaining why `preferred` beats `over`:
// delta_i = Q_i(s, preferred) - Q_i(s, over); total is their sum.
struct RdxResult {
  int preferred = 0;
  int over = 0;
  std::vector<double> delta;
  double total = 0.0;
};

inline RdxResult reward_difference(const Tensor<double>& component_q, int preferred, int over) {
  require_rank(component_q, 2, "reward_difference");
  const int K = component_q.shape[0], A = component_q.shape[1];
  if (preferred < 0 || preferred >= A || over < 0 || over >= A) {
    throw ShapeMismatch("reward_difference: action index out of range");
  }
  RdxResult out;
  out.preferred = preferred;
  out.over = over;
  for (int i = 0; i < K; ++i) {
    out.delta.push_back(component_q.at2(i, preferred) - component_q.at2(i, over));
    out.total += out.delta.back();
  }
  return out;
}

// ---- pure mask statistics ------------------------------------------------

namespace detail {

inline void require_mask_batch(const std::vector<Tensor<double>>& channel_masks,
                               const char* who) {
  if (channel_masks.empty()) throw InsufficientData(std::string(who) + ": no mask channels");
  for (const Tensor<double>& m : channel_masks) {
    require_rank(m, 2, who);
    if (m.shape != channel_masks[0].shape) {
      throw ShapeMismatch(std::string(who) + ": mask channels disagree on shape");
    }
  }
  if (channel_masks[0].shape[0] < 1) {
    throw InsufficientData(std::string(who) + ": no states");
  }
}

}  // namespace detail

// Mean mask value over channels, states and dimensions (1 = keep everything).
inline double sparsity_value(const std::vector<Tensor<double>>& channel_masks) {
  detail::require_mask_batch(channel_masks, "sparsity_value");
  double sum = 0.0;
  std::size_t count = 0;
  for (const Tensor<double>& m : channel_masks) {
    sum = std::accumulate(m.data.begin(), m.data.end(), sum);
    count += m.numel();
  }
  return sum / static_cast<double>(count);
}

// Summed soft pairwise overlap: for each unordered channel pair, the state
// mean of |m_i| + |m_j| - |min(m_i, m_j)| (the soft union mass), normalized
// by the state dimension. Identical full masks give 1 per pair; disjoint
// masks give their combined support fraction.
inline double orthogonality_value(const std::vector<Tensor<double>>& channel_masks) {
  detail::require_mask_batch(channel_masks, "orthogonality_value");
  const int K = static_cast<int>(channel_masks.size());
  const int B = channel_masks[0].shape[0], D = channel_masks[0].shape[1];
  double out = 0.0;
  for (int i = 0; i < K; ++i) {
    for (int j = i + 1; j < K; ++j) {
      double pair_mean = 0.0;
      for (int n = 0; n < B; ++n) {
        double mass = 0.0;
        for (int d = 0; d < D; ++d) {
          const double a = channel_masks[static_cast<std::size_t>(i)].at2(n, d);
          const double b = channel_masks[static_cast<std::size_t>(j)].at2(n, d);
          mass += a + b - std::min(a, b);
        }
        pair_mean += mass / static_cast<double>(D);
      }
      out += pair_mean / static_cast<double>(B);
    }
  }
  return out;
}

// Mean absolute distance between the mean mask profile and the ideal masks,
// minimized over channel-to-ideal assignments and averaged over channels.
// All-ones masks against ideals with z zero dims per channel score
// (sum of z_i) / K.
inline double mask_score_value(const std::vector<std::vector<double>>& mean_masks,
                               const std::vector<std::vector<double>>& ideal_masks) {
  const std::size_t K = mean_masks.size();
  if (K == 0 || ideal_masks.size() != K) {
    throw ShapeMismatch("mask_score_value: need one ideal per mask channel");
  }
  const std::size_t D = mean_masks[0].size();
  for (const auto& row : mean_masks) {
    if (row.size() != D) throw ShapeMismatch("mask_score_value: ragged mask profile");
  }
  for (const auto& row : ideal_masks) {
    if (row.size() != D) throw ShapeMismatch("mask_score_value: ideals disagree on dimension");
  }
  std::vector<int>перm;  // assignment of channels to ideals
  std::vector<int> perm(K);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      const auto& ideal = ideal_masks[static_cast<std::size_t>(perm[i])];
      for (std::size_t d = 0; d < D; ++d) {
        total += std::abs(mean_masks[i][d] - ideal[d]);
      }
    }
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(K);
}

// ---- bundle-level metric evaluation --------------------------------------

// Per-channel masks over a state batch, flattened to [B x D] rows.
template <typename BundleT, typename Env>
std::vector<Tensor<double>> collect_masks(const BundleT& bundle, const Env& env,
                                          const std::vector<typename BundleT::State>& states) {
  using T = typename BundleT::Scalar;
  if (!method_has_maskers(bundle.method)) {
    throw NoMasks(std::string("method ") + method_name(bundle.method) + " has no masks");
  }
  if (states.empty()) throw InsufficientData("collect_masks: no states");
  std::vector<const typename BundleT::State*> ptrs;
  ptrs.reserve(states.size());
  for (const auto& s : states) ptrs.push_back(&s);
  Tensor<T> obs = observe_batch<T, Env>(env, ptrs);
  std::vector<Tensor<T>> masks = bundle.infer_masks(obs);
  std::vector<Tensor<double>> out;
  out.reserve(masks.size());
  for (Tensor<T>& m : masks) {
    Tensor<T> flat = flatten_rows(m);
    Tensor<double> d(flat.shape);
    for (std::size_t e = 0; e < flat.numel(); ++e) d[e] = static_cast<double>(flat[e]);
    out.push_back(std::move(d));
  }
  return out;
}

// Fraction of states whose greedy action is unchanged when each Q-head reads
// its masked sub-state instead of the full state.
template <typename BundleT, typename Env>
double fidelity_metric(const BundleT& bundle, const Env& env,
                       const std::vector<typename BundleT::State>& states) {
  using T = typename BundleT::Scalar;
  if (!method_has_maskers(bundle.method)) {
    throw NoMasks(std::string("method ") + method_name(bundle.method) + " has no masks");
  }
  if (states.empty()) throw InsufficientData("fidelity_metric: no states");
  std::vector<const typename BundleT::State*> ptrs;
  ptrs.reserve(states.size());
  for (const auto& s : states) ptrs.push_back(&s);
  Tensor<T> obs = observe_batch<T, Env>(env, ptrs);
  std::vector<Tensor<T>> masks = bundle.infer_masks(obs);

  std::vector<Tensor<T>> full_rows, masked_rows;
  if constexpr (BundleT::kPixel) {
    Tensor<T> feats = bundle.encoder.infer(obs);
    Tensor<T> flat = flatten_rows(feats);
    for (int i = 0; i < bundle.k(); ++i) {
      full_rows.push_back(bundle.q_heads[static_cast<std::size_t>(i)].infer(flat));
      masked_rows.push_back(bundle.q_heads[static_cast<std::size_t>(i)].infer(
          flatten_rows(mask_features(masks[static_cast<std::size_t>(i)], feats))));
    }
  } else {
    for (int i = 0; i < bundle.k(); ++i) {
      Tensor<T> sub = obs;
      for (std::size_t e = 0; e < sub.numel(); ++e) {
        sub[e] *= masks[static_cast<std::size_t>(i)][e];
      }
      full_rows.push_back(bundle.q_heads[static_cast<std::size_t>(i)].infer(obs));
      masked_rows.push_back(bundle.q_heads[static_cast<std::size_t>(i)].infer(sub));
    }
  }
  const std::vector<int> a_full = global_actions_batch(full_rows);
  const std::vector<int> a_masked = global_actions_batch(masked_rows);
  int agree = 0;
  for (std::size_t n = 0; n < a_full.size(); ++n) agree += a_full[n] == a_masked[n];
  return static_cast<double>(agree) / static_cast<double>(a_full.size());
}

template <typename BundleT, typename Env>
double sparsity_metric(const BundleT& bundle, const Env& env,
                       const std::vector<typename BundleT::State>& states) {
  return sparsity_value(collect_masks(bundle, env, states));
}

template <typename BundleT, typename Env>
double orthogonality_metric(const BundleT& bundle, const Env& env,
                            const std::vector<typename BundleT::State>& states) {
  return orthogonality_value(collect_masks(bundle, env, states));
}

// Mean mask value per channel and dimension over the state batch: K rows of D.
template <typename BundleT, typename Env>
std::vector<std::vector<double>> mean_mask_profile(
    const BundleT& bundle, const Env& env,
    const std::vector<typename BundleT::State>& states) {
  const std::vector<Tensor<double>> masks = collect_masks(bundle, env, states);
  std::vector<std::vector<double>> profile;
  profile.reserve(masks.size());
  for (const Tensor<double>& m : masks) {
    const int B = m.shape[0], D = m.shape[1];
    std::vector<double> row(static_cast<std::size_t>(D), 0.0);
    for (int n = 0; n < B; ++n) {
      for (int d = 0; d < D; ++d) row[static_cast<std::size_t>(d)] += m.at2(n, d);
    }
    for (double& v : row) v /= static_cast<double>(B);
    profile.push_back(std::move(row));
  }
  return profile;
}

template <typename BundleT, typename Env>
double mask_score_metric(const BundleT& bundle, const Env& env,
                         const std::vector<typename BundleT::State>& states,
                         const std::vector<std::vector<double>>& ideal_masks) {
  return mask_score_value(mean_mask_profile(bundle, env, states), ideal_masks);
}

}  // namespace cdrl
