// Decomposed deep Q-learning: the three TD updates, the desiderata update
// blocks, the training loop with its n1..n4 cadences, greedy evaluation, and
// evaluation-state collection.
//
// Gradient routing, by construction of each update's tape:
//   - TD with full reward (delta1): online Q-heads only.
//   - TD with predicted component rewards (delta2): online Q-heads only; the
//     reward heads enter as detached constants.
//   - TD with ground sub-rewards on masked sub-states: Q-heads and maskers.
//   - Intervention loss: encoder only (a no-op on vector states, where the
//     encoder is the identity).
//   - Reward-fidelity loss: reward heads, plus maskers when the heads consume
//     masked features; never the encoder.
//   - Sparsity / orthogonality: maskers only.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "cdrl/adam.hpp"
#include "cdrl/autodiff.hpp"
#include "cdrl/bundle.hpp"
#include "cdrl/distill.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/fourier.hpp"
#include "cdrl/monster_treasure.hpp"
#include "cdrl/replay.hpp"
#include "cdrl/rng.hpp"

namespace cdrl {

// ---- configuration -------------------------------------------------------

struct TrainConfig {
  std::string env_id = "monster_treasure";
  int k = 2;
  long long total_steps = 50000;
  long long learning_start = 1000;
  double gamma = 0.95;
  double lr = 6.25e-5;
  int batch_size = 32;
  int replay_capacity = 100000;
  int n1 = 4;
  int n2 = 16;
  int n3 = 4;
  int n4 = 4;
  long long target_sync = 1000;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_fraction = 0.2;  // exploration decays over this fraction of total_steps
  double w_interv = 1.0;
  double w_reward = 1.0;
  double w_sparse = 0.1;
  double w_orth = 0.1;
  double eps_intervention = 0.5;  // amplitude-mixing lambda ~ U(0, eps_intervention)
  double eps_log = 1e-6;
  int hidden = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (gamma <= 0.0 || gamma >= 1.0) throw ConfigError("gamma must lie in (0,1)");
    if (n1 < 1 || n2 < 1 || n3 < 1 || n4 < 1) throw ConfigError("n1..n4 must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (replay_capacity < batch_size) throw ConfigError("replay_capacity must hold a batch");
    if (total_steps < 0 || learning_start < 0) throw ConfigError("step counts must be >= 0");
    if (target_sync < 1) throw ConfigError("target_sync must be >= 1");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (k < 1) throw ConfigError("k must be >= 1");
    if (eps_intervention < 0.0 || eps_intervention > 1.0) {
      throw ConfigError("eps_intervention must lie in [0,1]");
    }
    if (eps_start < 0.0 || eps_start > 1.0 || eps_end < 0.0 || eps_end > 1.0 ||
        eps_fraction < 0.0 || eps_fraction > 1.0) {
      throw ConfigError("epsilon schedule values must lie in [0,1]");
    }
    if (hidden < 0) throw ConfigError("hidden must be >= 0");
  }
};

// Linear decay from eps_start to eps_end over the first eps_fraction of
// training, then flat.
inline double epsilon_at(const TrainConfig& cfg, long long step) {
  const double horizon = cfg.eps_fraction * static_cast<double>(cfg.total_steps);
  if (horizon <= 0.0) return cfg.eps_end;
  const double frac = std::min(1.0, static_cast<double>(step) / horizon);
  return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac;
}

// ---- optimizer state -----------------------------------------------------

template <typename BundleT>
struct BundleOpt {
  using T = typename BundleT::Scalar;

  AdamState<T> encoder;  // used by pixel bundles only
  std::vector<AdamState<T>> maskers;
  std::vector<AdamState<T>> reward_heads;
  std::vector<AdamState<T>> q_heads;

  BundleOpt() = default;

  BundleOpt(const BundleT& bundle, T lr) {
    if constexpr (BundleT::kPixel) encoder = make_adam(bundle.encoder.params, lr);
    for (const auto& m : bundle.maskers) maskers.push_back(make_adam(m.params, lr));
    for (const auto& r : bundle.reward_heads) reward_heads.push_back(make_adam(r.params, lr));
    for (const auto& q : bundle.q_heads) q_heads.push_back(make_adam(q.params, lr));
  }
};

// ---- batch assembly ------------------------------------------------------

namespace detail {

template <typename BundleT, typename Env>
struct TdBatch {
  using T = typename BundleT::Scalar;
  Tensor<T> obs_t;    // network input at s_t
  Tensor<T> obs_tp1;  // network input at s_{t+1}
  std::vector<int> actions;
  std::vector<double> r_total;
  std::vector<std::vector<double>> r_comp;  // [K][B]
  std::vector<double> not_done;             // 1 - done
};

template <typename BundleT, typename Env>
TdBatch<BundleT, Env> make_td_batch(
    const BundleT& bundle, const Env& env,
    const std::vector<const EpisodeStep<typename BundleT::State>*>& batch) {
  using State = typename BundleT::State;
  TdBatch<BundleT, Env> out;
  std::vector<const State*> s, sp;
  s.reserve(batch.size());
  sp.reserve(batch.size());
  out.r_comp.assign(static_cast<std::size_t>(bundle.k()), {});
  for (const EpisodeStep<State>* step : batch) {
    s.push_back(&step->state);
    sp.push_back(&step->next_state);
    out.actions.push_back(step->action);
    out.r_total.push_back(step->reward.total);
    if (static_cast<int>(step->reward.components.size()) != bundle.k()) {
      throw ShapeMismatch("transition reward has wrong component count");
    }
    for (int i = 0; i < bundle.k(); ++i) {
      out.r_comp[static_cast<std::size_t>(i)].push_back(
          step->reward.components[static_cast<std::size_t>(i)]);
    }
    out.not_done.push_back(step->done ? 0.0 : 1.0);
  }
  out.obs_t = observe_batch<typename BundleT::Scalar, Env>(env, s);
  out.obs_tp1 = observe_batch<typename BundleT::Scalar, Env>(env, sp);
  return out;
}

// Full-state features for Q/reward heads: the observation itself on vector
// bundles, flattened conv features on pixel bundles.
template <typename BundleT>
Tensor<typename BundleT::Scalar> full_feats(const BundleT& bundle,
                                            const Tensor<typename BundleT::Scalar>& obs) {
  if constexpr (BundleT::kPixel) {
    return flatten_rows(bundle.encoder.infer(obs));
  } else {
    return obs;
  }
}

template <typename T>
std::vector<T> to_scalar(const std::vector<double>& v) {
  std::vector<T> out;
  out.reserve(v.size());
  for (double x : v) out.push_back(static_cast<T>(x));
  return out;
}

}  // namespace detail

// ---- TD updates ----------------------------------------------------------

// delta1 = r + gamma * sum_i Qtarget_i(s', a*) - sum_i Q_i(s, a), minimized as
// the batch mean of delta1^2; gradients reach the online Q-heads only.
template <typename BundleT, typename Env>
double td_update_full(BundleT& bundle, BundleOpt<BundleT>& opt, const Env& env,
                      const std::vector<const EpisodeStep<typename BundleT::State>*>& batch,
                      const TrainConfig& cfg) {
  using T = typename BundleT::Scalar;
  if (!method_uses_td_full(bundle.method)) {
    throw WrongMethod(std::string("td_update_full does not apply to method ") +
                      method_name(bundle.method));
  }
  auto tb = detail::make_td_batch(bundle, env, batch);
  const int B = static_cast<int>(batch.size());

  // Bootstrap targets (all constants).
  Tensor<T> feats_tp1 = detail::full_feats(bundle, tb.obs_tp1);
  std::vector<Tensor<T>> online_tp1;
  for (const auto& q : bundle.q_heads) online_tp1.push_back(q.infer(feats_tp1));
  const std::vector<int> astar = global_actions_batch(online_tp1);
  std::vector<double> y(static_cast<std::size_t>(B), 0.0);
  for (int i = 0; i < bundle.k(); ++i) {
    Tensor<T> qt = bundle.q_targets[static_cast<std::size_t>(i)].infer(feats_tp1);
    for (int n = 0; n < B; ++n) {
      y[static_cast<std::size_t>(n)] +=
          static_cast<double>(qt.at2(n, astar[static_cast<std::size_t>(n)]));
    }
  }
  for (int n = 0; n < B; ++n) {
    auto un = static_cast<std::size_t>(n);
    y[un] = tb.r_total[un] + cfg.gamma * tb.not_done[un] * y[un];
  }

  // Online side on the tape.
  Tape<T> tape;
  const int feats_node = tape.leaf(detail::full_feats(bundle, tb.obs_t));
  std::vector<BoundParams<T>> q_bound;
  int q_sum = -1;
  for (int i = 0; i < bundle.k(); ++i) {
    q_bound.push_back(bind_params(tape, bundle.q_heads[static_cast<std::size_t>(i)].params));
    const int qi = tape.gather_cols(
        bundle.q_heads[static_cast<std::size_t>(i)].forward(tape, feats_node, q_bound.back()),
        tb.actions);
    q_sum = (q_sum < 0) ? qi : tape.add(q_sum, qi);
  }
  const int delta = tape.sub(q_sum, tape.leaf(Tensor<T>({B}, detail::to_scalar<T>(y))));
  const int loss = tape.mean_all(tape.square(delta));
  tape.backward(loss);
  for (int i = 0; i < bundle.k(); ++i) {
    adam_step(opt.q_heads[static_cast<std::size_t>(i)],
              bundle.q_heads[static_cast<std::size_t>(i)].params,
              collect_grads(tape, q_bound[static_cast<std::size_t>(i)]));
  }
  const double value = static_cast<double>(tape.value(loss)[0]);
  require_finite(value, "td_update_full loss");
  return value;
}

// delta2_i = rhat_i + gamma * Qtarget_i(s', a*) - Q_i(s, a) with the predicted
// reward rhat_i detached; loss = mean over components and batch of delta2_i^2.
template <typename BundleT, typename Env>
double td_update_component(BundleT& bundle, BundleOpt<BundleT>& opt, const Env& env,
                           const std::vector<const EpisodeStep<typename BundleT::State>*>& batch,
                           const TrainConfig& cfg) {
  using T = typename BundleT::Scalar;
  if (!method_uses_td_component(bundle.method)) {
    throw WrongMethod(std::string("td_update_component does not apply to method ") +
                      method_name(bundle.method));
  }
  auto tb = detail::make_td_batch(bundle, env, batch);
  const int B = static_cast<int>(batch.size());

  // Detached predicted rewards at (s_t, a_t): heads consume masked features.
  std::vector<Tensor<T>> masks = bundle.infer_masks(tb.obs_t);
  std::vector<std::vector<double>> rhat(static_cast<std::size_t>(bundle.k()));
  if constexpr (BundleT::kPixel) {
    Tensor<T> feats4 = bundle.encoder.infer(tb.obs_t);
    for (int i = 0; i < bundle.k(); ++i) {
      Tensor<T> sub = flatten_rows(mask_features(masks[static_cast<std::size_t>(i)], feats4));
      Tensor<T> pred = bundle.reward_heads[static_cast<std::size_t>(i)].infer(sub);
      for (int n = 0; n < B; ++n) {
        rhat[static_cast<std::size_t>(i)].push_back(
            static_cast<double>(pred.at2(n, tb.actions[static_cast<std::size_t>(n)])));
      }
    }
  } else {
    for (int i = 0; i < bundle.k(); ++i) {
      Tensor<T> sub = tb.obs_t;
      for (std::size_t e = 0; e < sub.numel(); ++e) sub[e] *= masks[static_cast<std::size_t>(i)][e];
      Tensor<T> pred = bundle.reward_heads[static_cast<std::size_t>(i)].infer(sub);
      for (int n = 0; n < B; ++n) {
        rhat[static_cast<std::size_t>(i)].push_back(
            static_cast<double>(pred.at2(n, tb.actions[static_cast<std::size_t>(n)])));
      }
    }
  }

  Tensor<T> feats_tp1 = detail::full_feats(bundle, tb.obs_tp1);
  std::vector<Tensor<T>> online_tp1;
  for (const auto& q : bundle.q_heads) online_tp1.push_back(q.infer(feats_tp1));
  const std::vector<int> astar = global_actions_batch(online_tp1);

  Tape<T> tape;
  const int feats_node = tape.leaf(detail::full_feats(bundle, tb.obs_t));
  std::vector<BoundParams<T>> q_bound;
  std::vector<int> losses;
  for (int i = 0; i < bundle.k(); ++i) {
    Tensor<T> qt = bundle.q_targets[static_cast<std::size_t>(i)].infer(feats_tp1);
    std::vector<T> y(static_cast<std::size_t>(B));
    for (int n = 0; n < B; ++n) {
      auto un = static_cast<std::size_t>(n);
      y[un] = static_cast<T>(rhat[static_cast<std::size_t>(i)][un] +
                             cfg.gamma * tb.not_done[un] *
                                 static_cast<double>(qt.at2(n, astar[un])));
    }
    q_bound.push_back(bind_params(tape, bundle.q_heads[static_cast<std::size_t>(i)].params));
    const int qi = tape.gather_cols(
        bundle.q_heads[static_cast<std::size_t>(i)].forward(tape, feats_node, q_bound.back()),
        tb.actions);
    losses.push_back(tape.mean_all(tape.square(tape.sub(qi, tape.leaf(Tensor<T>({B}, y))))));
  }
  const int loss = tape.weighted_sum(
      losses, std::vector<T>(losses.size(), T(1) / static_cast<T>(bundle.k())));
  tape.backward(loss);
  for (int i = 0; i < bundle.k(); ++i) {
    adam_step(opt.q_heads[static_cast<std::size_t>(i)],
              bundle.q_heads[static_cast<std::size_t>(i)].params,
              collect_grads(tape, q_bound[static_cast<std::size_t>(i)]));
  }
  const double value = static_cast<double>(tape.value(loss)[0]);
  require_finite(value, "td_update_component loss");
  return value;
}

// delta_i = r_i + gamma * Qtarget_i(masked s', a*) - Q_i(masked s, a); loss =
// mean over components and batch of delta_i^2. Gradients reach the online
// Q-heads and, through the masked sub-states, the maskers; the encoder is
// held fixed here.
template <typename BundleT, typename Env>
double td_update_ground(BundleT& bundle, BundleOpt<BundleT>& opt, const Env& env,
                        const std::vector<const EpisodeStep<typename BundleT::State>*>& batch,
                        const TrainConfig& cfg) {
  using T = typename BundleT::Scalar;
  if (!method_uses_td_ground(bundle.method)) {
    throw WrongMethod(std::string("td_update_ground does not apply to method ") +
                      method_name(bundle.method));
  }
  auto tb = detail::make_td_batch(bundle, env, batch);
  const int B = static_cast<int>(batch.size());

  // Next-state substrates with the current maskers (constants).
  std::vector<Tensor<T>> online_tp1;
  std::vector<Tensor<T>> sub_tp1;
  {
    std::vector<Tensor<T>> masks_tp1 = bundle.infer_masks(tb.obs_tp1);
    if constexpr (BundleT::kPixel) {
      Tensor<T> feats4 = bundle.encoder.infer(tb.obs_tp1);
      for (int i = 0; i < bundle.k(); ++i) {
        sub_tp1.push_back(
            flatten_rows(mask_features(masks_tp1[static_cast<std::size_t>(i)], feats4)));
      }
    } else {
      for (int i = 0; i < bundle.k(); ++i) {
        Tensor<T> sub = tb.obs_tp1;
        for (std::size_t e = 0; e < sub.numel(); ++e) {
          sub[e] *= masks_tp1[static_cast<std::size_t>(i)][e];
        }
        sub_tp1.push_back(std::move(sub));
      }
    }
    for (int i = 0; i < bundle.k(); ++i) {
      online_tp1.push_back(bundle.q_heads[static_cast<std::size_t>(i)].infer(
          sub_tp1[static_cast<std::size_t>(i)]));
    }
  }
  const std::vector<int> astar = global_actions_batch(online_tp1);

  Tape<T> tape;
  const int obs_node = tape.leaf(tb.obs_t);
  int feats_node = obs_node;  // vector bundles: features are the observation
  if constexpr (BundleT::kPixel) feats_node = tape.leaf(bundle.encoder.infer(tb.obs_t));
  std::vector<BoundParams<T>> q_bound, m_bound;
  std::vector<int> losses;
  for (int i = 0; i < bundle.k(); ++i) {
    Tensor<T> qt = bundle.q_targets[static_cast<std::size_t>(i)].infer(
        sub_tp1[static_cast<std::size_t>(i)]);
    std::vector<T> y(static_cast<std::size_t>(B));
    for (int n = 0; n < B; ++n) {
      auto un = static_cast<std::size_t>(n);
      y[un] = static_cast<T>(tb.r_comp[static_cast<std::size_t>(i)][un] +
                             cfg.gamma * tb.not_done[un] *
                                 static_cast<double>(qt.at2(n, astar[un])));
    }
    m_bound.push_back(
        bind_params(tape, bundle.maskers[static_cast<std::size_t>(i)].params));
    const int mask_node =
        bundle.maskers[static_cast<std::size_t>(i)].forward(tape, obs_node, m_bound.back());
    int sub_node;
    if constexpr (BundleT::kPixel) {
      sub_node = tape.flatten(tape.mul_bcast_channel(mask_node, feats_node));
    } else {
      sub_node = tape.mul(mask_node, feats_node);
    }
    q_bound.push_back(bind_params(tape, bundle.q_heads[static_cast<std::size_t>(i)].params));
    const int qi = tape.gather_cols(
        bundle.q_heads[static_cast<std::size_t>(i)].forward(tape, sub_node, q_bound.back()),
        tb.actions);
    losses.push_back(tape.mean_all(tape.square(tape.sub(qi, tape.leaf(Tensor<T>({B}, y))))));
  }
  const int loss = tape.weighted_sum(
      losses, std::vector<T>(losses.size(), T(1) / static_cast<T>(bundle.k())));
  tape.backward(loss);
  for (int i = 0; i < bundle.k(); ++i) {
    adam_step(opt.q_heads[static_cast<std::size_t>(i)],
              bundle.q_heads[static_cast<std::size_t>(i)].params,
              collect_grads(tape, q_bound[static_cast<std::size_t>(i)]));
    adam_step(opt.maskers[static_cast<std::size_t>(i)],
              bundle.maskers[static_cast<std::size_t>(i)].params,
              collect_grads(tape, m_bound[static_cast<std::size_t>(i)]));
  }
  const double value = static_cast<double>(tape.value(loss)[0]);
  require_finite(value, "td_update_ground loss");
  return value;
}

// ---- desiderata updates --------------------------------------------------

struct DistillLosses {
  double interv = std::numeric_limits<double>::quiet_NaN();
  double reward = std::numeric_limits<double>::quiet_NaN();
  double sparse = std::numeric_limits<double>::quiet_NaN();
  int skipped_rows = 0;
};

// The n1 block: intervention (encoder), reward fidelity (reward heads, and
// maskers when the heads see masked features) and sparsity (maskers), all on
// one sampled batch with a single combined backward pass.
template <typename BundleT, typename Env>
DistillLosses distill_update_main(
    BundleT& bundle, BundleOpt<BundleT>& opt, Env& env,
    const std::vector<const EpisodeStep<typename BundleT::State>*>& batch,
    const TrainConfig& cfg, Rng& rng) {
  using T = typename BundleT::Scalar;
  DistillLosses out;
  const Method m = bundle.method;
  const bool want_interv = method_has_maskers(m);  // desiderata methods only
  const bool want_reward = method_has_reward_heads(m);
  const bool want_sparse = method_uses_regularizers(m);
  if (!want_interv && !want_reward) return out;

  auto tb = detail::make_td_batch(bundle, env, batch);
  const int B = static_cast<int>(batch.size());

  Tape<T> tape;
  std::vector<int> terms;
  std::vector<T> weights;
  const int obs_node = tape.leaf(tb.obs_t);

  // Intervention: maximize feature cosine between each state and its
  // amplitude-perturbed counterpart. Only the (pixel) encoder has parameters.
  BoundParams<T> enc_bound;
  bool enc_on_tape = false;
  if (want_interv) {
    if constexpr (BundleT::kPixel) {
      std::vector<PixelState> inter;
      inter.reserve(batch.size());
      for (const auto* step : batch) {
        const double lambda = uniform01(rng) * cfg.eps_intervention;
        inter.push_back(fourier_intervene(step->state, env.clean_state(step->state), lambda));
      }
      std::vector<const PixelState*> ptrs;
      for (const PixelState& s : inter) ptrs.push_back(&s);
      enc_bound = bind_params(tape, bundle.encoder.params);
      enc_on_tape = true;
      const int fa = tape.flatten(bundle.encoder.forward(tape, obs_node, enc_bound));
      const int fb = tape.flatten(bundle.encoder.forward(
          tape, tape.leaf(pixel_batch<T>(ptrs)), enc_bound));
      int skipped = 0;
      const int interv = loss_intervention_node(tape, fa, fb, &skipped);
      out.skipped_rows = skipped;
      if (skipped > 0) {
        std::fprintf(stderr,
                     "warning: skipped %d degenerate feature row(s) in intervention loss\n",
                     skipped);
      }
      out.interv = static_cast<double>(tape.value(interv)[0]);
      terms.push_back(interv);
      weights.push_back(static_cast<T>(-cfg.w_interv));  // maximize
    } else {
      // Identity encoder: no parameters to update, but report the loss value.
      std::vector<std::vector<double>> a_rows, b_rows;
      for (const auto* step : batch) {
        a_rows.push_back(env.observe(step->state));
        b_rows.push_back(env.observe(vector_intervene(step->state, env)));
      }
      int skipped = 0;
      out.interv = loss_intervention_value(obs_batch<double>(a_rows), obs_batch<double>(b_rows),
                                           &skipped);
      out.skipped_rows = skipped;
      if (skipped > 0) {
        std::fprintf(stderr,
                     "warning: skipped %d degenerate feature row(s) in intervention loss\n",
                     skipped);
      }
    }
  }

  // Masks on the tape (shared by the fidelity and sparsity terms).
  std::vector<BoundParams<T>> m_bound;
  std::vector<int> mask_nodes;      // native resolution
  std::vector<int> mask_rows;       // rank-2 view for the sparsity loss
  if (method_has_maskers(m) && (want_reward || want_sparse)) {
    for (int i = 0; i < bundle.k(); ++i) {
      m_bound.push_back(bind_params(tape, bundle.maskers[static_cast<std::size_t>(i)].params));
      const int node =
          bundle.maskers[static_cast<std::size_t>(i)].forward(tape, obs_node, m_bound.back());
      mask_nodes.push_back(node);
      mask_rows.push_back(BundleT::kPixel ? tape.flatten(node) : node);
    }
  }

  // Reward fidelity: heads on masked features (r_mask*) or full features
  // (rd_pred*), supervised by the total reward or per-channel sub-rewards.
  std::vector<BoundParams<T>> r_bound;
  if (want_reward) {
    int feats_node;  // constant: the encoder is never trained by this loss
    if constexpr (BundleT::kPixel) {
      feats_node = tape.leaf(bundle.encoder.infer(tb.obs_t));
    } else {
      feats_node = tape.leaf(tb.obs_t);
    }
    std::vector<int> head_preds;
    for (int i = 0; i < bundle.k(); ++i) {
      int input_node;
      if (method_has_maskers(m)) {
        if constexpr (BundleT::kPixel) {
          input_node = tape.flatten(
              tape.mul_bcast_channel(mask_nodes[static_cast<std::size_t>(i)], feats_node));
        } else {
          input_node = tape.mul(mask_nodes[static_cast<std::size_t>(i)], feats_node);
        }
      } else {
        input_node = BundleT::kPixel ? tape.flatten(feats_node) : feats_node;
      }
      r_bound.push_back(
          bind_params(tape, bundle.reward_heads[static_cast<std::size_t>(i)].params));
      head_preds.push_back(tape.gather_cols(
          bundle.reward_heads[static_cast<std::size_t>(i)].forward(tape, input_node,
                                                                   r_bound.back()),
          tb.actions));
    }
    int reward_node;
    if (m == Method::kRdPred) {
      // Known sub-rewards supervise each head separately.
      std::vector<int> per_head;
      for (int i = 0; i < bundle.k(); ++i) {
        const int target = tape.leaf(
            Tensor<T>({B}, detail::to_scalar<T>(tb.r_comp[static_cast<std::size_t>(i)])));
        per_head.push_back(tape.mean_all(
            tape.abs(tape.sub(head_preds[static_cast<std::size_t>(i)], target))));
      }
      reward_node = tape.weighted_sum(
          per_head, std::vector<T>(per_head.size(), T(1) / static_cast<T>(bundle.k())));
    } else {
      // Only the total reward supervises the summed predictions.
      const int target = tape.leaf(Tensor<T>({B}, detail::to_scalar<T>(tb.r_total)));
      reward_node = loss_reward_fidelity_node(tape, head_preds, target);
    }
    out.reward = static_cast<double>(tape.value(reward_node)[0]);
    terms.push_back(reward_node);
    weights.push_back(static_cast<T>(cfg.w_reward));
  }

  // Sparsity over the mask rows.
  if (want_sparse) {
    SparsityWeights<T> sw;
    sw.eps_log = static_cast<T>(cfg.eps_log);
    const int sparse_node = loss_sparsity_node(tape, mask_rows, sw);
    out.sparse = static_cast<double>(tape.value(sparse_node)[0]);
    terms.push_back(sparse_node);
    weights.push_back(static_cast<T>(cfg.w_sparse));
  }

  if (want_interv) require_finite(out.interv, "intervention loss");
  if (want_reward) require_finite(out.reward, "reward-fidelity loss");
  if (want_sparse) require_finite(out.sparse, "sparsity loss");

  if (terms.empty()) return out;
  const int total = tape.weighted_sum(terms, weights);
  tape.backward(total);
  if constexpr (BundleT::kPixel) {
    if (enc_on_tape) {
      adam_step(opt.encoder, bundle.encoder.params, collect_grads(tape, enc_bound));
    }
  }
  for (std::size_t i = 0; i < r_bound.size(); ++i) {
    adam_step(opt.reward_heads[i], bundle.reward_heads[i].params,
              collect_grads(tape, r_bound[i]));
  }
  // Maskers receive gradients from fidelity (through the masked features)
  // and sparsity; step them whenever they were on the tape.
  for (std::size_t i = 0; i < m_bound.size(); ++i) {
    adam_step(opt.maskers[i], bundle.maskers[i].params, collect_grads(tape, m_bound[i]));
  }
  return out;
}

// The n2 block: mask-overlap (orthogonality) surrogate, maskers only.
template <typename BundleT, typename Env>
double distill_update_orth(BundleT& bundle, BundleOpt<BundleT>& opt, const Env& env,
                           const std::vector<const EpisodeStep<typename BundleT::State>*>& batch,
                           const TrainConfig& cfg) {
  using T = typename BundleT::Scalar;
  if (!method_uses_regularizers(bundle.method)) {
    throw WrongMethod(std::string("orthogonality update does not apply to method ") +
                      method_name(bundle.method));
  }
  if (bundle.k() < 2) return 0.0;
  auto tb = detail::make_td_batch(bundle, env, batch);
  Tape<T> tape;
  const int obs_node = tape.leaf(tb.obs_t);
  std::vector<BoundParams<T>> m_bound;
  std::vector<int> mask_rows;
  for (int i = 0; i < bundle.k(); ++i) {
    m_bound.push_back(bind_params(tape, bundle.maskers[static_cast<std::size_t>(i)].params));
    const int node =
        bundle.maskers[static_cast<std::size_t>(i)].forward(tape, obs_node, m_bound.back());
    mask_rows.push_back(BundleT::kPixel ? tape.flatten(node) : node);
  }
  const int orth = loss_orthogonality_node(tape, mask_rows);
  const double value = static_cast<double>(tape.value(orth)[0]);
  require_finite(value, "orthogonality loss");
  const int total = tape.scale(orth, static_cast<T>(cfg.w_orth));
  tape.backward(total);
  for (std::size_t i = 0; i < m_bound.size(); ++i) {
    adam_step(opt.maskers[i], bundle.maskers[i].params, collect_grads(tape, m_bound[i]));
  }
  return value;
}

// ---- training loop -------------------------------------------------------

// Runs the full learning loop on an already-constructed bundle. When
// `log_path` is nonempty, appends one CSV row per completed episode.
template <typename BundleT, typename Env>
void train_bundle(BundleT& bundle, Env& env, const TrainConfig& cfg,
                  const std::string& log_path = std::string()) {
  using State = typename BundleT::State;
  cfg.validate();
  if (bundle.k() != cfg.k) throw ConfigError("bundle component count does not match config k");

  BundleOpt<BundleT> opt(bundle, static_cast<typename BundleT::Scalar>(cfg.lr));
  ReplayBuffer<State> replay(cfg.replay_capacity);
  Rng ep_rng = make_rng(cfg.seed, "env_episodes");
  Rng act_rng = make_rng(cfg.seed, "action");
  Rng replay_rng = make_rng(cfg.seed, "replay");
  Rng interv_rng = make_rng(cfg.seed, "intervene");

  std::FILE* log = nullptr;
  if (!log_path.empty()) {
    log = std::fopen(log_path.c_str(), "w");
    if (!log) throw IoError("cannot open train log '" + log_path + "' for writing");
    std::fprintf(log,
                 "step,episode_return,loss_interv,loss_reward,loss_sparse,loss_orth,"
                 "td_loss,epsilon\n");
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  DistillLosses last_distill;
  double last_orth = nan;
  double last_td = nan;
  State s = env.reset(ep_rng());
  double episode_return = 0.0;

  for (long long t = 1; t <= cfg.total_steps; ++t) {
    const double eps = epsilon_at(cfg, t - 1);
    int action;
    if (uniform01(act_rng) < eps) {
      action = uniform_index(act_rng, env.action_count());
    } else {
      Tensor<typename BundleT::Scalar> obs =
          observe_batch<typename BundleT::Scalar, Env>(env, {&s});
      action = global_actions_batch(bundle.component_q_all(obs))[0];
    }
    StepResult<State> res = env.step(action);
    // The stored done bit marks true termination only.  A horizon cut-off is
    // an episode-management device, not a property of the state, so learners
    // keep bootstrapping through it; writing it as terminal would train the
    // cut-off states toward zero value and flatten the learned value surface.
    const bool terminal = res.done && !env.truncated();
    replay.push(EpisodeStep<State>{s, action, res.reward, res.state, terminal});
    episode_return += res.reward.total;
    if (res.done) {
      if (log) {
        std::fprintf(log, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", t, episode_return,
                     last_distill.interv, last_distill.reward, last_distill.sparse, last_orth,
                     last_td, eps);
      }
      s = env.reset(ep_rng());
      episode_return = 0.0;
    } else {
      s = res.state;
    }

    if (t >= cfg.learning_start && static_cast<int>(replay.size()) >= cfg.batch_size) {
      if (t % cfg.n1 == 0 && bundle.method != Method::kRd) {
        auto batch = replay.sample(static_cast<std::size_t>(cfg.batch_size), replay_rng);
        last_distill = distill_update_main(bundle, opt, env, batch, cfg, interv_rng);
      }
      if (t % cfg.n2 == 0 && method_uses_regularizers(bundle.method) && bundle.k() >= 2) {
        auto batch = replay.sample(static_cast<std::size_t>(cfg.batch_size), replay_rng);
        last_orth = distill_update_orth(bundle, opt, env, batch, cfg);
      }
      if (t % cfg.n3 == 0 && method_uses_td_full(bundle.method)) {
        auto batch = replay.sample(static_cast<std::size_t>(cfg.batch_size), replay_rng);
        last_td = td_update_full(bundle, opt, env, batch, cfg);
      }
      if (t % cfg.n4 == 0 && method_uses_td_component(bundle.method)) {
        auto batch = replay.sample(static_cast<std::size_t>(cfg.batch_size), replay_rng);
        last_td = td_update_component(bundle, opt, env, batch, cfg);
      }
      if (t % cfg.n4 == 0 && method_uses_td_ground(bundle.method)) {
        auto batch = replay.sample(static_cast<std::size_t>(cfg.batch_size), replay_rng);
        last_td = td_update_ground(bundle, opt, env, batch, cfg);
      }
    }
    if (t % cfg.target_sync == 0) bundle.sync_targets();
    bundle.step_count = t;
  }
  if (log) std::fclose(log);
}

// ---- greedy evaluation ---------------------------------------------------

template <typename BundleT, typename Env>
int greedy_action(const BundleT& bundle, const Env& env, const typename BundleT::State& s) {
  Tensor<typename BundleT::Scalar> obs = observe_batch<typename BundleT::Scalar, Env>(env, {&s});
  return global_actions_batch(bundle.component_q_all(obs))[0];
}

// Mean undiscounted return of the greedy policy over `episodes` fresh
// episodes.
template <typename BundleT, typename Env>
double evaluate_return(const BundleT& bundle, Env& env, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw ConfigError("evaluate_return: episodes must be >= 1");
  using State = typename BundleT::State;
  Rng rng = make_rng(seed, "eval_episodes");
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    State s = env.reset(rng());
    bool done = false;
    while (!done) {
      StepResult<State> res = env.step(greedy_action(bundle, env, s));
      total += res.reward.total;
      done = res.done;
      s = res.state;
    }
  }
  return total / static_cast<double>(episodes);
}

// States visited by the greedy policy over `episodes` episodes, uniformly
// subsampled (order-preserving) to at most `cap` states.
template <typename BundleT, typename Env>
std::vector<typename BundleT::State> collect_eval_states(const BundleT& bundle, Env& env,
                                                         int episodes, int cap,
                                                         std::uint64_t seed) {
  using State = typename BundleT::State;
  if (episodes < 1 || cap < 1) throw ConfigError("collect_eval_states: counts must be >= 1");
  Rng rng = make_rng(seed, "eval_episodes");
  std::vector<State> states;
  for (int e = 0; e < episodes; ++e) {
    State s = env.reset(rng());
    bool done = false;
    while (!done) {
      states.push_back(s);
      StepResult<State> res = env.step(greedy_action(bundle, env, s));
      done = res.done;
      s = res.state;
    }
  }
  if (static_cast<int>(states.size()) <= cap) return states;
  // Order-preserving uniform subsample: Fisher-Yates prefix on the indices.
  Rng pick_rng = make_rng(seed, "eval_subsample");
  std::vector<int> idx(states.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  for (int i = 0; i < cap; ++i) {
    const int j = i + uniform_index(pick_rng, static_cast<int>(idx.size()) - i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(cap));
  std::sort(idx.begin(), idx.end());
  std::vector<State> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(states[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace cdrl
