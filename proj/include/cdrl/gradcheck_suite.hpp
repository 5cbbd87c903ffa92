// Named finite-difference cases covering every network family x loss
// combination the training updates use: dense Q-heads, reward heads and
// maskers against the three TD errors, reward fidelity, sparsity and
// orthogonality; the convolutional encoder against the intervention loss; and
// convolutional maskers against the masked-substrate losses.  All cases run
// in double precision with fresh random draws.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cdrl/autodiff.hpp"
#include "cdrl/distill.hpp"
#include "cdrl/gradcheck.hpp"
#include "cdrl/net.hpp"
#include "cdrl/rng.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

struct GradSuiteCase {
  std::string name;
  GradCheckReport report;  // aggregated over all draws
  bool pass = false;
};

struct GradSuiteResult {
  std::vector<GradSuiteCase> cases;
  int draws = 0;
  double tol = 0.0;
  bool all_pass = false;
};

namespace detail {

inline void fold_report(GradCheckReport& agg, const GradCheckReport& r) {
  if (r.max_rel_err > agg.max_rel_err) {
    agg.max_rel_err = r.max_rel_err;
    agg.worst_param = r.worst_param;
    agg.worst_index = r.worst_index;
  }
  agg.checked += r.checked;
  agg.skipped_nonsmooth += r.skipped_nonsmooth;
}

// One draw of one case: `build` assembles the loss graph from the live
// parameter sets each time it is called, so finite differences see parameter
// perturbations.  Gradients of every listed set are checked against it.
template <typename BuildFn>
GradCheckReport check_one_draw(std::vector<ParamSet<double>*> sets, BuildFn build, Rng& rng,
                               int coords_per_tensor) {
  Tape<double> tape;
  std::vector<BoundParams<double>> bounds;
  const int loss = build(tape, bounds);
  tape.backward(loss);
  if (bounds.size() != sets.size()) {
    throw ShapeMismatch("gradcheck case bound the wrong number of parameter sets");
  }
  auto value = [&]() {
    Tape<double> t;
    std::vector<BoundParams<double>> b;
    return t.value(build(t, b))[0];
  };
  GradCheckReport agg;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const std::vector<Tensor<double>> analytic = collect_grads(tape, bounds[i]);
    fold_report(agg, check_gradients(*sets[i], analytic, value, 1e-3, coords_per_tensor, rng));
  }
  return agg;
}

inline std::vector<int> random_actions(Rng& rng, int batch, int actions) {
  std::vector<int> out;
  for (int n = 0; n < batch; ++n) out.push_back(uniform_index(rng, actions));
  return out;
}

inline Tensor<double> random_batch(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

}  // namespace detail

// Runs every case; a case passes when all its draws stay under `tol` and at
// least one coordinate was actually compared.
inline GradSuiteResult run_gradcheck_suite(int draws = 20, double tol = 1e-4,
                                           std::uint64_t seed = 0) {
  GradSuiteResult result;
  result.draws = draws;
  result.tol = tol;

  const int D = 6, A = 3, K = 2, hidden = 4, B = 4;
  const int img = 16, pixel_B = 3;

  using Mlpd = Mlp<double>;
  using Cnnd = ConvNet<double>;

  auto run_case = [&](const std::string& name, auto one_draw) {
    GradSuiteCase c;
    c.name = name;
    Rng rng = make_rng(seed, "grad_suite:" + name);
    for (int d = 0; d < draws; ++d) detail::fold_report(c.report, one_draw(rng));
    c.pass = c.report.pass(tol);
    result.cases.push_back(std::move(c));
  };

  // Dense Q-heads under the full-reward TD error: loss = mean over the batch
  // of (sum_i Q_i(s,a) - y)^2 with constant targets y.
  run_case("dense_q_td_full", [&](Rng& rng) {
    std::vector<Mlpd> q;
    for (int i = 0; i < K; ++i) q.emplace_back(std::vector<int>{D, hidden, A},
                                               OutputActivation::kNone, rng);
    const Tensor<double> obs = detail::random_batch(rng, {B, D}, -1.0, 1.0);
    const Tensor<double> y = detail::random_batch(rng, {B}, -1.0, 1.0);
    const std::vector<int> actions = detail::random_actions(rng, B, A);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int obs_node = tape.leaf(obs);
      int q_sum = -1;
      for (int i = 0; i < K; ++i) {
        bounds.push_back(bind_params(tape, q[static_cast<std::size_t>(i)].params));
        const int qi = tape.gather_cols(
            q[static_cast<std::size_t>(i)].forward(tape, obs_node, bounds.back()), actions);
        q_sum = q_sum < 0 ? qi : tape.add(q_sum, qi);
      }
      return tape.mean_all(tape.square(tape.sub(q_sum, tape.leaf(y))));
    };
    std::vector<ParamSet<double>*> sets;
    for (auto& h : q) sets.push_back(&h.params);
    return detail::check_one_draw(sets, build, rng, 6);
  });

  // Dense Q-heads under the per-channel TD error with constant per-channel
  // targets.
  run_case("dense_q_td_component", [&](Rng& rng) {
    std::vector<Mlpd> q;
    for (int i = 0; i < K; ++i) q.emplace_back(std::vector<int>{D, hidden, A},
                                               OutputActivation::kNone, rng);
    const Tensor<double> obs = detail::random_batch(rng, {B, D}, -1.0, 1.0);
    std::vector<Tensor<double>> y;
    for (int i = 0; i < K; ++i) y.push_back(detail::random_batch(rng, {B}, -1.0, 1.0));
    const std::vector<int> actions = detail::random_actions(rng, B, A);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int obs_node = tape.leaf(obs);
      std::vector<int> losses;
      for (int i = 0; i < K; ++i) {
        bounds.push_back(bind_params(tape, q[static_cast<std::size_t>(i)].params));
        const int qi = tape.gather_cols(
            q[static_cast<std::size_t>(i)].forward(tape, obs_node, bounds.back()), actions);
        losses.push_back(tape.mean_all(
            tape.square(tape.sub(qi, tape.leaf(y[static_cast<std::size_t>(i)])))));
      }
      return tape.weighted_sum(losses, std::vector<double>(losses.size(), 1.0 / K));
    };
    std::vector<ParamSet<double>*> sets;
    for (auto& h : q) sets.push_back(&h.params);
    return detail::check_one_draw(sets, build, rng, 6);
  });

  // Dense Q-heads and dense maskers under the grounded TD error: each head
  // reads its masked observation, so gradients flow into both.
  run_case("dense_q_masker_td_ground", [&](Rng& rng) {
    std::vector<Mlpd> q, maskers;
    for (int i = 0; i < K; ++i) {
      q.emplace_back(std::vector<int>{D, hidden, A}, OutputActivation::kNone, rng);
      maskers.emplace_back(std::vector<int>{D, hidden, D}, OutputActivation::kSigmoid, rng, 1.0);
    }
    const Tensor<double> obs = detail::random_batch(rng, {B, D}, -1.0, 1.0);
    std::vector<Tensor<double>> y;
    for (int i = 0; i < K; ++i) y.push_back(detail::random_batch(rng, {B}, -1.0, 1.0));
    const std::vector<int> actions = detail::random_actions(rng, B, A);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int obs_node = tape.leaf(obs);
      std::vector<int> losses;
      for (int i = 0; i < K; ++i) {
        bounds.push_back(bind_params(tape, maskers[static_cast<std::size_t>(i)].params));
        const int mask = maskers[static_cast<std::size_t>(i)].forward(tape, obs_node,
                                                                      bounds.back());
        const int sub = tape.mul(mask, obs_node);
        bounds.push_back(bind_params(tape, q[static_cast<std::size_t>(i)].params));
        const int qi = tape.gather_cols(
            q[static_cast<std::size_t>(i)].forward(tape, sub, bounds.back()), actions);
        losses.push_back(tape.mean_all(
            tape.square(tape.sub(qi, tape.leaf(y[static_cast<std::size_t>(i)])))));
      }
      return tape.weighted_sum(losses, std::vector<double>(losses.size(), 1.0 / K));
    };
    std::vector<ParamSet<double>*> sets;
    for (int i = 0; i < K; ++i) {
      sets.push_back(&maskers[static_cast<std::size_t>(i)].params);
      sets.push_back(&q[static_cast<std::size_t>(i)].params);
    }
    return detail::check_one_draw(sets, build, rng, 6);
  });

  // Dense reward heads and maskers under the reward-fidelity loss: summed
  // per-head predictions on masked observations against the total reward.
  run_case("dense_reward_masker_fidelity", [&](Rng& rng) {
    std::vector<Mlpd> heads, maskers;
    for (int i = 0; i < K; ++i) {
      heads.emplace_back(std::vector<int>{D, hidden, A}, OutputActivation::kNone, rng);
      maskers.emplace_back(std::vector<int>{D, hidden, D}, OutputActivation::kSigmoid, rng, 1.0);
    }
    const Tensor<double> obs = detail::random_batch(rng, {B, D}, -1.0, 1.0);
    const Tensor<double> totals = detail::random_batch(rng, {B}, -1.0, 1.0);
    const std::vector<int> actions = detail::random_actions(rng, B, A);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int obs_node = tape.leaf(obs);
      std::vector<int> preds;
      for (int i = 0; i < K; ++i) {
        bounds.push_back(bind_params(tape, maskers[static_cast<std::size_t>(i)].params));
        const int mask = maskers[static_cast<std::size_t>(i)].forward(tape, obs_node,
                                                                      bounds.back());
        const int sub = tape.mul(mask, obs_node);
        bounds.push_back(bind_params(tape, heads[static_cast<std::size_t>(i)].params));
        preds.push_back(tape.gather_cols(
            heads[static_cast<std::size_t>(i)].forward(tape, sub, bounds.back()), actions));
      }
      return loss_reward_fidelity_node(tape, preds, tape.leaf(totals));
    };
    std::vector<ParamSet<double>*> sets;
    for (int i = 0; i < K; ++i) {
      sets.push_back(&maskers[static_cast<std::size_t>(i)].params);
      sets.push_back(&heads[static_cast<std::size_t>(i)].params);
    }
    return detail::check_one_draw(sets, build, rng, 6);
  });

  // Dense reward heads supervised per channel (known sub-rewards, full
  // observations): mean absolute error per head, averaged over heads.
  run_case("dense_reward_supervised", [&](Rng& rng) {
    std::vector<Mlpd> heads;
    for (int i = 0; i < K; ++i) heads.emplace_back(std::vector<int>{D, hidden, A},
                                                   OutputActivation::kNone, rng);
    const Tensor<double> obs = detail::random_batch(rng, {B, D}, -1.0, 1.0);
    std::vector<Tensor<double>> targets;
    for (int i = 0; i < K; ++i) targets.push_back(detail::random_batch(rng, {B}, -1.0, 1.0));
    const std::vector<int> actions = detail::random_actions(rng, B, A);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int obs_node = tape.leaf(obs);
      std::vector<int> per_head;
      for (int i = 0; i < K; ++i) {
        bounds.push_back(bind_params(tape, heads[static_cast<std::size_t>(i)].params));
        const int pred = tape.gather_cols(
            heads[static_cast<std::size_t>(i)].forward(tape, obs_node, bounds.back()), actions);
        per_head.push_back(tape.mean_all(
            tape.abs(tape.sub(pred, tape.leaf(targets[static_cast<std::size_t>(i)])))));
      }
      return tape.weighted_sum(per_head, std::vector<double>(per_head.size(), 1.0 / K));
    };
    std::vector<ParamSet<double>*> sets;
    for (auto& h : heads) sets.push_back(&h.params);
    return detail::check_one_draw(sets, build, rng, 6);
  });

  // Dense maskers under the sparsity loss.
  run_case("dense_masker_sparsity", [&](Rng& rng) {
    std::vector<Mlpd> maskers;
    for (int i = 0; i < K; ++i) {
      maskers.emplace_back(std::vector<int>{D, hidden, D}, OutputActivation::kSigmoid, rng, 1.0);
    }
    const Tensor<double> obs = detail::random_batch(rng, {B, D}, -1.0, 1.0);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int obs_node = tape.leaf(obs);
      std::vector<int> rows;
      for (int i = 0; i < K; ++i) {
        bounds.push_back(bind_params(tape, maskers[static_cast<std::size_t>(i)].params));
        rows.push_back(maskers[static_cast<std::size_t>(i)].forward(tape, obs_node,
                                                                    bounds.back()));
      }
      return loss_sparsity_node(tape, rows, SparsityWeights<double>{});
    };
    std::vector<ParamSet<double>*> sets;
    for (auto& m : maskers) sets.push_back(&m.params);
    return detail::check_one_draw(sets, build, rng, 6);
  });

  // Dense maskers under the pairwise-overlap loss; three channels so the sum
  // runs over more than one pair.
  run_case("dense_masker_orthogonality", [&](Rng& rng) {
    std::vector<Mlpd> maskers;
    for (int i = 0; i < 3; ++i) {
      maskers.emplace_back(std::vector<int>{D, hidden, D}, OutputActivation::kSigmoid, rng, 1.0);
    }
    const Tensor<double> obs = detail::random_batch(rng, {B, D}, -1.0, 1.0);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int obs_node = tape.leaf(obs);
      std::vector<int> rows;
      for (auto& m : maskers) {
        bounds.push_back(bind_params(tape, m.params));
        rows.push_back(m.forward(tape, obs_node, bounds.back()));
      }
      return loss_orthogonality_node(tape, rows);
    };
    std::vector<ParamSet<double>*> sets;
    for (auto& m : maskers) sets.push_back(&m.params);
    return detail::check_one_draw(sets, build, rng, 6);
  });

  // Convolutional encoder under the intervention (feature-cosine) loss:
  // both forward passes share the encoder parameters.
  run_case("conv_encoder_intervention", [&](Rng& rng) {
    Cnnd enc = make_pixel_encoder<double>(rng);
    const Tensor<double> a = detail::random_batch(rng, {pixel_B, 1, img, img}, 0.0, 1.0);
    const Tensor<double> b = detail::random_batch(rng, {pixel_B, 1, img, img}, 0.0, 1.0);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      bounds.push_back(bind_params(tape, enc.params));
      const int fa = tape.flatten(enc.forward(tape, tape.leaf(a), bounds.back()));
      const int fb = tape.flatten(enc.forward(tape, tape.leaf(b), bounds.back()));
      return loss_intervention_node(tape, fa, fb);
    };
    return detail::check_one_draw({&enc.params}, build, rng, 4);
  });

  // Q-heads over (constant) convolutional features: the pixel form of the
  // full-reward TD error, where the encoder enters as a fixed feature map.
  run_case("conv_features_q_td_full", [&](Rng& rng) {
    Cnnd enc = make_pixel_encoder<double>(rng);
    const Tensor<double> imgs = detail::random_batch(rng, {pixel_B, 1, img, img}, 0.0, 1.0);
    Tensor<double> feats;
    {
      Tensor<double> f4 = enc.infer(imgs);
      feats = f4.reshaped({pixel_B, static_cast<int>(f4.numel()) / pixel_B});
    }
    std::vector<Mlpd> q;
    for (int i = 0; i < K; ++i) {
      q.emplace_back(std::vector<int>{feats.shape[1], hidden, A}, OutputActivation::kNone, rng);
    }
    const Tensor<double> y = detail::random_batch(rng, {pixel_B}, -1.0, 1.0);
    const std::vector<int> actions = detail::random_actions(rng, pixel_B, A);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int feats_node = tape.leaf(feats);
      int q_sum = -1;
      for (int i = 0; i < K; ++i) {
        bounds.push_back(bind_params(tape, q[static_cast<std::size_t>(i)].params));
        const int qi = tape.gather_cols(
            q[static_cast<std::size_t>(i)].forward(tape, feats_node, bounds.back()), actions);
        q_sum = q_sum < 0 ? qi : tape.add(q_sum, qi);
      }
      return tape.mean_all(tape.square(tape.sub(q_sum, tape.leaf(y))));
    };
    std::vector<ParamSet<double>*> sets;
    for (auto& h : q) sets.push_back(&h.params);
    return detail::check_one_draw(sets, build, rng, 6);
  });

  // Convolutional maskers and Q-heads under the grounded TD error: masks
  // multiply a fixed feature map channel-wise, then flatten into the heads.
  run_case("conv_masker_q_td_ground", [&](Rng& rng) {
    Cnnd enc = make_pixel_encoder<double>(rng);
    std::vector<Cnnd> maskers;
    for (int i = 0; i < K; ++i) maskers.push_back(make_pixel_masker<double>(rng));
    const Tensor<double> imgs = detail::random_batch(rng, {pixel_B, 1, img, img}, 0.0, 1.0);
    const Tensor<double> feats4 = enc.infer(imgs);
    const int flat = static_cast<int>(feats4.numel()) / pixel_B;
    std::vector<Mlpd> q;
    for (int i = 0; i < K; ++i) {
      q.emplace_back(std::vector<int>{flat, hidden, A}, OutputActivation::kNone, rng);
    }
    std::vector<Tensor<double>> y;
    for (int i = 0; i < K; ++i) y.push_back(detail::random_batch(rng, {pixel_B}, -1.0, 1.0));
    const std::vector<int> actions = detail::random_actions(rng, pixel_B, A);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int obs_node = tape.leaf(imgs);
      const int feats_node = tape.leaf(feats4);
      std::vector<int> losses;
      for (int i = 0; i < K; ++i) {
        bounds.push_back(bind_params(tape, maskers[static_cast<std::size_t>(i)].params));
        const int mask = maskers[static_cast<std::size_t>(i)].forward(tape, obs_node,
                                                                      bounds.back());
        const int sub = tape.flatten(tape.mul_bcast_channel(mask, feats_node));
        bounds.push_back(bind_params(tape, q[static_cast<std::size_t>(i)].params));
        const int qi = tape.gather_cols(
            q[static_cast<std::size_t>(i)].forward(tape, sub, bounds.back()), actions);
        losses.push_back(tape.mean_all(
            tape.square(tape.sub(qi, tape.leaf(y[static_cast<std::size_t>(i)])))));
      }
      return tape.weighted_sum(losses, std::vector<double>(losses.size(), 1.0 / K));
    };
    std::vector<ParamSet<double>*> sets;
    for (int i = 0; i < K; ++i) {
      sets.push_back(&maskers[static_cast<std::size_t>(i)].params);
      sets.push_back(&q[static_cast<std::size_t>(i)].params);
    }
    return detail::check_one_draw(sets, build, rng, 4);
  });

  // Convolutional maskers and reward heads under the reward-fidelity loss.
  run_case("conv_masker_reward_fidelity", [&](Rng& rng) {
    Cnnd enc = make_pixel_encoder<double>(rng);
    std::vector<Cnnd> maskers;
    for (int i = 0; i < K; ++i) maskers.push_back(make_pixel_masker<double>(rng));
    const Tensor<double> imgs = detail::random_batch(rng, {pixel_B, 1, img, img}, 0.0, 1.0);
    const Tensor<double> feats4 = enc.infer(imgs);
    const int flat = static_cast<int>(feats4.numel()) / pixel_B;
    std::vector<Mlpd> heads;
    for (int i = 0; i < K; ++i) {
      heads.emplace_back(std::vector<int>{flat, hidden, A}, OutputActivation::kNone, rng);
    }
    const Tensor<double> totals = detail::random_batch(rng, {pixel_B}, -1.0, 1.0);
    const std::vector<int> actions = detail::random_actions(rng, pixel_B, A);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int obs_node = tape.leaf(imgs);
      const int feats_node = tape.leaf(feats4);
      std::vector<int> preds;
      for (int i = 0; i < K; ++i) {
        bounds.push_back(bind_params(tape, maskers[static_cast<std::size_t>(i)].params));
        const int mask = maskers[static_cast<std::size_t>(i)].forward(tape, obs_node,
                                                                      bounds.back());
        const int sub = tape.flatten(tape.mul_bcast_channel(mask, feats_node));
        bounds.push_back(bind_params(tape, heads[static_cast<std::size_t>(i)].params));
        preds.push_back(tape.gather_cols(
            heads[static_cast<std::size_t>(i)].forward(tape, sub, bounds.back()), actions));
      }
      return loss_reward_fidelity_node(tape, preds, tape.leaf(totals));
    };
    std::vector<ParamSet<double>*> sets;
    for (int i = 0; i < K; ++i) {
      sets.push_back(&maskers[static_cast<std::size_t>(i)].params);
      sets.push_back(&heads[static_cast<std::size_t>(i)].params);
    }
    return detail::check_one_draw(sets, build, rng, 4);
  });

  // Convolutional maskers under the sparsity loss.
  run_case("conv_masker_sparsity", [&](Rng& rng) {
    std::vector<Cnnd> maskers;
    for (int i = 0; i < K; ++i) maskers.push_back(make_pixel_masker<double>(rng));
    const Tensor<double> imgs = detail::random_batch(rng, {pixel_B, 1, img, img}, 0.0, 1.0);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int obs_node = tape.leaf(imgs);
      std::vector<int> rows;
      for (auto& m : maskers) {
        bounds.push_back(bind_params(tape, m.params));
        rows.push_back(tape.flatten(m.forward(tape, obs_node, bounds.back())));
      }
      return loss_sparsity_node(tape, rows, SparsityWeights<double>{});
    };
    std::vector<ParamSet<double>*> sets;
    for (auto& m : maskers) sets.push_back(&m.params);
    return detail::check_one_draw(sets, build, rng, 4);
  });

  // Convolutional maskers under the pairwise-overlap loss.
  run_case("conv_masker_orthogonality", [&](Rng& rng) {
    std::vector<Cnnd> maskers;
    for (int i = 0; i < K; ++i) maskers.push_back(make_pixel_masker<double>(rng));
    const Tensor<double> imgs = detail::random_batch(rng, {pixel_B, 1, img, img}, 0.0, 1.0);
    auto build = [&](Tape<double>& tape, std::vector<BoundParams<double>>& bounds) {
      const int obs_node = tape.leaf(imgs);
      std::vector<int> rows;
      for (auto& m : maskers) {
        bounds.push_back(bind_params(tape, m.params));
        rows.push_back(tape.flatten(m.forward(tape, obs_node, bounds.back())));
      }
      return loss_orthogonality_node(tape, rows);
    };
    std::vector<ParamSet<double>*> sets;
    for (auto& m : maskers) sets.push_back(&m.params);
    return detail::check_one_draw(sets, build, rng, 4);
  });

  result.all_pass = true;
  for (const GradSuiteCase& c : result.cases) {
    if (!c.pass) result.all_pass = false;
  }
  return result;
}

}  // namespace cdrl
