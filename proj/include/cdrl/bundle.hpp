// Agent bundles: the seven-method matrix, component Q evaluation on the
// method's substrate, global action selection, and bundle checkpointing.
//
// A bundle is the unit that explains: encoder, maskers, reward heads and
// Q-heads (with targets), plus the method tag that says which parts exist.
//
//   method       maskers  reward heads  Q substrate
//   rd             -          -         full state
//   rd_pred        -          yes       full state
//   rd_pred_u      -          yes       full state
//   q_mask         yes        -         masked sub-state
//   q_mask_lite    yes        -         masked sub-state
//   r_mask         yes        yes       full state
//   r_mask_lite    yes        yes       full state
//
// "Lite" variants drop the sparsity and orthogonality regularizers during
// training; their parts are the same as the non-lite method.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdrl/checkpoint.hpp"
#include "cdrl/env.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/net.hpp"
#include "cdrl/pixel_grid.hpp"
#include "cdrl/rng.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

// ---- method matrix -------------------------------------------------------

enum class Method {
  kRd = 0,
  kRdPred = 1,
  kRdPredU = 2,
  kQMask = 3,
  kQMaskLite = 4,
  kRMask = 5,
  kRMaskLite = 6,
};

inline constexpr int kMethodCount = 7;

inline const char* method_name(Method m) {
  switch (m) {
    case Method::kRd: return "rd";
    case Method::kRdPred: return "rd_pred";
    case Method::kRdPredU: return "rd_pred_u";
    case Method::kQMask: return "q_mask";
    case Method::kQMaskLite: return "q_mask_lite";
    case Method::kRMask: return "r_mask";
    case Method::kRMaskLite: return "r_mask_lite";
  }
  throw ConfigError("unknown method enum value");
}

inline Method method_from_name(const std::string& name) {
  for (int i = 0; i < kMethodCount; ++i) {
    if (name == method_name(static_cast<Method>(i))) return static_cast<Method>(i);
  }
  throw ConfigError("unknown method '" + name +
                    "' (expected rd, rd_pred, rd_pred_u, q_mask, q_mask_lite, "
                    "r_mask or r_mask_lite)");
}

inline bool method_has_maskers(Method m) {
  return m == Method::kQMask || m == Method::kQMaskLite || m == Method::kRMask ||
         m == Method::kRMaskLite;
}

inline bool method_has_reward_heads(Method m) {
  return m == Method::kRdPred || m == Method::kRdPredU || m == Method::kRMask ||
         m == Method::kRMaskLite;
}

inline bool method_is_lite(Method m) {
  return m == Method::kQMaskLite || m == Method::kRMaskLite;
}

// Sparsity/orthogonality regularizers apply to masked, non-lite methods.
inline bool method_uses_regularizers(Method m) {
  return method_has_maskers(m) && !method_is_lite(m);
}

// Q-heads consume the masked sub-state (q_mask*) or the full state (others).
inline bool method_masked_q_substrate(Method m) {
  return m == Method::kQMask || m == Method::kQMaskLite;
}

inline bool method_uses_td_full(Method m) {
  return m == Method::kRd || m == Method::kRdPred || m == Method::kRdPredU ||
         m == Method::kRMask || m == Method::kRMaskLite;
}

inline bool method_uses_td_component(Method m) {
  return m == Method::kRMask || m == Method::kRMaskLite;
}

inline bool method_uses_td_ground(Method m) {
  return m == Method::kQMask || m == Method::kQMaskLite;
}

// ---- tensor helpers shared by both bundle kinds --------------------------

// Collapses everything after the leading (batch) axis: [B, ...] -> [B, D].
template <typename T>
Tensor<T> flatten_rows(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeMismatch("flatten_rows: need a batch axis");
  const int b = x.shape[0];
  const int d = static_cast<int>(x.numel()) / b;
  return x.reshaped({b, d});
}

// Elementwise product with a [B,1,H,W] mask broadcast over the channel axis
// of a [B,C,H,W] feature map.
template <typename T>
Tensor<T> mask_features(const Tensor<T>& mask, const Tensor<T>& features) {
  require_rank(mask, 4, "mask_features mask");
  require_rank(features, 4, "mask_features features");
  if (mask.shape[0] != features.shape[0] || mask.shape[1] != 1 ||
      mask.shape[2] != features.shape[2] || mask.shape[3] != features.shape[3]) {
    throw ShapeMismatch("mask_features: mask " + shape_to_string(mask.shape) +
                        " does not broadcast over " + shape_to_string(features.shape));
  }
  Tensor<T> out = features;
  const int B = features.shape[0], C = features.shape[1];
  const int HW = features.shape[2] * features.shape[3];
  for (int n = 0; n < B; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int p = 0; p < HW; ++p) {
        out.data[static_cast<std::size_t>((n * C + c) * HW + p)] *=
            mask.data[static_cast<std::size_t>(n * HW + p)];
      }
    }
  }
  return out;
}

// ---- observation batching ------------------------------------------------

template <typename T, typename Env>
Tensor<T> observe_batch(const Env& env, const std::vector<const VectorState*>& states) {
  std::vector<std::vector<double>> rows;
  rows.reserve(states.size());
  for (const VectorState* s : states) rows.push_back(env.observe(*s));
  return obs_batch<T>(rows);
}

template <typename T, typename Env>
Tensor<T> observe_batch(const Env& env, const std::vector<const PixelState*>& states) {
  (void)env;
  return pixel_batch<T>(states);
}

// ---- vector-state bundle -------------------------------------------------

// The encoder is the identity on vector observations, so features == obs and
// only maskers, reward heads and Q-heads carry parameters.
template <typename T>
struct VectorBundle {
  using Scalar = T;
  using State = VectorState;
  static constexpr bool kPixel = false;

  Method method = Method::kRd;
  int obs_dim = 0;
  int actions = 0;
  int hidden = 64;
  long long step_count = 0;

  std::vector<Mlp<T>> maskers;
  std::vector<Mlp<T>> reward_heads;
  std::vector<Mlp<T>> q_heads;
  std::vector<Mlp<T>> q_targets;

  VectorBundle() = default;

  // hidden == 0 builds single-layer (linear) heads, which represent tabular
  // Q-functions exactly when observations are one-hot.
  VectorBundle(Method m, int obs_dim_in, int actions_in, int k_in, Rng& rng, int hidden_in = 64)
      : method(m), obs_dim(obs_dim_in), actions(actions_in), hidden(hidden_in) {
    if (obs_dim <= 0 || actions <= 0 || k_in <= 0) {
      throw ConfigError("bundle: obs_dim, actions and k must be positive");
    }
    const std::vector<int> head_widths =
        hidden > 0 ? std::vector<int>{obs_dim, hidden, actions} : std::vector<int>{obs_dim, actions};
    const std::vector<int> mask_widths =
        hidden > 0 ? std::vector<int>{obs_dim, hidden, obs_dim} : std::vector<int>{obs_dim, obs_dim};
    for (int i = 0; i < k_in; ++i) {
      if (method_has_maskers(method)) {
        maskers.emplace_back(mask_widths, OutputActivation::kSigmoid, rng, T(1));
      }
      if (method_has_reward_heads(method)) {
        reward_heads.emplace_back(head_widths, OutputActivation::kNone, rng);
      }
      q_heads.emplace_back(head_widths, OutputActivation::kNone, rng);
      q_targets.push_back(q_heads.back());
    }
  }

  int k() const { return static_cast<int>(q_heads.size()); }
  int action_count() const { return actions; }

  Tensor<T> features(const Tensor<T>& obs) const { return obs; }

  std::vector<Tensor<T>> infer_masks(const Tensor<T>& obs) const {
    if (!method_has_maskers(method)) {
      throw NoMasks(std::string("method ") + method_name(method) + " has no maskers");
    }
    std::vector<Tensor<T>> out;
    out.reserve(maskers.size());
    for (const Mlp<T>& m : maskers) out.push_back(m.infer(obs));
    return out;
  }

  // Substrate of Q-head i: masked sub-state for q_mask*, full state otherwise.
  Tensor<T> substrate(int i, const Tensor<T>& obs) const {
    if (!method_masked_q_substrate(method)) return obs;
    Tensor<T> mask = maskers[static_cast<std::size_t>(i)].infer(obs);
    Tensor<T> out = obs;
    for (std::size_t e = 0; e < out.numel(); ++e) out[e] *= mask[e];
    return out;
  }

  // K rows of [B x A]: row i = Q-head i evaluated on its substrate.
  std::vector<Tensor<T>> component_q_all(const Tensor<T>& obs) const {
    std::vector<Tensor<T>> rows;
    rows.reserve(q_heads.size());
    for (int i = 0; i < k(); ++i) {
      rows.push_back(q_heads[static_cast<std::size_t>(i)].infer(substrate(i, obs)));
    }
    return rows;
  }

  void sync_targets() {
    for (int i = 0; i < k(); ++i) {
      copy_to_target(q_heads[static_cast<std::size_t>(i)].params,
                     q_targets[static_cast<std::size_t>(i)].params);
    }
  }
};

// ---- pixel-state bundle --------------------------------------------------

// Convolutional encoder to a [16,4,4] feature map; each masker is its own
// small conv stack ending in a sigmoid 1x1 head at feature resolution; reward
// and Q-heads are MLPs over the flattened (optionally masked) features.
template <typename T>
struct PixelBundle {
  using Scalar = T;
  using State = PixelState;
  static constexpr bool kPixel = true;
  static constexpr int kFeatChannels = 16;
  static constexpr int kFeatSide = 4;

  Method method = Method::kRd;
  int actions = 0;
  int hidden = 64;
  long long step_count = 0;

  ConvNet<T> encoder;
  std::vector<ConvNet<T>> maskers;
  std::vector<Mlp<T>> reward_heads;
  std::vector<Mlp<T>> q_heads;
  std::vector<Mlp<T>> q_targets;

  PixelBundle() = default;

  PixelBundle(Method m, int actions_in, int k_in, Rng& rng, int hidden_in = 64)
      : method(m), actions(actions_in), hidden(hidden_in), encoder(make_pixel_encoder<T>(rng)) {
    if (actions <= 0 || k_in <= 0) throw ConfigError("bundle: actions and k must be positive");
    const int flat = flat_dim();
    const std::vector<int> head_widths =
        hidden > 0 ? std::vector<int>{flat, hidden, actions} : std::vector<int>{flat, actions};
    for (int i = 0; i < k_in; ++i) {
      if (method_has_maskers(method)) maskers.push_back(make_pixel_masker<T>(rng, T(1)));
      if (method_has_reward_heads(method)) {
        reward_heads.emplace_back(head_widths, OutputActivation::kNone, rng);
      }
      q_heads.emplace_back(head_widths, OutputActivation::kNone, rng);
      q_targets.push_back(q_heads.back());
    }
  }

  static constexpr int flat_dim() { return kFeatChannels * kFeatSide * kFeatSide; }
  int k() const { return static_cast<int>(q_heads.size()); }
  int action_count() const { return actions; }

  Tensor<T> features(const Tensor<T>& obs) const { return encoder.infer(obs); }

  std::vector<Tensor<T>> infer_masks(const Tensor<T>& obs) const {
    if (!method_has_maskers(method)) {
      throw NoMasks(std::string("method ") + method_name(method) + " has no maskers");
    }
    std::vector<Tensor<T>> out;
    out.reserve(maskers.size());
    for (const ConvNet<T>& m : maskers) out.push_back(m.infer(obs));
    return out;
  }

  // Flattened substrate of Q-head i given precomputed features.
  Tensor<T> substrate_from(int i, const Tensor<T>& obs, const Tensor<T>& feats) const {
    if (!method_masked_q_substrate(method)) return flatten_rows(feats);
    Tensor<T> mask = maskers[static_cast<std::size_t>(i)].infer(obs);
    return flatten_rows(mask_features(mask, feats));
  }

  std::vector<Tensor<T>> component_q_all(const Tensor<T>& obs) const {
    Tensor<T> feats = features(obs);
    std::vector<Tensor<T>> rows;
    rows.reserve(q_heads.size());
    for (int i = 0; i < k(); ++i) {
      rows.push_back(q_heads[static_cast<std::size_t>(i)].infer(substrate_from(i, obs, feats)));
    }
    return rows;
  }

  void sync_targets() {
    for (int i = 0; i < k(); ++i) {
      copy_to_target(q_heads[static_cast<std::size_t>(i)].params,
                     q_targets[static_cast<std::size_t>(i)].params);
    }
  }
};

// ---- component Q / global action -----------------------------------------

// Stacks the per-head rows for one state into a K x |A| double matrix.
template <typename BundleT, typename Env, typename St>
Tensor<double> component_q(const BundleT& bundle, const Env& env, const St& state) {
  using T = typename BundleT::Scalar;
  Tensor<T> obs = observe_batch<T, Env>(env, {&state});
  std::vector<Tensor<T>> rows = bundle.component_q_all(obs);
  Tensor<double> out({bundle.k(), bundle.action_count()});
  for (int i = 0; i < bundle.k(); ++i) {
    for (int a = 0; a < bundle.action_count(); ++a) {
      out.at2(i, a) = static_cast<double>(rows[static_cast<std::size_t>(i)].at2(0, a));
    }
  }
  return out;
}

// a* = argmax over the column sums of a K x |A| matrix; ties break to the
// lowest action index.
inline int global_action(const Tensor<double>& component_q_matrix) {
  require_rank(component_q_matrix, 2, "global_action");
  const int K = component_q_matrix.shape[0], A = component_q_matrix.shape[1];
  int best = 0;
  double best_sum = 0.0;
  for (int a = 0; a < A; ++a) {
    double sum = 0.0;
    for (int i = 0; i < K; ++i) sum += component_q_matrix.at2(i, a);
    if (a == 0 || sum > best_sum) {
      best = a;
      best_sum = sum;
    }
  }
  return best;
}

// Per-sample global actions from K stacked [B x A] rows (summed in double
// with a fixed order so reruns are bit-identical).
template <typename T>
std::vector<int> global_actions_batch(const std::vector<Tensor<T>>& rows) {
  if (rows.empty()) throw ShapeMismatch("global_actions_batch: no component rows");
  const int B = rows[0].shape[0], A = rows[0].shape[1];
  std::vector<int> out(static_cast<std::size_t>(B), 0);
  for (int n = 0; n < B; ++n) {
    int best = 0;
    double best_sum = 0.0;
    for (int a = 0; a < A; ++a) {
      double sum = 0.0;
      for (const Tensor<T>& r : rows) sum += static_cast<double>(r.at2(n, a));
      if (a == 0 || sum > best_sum) {
        best = a;
        best_sum = sum;
      }
    }
    out[static_cast<std::size_t>(n)] = best;
  }
  return out;
}

// ---- checkpointing -------------------------------------------------------
//
// A bundle checkpoint is a single array file whose names are namespaced by
// part: "q0/W0", "masker1/b0", "r0/W1", "enc/W2", plus scalar metadata under
// "meta/". Target heads are not stored; loading re-syncs them from the online
// heads.

namespace detail {

template <typename T>
void add_group(ParamSet<T>& all, const std::string& prefix, const ParamSet<T>& group) {
  for (const auto& item : group.items) all.add(prefix + "/" + item.first, item.second);
}

template <typename T>
void take_group(const ParamSet<T>& all, const std::string& prefix, ParamSet<T>& group,
                int& taken) {
  for (auto& item : group.items) {
    const std::string key = prefix + "/" + item.first;
    if (!all.has(key)) throw FormatError("checkpoint is missing array '" + key + "'");
    const Tensor<T>& stored = all.at(key);
    if (stored.shape != item.second.shape) {
      throw FormatError("checkpoint array '" + key + "' has shape " +
                        shape_to_string(stored.shape) + " but the bundle expects " +
                        shape_to_string(item.second.shape));
    }
    item.second = stored;
    ++taken;
  }
}

inline Tensor<float> meta_scalar(double v) { return Tensor<float>({1}, {static_cast<float>(v)}); }

}  // namespace detail

template <typename BundleT>
ParamSet<float> bundle_arrays(const BundleT& bundle) {
  static_assert(std::is_same_v<typename BundleT::Scalar, float>,
                "checkpoints store float32 bundles");
  ParamSet<float> all;
  if constexpr (BundleT::kPixel) detail::add_group(all, "enc", bundle.encoder.params);
  for (int i = 0; i < bundle.k(); ++i) {
    const std::string idx = std::to_string(i);
    if (method_has_maskers(bundle.method)) {
      detail::add_group(all, "masker" + idx, bundle.maskers[static_cast<std::size_t>(i)].params);
    }
    if (method_has_reward_heads(bundle.method)) {
      detail::add_group(all, "r" + idx, bundle.reward_heads[static_cast<std::size_t>(i)].params);
    }
    detail::add_group(all, "q" + idx, bundle.q_heads[static_cast<std::size_t>(i)].params);
  }
  all.add("meta/method", detail::meta_scalar(static_cast<double>(bundle.method)));
  all.add("meta/k", detail::meta_scalar(bundle.k()));
  all.add("meta/step_count", detail::meta_scalar(static_cast<double>(bundle.step_count)));
  return all;
}

template <typename BundleT>
void save_bundle(const BundleT& bundle, const std::string& path) {
  save_params(bundle_arrays(bundle), path);
}

// Loads arrays into an already-constructed bundle of the same method/shape.
// Every stored array must be consumed and every expected array present.
template <typename BundleT>
void load_bundle(BundleT& bundle, const std::string& path) {
  static_assert(std::is_same_v<typename BundleT::Scalar, float>,
                "checkpoints store float32 bundles");
  ParamSet<float> all = load_params(path);
  auto meta = [&](const std::string& key) -> double {
    if (!all.has(key)) throw FormatError("checkpoint is missing '" + key + "'");
    const Tensor<float>& t = all.at(key);
    if (t.numel() != 1) throw FormatError("checkpoint '" + key + "' is not a scalar");
    return static_cast<double>(t[0]);
  };
  if (static_cast<int>(meta("meta/method")) != static_cast<int>(bundle.method)) {
    throw FormatError(std::string("checkpoint method '") +
                      method_name(static_cast<Method>(static_cast<int>(meta("meta/method")))) +
                      "' does not match bundle method '" + method_name(bundle.method) + "'");
  }
  if (static_cast<int>(meta("meta/k")) != bundle.k()) {
    throw FormatError("checkpoint component count does not match bundle");
  }
  int taken = 3;  // the meta scalars
  if constexpr (BundleT::kPixel) detail::take_group(all, "enc", bundle.encoder.params, taken);
  for (int i = 0; i < bundle.k(); ++i) {
    const std::string idx = std::to_string(i);
    if (method_has_maskers(bundle.method)) {
      detail::take_group(all, "masker" + idx, bundle.maskers[static_cast<std::size_t>(i)].params,
                         taken);
    }
    if (method_has_reward_heads(bundle.method)) {
      detail::take_group(all, "r" + idx, bundle.reward_heads[static_cast<std::size_t>(i)].params,
                         taken);
    }
    detail::take_group(all, "q" + idx, bundle.q_heads[static_cast<std::size_t>(i)].params, taken);
  }
  if (static_cast<std::size_t>(taken) != all.count()) {
    throw FormatError("checkpoint holds " + std::to_string(all.count()) +
                      " arrays but the bundle expects " + std::to_string(taken));
  }
  bundle.step_count = static_cast<long long>(meta("meta/step_count"));
  bundle.sync_targets();
}

}  // namespace cdrl
