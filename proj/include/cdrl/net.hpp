// Parameter containers and the two network families used by the agents:
// fully connected nets (vector observations, all value/reward heads) and
// small convolutional stacks (pixel encoder and pixel maskers).
//
// Weights use He-uniform initialisation, limit sqrt(6 / fan_in); biases start
// at zero except where a construction-time offset is requested (mask heads
// start biased open so early masks pass features through).
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cdrl/autodiff.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/rng.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

// Named, ordered collection of parameter tensors.  Order is construction
// order and is part of the contract: optimizer state and checkpoints align
// with it.
template <typename T>
struct ParamSet {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    for (const auto& it : items) {
      if (it.first == name) throw ConfigError("duplicate parameter name: " + name);
    }
    items.emplace_back(name, std::move(t));
    return items.back().second;
  }

  bool has(const std::string& name) const {
    for (const auto& it : items) {
      if (it.first == name) return true;
    }
    return false;
  }

  Tensor<T>& at(const std::string& name) {
    for (auto& it : items) {
      if (it.first == name) return it.second;
    }
    throw ConfigError("unknown parameter name: " + name);
  }

  const Tensor<T>& at(const std::string& name) const {
    for (const auto& it : items) {
      if (it.first == name) return it.second;
    }
    throw ConfigError("unknown parameter name: " + name);
  }

  std::size_t count() const { return items.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& it : items) n += it.second.numel();
    return n;
  }
};

// Deep copy of parameter values onto an existing, shape-compatible set.
// Names and order must match; target becomes bit-identical to source.
template <typename T>
void copy_to_target(const ParamSet<T>& source, ParamSet<T>& target) {
  if (source.count() != target.count()) {
    throw ShapeMismatch("copy_to_target: parameter counts differ");
  }
  for (std::size_t i = 0; i < source.count(); ++i) {
    if (source.items[i].first != target.items[i].first) {
      throw ShapeMismatch("copy_to_target: parameter name mismatch at index " + std::to_string(i));
    }
    require_same_shape(source.items[i].second, target.items[i].second, "copy_to_target");
    target.items[i].second.data = source.items[i].second.data;
  }
}

// Parameter tensors registered as leaves on a tape, aligned with the source
// ParamSet.  After Tape::backward, collect_grads harvests accumulated
// parameter gradients in ParamSet order.
template <typename T>
struct BoundParams {
  std::vector<int> ids;
};

template <typename T>
BoundParams<T> bind_params(Tape<T>& tape, const ParamSet<T>& params) {
  BoundParams<T> bp;
  bp.ids.reserve(params.items.size());
  for (const auto& it : params.items) bp.ids.push_back(tape.leaf(it.second));
  return bp;
}

template <typename T>
std::vector<Tensor<T>> collect_grads(const Tape<T>& tape, const BoundParams<T>& bound) {
  std::vector<Tensor<T>> grads;
  grads.reserve(bound.ids.size());
  for (int id : bound.ids) grads.push_back(tape.grad(id));
  return grads;
}

template <typename T>
Tensor<T> he_uniform(Shape shape, int fan_in, Rng& rng) {
  if (fan_in <= 0) throw ShapeMismatch("he_uniform: fan_in must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> t(std::move(shape));
  for (T& v : t.data) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * limit);
  return t;
}

enum class OutputActivation { kNone, kSigmoid };

// Fully connected network with ReLU hidden activations.
template <typename T>
class Mlp {
 public:
  Mlp() = default;

  // widths = {in, hidden..., out}.  `final_bias` offsets the output layer's
  // bias initialisation (used for sigmoid mask heads).
  Mlp(std::vector<int> widths, OutputActivation out_act, Rng& rng, T final_bias = T(0))
      : widths_(std::move(widths)), out_act_(out_act) {
    if (widths_.size() < 2) throw ConfigError("Mlp: need at least input and output widths");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      if (in <= 0 || out <= 0) throw ConfigError("Mlp: widths must be positive");
      params.add("W" + std::to_string(l), he_uniform<T>({out, in}, in, rng));
      Tensor<T> b({out});
      if (l + 2 == widths_.size()) b.fill(final_bias);
      params.add("b" + std::to_string(l), std::move(b));
    }
  }

  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  int layer_count() const { return static_cast<int>(widths_.size()) - 1; }

  // Differentiable forward for x [B x in] through parameters already bound
  // onto `tape`; returns the node id of the [B x out] output.
  int forward(Tape<T>& tape, int x, const BoundParams<T>& bound) const {
    if (bound.ids.size() != params.count()) {
      throw ShapeMismatch("Mlp::forward: bound parameter count mismatch");
    }
    int h = x;
    for (int l = 0; l < layer_count(); ++l) {
      h = tape.linear(h, bound.ids[static_cast<std::size_t>(2 * l)],
                      bound.ids[static_cast<std::size_t>(2 * l + 1)]);
      if (l + 1 < layer_count()) {
        h = tape.relu(h);
      } else if (out_act_ == OutputActivation::kSigmoid) {
        h = tape.sigmoid(h);
      }
    }
    return h;
  }

  // Gradient-free forward, plain loops: the hot path for action selection.
  Tensor<T> infer(const Tensor<T>& x) const {
    require_rank(x, 2, "Mlp::infer");
    if (x.shape[1] != in_dim()) {
      throw ShapeMismatch("Mlp::infer: input width " + std::to_string(x.shape[1]) +
                          ", network expects " + std::to_string(in_dim()));
    }
    Tensor<T> h = x;
    for (int l = 0; l < layer_count(); ++l) {
      const Tensor<T>& w = params.items[static_cast<std::size_t>(2 * l)].second;
      const Tensor<T>& b = params.items[static_cast<std::size_t>(2 * l + 1)].second;
      const int B = h.shape[0], I = h.shape[1], O = w.shape[0];
      Tensor<T> y({B, O});
      for (int n = 0; n < B; ++n)
        for (int o = 0; o < O; ++o) {
          T acc = b[static_cast<std::size_t>(o)];
          for (int i = 0; i < I; ++i) acc += h.at2(n, i) * w.at2(o, i);
          y.at2(n, o) = acc;
        }
      const bool last = l + 1 == layer_count();
      if (!last) {
        for (T& v : y.data) v = v > T(0) ? v : T(0);
      } else if (out_act_ == OutputActivation::kSigmoid) {
        for (T& v : y.data) v = T(1) / (T(1) + std::exp(-v));
      }
      h = std::move(y);
    }
    return h;
  }

  ParamSet<T> params;

 private:
  std::vector<int> widths_;
  OutputActivation out_act_ = OutputActivation::kNone;
};

struct ConvLayerSpec {
  int out_channels;
  int kernel;
  int stride;
  int pad;
};

// Convolutional stack: Conv-ReLU blocks, optionally topped by a 1x1
// convolution with sigmoid (the pixel mask head).
template <typename T>
class ConvNet {
 public:
  ConvNet() = default;

  ConvNet(int in_channels, std::vector<ConvLayerSpec> blocks, bool mask_head, Rng& rng,
          T mask_head_bias = T(0))
      : in_channels_(in_channels), blocks_(std::move(blocks)), mask_head_(mask_head) {
    int c = in_channels_;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const ConvLayerSpec& s = blocks_[l];
      const int fan_in = c * s.kernel * s.kernel;
      params.add("W" + std::to_string(l),
                 he_uniform<T>({s.out_channels, c, s.kernel, s.kernel}, fan_in, rng));
      params.add("b" + std::to_string(l), Tensor<T>({s.out_channels}));
      c = s.out_channels;
    }
    if (mask_head_) {
      params.add("Wh", he_uniform<T>({1, c, 1, 1}, c, rng));
      Tensor<T> b({1});
      b.fill(mask_head_bias);
      params.add("bh", std::move(b));
    }
    out_channels_ = mask_head_ ? 1 : c;
  }

  int out_channels() const { return out_channels_; }

  int forward(Tape<T>& tape, int x, const BoundParams<T>& bound) const {
    if (bound.ids.size() != params.count()) {
      throw ShapeMismatch("ConvNet::forward: bound parameter count mismatch");
    }
    int h = x;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      h = tape.conv2d(h, bound.ids[2 * l], bound.ids[2 * l + 1], blocks_[l].stride, blocks_[l].pad);
      h = tape.relu(h);
    }
    if (mask_head_) {
      h = tape.conv2d(h, bound.ids[2 * blocks_.size()], bound.ids[2 * blocks_.size() + 1], 1, 0);
      h = tape.sigmoid(h);
    }
    return h;
  }

  // Gradient-free forward via a scratch tape; conv throughput dominates, the
  // extra gradient buffers are noise.
  Tensor<T> infer(const Tensor<T>& x) const {
    Tape<T> tape;
    BoundParams<T> bound = bind_params(tape, params);
    return tape.value(forward(tape, tape.leaf(x), bound));
  }

  ParamSet<T> params;

 private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  std::vector<ConvLayerSpec> blocks_;
  bool mask_head_ = false;
};

// The shared geometry for 32x32 pixel observations: three Conv-ReLU blocks
// mapping [B x 1 x 32 x 32] to [B x 16 x 4 x 4] (256 flat features).
inline std::vector<ConvLayerSpec> pixel_conv_blocks() {
  return {{8, 8, 4, 2}, {16, 4, 2, 1}, {16, 3, 1, 1}};
}

template <typename T>
ConvNet<T> make_pixel_encoder(Rng& rng) {
  return ConvNet<T>(1, pixel_conv_blocks(), /*mask_head=*/false, rng);
}

template <typename T>
ConvNet<T> make_pixel_masker(Rng& rng, T head_bias = T(1)) {
  return ConvNet<T>(1, pixel_conv_blocks(), /*mask_head=*/true, rng, head_bias);
}

}  // namespace cdrl
