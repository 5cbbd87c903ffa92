// Reverse-mode automatic differentiation on a linear tape.
//
// Nodes are appended in creation order, which is already a topological order,
// so backpropagation is a single reverse sweep from the loss node.  Each op
// installs a closure that accumulates into its parents' gradient buffers.
// Gradient buffers are allocated eagerly (zero-filled) when a node is created.
//
// The op set is exactly what the networks and losses in this library need.
// Backward formulas are hand-written per op and covered end-to-end by the
// finite-difference gradient suite.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cdrl/errors.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  int size() const { return static_cast<int>(nodes_.size()); }

  const Tensor<T>& value(int id) const { return node(id).value; }
  const Tensor<T>& grad(int id) const { return node(id).grad; }

  // ---- inputs ------------------------------------------------------------

  // Constant or parameter input.  No backward of its own; callers read
  // grad(id) after the sweep to harvest parameter gradients.
  int leaf(Tensor<T> v) { return push(std::move(v)); }

  // ---- elementwise -------------------------------------------------------

  int relu(int x) {
    Tensor<T> y = value(x);
    for (T& v : y.data) v = v > T(0) ? v : T(0);
    int out = push(std::move(y));
    set_back(out, [x, out](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      const Tensor<T>& vx = t.value(x);
      Tensor<T>& gx = t.grad_mut(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) {
        if (vx[i] > T(0)) gx[i] += gy[i];
      }
    });
    return out;
  }

  int sigmoid(int x) {
    Tensor<T> y = value(x);
    for (T& v : y.data) v = T(1) / (T(1) + std::exp(-v));
    int out = push(std::move(y));
    set_back(out, [x, out](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      const Tensor<T>& vy = t.value(out);
      Tensor<T>& gx = t.grad_mut(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) {
        gx[i] += gy[i] * vy[i] * (T(1) - vy[i]);
      }
    });
    return out;
  }

  // Natural log; inputs must be strictly positive (callers add an epsilon).
  int log(int x) {
    Tensor<T> y = value(x);
    for (T& v : y.data) v = std::log(v);
    int out = push(std::move(y));
    set_back(out, [x, out](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      const Tensor<T>& vx = t.value(x);
      Tensor<T>& gx = t.grad_mut(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i] / vx[i];
    });
    return out;
  }

  int square(int x) {
    Tensor<T> y = value(x);
    for (T& v : y.data) v = v * v;
    int out = push(std::move(y));
    set_back(out, [x, out](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      const Tensor<T>& vx = t.value(x);
      Tensor<T>& gx = t.grad_mut(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i] * T(2) * vx[i];
    });
    return out;
  }

  // |x| with subgradient 0 at x == 0.
  int abs(int x) {
    Tensor<T> y = value(x);
    for (T& v : y.data) v = std::fabs(v);
    int out = push(std::move(y));
    set_back(out, [x, out](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      const Tensor<T>& vx = t.value(x);
      Tensor<T>& gx = t.grad_mut(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) {
        if (vx[i] > T(0)) gx[i] += gy[i];
        else if (vx[i] < T(0)) gx[i] -= gy[i];
      }
    });
    return out;
  }

  int scale(int x, T c) {
    Tensor<T> y = value(x);
    for (T& v : y.data) v *= c;
    int out = push(std::move(y));
    set_back(out, [x, out, c](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& gx = t.grad_mut(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += c * gy[i];
    });
    return out;
  }

  int add_const(int x, T c) {
    Tensor<T> y = value(x);
    for (T& v : y.data) v += c;
    int out = push(std::move(y));
    set_back(out, [x, out](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& gx = t.grad_mut(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i];
    });
    return out;
  }

  // ---- binary elementwise ------------------------------------------------

  int add(int a, int b) {
    require_same_shape(value(a), value(b), "Tape::add");
    Tensor<T> y = value(a);
    const Tensor<T>& vb = value(b);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += vb[i];
    int out = push(std::move(y));
    set_back(out, [a, b, out](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gy[i];
      Tensor<T>& gb = t.grad_mut(b);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += gy[i];
    });
    return out;
  }

  int sub(int a, int b) {
    require_same_shape(value(a), value(b), "Tape::sub");
    Tensor<T> y = value(a);
    const Tensor<T>& vb = value(b);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= vb[i];
    int out = push(std::move(y));
    set_back(out, [a, b, out](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gy[i];
      Tensor<T>& gb = t.grad_mut(b);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= gy[i];
    });
    return out;
  }

  // Elementwise (Hadamard) product of equal-shaped tensors.
  int mul(int a, int b) {
    require_same_shape(value(a), value(b), "Tape::mul");
    Tensor<T> y = value(a);
    const Tensor<T>& vb = value(b);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= vb[i];
    int out = push(std::move(y));
    set_back(out, [a, b, out](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      const Tensor<T>& va = t.value(a);
      const Tensor<T>& vb2 = t.value(b);
      Tensor<T>& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gy[i] * vb2[i];
      Tensor<T>& gb = t.grad_mut(b);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += gy[i] * va[i];
    });
    return out;
  }

  // mask [B x 1 x H x W] broadcast-multiplied over x [B x C x H x W].
  int mul_bcast_channel(int mask, int x) {
    const Tensor<T>& vm = value(mask);
    const Tensor<T>& vx = value(x);
    require_rank(vm, 4, "Tape::mul_bcast_channel mask");
    require_rank(vx, 4, "Tape::mul_bcast_channel input");
    if (vm.shape[0] != vx.shape[0] || vm.shape[1] != 1 || vm.shape[2] != vx.shape[2] ||
        vm.shape[3] != vx.shape[3]) {
      throw ShapeMismatch("mul_bcast_channel: mask " + shape_to_string(vm.shape) +
                          " incompatible with input " + shape_to_string(vx.shape));
    }
    const int B = vx.shape[0], C = vx.shape[1], H = vx.shape[2], W = vx.shape[3];
    Tensor<T> y(vx.shape);
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) y.at4(n, c, h, w) = vx.at4(n, c, h, w) * vm.at4(n, 0, h, w);
    int out = push(std::move(y));
    set_back(out, [mask, x, out, B, C, H, W](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      const Tensor<T>& vm2 = t.value(mask);
      const Tensor<T>& vx2 = t.value(x);
      Tensor<T>& gm = t.grad_mut(mask);
      for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
              gm.at4(n, 0, h, w) += gy.at4(n, c, h, w) * vx2.at4(n, c, h, w);
      Tensor<T>& gx = t.grad_mut(x);
      for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
              gx.at4(n, c, h, w) += gy.at4(n, c, h, w) * vm2.at4(n, 0, h, w);
    });
    return out;
  }

  // ---- linear algebra ----------------------------------------------------

  // Fully connected layer: y[B x O] = x[B x I] * W[O x I]^T + bias[O].
  int linear(int x, int w, int bias) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vw = value(w);
    const Tensor<T>& vb = value(bias);
    require_rank(vx, 2, "Tape::linear input");
    require_rank(vw, 2, "Tape::linear weight");
    require_rank(vb, 1, "Tape::linear bias");
    const int B = vx.shape[0], I = vx.shape[1], O = vw.shape[0];
    if (vw.shape[1] != I || vb.shape[0] != O) {
      throw ShapeMismatch("linear: x " + shape_to_string(vx.shape) + ", W " +
                          shape_to_string(vw.shape) + ", b " + shape_to_string(vb.shape));
    }
    Tensor<T> y({B, O});
    for (int n = 0; n < B; ++n) {
      for (int o = 0; o < O; ++o) {
        T acc = vb[static_cast<std::size_t>(o)];
        for (int i = 0; i < I; ++i) acc += vx.at2(n, i) * vw.at2(o, i);
        y.at2(n, o) = acc;
      }
    }
    int out = push(std::move(y));
    set_back(out, [x, w, bias, out, B, I, O](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      const Tensor<T>& vx2 = t.value(x);
      const Tensor<T>& vw2 = t.value(w);
      Tensor<T>& gx = t.grad_mut(x);
      for (int n = 0; n < B; ++n)
        for (int i = 0; i < I; ++i) {
          T acc = T(0);
          for (int o = 0; o < O; ++o) acc += gy.at2(n, o) * vw2.at2(o, i);
          gx.at2(n, i) += acc;
        }
      Tensor<T>& gw = t.grad_mut(w);
      for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i) {
          T acc = T(0);
          for (int n = 0; n < B; ++n) acc += gy.at2(n, o) * vx2.at2(n, i);
          gw.at2(o, i) += acc;
        }
      Tensor<T>& gb = t.grad_mut(bias);
      for (int o = 0; o < O; ++o) {
        T acc = T(0);
        for (int n = 0; n < B; ++n) acc += gy.at2(n, o);
        gb[static_cast<std::size_t>(o)] += acc;
      }
    });
    return out;
  }

  // 2-D convolution with zero padding.
  // x [B x Ci x H x W], w [Co x Ci x kh x kw], bias [Co] -> y [B x Co x Ho x Wo].
  int conv2d(int x, int w, int bias, int stride, int pad) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vw = value(w);
    const Tensor<T>& vb = value(bias);
    require_rank(vx, 4, "Tape::conv2d input");
    require_rank(vw, 4, "Tape::conv2d weight");
    require_rank(vb, 1, "Tape::conv2d bias");
    const int B = vx.shape[0], Ci = vx.shape[1], H = vx.shape[2], W = vx.shape[3];
    const int Co = vw.shape[0], kh = vw.shape[2], kw = vw.shape[3];
    if (vw.shape[1] != Ci || vb.shape[0] != Co) {
      throw ShapeMismatch("conv2d: x " + shape_to_string(vx.shape) + ", W " +
                          shape_to_string(vw.shape) + ", b " + shape_to_string(vb.shape));
    }
    if (stride < 1 || pad < 0) throw ShapeMismatch("conv2d: bad stride/pad");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw ShapeMismatch("conv2d: kernel larger than padded input");
    Tensor<T> y({B, Co, Ho, Wo});
    for (int n = 0; n < B; ++n)
      for (int o = 0; o < Co; ++o)
        for (int i = 0; i < Ho; ++i)
          for (int j = 0; j < Wo; ++j) {
            T acc = vb[static_cast<std::size_t>(o)];
            for (int c = 0; c < Ci; ++c)
              for (int u = 0; u < kh; ++u) {
                const int yy = i * stride + u - pad;
                if (yy < 0 || yy >= H) continue;
                for (int v = 0; v < kw; ++v) {
                  const int xx = j * stride + v - pad;
                  if (xx < 0 || xx >= W) continue;
                  acc += vx.at4(n, c, yy, xx) * vw.at4(o, c, u, v);
                }
              }
            y.at4(n, o, i, j) = acc;
          }
    int out = push(std::move(y));
    set_back(out, [x, w, bias, out, B, Ci, H, W, Co, kh, kw, stride, pad](Tape& t) {
      const int Ho = t.value(out).shape[2], Wo = t.value(out).shape[3];
      const Tensor<T>& gy = t.grad(out);
      const Tensor<T>& vx2 = t.value(x);
      const Tensor<T>& vw2 = t.value(w);
      Tensor<T>& gx = t.grad_mut(x);
      Tensor<T>& gw = t.grad_mut(w);
      Tensor<T>& gb = t.grad_mut(bias);
      for (int n = 0; n < B; ++n)
        for (int o = 0; o < Co; ++o)
          for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
              const T g = gy.at4(n, o, i, j);
              if (g == T(0)) continue;
              gb[static_cast<std::size_t>(o)] += g;
              for (int c = 0; c < Ci; ++c)
                for (int u = 0; u < kh; ++u) {
                  const int yy = i * stride + u - pad;
                  if (yy < 0 || yy >= H) continue;
                  for (int v = 0; v < kw; ++v) {
                    const int xx = j * stride + v - pad;
                    if (xx < 0 || xx >= W) continue;
                    gx.at4(n, c, yy, xx) += g * vw2.at4(o, c, u, v);
                    gw.at4(o, c, u, v) += g * vx2.at4(n, c, yy, xx);
                  }
                }
            }
    });
    return out;
  }

  // ---- shape ops ---------------------------------------------------------

  int reshape(int x, Shape s) {
    Tensor<T> y = value(x).reshaped(s);
    int out = push(std::move(y));
    set_back(out, [x, out](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& gx = t.grad_mut(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i];
    });
    return out;
  }

  // [B x ...] -> [B x rest], keeping the leading dimension.
  int flatten(int x) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() < 1) throw ShapeMismatch("flatten: rank-0 input");
    const int B = vx.shape[0];
    const int rest = B > 0 ? static_cast<int>(vx.numel()) / B : 0;
    return reshape(x, {B, rest});
  }

  // Column-wise concatenation of [B x Da] and [B x Db] -> [B x (Da+Db)].
  int concat_cols(int a, int b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    require_rank(va, 2, "Tape::concat_cols lhs");
    require_rank(vb, 2, "Tape::concat_cols rhs");
    if (va.shape[0] != vb.shape[0]) {
      throw ShapeMismatch("concat_cols: row counts differ: " + shape_to_string(va.shape) + " vs " +
                          shape_to_string(vb.shape));
    }
    const int B = va.shape[0], Da = va.shape[1], Db = vb.shape[1];
    Tensor<T> y({B, Da + Db});
    for (int n = 0; n < B; ++n) {
      for (int i = 0; i < Da; ++i) y.at2(n, i) = va.at2(n, i);
      for (int i = 0; i < Db; ++i) y.at2(n, Da + i) = vb.at2(n, i);
    }
    int out = push(std::move(y));
    set_back(out, [a, b, out, B, Da, Db](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& ga = t.grad_mut(a);
      Tensor<T>& gb = t.grad_mut(b);
      for (int n = 0; n < B; ++n) {
        for (int i = 0; i < Da; ++i) ga.at2(n, i) += gy.at2(n, i);
        for (int i = 0; i < Db; ++i) gb.at2(n, i) += gy.at2(n, Da + i);
      }
    });
    return out;
  }

  // Per-row column selection: x [B x A], cols[B] -> [B].
  int gather_cols(int x, std::vector<int> cols) {
    const Tensor<T>& vx = value(x);
    require_rank(vx, 2, "Tape::gather_cols");
    const int B = vx.shape[0], A = vx.shape[1];
    if (static_cast<int>(cols.size()) != B) {
      throw ShapeMismatch("gather_cols: need one column index per row");
    }
    for (int c : cols) {
      if (c < 0 || c >= A) throw ShapeMismatch("gather_cols: column index out of range");
    }
    Tensor<T> y({B});
    for (int n = 0; n < B; ++n) y[static_cast<std::size_t>(n)] = vx.at2(n, cols[n]);
    int out = push(std::move(y));
    set_back(out, [x, out, cols = std::move(cols), B](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& gx = t.grad_mut(x);
      for (int n = 0; n < B; ++n) gx.at2(n, cols[n]) += gy[static_cast<std::size_t>(n)];
    });
    return out;
  }

  // ---- reductions --------------------------------------------------------

  // Row sums: [B x D] -> [B].
  int sum_rows(int x) {
    const Tensor<T>& vx = value(x);
    require_rank(vx, 2, "Tape::sum_rows");
    const int B = vx.shape[0], D = vx.shape[1];
    Tensor<T> y({B});
    for (int n = 0; n < B; ++n) {
      T acc = T(0);
      for (int d = 0; d < D; ++d) acc += vx.at2(n, d);
      y[static_cast<std::size_t>(n)] = acc;
    }
    int out = push(std::move(y));
    set_back(out, [x, out, B, D](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      Tensor<T>& gx = t.grad_mut(x);
      for (int n = 0; n < B; ++n)
        for (int d = 0; d < D; ++d) gx.at2(n, d) += gy[static_cast<std::size_t>(n)];
    });
    return out;
  }

  int sum_all(int x) {
    const Tensor<T>& vx = value(x);
    T acc = T(0);
    for (const T& v : vx.data) acc += v;
    int out = push(Tensor<T>({1}, {acc}));
    set_back(out, [x, out](Tape& t) {
      const T g = t.grad(out)[0];
      Tensor<T>& gx = t.grad_mut(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
    return out;
  }

  int mean_all(int x) {
    const std::size_t n = value(x).numel();
    if (n == 0) throw ShapeMismatch("mean_all: empty tensor");
    return scale(sum_all(x), T(1) / static_cast<T>(n));
  }

  // ---- fused ops ---------------------------------------------------------

  // Row-wise cosine similarity of two [B x D] tensors -> [B].
  // Rows whose norm product is below `degenerate_eps` contribute cosine 0
  // with zero gradient instead of dividing by (almost) zero.
  int cosine_rows(int a, int b, T degenerate_eps = T(1e-30)) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    require_rank(va, 2, "Tape::cosine_rows lhs");
    require_same_shape(va, vb, "Tape::cosine_rows");
    const int B = va.shape[0], D = va.shape[1];
    Tensor<T> y({B});
    for (int n = 0; n < B; ++n) {
      T dot = T(0), na = T(0), nb = T(0);
      for (int d = 0; d < D; ++d) {
        dot += va.at2(n, d) * vb.at2(n, d);
        na += va.at2(n, d) * va.at2(n, d);
        nb += vb.at2(n, d) * vb.at2(n, d);
      }
      const T denom = std::sqrt(na) * std::sqrt(nb);
      y[static_cast<std::size_t>(n)] = denom > degenerate_eps ? dot / denom : T(0);
    }
    int out = push(std::move(y));
    set_back(out, [a, b, out, B, D, degenerate_eps](Tape& t) {
      const Tensor<T>& gy = t.grad(out);
      const Tensor<T>& va2 = t.value(a);
      const Tensor<T>& vb2 = t.value(b);
      Tensor<T>& ga = t.grad_mut(a);
      Tensor<T>& gb = t.grad_mut(b);
      for (int n = 0; n < B; ++n) {
        T dot = T(0), na = T(0), nb = T(0);
        for (int d = 0; d < D; ++d) {
          dot += va2.at2(n, d) * vb2.at2(n, d);
          na += va2.at2(n, d) * va2.at2(n, d);
          nb += vb2.at2(n, d) * vb2.at2(n, d);
        }
        const T norm_a = std::sqrt(na), norm_b = std::sqrt(nb);
        const T denom = norm_a * norm_b;
        if (denom <= degenerate_eps) continue;
        const T g = gy[static_cast<std::size_t>(n)];
        const T c = dot / denom;
        for (int d = 0; d < D; ++d) {
          ga.at2(n, d) += g * (vb2.at2(n, d) / denom - c * va2.at2(n, d) / na);
          gb.at2(n, d) += g * (va2.at2(n, d) / denom - c * vb2.at2(n, d) / nb);
        }
      }
    });
    return out;
  }

  // Mean over the entries of a [B] vector whose keep flag is set -> scalar.
  // With no kept entries the result is the constant 0 (no gradient flows).
  int mean_selected(int x, const std::vector<char>& keep) {
    const Tensor<T>& vx = value(x);
    require_rank(vx, 1, "Tape::mean_selected");
    if (keep.size() != vx.numel()) {
      throw ShapeMismatch("mean_selected: need one keep flag per entry");
    }
    int kept = 0;
    T acc = T(0);
    for (std::size_t i = 0; i < vx.numel(); ++i) {
      if (keep[i]) {
        acc += vx[i];
        ++kept;
      }
    }
    if (kept == 0) return push(Tensor<T>({1}, {T(0)}));
    acc /= static_cast<T>(kept);
    int out = push(Tensor<T>({1}, {acc}));
    set_back(out, [x, out, keep, kept](Tape& t) {
      const T g = t.grad(out)[0] / static_cast<T>(kept);
      Tensor<T>& gx = t.grad_mut(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) {
        if (keep[i]) gx[i] += g;
      }
    });
    return out;
  }

  // Weighted sum of scalar nodes -> scalar.
  int weighted_sum(const std::vector<int>& ids, const std::vector<T>& weights) {
    if (ids.size() != weights.size() || ids.empty()) {
      throw ShapeMismatch("weighted_sum: need matching, non-empty ids and weights");
    }
    T acc = T(0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (value(ids[i]).numel() != 1) throw ShapeMismatch("weighted_sum: inputs must be scalars");
      acc += weights[i] * value(ids[i])[0];
    }
    int out = push(Tensor<T>({1}, {acc}));
    set_back(out, [ids, weights, out](Tape& t) {
      const T g = t.grad(out)[0];
      for (std::size_t i = 0; i < ids.size(); ++i) t.grad_mut(ids[i])[0] += weights[i] * g;
    });
    return out;
  }

  // ---- backward ----------------------------------------------------------

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse creation order.
  // `root` must be a scalar node.  Gradients accumulate, so run on a fresh
  // tape per loss evaluation.
  void backward(int root) {
    if (value(root).numel() != 1) {
      throw ShapeMismatch("backward: root must be a scalar, got " +
                          shape_to_string(value(root).shape));
    }
    grad_mut(root)[0] = T(1);
    for (int id = root; id >= 0; --id) {
      if (node(id).back) node(id).back(*this);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward back;
  };

  std::vector<Node> nodes_;

  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  Tensor<T>& grad_mut(int id) { return node(id).grad; }

  int push(Tensor<T> v) {
    Node n;
    n.grad = Tensor<T>::zeros(v.shape);
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void set_back(int id, Backward back) { node(id).back = std::move(back); }
};

}  // namespace cdrl
