// Adam optimizer with bias-corrected first and second moments.
//
// One AdamState per network; moment tensors align one-to-one with the
// ParamSet the state was built from.  Updates are elementwise:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2,
//   p <- p - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps).
#pragma once

#include <cmath>
#include <vector>

#include "cdrl/errors.hpp"
#include "cdrl/net.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

template <typename T>
struct AdamState {
  T lr = T(6.25e-5);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  long long step_count = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

template <typename T>
AdamState<T> make_adam(const ParamSet<T>& params, T lr) {
  AdamState<T> st;
  st.lr = lr;
  st.m.reserve(params.count());
  st.v.reserve(params.count());
  for (const auto& it : params.items) {
    st.m.push_back(Tensor<T>::zeros(it.second.shape));
    st.v.push_back(Tensor<T>::zeros(it.second.shape));
  }
  return st;
}

template <typename T>
void adam_step(AdamState<T>& st, ParamSet<T>& params, const std::vector<Tensor<T>>& grads) {
  if (grads.size() != params.count() || st.m.size() != params.count()) {
    throw ShapeMismatch("adam_step: state/parameter/gradient counts differ");
  }
  st.step_count += 1;
  const T c1 = T(1) - std::pow(st.beta1, static_cast<T>(st.step_count));
  const T c2 = T(1) - std::pow(st.beta2, static_cast<T>(st.step_count));
  for (std::size_t i = 0; i < params.count(); ++i) {
    Tensor<T>& p = params.items[i].second;
    const Tensor<T>& g = grads[i];
    require_same_shape(p, g, "adam_step");
    Tensor<T>& m = st.m[i];
    Tensor<T>& v = st.v[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = st.beta1 * m[j] + (T(1) - st.beta1) * g[j];
      v[j] = st.beta2 * v[j] + (T(1) - st.beta2) * g[j] * g[j];
      const T mhat = m[j] / c1;
      const T vhat = v[j] / c2;
      p[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

}  // namespace cdrl
