// Dense row-major tensor of a floating-point scalar type.
//
// Deliberately minimal: contiguous storage, explicit shapes, bounds-checked
// construction.  All numeric kernels that need structure (matmul, conv) live
// with the autodiff ops; this type is storage plus indexing only.
#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cdrl/errors.hpp"

namespace cdrl {

using Shape = std::vector<int>;

inline std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeMismatch("negative dimension in shape " + shape_to_string(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}

  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape)) {
      throw ShapeMismatch("value count " + std::to_string(data.size()) +
                          " does not fill shape " + shape_to_string(shape));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, T value) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }

  int dim(int i) const {
    if (i < 0 || i >= rank()) {
      throw ShapeMismatch("dimension index " + std::to_string(i) + " out of range for " +
                          shape_to_string(shape));
    }
    return shape[static_cast<std::size_t>(i)];
  }

  // Flat access.
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // Rank-specific accessors used throughout the kernels.  Row-major layout.
  T& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  const T& at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  T& at4(int n, int c, int y, int x) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  const T& at4(int n, int c, int y, int x) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  void fill(T value) { std::fill(data.begin(), data.end(), value); }

  // Reshape to a shape with identical element count; data order is preserved.
  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel()) {
      throw ShapeMismatch("cannot reshape " + shape_to_string(shape) + " to " + shape_to_string(s));
    }
    return Tensor(std::move(s), data);
  }
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(op) + ": shapes " + shape_to_string(a.shape) + " and " +
                        shape_to_string(b.shape) + " differ");
  }
}

template <typename T>
void require_rank(const Tensor<T>& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeMismatch(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_to_string(t.shape));
  }
}

}  // namespace cdrl
