// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "topopt/core/error.hpp"

namespace topopt::nn {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// Dense row-major tensor. Convolutional data is laid out N, C, (D,) H, W.
/// Tensor storage. Every buffer starts on Eigen's maximum alignment so that
/// vectorized kernels peel the same way on every run; without it results
/// depend on where the heap happened to place the data.
template <class T>
using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
struct Tensor {
  Shape shape;
  Storage<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, Storage<T> d) : shape(std::move(s)), data(std::move(d)) {
    TOPOPT_REQUIRE(data.size() == numel(shape), ErrorKind::ShapeMismatch,
                   "tensor data length does not match shape " + shape_str(shape));
  }
  Tensor(Shape s, const std::vector<T>& d) : Tensor(std::move(s), Storage<T>(d.begin(), d.end())) {}

  std::size_t size() const { return data.size(); }
  int dim() const { return static_cast<int>(shape.size()); }
  int operator()(int axis) const { return shape[static_cast<std::size_t>(axis)]; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  /// Elements per batch item (everything after axis 0).
  std::size_t item_size() const { return shape.empty() ? 0 : data.size() / static_cast<std::size_t>(shape[0]); }
  /// Product of the spatial axes (everything after N and C).
  std::size_t spatial_size() const {
    std::size_t s = 1;
    for (std::size_t i = 2; i < shape.size(); ++i) s *= static_cast<std::size_t>(shape[i]);
    return s;
  }

  Tensor reshaped(Shape s) const {
    TOPOPT_REQUIRE(numel(s) == data.size(), ErrorKind::ShapeMismatch,
                   "cannot reshape " + shape_str(shape) + " to " + shape_str(s));
    return Tensor(std::move(s), data);
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    TOPOPT_REQUIRE(o.shape == shape, ErrorKind::ShapeMismatch, "tensor += shape mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  TOPOPT_REQUIRE(a.shape == b.shape, ErrorKind::ShapeMismatch,
                 std::string(what) + ": " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

/// Concatenates batch items (axis 0); all parts share the trailing shape.
template <class T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& parts) {
  TOPOPT_REQUIRE(!parts.empty(), ErrorKind::ShapeMismatch, "nothing to stack");
  Shape s = parts[0].shape;
  int n = 0;
  for (const auto& p : parts) {
    TOPOPT_REQUIRE(static_cast<std::size_t>(p.dim()) == s.size() && std::equal(p.shape.begin() + 1, p.shape.end(), s.begin() + 1),
                   ErrorKind::ShapeMismatch, "stack_batch: trailing shapes differ");
    n += p.shape[0];
  }
  s[0] = n;
  Tensor<T> out(s);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  return out;
}

/// Items [begin, begin + count) of the batch.
template <class T>
Tensor<T> slice_batch(const Tensor<T>& t, int begin, int count) {
  TOPOPT_REQUIRE(begin >= 0 && count >= 0 && begin + count <= t.shape[0], ErrorKind::ShapeMismatch,
                 "slice_batch out of range");
  Shape s = t.shape;
  s[0] = count;
  const std::size_t item = t.item_size();
  const auto first = t.data.begin() + static_cast<std::ptrdiff_t>(item * static_cast<std::size_t>(begin));
  return Tensor<T>(s, Storage<T>(first, first + static_cast<std::ptrdiff_t>(item * static_cast<std::size_t>(count))));
}

}  // namespace topopt::nn
