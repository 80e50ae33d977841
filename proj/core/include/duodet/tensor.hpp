// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <vector>

#include "duodet/errors.hpp"
#include "duodet/rng.hpp"

namespace duodet {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// Storage allocator pinned to one cache-line alignment. Keeping every
/// buffer identically aligned makes Eigen pick the same vector paths for
/// same-shaped data, so equal computations stay bitwise equal across
/// allocations and process runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign}));
  }
  void deallocate(T* p, std::size_t n) {
    ::operator delete(p, n * sizeof(T), std::align_val_t{kAlign});
  }

  template <class U>
  struct rebind {
    using other = AlignedAllocator<U>;
  };
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
  friend bool operator!=(const AlignedAllocator&, const AlignedAllocator&) { return false; }
};

/// Dense row-major array with a logical shape. The last dimension is the
/// fastest-varying one; mat() exposes a 2-D view with the leading dimensions
/// collapsed into rows.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
    data_.assign(static_cast<std::size_t>(count(dims_)), T(0));
  }
  Tensor(std::initializer_list<int> dims) : Tensor(std::vector<int>(dims)) {}

  static std::int64_t count(const std::vector<int>& dims) {
    std::int64_t n = 1;
    for (int d : dims) {
      check_contract(d >= 0, "tensor dimension must be non-negative");
      n *= d;
    }
    return n;
  }

  static Tensor randn(std::vector<int> dims, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(dims));
    for (auto& x : t.data_) x = static_cast<T>(rng.gaussian() * static_cast<double>(stddev));
    return t;
  }

  static Tensor full(std::vector<int> dims, T value) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<int>& dims() const { return dims_; }
  int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  /// 2-D view: all leading dims collapsed, last dim as columns.
  MatMap<T> mat() {
    const int cols = dims_.empty() ? 1 : dims_.back();
    return MatMap<T>(data(), cols == 0 ? 0 : size() / cols, cols);
  }
  ConstMatMap<T> mat() const {
    const int cols = dims_.empty() ? 1 : dims_.back();
    return ConstMatMap<T>(data(), cols == 0 ? 0 : size() / cols, cols);
  }
  MatMap<T> mat(std::int64_t rows, std::int64_t cols) {
    check_contract(rows * cols == size(), "tensor view shape mismatch");
    return MatMap<T>(data(), rows, cols);
  }
  ConstMatMap<T> mat(std::int64_t rows, std::int64_t cols) const {
    check_contract(rows * cols == size(), "tensor view shape mismatch");
    return ConstMatMap<T>(data(), rows, cols);
  }
  VecMap<T> vec() { return VecMap<T>(data(), size()); }
  ConstVecMap<T> vec() const { return ConstVecMap<T>(data(), size()); }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(dims_);
    for (std::int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

  bool all_finite() const {
    for (const T& x : data_) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

 private:
  std::vector<int> dims_;
  std::vector<T, AlignedAllocator<T>> data_;
};

/// Batch of spatial feature maps stored as (n*h*w) rows by c columns; row
/// index is sample-major then row-major over the grid.
template <class T>
struct Fmap {
  int n = 0, h = 0, w = 0, c = 0;
  Tensor<T> t;

  Fmap() = default;
  Fmap(int n_, int h_, int w_, int c_) : n(n_), h(h_), w(w_), c(c_), t({n_, h_, w_, c_}) {}

  std::int64_t rows() const { return static_cast<std::int64_t>(n) * h * w; }
  std::int64_t size() const { return t.size(); }
  MatMap<T> mat() { return t.mat(rows(), c); }
  ConstMatMap<T> mat() const { return t.mat(rows(), c); }

  T* row(std::int64_t r) { return t.data() + r * c; }
  const T* row(std::int64_t r) const { return t.data() + r * c; }
  std::int64_t row_index(int sample, int y, int x) const {
    return (static_cast<std::int64_t>(sample) * h + y) * w + x;
  }
  T& at(int sample, int y, int x, int ch) { return t[row_index(sample, y, x) * c + ch]; }
  const T& at(int sample, int y, int x, int ch) const { return t[row_index(sample, y, x) * c + ch]; }

  bool same_shape(const Fmap& o) const { return n == o.n && h == o.h && w == o.w && c == o.c; }
};

}  // namespace duodet
