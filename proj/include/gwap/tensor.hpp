/* Copyright 2026 The gwap Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "gwap/error.hpp"

namespace gwap {
namespace detail {

/// Every buffer starts at the same 64-byte alignment, so vectorized kernels
/// pick the same prologue split on every allocation and reductions round
/// identically from run to run. Plain malloc alignment varies with heap
/// history, which made repeated in-process runs differ by an ulp.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(
        ::operator new(n * sizeof(T), std::align_val_t(kAlign)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(kAlign));
  }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAllocator<U>&) const {
    return false;
  }
};

}  // namespace detail

/// Dense row-major tensor of rank 1..4. The scalar type is a template
/// parameter: float is the training width, double the gradient-check width.
/// Storage is a flat vector with fixed 64-byte alignment; Eigen maps give
/// vectorized views without owning anything.
template <typename Scalar>
class Tensor {
 public:
  using Index = std::int64_t;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), Scalar(0)) {}

  Tensor(std::vector<int> shape, Scalar fill)
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  Tensor(std::vector<int> shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (static_cast<Index>(data_.size()) != checked_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(Scalar v) { return Tensor({1}, std::vector<Scalar>{v}); }

  static Tensor full(std::vector<int> shape, Scalar v) {
    return Tensor(std::move(shape), v);
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  Index size() const { return static_cast<Index>(data_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Rank-2 access (y, x).
  Scalar& at(int y, int x) { return data_[idx2(y, x)]; }
  Scalar at(int y, int x) const { return data_[idx2(y, x)]; }

  /// Rank-3 access (c, y, x).
  Scalar& at(int c, int y, int x) { return data_[idx3(c, y, x)]; }
  Scalar at(int c, int y, int x) const { return data_[idx3(c, y, x)]; }

  /// Flat vectorized view.
  auto array() {
    return Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(data_.data(),
                                                               size());
  }
  auto array() const {
    return Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
        data_.data(), size());
  }

  /// 2-D matrix view of the flat buffer. rows*cols must equal size().
  auto matrix(Index rows, Index cols) {
    check_matrix_view(rows, cols);
    return Eigen::Map<
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data_.data(), rows, cols);
  }
  auto matrix(Index rows, Index cols) const {
    check_matrix_view(rows, cols);
    return Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic,
                                          Eigen::Dynamic, Eigen::RowMajor>>(
        data_.data(), rows, cols);
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<Scalar>) {
      return array().isFinite().all();
    } else {
      return true;
    }
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out[static_cast<Index>(i)] = static_cast<T>(data_[i]);
    }
    return out;
  }

  static std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << 'x';
      os << shape[i];
    }
    os << ']';
    return os.str();
  }
  std::string shape_string() const { return shape_string(shape_); }

 private:
  static Index checked_size(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 4) {
      throw ShapeError("tensor rank must be 1..4, got " +
                       std::to_string(shape.size()));
    }
    Index n = 1;
    for (int e : shape) {
      if (e <= 0) {
        throw ShapeError("non-positive extent in shape " + shape_string(shape));
      }
      n *= e;
    }
    return n;
  }

  std::size_t idx2(int y, int x) const {
    return static_cast<std::size_t>(y) * shape_[1] + x;
  }
  std::size_t idx3(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x;
  }

  void check_matrix_view(Index rows, Index cols) const {
    if (rows * cols != size()) {
      throw ShapeError("matrix view " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " does not cover tensor " +
                       shape_string());
    }
  }

  std::vector<int> shape_;
  std::vector<Scalar, detail::AlignedAllocator<Scalar>> data_;
};

/// Binary pixel mask, 0 or 1 per cell.
using Mask = Tensor<std::uint8_t>;

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                        const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() +
                     " vs " + b.shape_string());
  }
}

}  // namespace gwap
