// Copyright 2026 The Rollback Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <concepts>
#include <cstring>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rollback {

// Error kinds shared across the library. Every error is an exception; the
// CLI maps the kind name onto its one-line diagnostic.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};
struct ShapeError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
};
struct ValidationError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "validation"; }
};
struct ContractError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "contract"; }
};
struct FormatError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "format"; }
};
struct DataError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "data"; }
};
struct NumericError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Values are owned; copies are deep.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    check_dims();
    if (values_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor of shape " + shape_str(shape_) + " needs " +
                       std::to_string(shape_numel(shape_)) + " values, got " +
                       std::to_string(values_.size()));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<T> values() & noexcept { return values_; }
  std::span<const T> values() const& noexcept { return values_; }
  /// Temporaries hand over their storage.
  std::vector<T> values() && noexcept { return std::move(values_); }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  Tensor& set_requires_grad(bool on) noexcept {
    requires_grad_ = on;
    return *this;
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  /// Same values under a new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                       shape_str(shape));
    }
    Tensor out(std::move(shape), values_);
    out.requires_grad_ = requires_grad_;
    return out;
  }

  /// Exact equality of shape and every value bit pattern (NaN-free inputs).
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_dims() const {
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("zero-sized dimension in " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> values_;
  bool requires_grad_ = false;
};

/// Bitwise equality of shape and storage, distinguishing +0 from -0.
template <std::floating_point T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

template <std::floating_point To, std::floating_point From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> v(t.values().begin(), t.values().end());
  Tensor<To> out(t.shape(), std::move(v));
  out.set_requires_grad(t.requires_grad());
  return out;
}

}  // namespace rollback
