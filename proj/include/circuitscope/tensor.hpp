// Copyright 2026 The circuitscope Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "circuitscope/rng.hpp"

namespace circuitscope {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check_shape(bool ok, const std::string& what, const Shape& a, const Shape& b) {
  if (!ok) {
    throw ShapeError(what + ": " + shape_str(a) + " vs " + shape_str(b));
  }
}

// Dense row-major tensor. Flat storage, no views; every reshaping op copies.
template <class T>
struct TensorT {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // empty until allocated; same length as data when present

  TensorT() = default;
  TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != static_cast<int64_t>(data.size())) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  static TensorT zeros(Shape s) {
    auto n = numel(s);
    return TensorT(std::move(s), std::vector<T>(static_cast<size_t>(n), T(0)));
  }
  static TensorT full(Shape s, T v) {
    auto n = numel(s);
    return TensorT(std::move(s), std::vector<T>(static_cast<size_t>(n), v));
  }
  static TensorT ones(Shape s) { return full(std::move(s), T(1)); }

  static TensorT randn(Shape s, Rng& rng, T stddev = T(1)) {
    auto t = zeros(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }

  void alloc_grad() { grad.assign(data.size(), T(0)); }
  void zero_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    else std::fill(grad.begin(), grad.end(), T(0));
  }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    out.requires_grad = requires_grad;
    return out;
  }
};

using Tensor = TensorT<float>;

}  // namespace circuitscope
