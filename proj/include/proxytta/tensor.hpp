/*
 * Copyright (c) 2026 The proxytta Authors. All Rights Reserved
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PROXYTTA_TENSOR_HPP_
#define PROXYTTA_TENSOR_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace proxytta {

/// Dense NCHW tensor of doubles. Vectors are stored as (n, c, 1, 1).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int y, int x) {
    return data_[index(n, c, y, x)];
  }
  double at(int n, int c, int y, int x) const {
    return data_[index(n, c, y, x)];
  }
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w +
           x;
  }

  /// Plane for one (sample, channel) pair.
  std::span<double> plane(int n, int c) {
    return {data_.data() + index(n, c, 0, 0),
            static_cast<std::size_t>(shape_.h) * shape_.w};
  }
  std::span<const double> plane(int n, int c) const {
    return {data_.data() + index(n, c, 0, 0),
            static_cast<std::size_t>(shape_.h) * shape_.w};
  }

  void fill(double v);
  void add_(const Tensor& other, double scale = 1.0);
  double sum() const;
  bool all_finite() const;

  /// Slice of samples [begin, begin + count) along the batch axis.
  Tensor slice_batch(int begin, int count) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Stacks single-sample tensors of identical (c, h, w) along the batch axis.
Tensor stack_batch(std::span<const Tensor> items);

}  // namespace proxytta

#endif  // PROXYTTA_TENSOR_HPP_
