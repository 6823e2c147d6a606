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

#include "proxytta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "proxytta/errors.hpp"

namespace proxytta {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ContractError("tensor data size " + std::to_string(data_.size()) +
                        " does not match shape " + shape_.str());
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other, double scale) {
  if (other.shape_ != shape_) {
    throw ContractError("add_: shape mismatch " + shape_.str() + " vs " +
                        other.shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other[i];
}

double Tensor::sum() const {
  return std::accumulate(data_.begin(), data_.end(), 0.0);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice_batch(int begin, int count) const {
  Shape s = shape_;
  s.n = count;
  const std::size_t per = static_cast<std::size_t>(s.c) * s.h * s.w;
  std::vector<double> out(data_.begin() + begin * per,
                          data_.begin() + (begin + count) * per);
  return Tensor(s, std::move(out));
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw ContractError("stack_batch: no items");
  Shape s = items.front().shape();
  const int total = static_cast<int>(std::accumulate(
      items.begin(), items.end(), 0,
      [](int acc, const Tensor& t) { return acc + t.n(); }));
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(total) * s.c * s.h * s.w);
  for (const Tensor& t : items) {
    if (t.c() != s.c || t.h() != s.h || t.w() != s.w) {
      throw ContractError("stack_batch: shape mismatch " + t.shape().str() +
                          " vs " + s.str());
    }
    data.insert(data.end(), t.vec().begin(), t.vec().end());
  }
  s.n = total;
  return Tensor(s, std::move(data));
}

}  // namespace proxytta
