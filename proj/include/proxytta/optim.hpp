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

#ifndef PROXYTTA_OPTIM_HPP_
#define PROXYTTA_OPTIM_HPP_

#include <map>
#include <string>
#include <vector>

#include "proxytta/autograd.hpp"

namespace proxytta {

/// Adam over named parameters. Moment buffers are keyed by parameter name so
/// the state survives a checkpoint round trip.
class Adam {
 public:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  /// One update for every trainable parameter that holds a gradient.
  void step(const std::vector<Parameter*>& params);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long long steps() const { return t_; }
  void set_steps(long long t) { t_ = t; }
  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Collects pointers to the trainable entries of a parameter vector.
std::vector<Parameter*> trainable_params(std::vector<Parameter>& params);

}  // namespace proxytta

#endif  // PROXYTTA_OPTIM_HPP_
