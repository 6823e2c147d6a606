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

#include "proxytta/optim.hpp"

#include <cmath>

#include "proxytta/errors.hpp"

namespace proxytta {

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
}

void Adam::step(const std::vector<Parameter*>& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (!p->trainable || p->grad.empty()) continue;
    auto [it, fresh] = state_.try_emplace(p->name);
    Moments& mo = it->second;
    if (fresh || mo.m.numel() != p->value.numel()) {
      mo.m = Tensor(p->value.shape());
      mo.v = Tensor(p->value.shape());
    }
    double* w = p->value.data();
    const double* g = p->grad.data();
    double* m = mo.m.data();
    double* v = mo.v.data();
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

std::vector<Parameter*> trainable_params(std::vector<Parameter>& params) {
  std::vector<Parameter*> out;
  for (Parameter& p : params) {
    if (p.trainable) out.push_back(&p);
  }
  return out;
}

}  // namespace proxytta
