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

// Minimal reverse-mode automatic differentiation over NCHW tensors.
//
// A graph is built implicitly by the op functions below; every node keeps its
// parents alive. Nodes whose parents do not require gradients are constants
// and are skipped during the backward sweep, so frozen parameters and
// stop-gradient boundaries receive exactly zero gradient by construction.

#ifndef PROXYTTA_AUTOGRAD_HPP_
#define PROXYTTA_AUTOGRAD_HPP_

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "proxytta/tensor.hpp"

namespace proxytta {

/// A named tensor owned by a parameter store. `trainable` decides whether a
/// leaf created from it joins the gradient graph.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = false;

  void zero_grad();
};

class Node;
using Var = std::shared_ptr<Node>;

class Node {
 public:
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  Parameter* param = nullptr;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  /// Adds `g` into this node's gradient, allocating it on first use.
  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

namespace ag {

Var constant(Tensor value);
Var parameter(Parameter& p);

/// Same value, no gradient path back to `x`.
Var stop_gradient(const Var& x);

/// Runs the backward sweep from a scalar root and accumulates leaf gradients
/// into their owning Parameters.
void backward(const Var& root);

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride,
           int pad);

struct BatchNormState {
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;
  bool use_batch_stats = false;
  bool update_running = false;
  double momentum = 0.1;
  double eps = 1e-5;
};
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               const BatchNormState& state);

Var elu(const Var& x);
/// scale * sigmoid(x), mapping onto (0, scale).
Var scaled_sigmoid(const Var& x, double scale);
Var concat_channels(std::span<const Var> xs);
Var upsample_nearest2x(const Var& x);
Var add(const Var& a, const Var& b);
/// (n, c, h, w) -> (n, c, 1, 1)
Var global_avg_pool(const Var& x);
/// x: (n, in, 1, 1); weight: (out, in, 1, 1); bias: (1, out, 1, 1).
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Sum of weight * scalar terms. Every term must be a (1,1,1,1) tensor.
Var weighted_sum(std::span<const std::pair<double, Var>> terms);

}  // namespace ag
}  // namespace proxytta

#endif  // PROXYTTA_AUTOGRAD_HPP_
