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

// Proxy mapping heads.
//
// Three MLPs map pooled fusion features to embeddings:
//   online projector  g   (pool_dim -> hidden -> embed)
//   target projector  g'  (same shape; moved only by EMA towards g)
//   predictor         h   (embed -> hidden -> embed)
//
// Preparation (source domain) trains g and h so that
//   p = h(g(sg(e(I_0, z))))   matches   q = sg(g'(e(I, z)))
// under a cosine objective. At adaptation time all three are frozen and
//   p = sg(h(g(e(I_0, z))))   guides    q = g'(e(I, z)),
// with q the only path back into the encoder (and the adaptation layer).

#ifndef PROXYTTA_PROXY_HPP_
#define PROXYTTA_PROXY_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "proxytta/autograd.hpp"

namespace proxytta {

struct ProxyConfig {
  int embed_dim = 128;
  int hidden_dim = 128;
  double tau = 0.996;

  void validate() const;
  bool operator==(const ProxyConfig&) const = default;
};

enum class HeadGroup { OnlineProjector, TargetProjector, Predictor };
const char* to_string(HeadGroup g);
HeadGroup head_group_of(const std::string& key);

class ProxyHeads {
 public:
  ProxyConfig config;
  int pool_dim = 0;
  /// Set once preparation finishes; target pairs require it.
  bool prepared = false;
  std::vector<Parameter> params;

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  void zero_grad();
  void freeze();
  /// Makes g and h trainable; g' stays frozen.
  void unfreeze_online();
  bool values_equal(const ProxyHeads& other) const;
  bool group_equal(const ProxyHeads& other, HeadGroup group) const;
  std::vector<Parameter*> group_params(HeadGroup group);
};

/// Target projector starts as an exact copy of the online projector.
ProxyHeads init_proxy_heads(int pool_dim, const ProxyConfig& config,
                            std::uint64_t seed);

/// Global average pool over the spatial axes: (n, c, h, w) -> (n, c, 1, 1).
Var pool_features(const Var& fused_feat);
std::vector<double> pool_features(const Tensor& fused_feat);

Var apply_head(ProxyHeads& heads, HeadGroup group, const Var& x);

enum class PairRole { SourcePrep, TargetAdapt };

struct EmbeddingPair {
  Var p;
  Var q;
  PairRole role = PairRole::SourcePrep;
};

/// p = h(g(sg(pool(feat_depth_only)))), q = sg(g'(pool(feat_both))).
EmbeddingPair make_source_pair(ProxyHeads& heads, const Var& feat_depth_only,
                               const Var& feat_both);

/// p = sg(h(g(pool(feat_depth_only)))), q = g'(pool(feat_both)); heads are
/// frozen first. Throws LifecycleError unless the heads are prepared.
EmbeddingPair make_target_pair(ProxyHeads& heads, const Var& feat_depth_only,
                               const Var& feat_both);

/// 1 - cos(p, q). Throws DegenerateEmbeddingError when either norm <= 1e-12.
double cosine_loss(std::span<const double> p, std::span<const double> q);

/// Batch mean of 1 - cos(p_i, q_i) over rows of (n, d, 1, 1) embeddings.
Var cosine_loss(const Var& p, const Var& q);

/// g' <- tau * g' + (1 - tau) * g. Online projector and predictor untouched.
void ema_update(ProxyHeads& heads);

inline constexpr double kDegenerateNorm = 1e-12;

}  // namespace proxytta

#endif  // PROXYTTA_PROXY_HPP_
