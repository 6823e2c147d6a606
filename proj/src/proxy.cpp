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

#include "proxytta/proxy.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "proxytta/errors.hpp"

namespace proxytta {

void ProxyConfig::validate() const {
  if (embed_dim < 1 || hidden_dim < 1) {
    throw ConfigError("proxy: embed_dim and hidden_dim must be >= 1");
  }
  if (!(tau >= 0.0 && tau < 1.0)) {
    throw ConfigError("proxy: tau must lie in [0, 1)");
  }
}

const char* to_string(HeadGroup g) {
  switch (g) {
    case HeadGroup::OnlineProjector: return "online_projector";
    case HeadGroup::TargetProjector: return "target_projector";
    case HeadGroup::Predictor: return "predictor";
  }
  return "?";
}

HeadGroup head_group_of(const std::string& key) {
  for (HeadGroup g : {HeadGroup::OnlineProjector, HeadGroup::TargetProjector,
                      HeadGroup::Predictor}) {
    const std::string prefix = std::string("proxy/") + to_string(g) + ".";
    if (key.rfind(prefix, 0) == 0) return g;
  }
  throw ContractError("'" + key + "' is not a proxy head parameter");
}

Parameter& ProxyHeads::get(const std::string& name) {
  for (Parameter& p : params) {
    if (p.name == name) return p;
  }
  throw ContractError("no proxy parameter named '" + name + "'");
}

const Parameter& ProxyHeads::get(const std::string& name) const {
  return const_cast<ProxyHeads*>(this)->get(name);
}

bool ProxyHeads::contains(const std::string& name) const {
  return std::any_of(params.begin(), params.end(),
                     [&](const Parameter& p) { return p.name == name; });
}

void ProxyHeads::zero_grad() {
  for (Parameter& p : params) p.zero_grad();
}

void ProxyHeads::freeze() {
  for (Parameter& p : params) p.trainable = false;
}

void ProxyHeads::unfreeze_online() {
  for (Parameter& p : params) {
    p.trainable = head_group_of(p.name) != HeadGroup::TargetProjector;
  }
}

bool ProxyHeads::values_equal(const ProxyHeads& other) const {
  if (params.size() != other.params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != other.params[i].name ||
        !(params[i].value == other.params[i].value)) {
      return false;
    }
  }
  return true;
}

bool ProxyHeads::group_equal(const ProxyHeads& other, HeadGroup group) const {
  for (const Parameter& p : params) {
    if (head_group_of(p.name) != group) continue;
    if (!other.contains(p.name) || !(p.value == other.get(p.name).value)) {
      return false;
    }
  }
  return true;
}

std::vector<Parameter*> ProxyHeads::group_params(HeadGroup group) {
  std::vector<Parameter*> out;
  for (Parameter& p : params) {
    if (head_group_of(p.name) == group) out.push_back(&p);
  }
  return out;
}

namespace {

std::string key(HeadGroup g, const char* layer, const char* tensor) {
  return std::string("proxy/") + to_string(g) + "." + layer + "." + tensor;
}

void add_linear(ProxyHeads& heads, std::mt19937_64& rng, HeadGroup g,
                const char* layer, int in, int out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Parameter w;
  w.name = key(g, layer, "weight");
  w.value = Tensor(Shape{out, in, 1, 1});
  for (double& v : w.value.vec()) v = u(rng);
  Parameter b;
  b.name = key(g, layer, "bias");
  b.value = Tensor(Shape{1, out, 1, 1});
  for (double& v : b.value.vec()) v = u(rng);
  heads.params.push_back(std::move(w));
  heads.params.push_back(std::move(b));
}

}  // namespace

ProxyHeads init_proxy_heads(int pool_dim, const ProxyConfig& config,
                            std::uint64_t seed) {
  config.validate();
  if (pool_dim < 1) throw ConfigError("proxy: pool_dim must be >= 1");
  ProxyHeads heads;
  heads.config = config;
  heads.pool_dim = pool_dim;
  std::mt19937_64 rng(seed * 0x94D049BB133111EBULL + 5);
  add_linear(heads, rng, HeadGroup::OnlineProjector, "fc1", pool_dim,
             config.hidden_dim);
  add_linear(heads, rng, HeadGroup::OnlineProjector, "fc2", config.hidden_dim,
             config.embed_dim);
  add_linear(heads, rng, HeadGroup::Predictor, "fc1", config.embed_dim,
             config.hidden_dim);
  add_linear(heads, rng, HeadGroup::Predictor, "fc2", config.hidden_dim,
             config.embed_dim);
  for (const char* layer : {"fc1", "fc2"}) {
    for (const char* t : {"weight", "bias"}) {
      Parameter p;
      p.name = key(HeadGroup::TargetProjector, layer, t);
      p.value = heads.get(key(HeadGroup::OnlineProjector, layer, t)).value;
      heads.params.push_back(std::move(p));
    }
  }
  return heads;
}

Var pool_features(const Var& fused_feat) {
  return ag::global_avg_pool(fused_feat);
}

std::vector<double> pool_features(const Tensor& fused_feat) {
  if (fused_feat.n() != 1) {
    throw ContractError("pool_features: expected a single feature map");
  }
  return ag::global_avg_pool(ag::constant(fused_feat))->value.vec();
}

Var apply_head(ProxyHeads& heads, HeadGroup group, const Var& x) {
  const int in = x->value.c() * x->value.h() * x->value.w();
  const int expected = group == HeadGroup::Predictor ? heads.config.embed_dim
                                                     : heads.pool_dim;
  if (in != expected) {
    throw ContractError(std::string("proxy head ") + to_string(group) +
                        ": input width " + std::to_string(in) +
                        " != expected " + std::to_string(expected));
  }
  auto param = [&](const char* layer, const char* t) {
    return ag::parameter(heads.get(key(group, layer, t)));
  };
  const Var hidden =
      ag::elu(ag::linear(x, param("fc1", "weight"), param("fc1", "bias")));
  return ag::linear(hidden, param("fc2", "weight"), param("fc2", "bias"));
}

EmbeddingPair make_source_pair(ProxyHeads& heads, const Var& feat_depth_only,
                               const Var& feat_both) {
  EmbeddingPair pair;
  pair.role = PairRole::SourcePrep;
  const Var depth_in = ag::stop_gradient(pool_features(feat_depth_only));
  pair.p = apply_head(heads, HeadGroup::Predictor,
                      apply_head(heads, HeadGroup::OnlineProjector, depth_in));
  pair.q = ag::stop_gradient(apply_head(heads, HeadGroup::TargetProjector,
                                        pool_features(feat_both)));
  return pair;
}

EmbeddingPair make_target_pair(ProxyHeads& heads, const Var& feat_depth_only,
                               const Var& feat_both) {
  if (!heads.prepared) {
    throw LifecycleError(
        "proxy heads are not prepared; run the preparation stage first");
  }
  heads.freeze();
  EmbeddingPair pair;
  pair.role = PairRole::TargetAdapt;
  pair.p = ag::stop_gradient(apply_head(
      heads, HeadGroup::Predictor,
      apply_head(heads, HeadGroup::OnlineProjector, pool_features(feat_depth_only))));
  pair.q = apply_head(heads, HeadGroup::TargetProjector, pool_features(feat_both));
  return pair;
}

double cosine_loss(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw ContractError("cosine_loss: length mismatch");
  }
  double pp = 0.0, qq = 0.0, pq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    pp += p[i] * p[i];
    qq += q[i] * q[i];
    pq += p[i] * q[i];
  }
  const double np = std::sqrt(pp);
  const double nq = std::sqrt(qq);
  if (!(np > kDegenerateNorm) || !(nq > kDegenerateNorm)) {
    throw DegenerateEmbeddingError("cosine_loss: embedding norm below 1e-12");
  }
  return 1.0 - pq / (np * nq);
}

Var cosine_loss(const Var& p, const Var& q) {
  const Shape s = p->value.shape();
  if (!(s == q->value.shape())) {
    throw ContractError("cosine_loss: " + s.str() + " vs " +
                        q->value.shape().str());
  }
  const int n = s.n;
  const std::size_t d = static_cast<std::size_t>(s.c) * s.h * s.w;
  std::vector<double> norm_p(n), norm_q(n), cosine(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    std::span<const double> pi(p->value.data() + i * d, d);
    std::span<const double> qi(q->value.data() + i * d, d);
    const double loss = cosine_loss(pi, qi);
    double pp = 0.0, qq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      pp += pi[k] * pi[k];
      qq += qi[k] * qi[k];
    }
    norm_p[i] = std::sqrt(pp);
    norm_q[i] = std::sqrt(qq);
    cosine[i] = 1.0 - loss;
    total += loss;
  }
  auto node = std::make_shared<Node>();
  node->value = Tensor(Shape{1, 1, 1, 1}, total / n);
  node->requires_grad = p->requires_grad || q->requires_grad;
  node->parents = {p, q};
  if (node->requires_grad) {
    node->backward_fn = [=](Node& self) {
      const double g = self.grad[0] / n;
      Node& pn = *self.parents[0];
      Node& qn = *self.parents[1];
      for (int i = 0; i < n; ++i) {
        const double* pi = pn.value.data() + i * d;
        const double* qi = qn.value.data() + i * d;
        const double inv = 1.0 / (norm_p[i] * norm_q[i]);
        // d(1 - cos)/dp = -(q / (|p||q|) - cos * p / |p|^2)
        if (pn.requires_grad) {
          double* gp = pn.grad_buffer().data() + i * d;
          const double kp = cosine[i] / (norm_p[i] * norm_p[i]);
          for (std::size_t k = 0; k < d; ++k) {
            gp[k] -= g * (qi[k] * inv - kp * pi[k]);
          }
        }
        if (qn.requires_grad) {
          double* gq = qn.grad_buffer().data() + i * d;
          const double kq = cosine[i] / (norm_q[i] * norm_q[i]);
          for (std::size_t k = 0; k < d; ++k) {
            gq[k] -= g * (pi[k] * inv - kq * qi[k]);
          }
        }
      }
    };
  }
  return node;
}

void ema_update(ProxyHeads& heads) {
  const double tau = heads.config.tau;
  for (Parameter& target : heads.params) {
    if (head_group_of(target.name) != HeadGroup::TargetProjector) continue;
    std::string online_name = target.name;
    online_name.replace(online_name.find("target_projector"),
                        std::string("target_projector").size(),
                        "online_projector");
    const Tensor& online = heads.get(online_name).value;
    for (std::size_t i = 0; i < target.value.numel(); ++i) {
      target.value[i] = tau * target.value[i] + (1.0 - tau) * online[i];
    }
  }
}

}  // namespace proxytta
