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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "proxytta/errors.hpp"
#include "proxytta/losses.hpp"
#include "proxytta/proxy.hpp"
#include "test_util.hpp"

namespace proxytta {
namespace {

constexpr double kTol = 1e-9;

bool grad_is_zero(const Tensor& g) {
  for (double v : g.vec()) {
    if (v != 0.0) return false;
  }
  return true;
}

bool any_nonzero_grad(const std::vector<Parameter*>& ps) {
  for (const Parameter* p : ps) {
    if (!grad_is_zero(p->grad)) return true;
  }
  return false;
}

Tensor random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(s);
  for (double& v : t.vec()) v = n(rng);
  return t;
}

TEST(CosineLoss, ReferenceValues) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_NEAR(cosine_loss(a, a), 0.0, kTol);
  EXPECT_NEAR(cosine_loss(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0, kTol);
  EXPECT_NEAR(cosine_loss(std::vector<double>{1, 0}, std::vector<double>{-1, 0}), 2.0, kTol);
}

TEST(CosineLoss, DegenerateNormRaises) {
  EXPECT_THROW(cosine_loss(std::vector<double>{0, 0}, std::vector<double>{1, 0}),
               DegenerateEmbeddingError);
  EXPECT_THROW(cosine_loss(std::vector<double>{1e-13, 0}, std::vector<double>{1, 0}),
               DegenerateEmbeddingError);
  EXPECT_THROW(cosine_loss(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}),
               ContractError);
}

TEST(CosineLoss, RangeAndScaleInvarianceOnRandomPairs) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> log_scale(-3.0, 3.0);
  std::uniform_int_distribution<int> dim(1, 64);
  for (int trial = 0; trial < 10000; ++trial) {
    const int d = dim(rng);
    std::vector<double> p(d), q(d);
    for (int i = 0; i < d; ++i) {
      p[i] = n(rng);
      q[i] = n(rng);
    }
    const double l = cosine_loss(p, q);
    ASSERT_GE(l, 0.0);
    ASSERT_LE(l, 2.0);
    const double a = std::pow(10.0, log_scale(rng));
    const double b = std::pow(10.0, log_scale(rng));
    std::vector<double> ps(p), qs(q);
    for (double& v : ps) v *= a;
    for (double& v : qs) v *= b;
    ASSERT_NEAR(cosine_loss(ps, qs), l, 1e-9);
  }
}

TEST(CosineLoss, BatchedFormIsPerSampleMean) {
  const Tensor p(Shape{2, 2, 1, 1}, std::vector<double>{1, 0, 1, 0});
  const Tensor q(Shape{2, 2, 1, 1}, std::vector<double>{0, 1, -1, 0});
  EXPECT_NEAR(cosine_loss(ag::constant(p), ag::constant(q))->value[0], 1.5, kTol);
}

TEST(ProxyConsistency, IdenticalAndOrthogonal) {
  EmbeddingPair same;
  same.p = ag::constant(Tensor(Shape{1, 3, 1, 1}, std::vector<double>{0.3, -1, 2}));
  same.q = same.p;
  EXPECT_NEAR(proxy_consistency_value(same), 0.0, kTol);
  EmbeddingPair orth;
  orth.p = ag::constant(Tensor(Shape{1, 2, 1, 1}, std::vector<double>{2, 0}));
  orth.q = ag::constant(Tensor(Shape{1, 2, 1, 1}, std::vector<double>{0, 5}));
  EXPECT_NEAR(proxy_consistency_value(orth), 1.0, kTol);
}

ProxyHeads scalar_heads(double tau, double target, double online) {
  ProxyHeads h = init_proxy_heads(2, {2, 2, 0.5}, 0);
  h.config.tau = tau;
  for (Parameter& p : h.params) {
    const HeadGroup g = head_group_of(p.name);
    if (g == HeadGroup::TargetProjector) p.value.fill(target);
    if (g == HeadGroup::OnlineProjector) p.value.fill(online);
  }
  return h;
}

TEST(EmaUpdate, Arithmetic) {
  ProxyHeads h = scalar_heads(0.9, 1.0, 0.0);
  ema_update(h);
  for (Parameter* p : h.group_params(HeadGroup::TargetProjector)) {
    for (double v : p->value.vec()) EXPECT_NEAR(v, 0.9, kTol);
  }
}

TEST(EmaUpdate, TauZeroCopiesAndTauOneFreezes) {
  ProxyHeads copy = scalar_heads(0.0, 1.0, -0.25);
  ema_update(copy);
  for (Parameter* p : copy.group_params(HeadGroup::TargetProjector)) {
    for (double v : p->value.vec()) EXPECT_EQ(v, -0.25);
  }
  ProxyHeads still = scalar_heads(1.0, 1.0, -0.25);
  const ProxyHeads before = still;
  ema_update(still);
  EXPECT_TRUE(still.values_equal(before));
}

TEST(EmaUpdate, OnlyTargetMoves) {
  ProxyHeads h = init_proxy_heads(5, {4, 3, 0.996}, 3);
  std::mt19937_64 rng(1);
  for (Parameter* p : h.group_params(HeadGroup::OnlineProjector)) {
    p->value = random_tensor(p->value.shape(), rng);
  }
  const ProxyHeads before = h;
  ema_update(h);
  EXPECT_TRUE(h.group_equal(before, HeadGroup::OnlineProjector));
  EXPECT_TRUE(h.group_equal(before, HeadGroup::Predictor));
  EXPECT_FALSE(h.group_equal(before, HeadGroup::TargetProjector));
}

TEST(EmaUpdate, GeometricConvergence) {
  const double tau = 0.8;
  ProxyHeads h = scalar_heads(tau, 1.0, 0.25);
  for (int n = 1; n <= 20; ++n) {
    ema_update(h);
    const double expected = std::pow(tau, n) * (1.0 - 0.25);
    for (Parameter* p : h.group_params(HeadGroup::TargetProjector)) {
      for (double v : p->value.vec()) ASSERT_NEAR(v - 0.25, expected, 1e-12);
    }
  }
}

TEST(InitProxyHeads, TargetStartsAsOnlineCopy) {
  const ProxyHeads h = init_proxy_heads(8, {6, 5, 0.99}, 11);
  for (const char* layer : {"fc1", "fc2"}) {
    for (const char* t : {"weight", "bias"}) {
      const std::string suffix = std::string(".") + layer + "." + t;
      EXPECT_EQ(h.get("proxy/online_projector" + suffix).value,
                h.get("proxy/target_projector" + suffix).value);
    }
  }
  EXPECT_FALSE(h.prepared);
  EXPECT_THROW(init_proxy_heads(8, {0, 5, 0.99}, 0), ConfigError);
}

TEST(PoolFeatures, ConstantLinearAndShape) {
  const Tensor constant(Shape{1, 4, 3, 5}, 3.0);
  for (double v : pool_features(constant)) EXPECT_NEAR(v, 3.0, kTol);

  std::mt19937_64 rng(2);
  const Tensor f = random_tensor(Shape{1, 6, 4, 4}, rng);
  Tensor scaled = f;
  for (double& v : scaled.vec()) v *= -2.5;
  const auto a = pool_features(f);
  const auto b = pool_features(scaled);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], -2.5 * a[i], kTol);

  EXPECT_EQ(pool_features(Tensor(Shape{1, 64, 8, 8}, 1.0)).size(), 64u);
}

TEST(ApplyHead, WidthMismatchIsContractError) {
  ProxyHeads h = init_proxy_heads(8, {4, 4, 0.99}, 0);
  const Var wrong = ag::constant(Tensor(Shape{2, 7, 1, 1}, 1.0));
  EXPECT_THROW(apply_head(h, HeadGroup::OnlineProjector, wrong), ContractError);
  const Var embed_wrong = ag::constant(Tensor(Shape{2, 8, 1, 1}, 1.0));
  EXPECT_THROW(apply_head(h, HeadGroup::Predictor, embed_wrong), ContractError);
}

TEST(TargetPair, RequiresPreparedHeads) {
  ProxyHeads h = init_proxy_heads(2, {2, 2, 0.99}, 0);
  const Var f = ag::constant(Tensor(Shape{1, 2, 2, 2}, 1.0));
  EXPECT_THROW(make_target_pair(h, f, f), LifecycleError);
}

// Preparation-time gradient paths on a toy head with features coming from
// trainable leaves, so a leaked gradient would be visible.
struct ToyPrep {
  Parameter feat0{"feat/depth_only", {}, {}, true};
  Parameter feat{"feat/both", {}, {}, true};
  ProxyHeads heads;

  explicit ToyPrep(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    feat0.value = random_tensor(Shape{3, 2, 2, 2}, rng);
    feat.value = random_tensor(Shape{3, 2, 2, 2}, rng);
    heads = init_proxy_heads(2, {2, 2, 0.996}, seed);
    // Decouple g' from g so the test would notice a g' gradient.
    for (Parameter* p : heads.group_params(HeadGroup::TargetProjector)) {
      p->value = random_tensor(p->value.shape(), rng, 0.7);
    }
  }

  double loss() {
    const EmbeddingPair pair =
        make_source_pair(heads, ag::parameter(feat0), ag::parameter(feat));
    return proxy_consistency_value(pair);
  }

  void backward() {
    feat0.zero_grad();
    feat.zero_grad();
    heads.zero_grad();
    const EmbeddingPair pair =
        make_source_pair(heads, ag::parameter(feat0), ag::parameter(feat));
    ag::backward(proxy_consistency(pair));
  }
};

TEST(SourcePair, StopGradientZeroes) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ToyPrep toy(seed);
    for (Parameter& p : toy.heads.params) p.trainable = true;  // even if g' were trainable
    toy.backward();
    EXPECT_TRUE(grad_is_zero(toy.feat0.grad)) << "encoder gradient through p_s";
    EXPECT_TRUE(grad_is_zero(toy.feat.grad)) << "encoder gradient through q_s";
    for (Parameter* p : toy.heads.group_params(HeadGroup::TargetProjector)) {
      EXPECT_TRUE(grad_is_zero(p->grad)) << p->name;
    }
  }
}

TEST(SourcePair, OnlineAndPredictorGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ToyPrep toy(seed);
    toy.heads.unfreeze_online();
    toy.backward();
    for (HeadGroup g : {HeadGroup::OnlineProjector, HeadGroup::Predictor}) {
      EXPECT_TRUE(any_nonzero_grad(toy.heads.group_params(g))) << to_string(g);
      for (Parameter* p : toy.heads.group_params(g)) {
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
          const double fd =
              testing::central_difference([&] { return toy.loss(); }, p->value[i]);
          const double analytic = p->grad.empty() ? 0.0 : p->grad[i];
          EXPECT_LT(testing::relative_error(analytic, fd, 1e-7), 1e-3)
              << p->name << "[" << i << "] analytic " << analytic << " fd " << fd;
        }
      }
    }
  }
}

}  // namespace
}  // namespace proxytta
