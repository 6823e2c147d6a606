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

// Finite-difference oracle for the adaptation losses and the full network,
// plus the gradient-path zero claims at model level.

#include <random>

#include <gtest/gtest.h>

#include "proxytta/losses.hpp"
#include "proxytta/model.hpp"
#include "proxytta/proxy.hpp"
#include "test_util.hpp"

namespace proxytta {
namespace {

constexpr int kSeeds = 5;
constexpr int kProbes = 20;
constexpr double kStep = 1e-4;
constexpr double kRelTol = 1e-3;

struct Fixture {
  ModelParams model;
  ProxyHeads heads;
  std::vector<Sample> batch;
  Tensor image, sparse, gt, null_image;
  Tensor p_const;  // p_t for this batch, computed once

  explicit Fixture(std::uint64_t seed) {
    model = insert_adaptation_layer(init_model(testing::tiny_model_config(), seed));
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<double> n(0.0, 0.05);
    for (const char* k : {"adaptation_layer/conv.weight", "adaptation_layer/conv.bias"}) {
      for (double& v : model.get(k).value.vec()) v = n(rng);
    }
    heads = init_proxy_heads(model.config.fusion_width, {6, 6, 0.99}, seed);
    heads.prepared = true;
    batch = testing::tiny_split(3, seed + 7, "strong");
    std::vector<const Image*> ims;
    std::vector<const DepthMap*> zs, gts;
    for (const Sample& s : batch) {
      ims.push_back(&s.image);
      zs.push_back(&s.sparse);
      gts.push_back(&s.gt);
    }
    image = image_tensor(ims);
    sparse = sparse_tensor(zs);
    gt = sparse_tensor(gts);
    const auto [i0, z0] = make_null_inputs(16, 16);
    null_image = image_tensor(std::vector<const Image*>(batch.size(), &i0));
    ProxyHeads frozen = heads;
    const Var f0 = forward(model, null_image, sparse, {Mode::Eval, false}).taps.fused_feat;
    const Var f = forward(model, image, sparse, {Mode::Eval, false}).taps.fused_feat;
    p_const = make_target_pair(frozen, f0, f).p->value;
    model.set_trainable(partition_params(model, Selector::All).trainable);
  }

  ForwardResult run() {
    return forward(model, image, sparse, {Mode::Train, false});
  }

  EmbeddingPair pair(const ForwardResult& fr) {
    EmbeddingPair pr = make_target_pair(heads, fr.taps.fused_feat, fr.taps.fused_feat);
    pr.p = ag::constant(p_const);
    return pr;
  }

  Var loss(const std::string& which) {
    const ForwardResult fr = run();
    if (which == "l_z") return sparse_consistency(fr.depth, sparse);
    if (which == "l_sm") return local_smoothness(fr.depth, image);
    if (which == "l_proxy") return proxy_consistency(pair(fr));
    if (which == "l_adapt") {
      return adapt_loss(fr.depth, sparse, image, pair(fr), {1.0, 2.0, 0.7}).graph;
    }
    return supervised_loss(fr.depth, gt);
  }
};

struct Probe {
  Parameter* param;
  std::size_t index;
};

std::vector<Probe> random_probes(ModelParams& model, std::uint64_t seed, int count) {
  std::vector<Probe> all;
  for (Parameter& p : model.params) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.numel(); ++i) all.push_back({&p, i});
  }
  std::mt19937_64 rng(seed * 31 + 5);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min<std::size_t>(count, all.size()));
  return all;
}

class GradientOracle : public ::testing::TestWithParam<const char*> {};

TEST_P(GradientOracle, MatchesCentralDifferences) {
  const std::string which = GetParam();
  int checked = 0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    Fixture fx(seed);
    fx.model.zero_grad();
    ag::backward(fx.loss(which));
    for (const Probe& pr : random_probes(fx.model, seed, kProbes)) {
      const double analytic = pr.param->grad.empty() ? 0.0 : pr.param->grad[pr.index];
      const double fd = testing::central_difference(
          [&] { return fx.loss(which)->value[0]; }, pr.param->value[pr.index], kStep);
      EXPECT_LT(testing::relative_error(analytic, fd, 1e-6), kRelTol)
          << which << " seed " << seed << " " << pr.param->name << "[" << pr.index
          << "] analytic " << analytic << " fd " << fd;
      ++checked;
    }
  }
  EXPECT_EQ(checked, kSeeds * kProbes);
}

INSTANTIATE_TEST_SUITE_P(Losses, GradientOracle,
                         ::testing::Values("l_z", "l_sm", "l_proxy", "l_adapt",
                                           "supervised"),
                         [](const auto& info) { return std::string(info.param); });

TEST(GradientPaths, ProxyLossReachesAdaptationLayer) {
  Fixture fx(0);
  fx.model.set_trainable(partition_params(fx.model, Selector::AdaptationOnly).trainable);
  fx.model.zero_grad();
  ag::backward(fx.loss("l_proxy"));
  const Parameter& w = fx.model.get("adaptation_layer/conv.weight");
  double norm = 0.0;
  for (double g : w.grad.vec()) norm += g * g;
  EXPECT_GT(norm, 0.0);
  for (std::size_t i = 0; i < 5; ++i) {
    Parameter& mw = fx.model.get("adaptation_layer/conv.weight");
    const double fd = testing::central_difference(
        [&] { return fx.loss("l_proxy")->value[0]; }, mw.value[i], kStep);
    EXPECT_LT(testing::relative_error(mw.grad[i], fd, 1e-6), kRelTol);
  }
}

TEST(GradientPaths, TargetPairLeavesHeadsWithoutGradient) {
  Fixture fx(1);
  ProxyHeads heads = fx.heads;
  for (Parameter& p : heads.params) p.trainable = true;  // make_target_pair must freeze
  const ForwardResult fr = fx.run();
  const Var f0 =
      forward(fx.model, fx.null_image, fx.sparse, {Mode::Train, false}).taps.fused_feat;
  const EmbeddingPair pair = make_target_pair(heads, f0, fr.taps.fused_feat);
  ag::backward(adapt_loss(fr.depth, fx.sparse, fx.image, pair, {1, 1, 1}).graph);
  for (const Parameter& p : heads.params) {
    EXPECT_FALSE(p.trainable) << p.name;
    for (double g : p.grad.vec()) ASSERT_EQ(g, 0.0) << p.name;
  }
}

TEST(GradientPaths, TargetProxyBranchContributesNothing) {
  // Gradients with p_t computed through a live depth-only forward must equal
  // gradients with p_t replaced by a constant of the same value.
  Fixture fx(2);
  auto grads = [&](bool live_p) {
    fx.model.zero_grad();
    ProxyHeads heads = fx.heads;
    const ForwardResult fr = fx.run();
    Var f0 = live_p ? forward(fx.model, fx.null_image, fx.sparse, {Mode::Train, false})
                          .taps.fused_feat
                    : nullptr;
    EmbeddingPair pair;
    if (live_p) {
      pair = make_target_pair(heads, f0, fr.taps.fused_feat);
    } else {
      pair = make_target_pair(heads, fr.taps.fused_feat, fr.taps.fused_feat);
      pair.p = ag::constant(
          make_target_pair(heads,
                           forward(fx.model, fx.null_image, fx.sparse, {Mode::Train, false})
                               .taps.fused_feat,
                           fr.taps.fused_feat)
              .p->value);
    }
    ag::backward(proxy_consistency(pair));
    std::vector<Tensor> out;
    for (const Parameter& p : fx.model.params) out.push_back(p.grad);
    return out;
  };
  const auto live = grads(true);
  const auto constant = grads(false);
  ASSERT_EQ(live.size(), constant.size());
  for (std::size_t i = 0; i < live.size(); ++i) {
    EXPECT_EQ(live[i], constant[i]) << fx.model.params[i].name;
  }
}

TEST(GradientPaths, SourcePairGivesEncoderNoGradient) {
  Fixture fx(3);
  ProxyHeads heads = fx.heads;
  heads.prepared = false;
  heads.unfreeze_online();
  fx.model.zero_grad();
  const Var f0 =
      forward(fx.model, fx.null_image, fx.sparse, {Mode::Train, false}).taps.fused_feat;
  const Var f = forward(fx.model, fx.image, fx.sparse, {Mode::Train, false}).taps.fused_feat;
  ag::backward(proxy_consistency(make_source_pair(heads, f0, f)));
  for (const Parameter& p : fx.model.params) {
    for (double g : p.grad.vec()) ASSERT_EQ(g, 0.0) << p.name;
  }
  for (Parameter* p : heads.group_params(HeadGroup::TargetProjector)) {
    for (double g : p->grad.vec()) ASSERT_EQ(g, 0.0) << p->name;
  }
  bool online_moved = false;
  for (Parameter* p : heads.group_params(HeadGroup::OnlineProjector)) {
    for (double g : p->grad.vec()) online_moved |= g != 0.0;
  }
  EXPECT_TRUE(online_moved);
}

}  // namespace
}  // namespace proxytta
