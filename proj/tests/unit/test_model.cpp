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

#include <set>

#include <gtest/gtest.h>

#include "proxytta/errors.hpp"
#include "proxytta/model.hpp"
#include "test_util.hpp"

namespace proxytta {
namespace {

struct Inputs {
  Tensor image, sparse;
};

Inputs inputs_for(const std::vector<Sample>& samples) {
  std::vector<const Image*> ims;
  std::vector<const DepthMap*> zs;
  for (const Sample& s : samples) {
    ims.push_back(&s.image);
    zs.push_back(&s.sparse);
  }
  return {image_tensor(ims), sparse_tensor(zs)};
}

TEST(Model, SameSeedSameBytes) {
  const ModelConfig cfg;
  const ModelParams a = init_model(cfg, 3);
  const ModelParams b = init_model(cfg, 3);
  EXPECT_TRUE(a.values_equal(b));
  EXPECT_FALSE(a.values_equal(init_model(cfg, 4)));
}

TEST(Model, GroupCountsPartitionTotal) {
  for (bool bn : {true, false}) {
    ModelConfig cfg;
    cfg.use_batch_norm = bn;
    const ModelParams m = insert_adaptation_layer(init_model(cfg, 0));
    std::size_t sum = 0;
    for (const auto& [group, n] : m.group_counts()) sum += n;
    EXPECT_EQ(sum, m.total_count());
  }
}

TEST(Model, AdaptationLayerIsSmallFractionOfDefaultModel) {
  const ModelParams m = insert_adaptation_layer(init_model(ModelConfig{}, 0));
  const std::size_t adapt = m.group_counts().at(ParamGroup::AdaptationLayer);
  EXPECT_EQ(m.total_count(), 180723u);
  EXPECT_EQ(adapt, 4160u);  // 64 * 64 * 1 * 1 + 64
  EXPECT_LT(static_cast<double>(adapt) / m.total_count(), 0.05);
}

TEST(Model, OutputShapeAndPositivity) {
  ModelParams m = init_model(testing::tiny_model_config(), 1);
  const auto samples = testing::tiny_split(2, 5);
  const Inputs in = inputs_for(samples);
  const ForwardResult r = forward(m, in.image, in.sparse);
  EXPECT_EQ(r.depth->value.shape(), (Shape{2, 1, 16, 16}));
  for (double v : r.depth->value.vec()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, m.config.max_depth);
  }
}

TEST(Model, NullInputsAreOrdinaryInputs) {
  ModelParams m = init_model(testing::tiny_model_config(), 1);
  const Sample s = testing::tiny_split(1, 5)[0];
  const auto [i0, z0] = make_null_inputs(16, 16);
  EXPECT_NO_THROW(forward(m, i0, s.sparse));
  EXPECT_NO_THROW(forward(m, s.image, z0));
  EXPECT_NO_THROW(forward(m, s.image, s.sparse));
}

TEST(Model, ShapeMismatchIsContractError) {
  ModelParams m = init_model(testing::tiny_model_config(), 1);
  const Tensor image(Shape{1, 3, 16, 16});
  EXPECT_THROW(forward(m, Tensor(Shape{1, 3, 24, 24}), Tensor(Shape{1, 2, 16, 16})),
               ContractError);
  EXPECT_THROW(forward(m, image, Tensor(Shape{2, 2, 16, 16})), ContractError);
}

TEST(Model, EvalForwardIsPure) {
  ModelParams m = init_model(testing::tiny_model_config(), 2);
  const ModelParams before = m;
  const Inputs in = inputs_for(testing::tiny_split(3, 8));
  const Tensor a = forward(m, in.image, in.sparse, {Mode::Eval, true}).depth->value;
  const Tensor b = forward(m, in.image, in.sparse, {Mode::Eval, true}).depth->value;
  EXPECT_EQ(a, b);
  EXPECT_TRUE(m.values_equal(before));
}

TEST(Model, TrainForwardUpdatesOnlyBnStats) {
  ModelParams m = init_model(testing::tiny_model_config(), 2);
  const ModelParams before = m;
  const Inputs in = inputs_for(testing::tiny_split(3, 8));
  forward(m, in.image, in.sparse, {Mode::Train, true});
  EXPECT_FALSE(m.group_equal(before, ParamGroup::BnStats));
  for (ParamGroup g : {ParamGroup::ImageEncoder, ParamGroup::DepthEncoder,
                       ParamGroup::Fusion, ParamGroup::Decoder, ParamGroup::BnAffine}) {
    EXPECT_TRUE(m.group_equal(before, g)) << to_string(g);
  }
  ModelParams frozen_stats = before;
  forward(frozen_stats, in.image, in.sparse, {Mode::Train, false});
  EXPECT_TRUE(frozen_stats.values_equal(before));
}

TEST(AdaptationLayer, ZeroResidualKeepsPredictions) {
  for (int kernel : {1, 3}) {
    ModelConfig cfg = testing::tiny_model_config();
    cfg.adaptation_kernel = kernel;
    ModelParams base = init_model(cfg, 6);
    ModelParams with = insert_adaptation_layer(base);
    const Inputs in = inputs_for(testing::tiny_split(2, 9));
    const Tensor a = forward(base, in.image, in.sparse).depth->value;
    const Tensor b = forward(with, in.image, in.sparse).depth->value;
    EXPECT_EQ(a, b) << "kernel " << kernel;
    for (const Parameter& p : base.params) {
      EXPECT_EQ(p.value, with.get(p.name).value) << p.name;
    }
    EXPECT_TRUE(with.has_adaptation_layer);
  }
}

TEST(AdaptationLayer, DoubleInsertionIsContractError) {
  const ModelParams once = insert_adaptation_layer(init_model(testing::tiny_model_config(), 0));
  EXPECT_THROW(insert_adaptation_layer(once), ContractError);
}

TEST(Partition, DisjointAndExhaustive) {
  const ModelParams m = insert_adaptation_layer(init_model(testing::tiny_model_config(), 0));
  const auto names = m.names();
  for (Selector s : {Selector::AdaptationOnly, Selector::AdaptationPlusBn,
                     Selector::BnAffineOnly, Selector::All}) {
    const Partition p = partition_params(m, s);
    EXPECT_EQ(p.trainable.size() + p.frozen.size(), names.size()) << to_string(s);
    for (const auto& n : names) {
      EXPECT_NE(p.trainable.count(n), p.frozen.count(n)) << n;
    }
  }
}

TEST(Partition, SelectorsPickTheirGroups) {
  const ModelParams m = insert_adaptation_layer(init_model(testing::tiny_model_config(), 0));
  auto groups = [&](Selector s) {
    std::set<ParamGroup> out;
    for (const auto& n : partition_params(m, s).trainable) out.insert(group_of(n));
    return out;
  };
  EXPECT_EQ(groups(Selector::AdaptationOnly), (std::set{ParamGroup::AdaptationLayer}));
  EXPECT_EQ(groups(Selector::AdaptationPlusBn),
            (std::set{ParamGroup::AdaptationLayer, ParamGroup::BnAffine}));
  EXPECT_EQ(groups(Selector::BnAffineOnly), (std::set{ParamGroup::BnAffine}));
  EXPECT_EQ(groups(Selector::All).count(ParamGroup::BnStats), 0u);
  EXPECT_EQ(partition_params(m, Selector::AdaptationOnly).trainable.size(), 2u);
}

TEST(Partition, BnSelectorOnBnFreeModelIsConfigError) {
  const ModelParams m =
      insert_adaptation_layer(init_model(testing::tiny_model_config(false), 0));
  EXPECT_THROW(partition_params(m, Selector::BnAffineOnly), ConfigError);
  EXPECT_THROW(partition_params(m, Selector::AdaptationPlusBn), ConfigError);
  EXPECT_NO_THROW(partition_params(m, Selector::AdaptationOnly));
}

TEST(Partition, AdaptationSelectorNeedsLayer) {
  const ModelParams m = init_model(testing::tiny_model_config(), 0);
  EXPECT_THROW(partition_params(m, Selector::AdaptationOnly), ConfigError);
}

}  // namespace
}  // namespace proxytta
