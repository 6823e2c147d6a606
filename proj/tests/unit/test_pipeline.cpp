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
#include <cstdlib>
#include <limits>
#include <map>

#include <gtest/gtest.h>

#include "proxytta/checkpoint.hpp"
#include "proxytta/errors.hpp"
#include "proxytta/pipeline.hpp"
#include "test_util.hpp"

namespace proxytta {
namespace {

StageConfig quick(double lr, int epochs, int bs = 8) {
  StageConfig c;
  c.learning_rate = lr;
  c.epochs = epochs;
  c.batch_size = bs;
  return c;
}

const std::vector<Sample>& source_split() {
  static const auto s = testing::tiny_split(48, 101);
  return s;
}

const std::vector<Sample>& target_split() {
  static const auto s = testing::tiny_split(24, 202, "strong");
  return s;
}

// Pretrained, initialized and prepared tiny models, built once per binary.
struct Trained {
  ModelParams pretrained;
  ModelParams initialized;
  ProxyHeads heads;
};

const Trained& trained(bool bn = true) {
  static std::map<bool, Trained> cache;
  auto it = cache.find(bn);
  if (it != cache.end()) return it->second;
  Trained t;
  StageConfig pre = quick(3e-3, 6);
  pre.null_image_prob = 0.5;
  t.pretrained = pretrain_backbone(source_split(), testing::tiny_model_config(bn), pre).params;
  t.initialized = stage_initialize(insert_adaptation_layer(t.pretrained), source_split(),
                                   quick(1e-3, 2))
                      .params;
  const ProxyHeads fresh = init_proxy_heads(t.initialized.config.fusion_width, {8, 8, 0.996}, 0);
  t.heads = stage_prepare(t.initialized, fresh, source_split(), quick(1e-3, 16, 16)).heads;
  return cache.emplace(bn, std::move(t)).first->second;
}

double source_mae(const ModelParams& m) {
  return evaluate(m, source_split(), InputMode::Both, kOutdoorRange).mae_mm;
}

TEST(Pretrain, ReducesSourceError) {
  const ModelParams fresh = init_model(testing::tiny_model_config(), 0);
  EXPECT_LT(source_mae(trained().pretrained), source_mae(fresh));
}

TEST(Pretrain, NonFiniteLossNamesStep) {
  auto bad = testing::tiny_split(8, 3);
  bad[5].image.data[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    pretrain_backbone(bad, testing::tiny_model_config(), quick(1e-3, 1, 4));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Pretrain, ResumeFromCheckpointReproducesNextLoss) {
  const auto data = testing::tiny_split(16, 4);
  const StageConfig cfg = quick(2e-3, 2);
  const ModelConfig mc = testing::tiny_model_config();
  const auto dir = testing::temp_dir("resume");

  auto resumed_losses = [&] {
    const PretrainResult first = pretrain_backbone(data, mc, cfg, std::nullopt, 1);
    save_checkpoint(dir / "state.bin", {first.params, std::nullopt, first.optimizer, {}});
    const Checkpoint ck = load_checkpoint(dir / "state.bin");
    const PretrainResume r{ck.model, *ck.optimizer, first.epochs_done, first.steps};
    return pretrain_backbone(data, mc, cfg, r).losses;
  };
  const auto a = resumed_losses();
  const auto b = resumed_losses();
  ASSERT_EQ(a.size(), b.size());
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a.front().step, 3);  // 16 samples, batch 8: two steps per epoch
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].total, b[i].total);

  // Against the uninterrupted run only float32 storage separates the two.
  const PretrainResult full = pretrain_backbone(data, mc, cfg);
  EXPECT_NEAR(a.front().total, full.losses[2].total, 1e-4 * std::abs(full.losses[2].total));
  std::filesystem::remove_all(dir);
}

TEST(Initialize, OnlyAdaptationLayerMovesAndLossDoesNotRise) {
  const ModelParams with = insert_adaptation_layer(trained().pretrained);
  const InitResult r = stage_initialize(with, source_split(), quick(1e-3, 2));
  EXPECT_LE(r.source_loss_after, r.source_loss_before);
  for (ParamGroup g : {ParamGroup::ImageEncoder, ParamGroup::DepthEncoder, ParamGroup::Fusion,
                       ParamGroup::Decoder, ParamGroup::BnAffine, ParamGroup::BnStats}) {
    EXPECT_TRUE(r.params.group_equal(with, g)) << to_string(g);
  }
  EXPECT_LE(source_mae(r.params), source_mae(with) + 1e-9);
}

TEST(Initialize, SelectorAndLifecycleChecks) {
  StageConfig bad = quick(1e-3, 1);
  bad.selector = Selector::All;
  const ModelParams with = insert_adaptation_layer(trained().pretrained);
  EXPECT_THROW(stage_initialize(with, source_split(), bad), ConfigError);
  EXPECT_THROW(stage_initialize(trained().pretrained, source_split(), quick(1e-3, 1)),
               LifecycleError);
}

TEST(Prepare, ModelUntouchedHeadsPreparedAndFrozen) {
  const Trained& t = trained();
  const ModelParams before = t.initialized;
  const ProxyHeads fresh = init_proxy_heads(before.config.fusion_width, {8, 8, 0.996}, 1);
  const PrepareResult r = stage_prepare(t.initialized, fresh, source_split(), quick(1e-3, 1, 16));
  EXPECT_TRUE(t.initialized.values_equal(before));
  EXPECT_TRUE(r.heads.prepared);
  for (const Parameter& p : r.heads.params) EXPECT_FALSE(p.trainable) << p.name;
  EXPECT_FALSE(r.heads.group_equal(fresh, HeadGroup::TargetProjector));
}

TEST(Prepare, FiftyStepsOnFixedBatchAtLeastHalveLoss) {
  const Trained& t = trained();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto batch = testing::tiny_split(16, 500 + seed);
    const ProxyHeads fresh =
        init_proxy_heads(t.initialized.config.fusion_width, {8, 8, 0.996}, seed);
    StageConfig cfg = quick(1e-3, 50, 16);
    cfg.seed = seed;
    const PrepareResult r = stage_prepare(t.initialized, fresh, batch, cfg);
    const double before = preparation_loss(t.initialized, fresh, batch);
    const double after = preparation_loss(t.initialized, r.heads, batch);
    EXPECT_LE(after, 0.5 * before) << "seed " << seed << " before " << before << " after " << after;
  }
}

TEST(Prepare, HeldOutLossAtLeastHalves) {
  const Trained& t = trained();
  const auto held_out = testing::tiny_split(16, 909);
  const ProxyHeads fresh = init_proxy_heads(t.initialized.config.fusion_width, {8, 8, 0.996}, 0);
  const double before = preparation_loss(t.initialized, fresh, held_out);
  const double after = preparation_loss(t.initialized, t.heads, held_out);
  EXPECT_LE(after, 0.5 * before) << "before " << before << " after " << after;
}

TEST(Prepare, HeadWidthMismatchIsContractError) {
  const ProxyHeads wrong = init_proxy_heads(5, {8, 8, 0.996}, 0);
  EXPECT_THROW(stage_prepare(trained().initialized, wrong, source_split(), quick(1e-3, 1)),
               ContractError);
}

AdaptResult adapt(AdaptMethod method, const StageConfig& cfg, bool bn = true,
                  const AdaptHooks& hooks = {}) {
  SampleStream stream = SampleStream::from_samples(target_split(), cfg.batch_size);
  return stage_adapt(trained(bn).initialized, trained(bn).heads, stream, cfg, method,
                     kOutdoorRange, hooks);
}

StageConfig adapt_config(double lr = 2e-3) {
  StageConfig c = quick(lr, 1, 8);
  c.weights = {1.0, 1.0, 1.0};
  return c;
}

TEST(Adapt, FastVariantTouchesOnlyAdaptationLayer) {
  const AdaptResult r = adapt(AdaptMethod::ProxyTTAFast, adapt_config());
  const ModelParams& before = trained().initialized;
  for (const Parameter& p : before.params) {
    if (group_of(p.name) == ParamGroup::AdaptationLayer) continue;
    EXPECT_EQ(p.value, r.params.get(p.name).value) << p.name;
  }
  EXPECT_FALSE(r.params.group_equal(before, ParamGroup::AdaptationLayer));
  EXPECT_EQ(r.parameter_sets, 1);
}

TEST(Adapt, FullVariantTouchesAdaptationAndBatchNorm) {
  const AdaptResult r = adapt(AdaptMethod::ProxyTTA, adapt_config());
  const ModelParams& before = trained().initialized;
  for (ParamGroup g : {ParamGroup::ImageEncoder, ParamGroup::DepthEncoder,
                       ParamGroup::Fusion, ParamGroup::Decoder}) {
    EXPECT_TRUE(r.params.group_equal(before, g)) << to_string(g);
  }
  EXPECT_FALSE(r.params.group_equal(before, ParamGroup::BnAffine));
  EXPECT_FALSE(r.params.group_equal(before, ParamGroup::AdaptationLayer));
}

TEST(Adapt, RunningStatsFollowTargetUnlessDisabled) {
  const ModelParams& before = trained().initialized;
  EXPECT_FALSE(adapt(AdaptMethod::ProxyTTA, adapt_config())
                   .params.group_equal(before, ParamGroup::BnStats));
  StageConfig frozen_stats = adapt_config();
  frozen_stats.update_bn_stats = false;
  const AdaptResult r = adapt(AdaptMethod::ProxyTTA, frozen_stats);
  EXPECT_TRUE(r.params.group_equal(before, ParamGroup::BnStats));
  EXPECT_FALSE(r.params.group_equal(before, ParamGroup::BnAffine));
}

TEST(Adapt, FullVariantOnBnFreeModelFallsBack) {
  const AdaptResult r = adapt(AdaptMethod::ProxyTTA, adapt_config(), false);
  bool noted = false;
  for (const auto& e : r.events) noted |= e.find("without BN") != std::string::npos;
  EXPECT_TRUE(noted);
}

TEST(Adapt, ZeroLearningRateEqualsNoAdapt) {
  const AdaptResult r = adapt(AdaptMethod::ProxyTTAFast, adapt_config(0.0));
  EXPECT_TRUE(r.params.values_equal(trained().initialized));
  SampleStream stream = SampleStream::from_samples(target_split(), 8);
  const AdaptResult base = no_adapt(trained().initialized, stream, kOutdoorRange);
  EXPECT_EQ(r.metrics.mae_mm, base.metrics.mae_mm);
  EXPECT_EQ(r.metrics.rmse_mm, base.metrics.rmse_mm);
}

TEST(Adapt, AllZeroWeightsRejected) {
  StageConfig c = adapt_config();
  c.weights = {0.0, 0.0, 0.0};
  EXPECT_THROW(adapt(AdaptMethod::ProxyTTAFast, c), ConfigError);
}

TEST(Adapt, ProxyWeightNeedsPreparedHeads) {
  ProxyHeads unprepared = trained().heads;
  unprepared.prepared = false;
  SampleStream stream = SampleStream::from_samples(target_split(), 8);
  EXPECT_THROW(stage_adapt(trained().initialized, unprepared, stream, adapt_config(),
                           AdaptMethod::ProxyTTAFast, kOutdoorRange),
               LifecycleError);
}

TEST(Adapt, ScoresBeforeUpdatingEachBatchOnce) {
  std::vector<std::string> trace;
  std::vector<ModelParams> scored;
  AdaptHooks hooks;
  hooks.on_score = [&](int b, const ModelParams& m) {
    trace.push_back("score " + std::to_string(b));
    scored.push_back(m);
  };
  hooks.on_update = [&](int b, const ModelParams&) {
    trace.push_back("update " + std::to_string(b));
  };
  const AdaptResult r = adapt(AdaptMethod::ProxyTTAFast, adapt_config(), true, hooks);
  const std::vector<std::string> expected{"score 0", "update 0", "score 1",
                                          "update 1", "score 2", "update 2"};
  EXPECT_EQ(trace, expected);
  ASSERT_EQ(scored.size(), 3u);
  EXPECT_TRUE(scored[0].values_equal(trained().initialized));  // untouched at first score
  EXPECT_EQ(r.batch_metrics.size(), 3u);
}

TEST(Adapt, EmptySupportBatchSkippedWithWarning) {
  auto target = testing::tiny_split(8, 5, "strong");
  for (Sample& s : target) s.sparse = DepthMap(16, 16);
  SampleStream stream = SampleStream::from_samples(target, 4);
  const AdaptResult r = stage_adapt(trained().initialized, trained().heads, stream,
                                    adapt_config(), AdaptMethod::ProxyTTAFast, kOutdoorRange);
  EXPECT_EQ(r.skipped_batches, 2);
  EXPECT_TRUE(r.params.values_equal(trained().initialized));
  ASSERT_FALSE(r.events.empty());
  EXPECT_NE(r.events.front().find("warning"), std::string::npos);
  EXPECT_EQ(r.batch_metrics.size(), 2u);
}

TEST(BnAdapt, StatsOnlyChangesOnlyRunningStats) {
  SampleStream stream = SampleStream::from_samples(target_split(), 8);
  const ModelParams& before = trained().pretrained;
  const AdaptResult r =
      baseline_bn_adapt(before, stream, adapt_config(), BnVariant::StatsOnly, kOutdoorRange);
  EXPECT_FALSE(r.params.group_equal(before, ParamGroup::BnStats));
  for (const Parameter& p : before.params) {
    if (group_of(p.name) == ParamGroup::BnStats) continue;
    EXPECT_EQ(p.value, r.params.get(p.name).value) << p.name;
  }
}

TEST(BnAdapt, AffineVariantChangesOnlyBatchNorm) {
  SampleStream stream = SampleStream::from_samples(target_split(), 8);
  const ModelParams& before = trained().pretrained;
  const AdaptResult r = baseline_bn_adapt(before, stream, adapt_config(),
                                          BnVariant::AffineWithLosses, kOutdoorRange);
  EXPECT_FALSE(r.params.group_equal(before, ParamGroup::BnAffine));
  for (const Parameter& p : before.params) {
    const ParamGroup g = group_of(p.name);
    if (g == ParamGroup::BnStats || g == ParamGroup::BnAffine) continue;
    EXPECT_EQ(p.value, r.params.get(p.name).value) << p.name;
  }
}

TEST(BnAdapt, BnFreeModelIsConfigError) {
  SampleStream stream = SampleStream::from_samples(target_split(), 8);
  EXPECT_THROW(baseline_bn_adapt(trained(false).pretrained, stream, adapt_config(),
                                 BnVariant::StatsOnly, kOutdoorRange),
               ConfigError);
}

TEST(BnAdapt, NoShiftStatsOnlyCloseToNoAdapt) {
  const auto same = testing::tiny_split(48, 101);  // the source split itself
  SampleStream a = SampleStream::from_samples(same, 16);
  SampleStream b = SampleStream::from_samples(same, 16);
  const double base = no_adapt(trained().pretrained, a, kOutdoorRange).metrics.mae_mm;
  const double bn = baseline_bn_adapt(trained().pretrained, b, adapt_config(),
                                      BnVariant::StatsOnly, kOutdoorRange)
                        .metrics.mae_mm;
  EXPECT_LT(std::abs(bn - base) / base, 0.02) << "no_adapt " << base << " bn " << bn;
}

double drift(const ModelParams& a, const ModelParams& b) {
  const auto& data = target_split();
  std::vector<const Sample*> ptrs;
  for (const Sample& s : data) ptrs.push_back(&s);
  ModelParams ma = a, mb = b;
  const auto pa = predict(ma, ptrs);
  const auto pb = predict(mb, ptrs);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t k = 0; k < pa[i].size(); ++k, ++n) {
      sum += std::abs(pa[i].data[k] - pb[i].data[k]);
    }
  }
  return sum / n;
}

TEST(Cotta, HoldsTwoParameterSets) {
  SampleStream stream = SampleStream::from_samples(target_split(), 8);
  const AdaptResult r = baseline_cotta(trained().pretrained, stream, adapt_config(),
                                       CottaConfig{}, kOutdoorRange);
  EXPECT_EQ(r.parameter_sets, 2);
}

TEST(Cotta, StrongConsistencyKeepsStudentNearFrozenTeacher) {
  auto run = [&](double wc) {
    SampleStream stream = SampleStream::from_samples(target_split(), 8);
    return baseline_cotta(trained().pretrained, stream, adapt_config(1e-3),
                          CottaConfig{wc, 1.0}, kOutdoorRange)
        .params;
  };
  const double free_drift = drift(run(0.0), trained().pretrained);
  const double anchored = drift(run(1e6), trained().pretrained);
  EXPECT_GT(free_drift, 0.0);
  EXPECT_LT(anchored, free_drift) << "anchored " << anchored << " free " << free_drift;
}

TEST(RunArtifacts, LayoutAndRoot) {
  const RunArtifacts r = RunArtifacts::at("runs/x");
  EXPECT_EQ(r.checkpoint.filename(), "checkpoint.bin");
  EXPECT_EQ(r.losses.filename(), "losses.csv");
  EXPECT_EQ(r.metrics.filename(), "metrics.csv");
  EXPECT_EQ(r.config.filename(), "config.json");
  EXPECT_EQ(r.events.filename(), "events.log");
  ::setenv("PROXYTTA_RUNS_DIR", "/tmp/elsewhere", 1);
  EXPECT_EQ(runs_root(), std::filesystem::path("/tmp/elsewhere"));
  ::unsetenv("PROXYTTA_RUNS_DIR");
  EXPECT_EQ(runs_root(), std::filesystem::path("runs"));
}

}  // namespace
}  // namespace proxytta
