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

#ifndef PROXYTTA_PIPELINE_HPP_
#define PROXYTTA_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "proxytta/checkpoint.hpp"
#include "proxytta/datasets.hpp"
#include "proxytta/eval_report.hpp"
#include "proxytta/losses.hpp"
#include "proxytta/model.hpp"
#include "proxytta/proxy.hpp"

namespace proxytta {

/// Hyperparameters of one stage. `epochs` is ignored by stage_adapt, which
/// always makes a single pass. `selector` is read by stage_initialize only;
/// adaptation methods fix their own parameter subset.
struct StageConfig {
  double learning_rate = 1e-3;
  int epochs = 6;
  int batch_size = 16;
  int inner_iter = 1;
  LossWeights weights;
  Selector selector = Selector::AdaptationOnly;
  std::uint64_t seed = 0;
  /// Pretraining only: probability of replacing a sample's image with I_0.
  double null_image_prob = 0.0;
  /// ProxyTTA only: let train-mode forwards fold target batch statistics into
  /// the BN running estimates (affine terms are trained either way).
  bool update_bn_stats = true;

  void validate(const std::string& stage) const;
};

/// Observer for the adaptation loop; every callback is optional.
struct AdaptHooks {
  std::function<void(int batch, const ModelParams&)> on_score;
  std::function<void(int batch, const ModelParams&)> on_update;
  std::function<void(const std::string&)> on_event;
};

struct StageResult {
  std::vector<LossRow> losses;
  std::vector<std::string> events;
  long long steps = 0;
};

struct PretrainResult : StageResult {
  ModelParams params;
  OptimizerState optimizer;
  int epochs_done = 0;
};

/// Resumable pretraining state, as stored in a checkpoint.
struct PretrainResume {
  ModelParams params;
  OptimizerState optimizer;
  int epochs_done = 0;
  long long steps = 0;
};

/// Supervised L1 training of every learnable parameter on source samples.
/// Runs epochs [resume.epochs_done, stop_after_epoch) (all epochs when
/// stop_after_epoch < 0). Throws TrainingError naming the step on NaN loss.
PretrainResult pretrain_backbone(const std::vector<Sample>& source,
                                 const ModelConfig& model_config,
                                 const StageConfig& config,
                                 const std::optional<PretrainResume>& resume = {},
                                 int stop_after_epoch = -1);

struct InitResult : StageResult {
  ModelParams params;
  double source_loss_before = 0.0;
  double source_loss_after = 0.0;
};

/// Trains only the adaptation layer on the supervised source loss, with
/// every other layer in eval mode. Keeps the epoch with the lowest source
/// loss, the untouched starting point included.
InitResult stage_initialize(const ModelParams& params,
                            const std::vector<Sample>& source,
                            const StageConfig& config);

struct PrepareResult : StageResult {
  ProxyHeads heads;
};

/// Trains g and h on the source cosine objective with EMA updates of g'.
/// The model is only read; the returned heads are frozen and prepared.
PrepareResult stage_prepare(const ModelParams& params, const ProxyHeads& heads,
                            const std::vector<Sample>& source,
                            const StageConfig& config);

/// Mean preparation loss of `heads` on a sample set (eval mode, no update).
double preparation_loss(const ModelParams& params, const ProxyHeads& heads,
                        const std::vector<Sample>& samples);

enum class AdaptMethod { ProxyTTA, ProxyTTAFast };
const char* to_string(AdaptMethod m);
AdaptMethod parse_adapt_method(const std::string& s);

struct AdaptResult : StageResult {
  ModelParams params;
  /// Adaptation-time metrics: each batch scored before its own update.
  MetricsRecord metrics;
  std::vector<MetricsRecord> batch_metrics;
  int skipped_batches = 0;
  /// Full parameter sets held in memory during adaptation.
  int parameter_sets = 1;
};

/// Single-pass online adaptation. Per batch: score in eval mode, then take
/// inner_iter steps on the weighted adaptation loss. ProxyTTA trains the
/// adaptation layer and BN affine terms with train-mode BN (running stats
/// follow the target); ProxyTTA-fast trains the adaptation layer alone in
/// eval mode. Batches without sparse points are scored but not adapted on.
AdaptResult stage_adapt(const ModelParams& params, const ProxyHeads& heads,
                        SampleStream& stream, const StageConfig& config,
                        AdaptMethod method, DepthRange range,
                        const AdaptHooks& hooks = {});

enum class BnVariant { StatsOnly, AffineWithLosses };
const char* to_string(BnVariant v);
BnVariant parse_bn_variant(const std::string& s);

AdaptResult baseline_bn_adapt(const ModelParams& params, SampleStream& stream,
                              const StageConfig& config, BnVariant variant,
                              DepthRange range, const AdaptHooks& hooks = {});

struct CottaConfig {
  double consistency_weight = 1.0;
  double teacher_tau = 0.999;
};

/// Student-teacher adaptation: the student trains every learnable parameter
/// on w_z l_z + w_sm l_sm + w_c mean|student - teacher|; the teacher follows
/// the student by EMA.
AdaptResult baseline_cotta(const ModelParams& params, SampleStream& stream,
                           const StageConfig& config, const CottaConfig& cotta,
                           DepthRange range, const AdaptHooks& hooks = {});

/// Streams the target through the frozen model and scores every batch.
AdaptResult no_adapt(const ModelParams& params, SampleStream& stream,
                     DepthRange range, const AdaptHooks& hooks = {});

// ---------------------------------------------------------------------------
// Run directories.

struct RunArtifacts {
  std::filesystem::path dir;
  std::filesystem::path checkpoint;
  std::filesystem::path losses;
  std::filesystem::path metrics;
  std::filesystem::path config;
  std::filesystem::path events;

  static RunArtifacts at(const std::filesystem::path& dir);
  void append_event(const std::string& line) const;
};

/// $PROXYTTA_RUNS_DIR when set, otherwise "runs".
std::filesystem::path runs_root();

}  // namespace proxytta

#endif  // PROXYTTA_PIPELINE_HPP_
