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

#include "proxytta/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>

#include "proxytta/errors.hpp"
#include "proxytta/optim.hpp"

namespace proxytta {

void StageConfig::validate(const std::string& stage) const {
  const std::string where = "stage." + stage + ": ";
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError(where + "learning_rate must be a finite value >= 0");
  }
  if (epochs < 0) throw ConfigError(where + "epochs must be >= 0");
  if (batch_size < 1) throw ConfigError(where + "batch_size must be >= 1");
  if (inner_iter < 1) throw ConfigError(where + "inner_iter must be >= 1");
  if (!(null_image_prob >= 0.0 && null_image_prob <= 1.0)) {
    throw ConfigError(where + "null_image_prob must lie in [0, 1]");
  }
  try {
    weights.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  }
}

namespace {

struct BatchTensors {
  Tensor image;
  Tensor sparse;
  Tensor gt;
};

BatchTensors to_tensors(const std::vector<const Sample*>& samples,
                        const Image* null_image = nullptr) {
  std::vector<const Image*> images;
  std::vector<const DepthMap*> sparse, gt;
  for (const Sample* s : samples) {
    images.push_back(null_image ? null_image : &s->image);
    sparse.push_back(&s->sparse);
    gt.push_back(&s->gt);
  }
  return {image_tensor(images), sparse_tensor(sparse), sparse_tensor(gt)};
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

void check_finite(double loss, long long step, const char* stage) {
  if (!std::isfinite(loss)) {
    throw TrainingError(std::string(stage) + ": loss is not finite at step " +
                        std::to_string(step));
  }
}

// Pooled L1 over all valid gt pixels of a dataset, eval mode.
double source_l1(ModelParams& model, const std::vector<Sample>& source,
                 int batch_size) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < source.size(); b += batch_size) {
    std::vector<const Sample*> batch;
    for (std::size_t i = b; i < std::min(source.size(), b + batch_size); ++i) {
      batch.push_back(&source[i]);
    }
    const BatchTensors t = to_tensors(batch);
    const Var pred = forward(model, t.image, t.sparse, {Mode::Eval, false}).depth;
    for (int i = 0; i < t.gt.n(); ++i) {
      const auto d = t.gt.plane(i, 0);
      const auto m = t.gt.plane(i, 1);
      const auto p = pred->value.plane(i, 0);
      for (std::size_t k = 0; k < d.size(); ++k) {
        if (m[k] > 0.5) {
          sum += std::abs(p[k] - d[k]);
          ++count;
        }
      }
    }
  }
  if (count == 0) throw EmptySupportError("source set has no valid gt pixels");
  return sum / count;
}

std::vector<Parameter*> trainable(ModelParams& model) {
  return trainable_params(model.params);
}

}  // namespace

// ---------------------------------------------------------------------------

PretrainResult pretrain_backbone(const std::vector<Sample>& source,
                                 const ModelConfig& model_config,
                                 const StageConfig& config,
                                 const std::optional<PretrainResume>& resume,
                                 int stop_after_epoch) {
  config.validate("pretrain");
  model_config.validate();
  if (source.empty()) throw EmptySupportError("pretrain: empty source dataset");

  PretrainResult result;
  result.params = resume ? resume->params : init_model(model_config, config.seed);
  if (!(result.params.config == model_config)) {
    throw ConfigError("pretrain: resume checkpoint has a different model config");
  }
  ModelParams& model = result.params;
  model.set_trainable(partition_params(model, Selector::All).trainable);
  Adam adam(config.learning_rate);
  if (resume) restore(adam, resume->optimizer);
  adam.set_lr(config.learning_rate);

  long long step = resume ? resume->steps : 0;
  const int first = resume ? resume->epochs_done : 0;
  const int last = stop_after_epoch < 0 ? config.epochs
                                        : std::min(config.epochs, stop_after_epoch);
  const auto [null_image, null_depth] =
      make_null_inputs(model_config.height, model_config.width);
  const bool bn = model_config.use_batch_norm;

  for (int epoch = first; epoch < last; ++epoch) {
    const std::uint64_t epoch_seed = config.seed * 0x9E3779B97F4A7C15ULL + epoch + 1;
    const auto order = shuffled(source.size(), epoch_seed);
    std::mt19937_64 drop_rng(epoch_seed ^ 0xC0FFEEULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t e = std::min(order.size(), b + config.batch_size);
      if (bn && e - b < 2) {
        result.events.push_back("pretrain: dropped a trailing batch of one sample");
        continue;
      }
      std::vector<const Sample*> batch;
      std::vector<const Image*> images;
      std::vector<const DepthMap*> sparse, gt;
      for (std::size_t i = b; i < e; ++i) {
        const Sample& s = source[order[i]];
        const bool drop = config.null_image_prob > 0.0 &&
                          unit(drop_rng) < config.null_image_prob;
        images.push_back(drop ? &null_image : &s.image);
        sparse.push_back(&s.sparse);
        gt.push_back(&s.gt);
      }
      const Var pred = forward(model, image_tensor(images), sparse_tensor(sparse),
                               {Mode::Train, true}).depth;
      const Var loss = supervised_loss(pred, sparse_tensor(gt));
      ++step;
      check_finite(loss->value[0], step, "pretrain");
      model.zero_grad();
      ag::backward(loss);
      adam.step(trainable(model));
      LossRow row;
      row.step = step;
      row.total = loss->value[0];
      for (const DepthMap* g : gt) row.valid_points += g->valid_count();
      result.losses.push_back(row);
    }
    result.epochs_done = epoch + 1;
  }
  if (result.epochs_done < first) result.epochs_done = first;
  result.steps = step;
  result.optimizer = capture(adam);
  model.freeze_all();
  return result;
}

InitResult stage_initialize(const ModelParams& params,
                            const std::vector<Sample>& source,
                            const StageConfig& config) {
  config.validate("init");
  if (config.selector != Selector::AdaptationOnly) {
    throw ConfigError(std::string("stage.init: selector must be adaptation_only, got ") +
                      to_string(config.selector));
  }
  if (!params.has_adaptation_layer) {
    throw LifecycleError("stage_initialize: the adaptation layer is not inserted");
  }
  if (source.empty()) throw EmptySupportError("init: empty source dataset");

  InitResult result;
  ModelParams model = params;
  model.set_trainable(partition_params(model, Selector::AdaptationOnly).trainable);
  Adam adam(config.learning_rate);
  const ForwardOptions eval{Mode::Eval, false};

  result.source_loss_before = source_l1(model, source, config.batch_size);
  double best = result.source_loss_before;
  ModelParams best_params = model;
  long long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled(source.size(), config.seed * 31 + epoch + 7);
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      std::vector<const Sample*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        batch.push_back(&source[order[i]]);
      }
      const BatchTensors t = to_tensors(batch);
      const Var pred = forward(model, t.image, t.sparse, eval).depth;
      const Var loss = supervised_loss(pred, t.gt);
      ++step;
      check_finite(loss->value[0], step, "init");
      model.zero_grad();
      ag::backward(loss);
      adam.step(trainable(model));
      LossRow row;
      row.step = step;
      row.total = loss->value[0];
      result.losses.push_back(row);
    }
    const double now = source_l1(model, source, config.batch_size);
    if (now < best) {
      best = now;
      best_params = model;
    }
    result.events.push_back("init: epoch " + std::to_string(epoch + 1) +
                            " source L1 " + std::to_string(now));
  }
  result.params = std::move(best_params);
  result.params.freeze_all();
  result.source_loss_after = best;
  result.steps = step;
  return result;
}

namespace {

struct PooledFeatures {
  std::vector<Tensor> depth_only;  // (1, C, 1, 1) each
  std::vector<Tensor> both;
};

PooledFeatures pool_dataset(ModelParams& model, const std::vector<Sample>& data,
                            int batch_size) {
  PooledFeatures out;
  const auto [null_image, null_depth] =
      make_null_inputs(model.config.height, model.config.width);
  const ForwardOptions eval{Mode::Eval, false};
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    std::vector<const Sample*> batch;
    for (std::size_t i = b; i < std::min(data.size(), b + batch_size); ++i) {
      batch.push_back(&data[i]);
    }
    const BatchTensors t = to_tensors(batch);
    const BatchTensors t0 = to_tensors(batch, &null_image);
    const Tensor pb = pool_features(forward(model, t.image, t.sparse, eval).taps.fused_feat)->value;
    const Tensor p0 = pool_features(forward(model, t0.image, t0.sparse, eval).taps.fused_feat)->value;
    for (int i = 0; i < pb.n(); ++i) {
      out.both.push_back(pb.slice_batch(i, 1));
      out.depth_only.push_back(p0.slice_batch(i, 1));
    }
  }
  return out;
}

void check_heads(const ModelParams& params, const ProxyHeads& heads) {
  if (heads.pool_dim != params.config.fusion_width) {
    throw ContractError("proxy heads expect " + std::to_string(heads.pool_dim) +
                        "-dim features, the model fuses to " +
                        std::to_string(params.config.fusion_width));
  }
}

}  // namespace

PrepareResult stage_prepare(const ModelParams& params, const ProxyHeads& heads,
                            const std::vector<Sample>& source,
                            const StageConfig& config) {
  config.validate("prepare");
  check_heads(params, heads);
  if (source.empty()) throw EmptySupportError("prepare: empty source dataset");

  ModelParams model = params;
  model.freeze_all();
  const PooledFeatures pooled = pool_dataset(model, source, config.batch_size);

  PrepareResult result;
  result.heads = heads;
  ProxyHeads& h = result.heads;
  h.prepared = false;
  h.unfreeze_online();
  Adam adam(config.learning_rate);
  long long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled(source.size(), config.seed * 131 + epoch + 3);
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      std::vector<Tensor> d0, db;
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        d0.push_back(pooled.depth_only[order[i]]);
        db.push_back(pooled.both[order[i]]);
      }
      const EmbeddingPair pair = make_source_pair(
          h, ag::constant(stack_batch(d0)), ag::constant(stack_batch(db)));
      const Var loss = cosine_loss(pair.p, pair.q);
      ++step;
      check_finite(loss->value[0], step, "prepare");
      h.zero_grad();
      ag::backward(loss);
      adam.step(trainable_params(h.params));
      ema_update(h);
      LossRow row;
      row.step = step;
      row.l_proxy = loss->value[0];
      row.total = loss->value[0];
      result.losses.push_back(row);
    }
  }
  h.zero_grad();
  h.freeze();
  h.prepared = true;
  result.steps = step;
  return result;
}

double preparation_loss(const ModelParams& params, const ProxyHeads& heads,
                        const std::vector<Sample>& samples) {
  check_heads(params, heads);
  if (samples.empty()) throw EmptySupportError("preparation_loss: no samples");
  ModelParams model = params;
  model.freeze_all();
  ProxyHeads h = heads;
  h.freeze();
  const PooledFeatures pooled = pool_dataset(model, samples, 16);
  const EmbeddingPair pair =
      make_source_pair(h, ag::constant(stack_batch(pooled.depth_only)),
                       ag::constant(stack_batch(pooled.both)));
  return cosine_loss(pair.p, pair.q)->value[0];
}

// ---------------------------------------------------------------------------

const char* to_string(AdaptMethod m) {
  return m == AdaptMethod::ProxyTTA ? "proxytta" : "proxytta_fast";
}

AdaptMethod parse_adapt_method(const std::string& s) {
  if (s == "proxytta") return AdaptMethod::ProxyTTA;
  if (s == "proxytta_fast") return AdaptMethod::ProxyTTAFast;
  throw ConfigError("unknown adaptation method '" + s + "'");
}

const char* to_string(BnVariant v) {
  return v == BnVariant::StatsOnly ? "stats_only" : "affine_with_losses";
}

BnVariant parse_bn_variant(const std::string& s) {
  if (s == "stats_only") return BnVariant::StatsOnly;
  if (s == "affine_with_losses") return BnVariant::AffineWithLosses;
  throw ConfigError("unknown BN adaptation variant '" + s + "'");
}

namespace {

// Shared single-pass loop: score every batch with `scorer`, then hand it to
// `adapt`, which returns false when it skipped the update.
using Adapter = std::function<bool(const Batch&, const BatchTensors&)>;

void run_stream(AdaptResult& result, ModelParams& scorer, SampleStream& stream,
                DepthRange range, const AdaptHooks& hooks, const Adapter& adapt) {
  MetricsAccumulator total(range);
  auto note = [&](const std::string& msg) {
    result.events.push_back(msg);
    if (hooks.on_event) hooks.on_event(msg);
  };
  while (std::optional<Batch> batch = stream.next()) {
    std::vector<const Sample*> ptrs;
    for (const Sample& s : batch->samples) ptrs.push_back(&s);
    const BatchTensors t = to_tensors(ptrs);

    const Var pred = forward(scorer, t.image, t.sparse, {Mode::Eval, false}).depth;
    if (hooks.on_score) hooks.on_score(batch->index, scorer);
    const std::vector<DepthMap> maps = to_depth_maps(pred->value);
    MetricsAccumulator per_batch(range);
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const MetricsRecord r = compute_metrics(maps[i], batch->samples[i].gt, range);
      per_batch.add(r);
      total.add(r);
    }
    result.batch_metrics.push_back(per_batch.result());

    if (adapt) {
      try {
        if (!adapt(*batch, t)) ++result.skipped_batches;
      } catch (const EmptySupportError& e) {
        ++result.skipped_batches;
        note("warning: batch " + std::to_string(batch->index) +
             " skipped, update not applied: " + e.what());
      }
    }
    if (hooks.on_update) hooks.on_update(batch->index, scorer);
  }
  result.metrics = total.result();
}

void record(AdaptResult& result, const LossReport& report) {
  ++result.steps;
  check_finite(report.total, result.steps, "adapt");
  result.losses.push_back(to_row(result.steps, report));
}

}  // namespace

AdaptResult stage_adapt(const ModelParams& params, const ProxyHeads& heads,
                        SampleStream& stream, const StageConfig& config,
                        AdaptMethod method, DepthRange range,
                        const AdaptHooks& hooks) {
  config.validate("adapt");
  if (!params.has_adaptation_layer) {
    throw LifecycleError("stage_adapt: the adaptation layer is not inserted");
  }
  const bool use_proxy = heads.prepared;
  if (config.weights.w_proxy > 0.0 && !heads.prepared) {
    throw LifecycleError("stage_adapt: proxy heads are not prepared");
  }
  if (use_proxy) check_heads(params, heads);

  AdaptResult result;
  result.params = params;
  ModelParams& model = result.params;
  ProxyHeads frozen = heads;
  frozen.freeze();

  const bool bn = model.config.use_batch_norm;
  const bool full = method == AdaptMethod::ProxyTTA;
  Selector selector = Selector::AdaptationOnly;
  if (full && bn) {
    selector = Selector::AdaptationPlusBn;
  } else if (full) {
    result.events.push_back("proxytta on a model without BN: adapting the adaptation layer only");
  }
  model.set_trainable(partition_params(model, selector).trainable);
  Adam adam(config.learning_rate);
  const auto [null_image, null_depth] =
      make_null_inputs(model.config.height, model.config.width);

  run_stream(result, model, stream, range, hooks,
             [&](const Batch& batch, const BatchTensors& t) {
    const bool train = full && bn && batch.size() >= 2;
    std::vector<const Image*> nulls(batch.size(), &null_image);
    const Tensor null_images = image_tensor(nulls);
    for (int it = 0; it < config.inner_iter; ++it) {
      const ForwardResult fr =
          forward(model, t.image, t.sparse,
                  {train ? Mode::Train : Mode::Eval, config.update_bn_stats});
      std::optional<EmbeddingPair> pair;
      if (use_proxy) {
        const Var f0 = forward(model, null_images, t.sparse, {Mode::Eval, false})
                           .taps.fused_feat;
        pair = make_target_pair(frozen, f0, fr.taps.fused_feat);
      }
      const LossReport report =
          adapt_loss(fr.depth, t.sparse, t.image, pair, config.weights);
      record(result, report);
      model.zero_grad();
      ag::backward(report.graph);
      adam.step(trainable(model));
    }
    return true;
  });
  model.zero_grad();
  model.freeze_all();
  return result;
}

AdaptResult baseline_bn_adapt(const ModelParams& params, SampleStream& stream,
                              const StageConfig& config, BnVariant variant,
                              DepthRange range, const AdaptHooks& hooks) {
  config.validate("adapt");
  if (!params.config.use_batch_norm) {
    throw ConfigError("BN adaptation needs a model with batch normalization");
  }
  AdaptResult result;
  result.params = params;
  ModelParams& model = result.params;
  LossWeights weights = config.weights;
  if (variant == BnVariant::AffineWithLosses) {
    model.set_trainable(partition_params(model, Selector::BnAffineOnly).trainable);
    if (weights.w_proxy > 0.0) {
      result.events.push_back("bn_adapt: w_proxy ignored (no proxy term in this baseline)");
      weights.w_proxy = 0.0;
    }
    weights.validate();
  } else {
    model.freeze_all();
  }
  Adam adam(config.learning_rate);

  run_stream(result, model, stream, range, hooks,
             [&](const Batch& batch, const BatchTensors& t) {
    if (batch.size() < 2) return false;
    if (variant == BnVariant::StatsOnly) {
      forward(model, t.image, t.sparse, {Mode::Train, true});
      return true;
    }
    for (int it = 0; it < config.inner_iter; ++it) {
      const ForwardResult fr = forward(model, t.image, t.sparse, {Mode::Train, true});
      const LossReport report =
          adapt_loss(fr.depth, t.sparse, t.image, std::nullopt, weights);
      record(result, report);
      model.zero_grad();
      ag::backward(report.graph);
      adam.step(trainable(model));
    }
    return true;
  });
  model.zero_grad();
  model.freeze_all();
  return result;
}

AdaptResult baseline_cotta(const ModelParams& params, SampleStream& stream,
                           const StageConfig& config, const CottaConfig& cotta,
                           DepthRange range, const AdaptHooks& hooks) {
  config.validate("adapt");
  if (!(cotta.consistency_weight >= 0.0) ||
      !(cotta.teacher_tau >= 0.0 && cotta.teacher_tau <= 1.0)) {
    throw ConfigError("cotta: consistency_weight >= 0 and teacher_tau in [0, 1] required");
  }
  AdaptResult result;
  result.params = params;
  ModelParams& student = result.params;
  ModelParams teacher = params;
  teacher.freeze_all();
  result.parameter_sets = 2;
  student.set_trainable(partition_params(student, Selector::All).trainable);
  Adam adam(config.learning_rate);
  const double tau = cotta.teacher_tau;

  run_stream(result, student, stream, range, hooks,
             [&](const Batch&, const BatchTensors& t) {
    for (int it = 0; it < config.inner_iter; ++it) {
      const Tensor target =
          forward(teacher, t.image, t.sparse, {Mode::Eval, false}).depth->value;
      Tensor reference(Shape{target.n(), 2, target.h(), target.w()}, 1.0);
      for (int i = 0; i < target.n(); ++i) {
        std::copy(target.plane(i, 0).begin(), target.plane(i, 0).end(),
                  reference.plane(i, 0).begin());
      }
      const Var pred = forward(student, t.image, t.sparse, {Mode::Eval, false}).depth;
      const Var lz = sparse_consistency(pred, t.sparse);
      const Var lsm = local_smoothness(pred, t.image);
      const Var lc = supervised_loss(pred, reference);
      std::vector<std::pair<double, Var>> terms;
      if (config.weights.w_z > 0.0) terms.emplace_back(config.weights.w_z, lz);
      if (config.weights.w_sm > 0.0) terms.emplace_back(config.weights.w_sm, lsm);
      if (cotta.consistency_weight > 0.0) terms.emplace_back(cotta.consistency_weight, lc);
      const Var total = ag::weighted_sum(terms);
      LossReport report;
      report.l_z = lz->value[0];
      report.l_sm = lsm->value[0];
      report.total = total->value[0];
      for (int i = 0; i < t.sparse.n(); ++i) {
        for (double m : t.sparse.plane(i, 1)) report.valid_points += m > 0.5;
      }
      record(result, report);
      student.zero_grad();
      ag::backward(total);
      adam.step(trainable(student));
      for (std::size_t k = 0; k < teacher.params.size(); ++k) {
        Tensor& tv = teacher.params[k].value;
        const Tensor& sv = student.params[k].value;
        for (std::size_t i = 0; i < tv.numel(); ++i) {
          tv[i] = tau * tv[i] + (1.0 - tau) * sv[i];
        }
      }
    }
    return true;
  });
  student.zero_grad();
  student.freeze_all();
  return result;
}

AdaptResult no_adapt(const ModelParams& params, SampleStream& stream,
                     DepthRange range, const AdaptHooks& hooks) {
  AdaptResult result;
  result.params = params;
  result.params.freeze_all();
  run_stream(result, result.params, stream, range, hooks, nullptr);
  return result;
}

// ---------------------------------------------------------------------------

RunArtifacts RunArtifacts::at(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  return RunArtifacts{dir,
                      dir / "checkpoint.bin",
                      dir / "losses.csv",
                      dir / "metrics.csv",
                      dir / "config.json",
                      dir / "events.log"};
}

void RunArtifacts::append_event(const std::string& line) const {
  std::ofstream f(events, std::ios::app);
  f << line << "\n";
}

std::filesystem::path runs_root() {
  const char* env = std::getenv("PROXYTTA_RUNS_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

}  // namespace proxytta
