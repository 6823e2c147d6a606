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

// proxytta: command-line driver for data generation, the three training
// stages, adaptation, baselines, and reporting.
//
//   proxytta <verb> [--config FILE] [--set key=value]... [--seed N]
//                   [--run-name NAME] [--from RUN] [--dry-run]
//
// Stage checkpoints of one experiment live in <runs>/<name>-s<seed>/ as
// pretrained.bin, initialized.bin and prepared.bin; adaptation, baseline and
// analysis verbs read them from there (or from --from) and write their own
// run directory.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "proxytta/checkpoint.hpp"
#include "proxytta/config.hpp"
#include "proxytta/datasets.hpp"
#include "proxytta/errors.hpp"
#include "proxytta/eval_report.hpp"
#include "proxytta/losses.hpp"
#include "proxytta/pipeline.hpp"

namespace fs = std::filesystem;
using namespace proxytta;

namespace {

struct Options {
  std::string verb;
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string run_name;
  std::string from;
  bool dry_run = false;
  bool resume = false;
  int stop_after_epoch = -1;
  std::string method;
  std::string stage = "pretrained";
  int jobs = 1;
  std::vector<std::string> runs;
  std::string out;
};

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Format:
    case ErrorKind::EmptySupport:
    case ErrorKind::Report: return 3;
    case ErrorKind::Training:
    case ErrorKind::DegenerateEmbedding:
    case ErrorKind::Contract: return 4;
    case ErrorKind::Protocol:
    case ErrorKind::Lifecycle: return 5;
  }
  return 1;
}

void log(const std::string& line) { std::cerr << "[proxytta] " << line << "\n"; }

std::string base_name(const ExperimentConfig& cfg) {
  return cfg.name + "-s" + std::to_string(cfg.seed);
}

fs::path base_dir(const Options& opt, const ExperimentConfig& cfg) {
  if (opt.from.empty()) return runs_root() / base_name(cfg);
  const fs::path from(opt.from);
  if (fs::is_directory(from)) return from;
  return runs_root() / from;
}

fs::path output_dir(const Options& opt, const ExperimentConfig& cfg,
                    const std::string& suffix) {
  if (!opt.run_name.empty()) return runs_root() / opt.run_name;
  if (suffix.empty()) return base_dir(opt, cfg);
  return runs_root() / (base_name(cfg) + "-" + suffix);
}

ExperimentConfig resolve_config(const Options& opt) {
  ExperimentConfig cfg;
  if (!opt.config_path.empty()) apply_config_file(cfg, opt.config_path);
  for (const auto& o : opt.overrides) apply_override(cfg, o);
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.method.empty()) cfg.method = opt.method;
  for (StageConfig* s : {&cfg.pretrain, &cfg.init, &cfg.prepare, &cfg.adapt}) {
    s->seed = cfg.seed;
  }
  cfg.validate();
  return cfg;
}

SplitConfig split_config(const ExperimentConfig& cfg, Domain domain) {
  SplitConfig s;
  s.scene = cfg.scene;
  if (domain == Domain::Source) {
    s.count = cfg.source_count;
    s.seed = cfg.seed * 10 + cfg.source_seed;
  } else {
    s.count = cfg.target_count;
    s.seed = cfg.seed * 10 + cfg.target_seed;
    s.shift = cfg.shift;
    s.shift_seed = cfg.shift_seed + cfg.seed;
  }
  return s;
}

std::vector<Sample> load_split(const ExperimentConfig& cfg, Domain domain) {
  const std::string& dir = domain == Domain::Source ? cfg.source_dir : cfg.target_dir;
  if (!dir.empty()) {
    if (!fs::is_directory(dir)) throw FormatError("dataset directory not found: " + dir);
    return read_sample_dir(dir);
  }
  return make_split(split_config(cfg, domain));
}

double mean_density(const std::vector<Sample>& samples) {
  double d = 0.0;
  for (const Sample& s : samples) {
    d += static_cast<double>(s.sparse.valid_count()) / s.sparse.size();
  }
  return samples.empty() ? 0.0 : d / samples.size();
}

Checkpoint load_stage(const fs::path& dir, const std::string& stage) {
  const fs::path path = dir / (stage + ".bin");
  if (!fs::exists(path)) {
    throw LifecycleError("no " + stage + " checkpoint at " + path.string() +
                         "; run the preceding stage first");
  }
  Checkpoint ckpt = load_checkpoint(path);
  const auto it = ckpt.meta.find("stage");
  if (it == ckpt.meta.end() || it->second != stage) {
    throw LifecycleError(path.string() + " is not a " + stage + " checkpoint");
  }
  return ckpt;
}

void check_model(const ExperimentConfig& cfg, const ModelParams& model) {
  ModelConfig expected = cfg.model;
  if (!(expected == model.config)) {
    throw ConfigError("[model]/[data] settings differ from the checkpoint's model; "
                      "use the configuration the checkpoint was trained with");
  }
}

void save_stage(const RunArtifacts& run, const std::string& stage, Checkpoint ckpt,
                const ExperimentConfig& cfg) {
  ckpt.meta["stage"] = stage;
  ckpt.meta["seed"] = std::to_string(cfg.seed);
  ckpt.meta["name"] = cfg.name;
  save_checkpoint(run.dir / (stage + ".bin"), ckpt);
  save_checkpoint(run.checkpoint, ckpt);
  run.append_event("saved " + stage + " checkpoint");
}

RunArtifacts open_run(const fs::path& dir, const ExperimentConfig& cfg,
                      const std::string& verb) {
  fs::create_directories(dir);
  RunArtifacts run = RunArtifacts::at(dir);
  std::ofstream(run.config, std::ios::trunc) << to_json_text(cfg);
  run.append_event("verb " + verb);
  return run;
}

void write_losses(const RunArtifacts& run, const StageResult& result,
                  const std::string& stage) {
  append_loss_csv(run.losses, result.losses);
  for (const std::string& e : result.events) run.append_event(stage + ": " + e);
}

MetricsRow metrics_row(const ExperimentConfig& cfg, const std::string& method,
                       const MetricsRecord& m, double density,
                       const std::string& dataset, const std::string& mode = "both") {
  return MetricsRow{dataset, method, cfg.seed, mode, density,
                    m.mae_mm, m.rmse_mm, m.n_pixels};
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& opt, const ExperimentConfig& cfg) {
  const fs::path base = output_dir(opt, cfg, "");
  for (Domain d : {Domain::Source, Domain::Target}) {
    const std::string& configured = d == Domain::Source ? cfg.source_dir : cfg.target_dir;
    const fs::path dir = configured.empty() ? base / "data" / to_string(d) : fs::path(configured);
    const SplitConfig split = split_config(cfg, d);
    const auto samples = make_split(split);
    nlohmann::json gen = {{"height", split.scene.height}, {"width", split.scene.width},
                          {"density", split.scene.density}, {"count", split.count},
                          {"seed", split.seed}, {"shift", split.shift},
                          {"shift_seed", split.shift_seed}};
    write_sample_dir(samples, dir, gen.dump(), split.seed);
    std::cout << to_string(d) << ": " << samples.size() << " samples -> " << dir.string() << "\n";
  }
  return 0;
}

int cmd_pretrain(const Options& opt, const ExperimentConfig& cfg) {
  const auto source = load_split(cfg, Domain::Source);
  const RunArtifacts run = open_run(output_dir(opt, cfg, ""), cfg, "pretrain");
  const fs::path state_path = run.dir / "pretrain_state.bin";

  std::optional<PretrainResume> resume;
  if (opt.resume) {
    if (!fs::exists(state_path)) {
      throw LifecycleError("--resume: no interrupted pretraining at " + state_path.string());
    }
    Checkpoint ckpt = load_checkpoint(state_path);
    check_model(cfg, ckpt.model);
    if (!ckpt.optimizer) throw FormatError(state_path.string() + ": no optimizer state");
    resume = PretrainResume{ckpt.model, *ckpt.optimizer,
                            std::stoi(ckpt.meta.at("epochs_done")),
                            ckpt.optimizer->steps};
    log("resuming after epoch " + std::to_string(resume->epochs_done));
  }

  const int last = opt.stop_after_epoch >= 0
                       ? std::min(opt.stop_after_epoch, cfg.pretrain.epochs)
                       : cfg.pretrain.epochs;
  int done = resume ? resume->epochs_done : 0;
  while (done < last) {
    PretrainResult r = pretrain_backbone(source, cfg.model, cfg.pretrain, resume, done + 1);
    write_losses(run, r, "pretrain");
    done = r.epochs_done;
    Checkpoint state{r.params, std::nullopt, r.optimizer, {}};
    state.meta["stage"] = "pretrain_partial";
    state.meta["epochs_done"] = std::to_string(done);
    save_checkpoint(state_path, state);
    // Continue from the exact on-disk state so an interrupted run and an
    // uninterrupted one follow the same trajectory.
    Checkpoint reloaded = load_checkpoint(state_path);
    resume = PretrainResume{reloaded.model, *reloaded.optimizer, done,
                            reloaded.optimizer->steps};
    log("pretrain epoch " + std::to_string(done) + "/" + std::to_string(cfg.pretrain.epochs) +
        " loss " + (r.losses.empty() ? std::string("-") : std::to_string(r.losses.back().total)));
  }
  if (done < cfg.pretrain.epochs) {
    log("stopped after epoch " + std::to_string(done) + "; continue with --resume");
    return 0;
  }
  Checkpoint final{resume->params, std::nullopt, resume->optimizer, {}};
  final.meta["epochs_done"] = std::to_string(done);
  save_stage(run, "pretrained", final, cfg);
  fs::remove(state_path);
  const MetricsRecord m = evaluate(final.model, source, InputMode::Both, cfg.range);
  std::cout << "pretrained: source MAE " << m.mae_mm << " mm, RMSE " << m.rmse_mm << " mm\n";
  return 0;
}

int cmd_init(const Options& opt, const ExperimentConfig& cfg) {
  Checkpoint ckpt = load_stage(base_dir(opt, cfg), "pretrained");
  check_model(cfg, ckpt.model);
  const auto source = load_split(cfg, Domain::Source);
  const RunArtifacts run = open_run(output_dir(opt, cfg, ""), cfg, "init-adapt-layer");
  InitResult r = stage_initialize(insert_adaptation_layer(ckpt.model), source, cfg.init);
  write_losses(run, r, "init");
  Checkpoint out{r.params, std::nullopt, std::nullopt, {}};
  save_stage(run, "initialized", out, cfg);
  std::cout << "initialized: source loss " << r.source_loss_before << " -> "
            << r.source_loss_after << "\n";
  return 0;
}

int cmd_prepare(const Options& opt, const ExperimentConfig& cfg) {
  Checkpoint ckpt = load_stage(base_dir(opt, cfg), "initialized");
  check_model(cfg, ckpt.model);
  const auto source = load_split(cfg, Domain::Source);
  const RunArtifacts run = open_run(output_dir(opt, cfg, ""), cfg, "prepare");
  const ProxyHeads heads =
      init_proxy_heads(cfg.model.fusion_width, cfg.proxy, cfg.seed);
  PrepareResult r = stage_prepare(ckpt.model, heads, source, cfg.prepare);
  write_losses(run, r, "prepare");
  Checkpoint out{ckpt.model, r.heads, std::nullopt, {}};
  save_stage(run, "prepared", out, cfg);
  std::cout << "prepared: preparation loss "
            << (r.losses.empty() ? 0.0 : r.losses.front().total) << " -> "
            << (r.losses.empty() ? 0.0 : r.losses.back().total) << "\n";
  return 0;
}

void finish_adaptation(const RunArtifacts& run, const ExperimentConfig& cfg,
                       const std::string& method, const AdaptResult& r,
                       const std::vector<Sample>& target) {
  write_losses(run, r, method);
  if (r.skipped_batches > 0) {
    run.append_event("skipped " + std::to_string(r.skipped_batches) + " batches");
  }
  write_metrics_csv(run.metrics, {metrics_row(cfg, method, r.metrics, mean_density(target),
                                              cfg.dataset)});
  Checkpoint out{r.params, std::nullopt, std::nullopt, {}};
  out.meta["stage"] = "adapted";
  out.meta["method"] = method;
  out.meta["seed"] = std::to_string(cfg.seed);
  save_checkpoint(run.checkpoint, out);
  std::printf("%s: MAE %.3f mm, RMSE %.3f mm over %zu pixels -> %s\n", method.c_str(),
              r.metrics.mae_mm, r.metrics.rmse_mm, r.metrics.n_pixels,
              run.metrics.string().c_str());
}

AdaptHooks event_hooks(const RunArtifacts& run) {
  AdaptHooks hooks;
  hooks.on_event = [run](const std::string& e) { run.append_event(e); };
  return hooks;
}

int cmd_adapt(const Options& opt, const ExperimentConfig& cfg) {
  const AdaptMethod method = parse_adapt_method(cfg.method);
  Checkpoint ckpt = load_stage(base_dir(opt, cfg), "prepared");
  if (!ckpt.heads || !ckpt.heads->prepared) {
    throw LifecycleError(cfg.method + " needs prepared proxy heads; run prepare first");
  }
  check_model(cfg, ckpt.model);
  const auto target = load_split(cfg, Domain::Target);
  const RunArtifacts run = open_run(output_dir(opt, cfg, cfg.method), cfg, "adapt");
  SampleStream stream = SampleStream::from_samples(target, cfg.adapt.batch_size);
  const AdaptResult r = stage_adapt(ckpt.model, *ckpt.heads, stream, cfg.adapt, method,
                                    cfg.range, event_hooks(run));
  finish_adaptation(run, cfg, cfg.method, r, target);
  return 0;
}

int cmd_baseline(const Options& opt, const ExperimentConfig& cfg) {
  const std::string& method = cfg.method;
  if (method != "none" && method != "bn_adapt" && method != "bn_adapt_losses" &&
      method != "cotta") {
    throw ConfigError("baseline --method must be none, bn_adapt, bn_adapt_losses or cotta");
  }
  Checkpoint ckpt = load_stage(base_dir(opt, cfg), "pretrained");
  check_model(cfg, ckpt.model);
  const auto target = load_split(cfg, Domain::Target);
  const std::string label = method == "none" ? "no_adapt" : method;
  const RunArtifacts run = open_run(output_dir(opt, cfg, label), cfg, "baseline");
  SampleStream stream = SampleStream::from_samples(target, cfg.adapt.batch_size);
  const AdaptHooks hooks = event_hooks(run);
  AdaptResult r;
  if (method == "none") {
    r = no_adapt(ckpt.model, stream, cfg.range, hooks);
  } else if (method == "cotta") {
    r = baseline_cotta(ckpt.model, stream, cfg.adapt, cfg.cotta, cfg.range, hooks);
  } else {
    const BnVariant v =
        method == "bn_adapt" ? BnVariant::StatsOnly : BnVariant::AffineWithLosses;
    r = baseline_bn_adapt(ckpt.model, stream, cfg.adapt, v, cfg.range, hooks);
  }
  finish_adaptation(run, cfg, label, r, target);
  return 0;
}

int cmd_sensitivity(const Options& opt, const ExperimentConfig& cfg) {
  Checkpoint ckpt = load_stage(base_dir(opt, cfg), opt.stage);
  check_model(cfg, ckpt.model);
  const auto source = load_split(cfg, Domain::Source);
  const auto target = load_split(cfg, Domain::Target);
  const RunArtifacts run = open_run(output_dir(opt, cfg, "sensitivity"), cfg, "sensitivity");
  std::vector<MetricsRow> rows;
  for (const auto& [split, data] :
       {std::pair{"source", &source}, std::pair{"target", &target}}) {
    const auto result = sensitivity_study(ckpt.model, *data, cfg.densities, cfg.range,
                                          cfg.seed, opt.jobs);
    for (const SensitivityRow& s : result) {
      char label[64];
      std::snprintf(label, sizeof label, "%s@%.4f", opt.stage.c_str(), s.density);
      rows.push_back(MetricsRow{cfg.dataset + ":" + split, label, cfg.seed,
                                to_string(s.mode), s.density, s.mae_mm, s.rmse_mm,
                                s.n_pixels});
      std::printf("%-7s %-10s density %.4f  MAE %10.3f  RMSE %10.3f\n", split,
                  to_string(s.mode), s.density, s.mae_mm, s.rmse_mm);
    }
  }
  write_metrics_csv(run.metrics, rows);
  return 0;
}

int cmd_centroid(const Options& opt, const ExperimentConfig& cfg) {
  Checkpoint ckpt = load_stage(base_dir(opt, cfg), "prepared");
  check_model(cfg, ckpt.model);
  const auto source = load_split(cfg, Domain::Source);
  const auto target = load_split(cfg, Domain::Target);
  const RunArtifacts run = open_run(output_dir(opt, cfg, "centroid"), cfg, "centroid");
  const CentroidReport rep = centroid_analysis(ckpt.model, *ckpt.heads, source, target);
  std::ofstream f(run.dir / "centroid.csv", std::ios::trunc);
  f << "cloud";
  for (const char* c : CentroidReport::kClouds) f << ',' << c;
  f << "\n";
  for (int i = 0; i < 4; ++i) {
    f << CentroidReport::kClouds[i];
    for (int j = 0; j < 4; ++j) {
      char buf[32];
      std::snprintf(buf, sizeof buf, ",%.9g", rep.distance[i][j]);
      f << buf;
    }
    f << "\n";
  }
  std::printf("dist(target_p, source_q) = %.6f\ndist(target_q, source_q) = %.6f\n"
              "proxy closer: %s\n",
              rep.at("target_p", "source_q"), rep.at("target_q", "source_q"),
              rep.proxy_closer ? "yes" : "no");
  return 0;
}

int cmd_report(const Options& opt) {
  std::vector<fs::path> runs;
  if (opt.runs.empty()) {
    if (fs::is_directory(runs_root())) {
      for (const auto& e : fs::directory_iterator(runs_root())) {
        if (fs::exists(e.path() / "metrics.csv")) runs.push_back(e.path());
      }
    }
    std::sort(runs.begin(), runs.end());
  } else {
    for (const auto& r : opt.runs) {
      fs::path p(r);
      runs.push_back(fs::is_directory(p) || p.is_absolute() ? p : runs_root() / p);
    }
  }
  const fs::path out = opt.out.empty() ? runs_root() / "report" : fs::path(opt.out);
  emit_report(runs, out, opt.jobs);
  std::cout << "report: " << runs.size() << " runs -> " << (out / "summary.md").string() << "\n";
  return 0;
}

int dispatch(const Options& opt) {
  if (opt.verb == "report") {
    if (opt.dry_run) return 0;
    return cmd_report(opt);
  }
  const ExperimentConfig cfg = resolve_config(opt);
  if (opt.verb == "adapt") parse_adapt_method(cfg.method);
  if (opt.dry_run) {
    std::cout << to_json_text(cfg);
    return 0;
  }
  if (opt.verb == "gen-data") return cmd_gen_data(opt, cfg);
  if (opt.verb == "pretrain") return cmd_pretrain(opt, cfg);
  if (opt.verb == "init-adapt-layer") return cmd_init(opt, cfg);
  if (opt.verb == "prepare") return cmd_prepare(opt, cfg);
  if (opt.verb == "adapt") return cmd_adapt(opt, cfg);
  if (opt.verb == "baseline") return cmd_baseline(opt, cfg);
  if (opt.verb == "sensitivity") return cmd_sensitivity(opt, cfg);
  if (opt.verb == "centroid") return cmd_centroid(opt, cfg);
  throw ConfigError("unknown verb " + opt.verb);
}

void add_common(CLI::App* sub, Options& opt) {
  sub->add_option("--config", opt.config_path, "TOML preset or config.json snapshot")
      ->check(CLI::ExistingFile);
  sub->add_option("--set", opt.overrides, "override a config key (key=value)")
      ->allow_extra_args(false);
  sub->add_option("--seed", opt.seed, "experiment seed");
  sub->add_option("--run-name", opt.run_name, "output run directory name");
  sub->add_option("--from", opt.from, "run directory holding the stage checkpoints");
  sub->add_flag("--dry-run", opt.dry_run, "validate and print the resolved config");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth completion test-time adaptation toolkit"};
  app.require_subcommand(1);
  Options opt;

  auto* gen = app.add_subcommand("gen-data", "write synthetic source/target PNG datasets");
  auto* pre = app.add_subcommand("pretrain", "supervised pretraining on source");
  pre->add_flag("--resume", opt.resume, "continue an interrupted pretraining");
  pre->add_option("--stop-after-epoch", opt.stop_after_epoch,
                  "stop once this many epochs are done");
  auto* init = app.add_subcommand("init-adapt-layer", "insert and fit the adaptation layer");
  auto* prep = app.add_subcommand("prepare", "train the proxy heads on source");
  auto* adapt = app.add_subcommand("adapt", "single-pass test-time adaptation");
  adapt->add_option("--method", opt.method, "proxytta | proxytta_fast")
      ->check(CLI::IsMember({"proxytta", "proxytta_fast"}));
  auto* base = app.add_subcommand("baseline", "baseline adaptation methods");
  base->add_option("--method", opt.method, "none | bn_adapt | bn_adapt_losses | cotta")
      ->check(CLI::IsMember({"none", "bn_adapt", "bn_adapt_losses", "cotta"}))
      ->required();
  auto* sens = app.add_subcommand("sensitivity", "input-modality sensitivity study");
  sens->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber);
  sens->add_option("--stage", opt.stage, "checkpoint to study")
      ->check(CLI::IsMember({"pretrained", "initialized", "prepared"}));
  auto* cen = app.add_subcommand("centroid", "embedding centroid analysis");
  auto* rep = app.add_subcommand("report", "aggregate run metrics into a report");
  rep->add_option("--runs", opt.runs, "run directories (default: every run with metrics)");
  rep->add_option("--out", opt.out, "output directory (default: <runs>/report)");
  rep->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber);
  rep->add_flag("--dry-run", opt.dry_run, "check arguments only");

  for (CLI::App* sub : {gen, pre, init, prep, adapt, base, sens, cen}) add_common(sub, opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  opt.verb = app.get_subcommands().front()->get_name();

  try {
    return dispatch(opt);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
