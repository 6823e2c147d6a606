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

#ifndef PROXYTTA_CONFIG_HPP_
#define PROXYTTA_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "proxytta/datasets.hpp"
#include "proxytta/eval_report.hpp"
#include "proxytta/model.hpp"
#include "proxytta/pipeline.hpp"
#include "proxytta/proxy.hpp"

namespace proxytta {

/// Everything one CLI invocation needs. Keys are addressed as
/// "<section>.<name>" (top-level keys have no section), e.g.
/// "stage.adapt.learning_rate" or "seed".
struct ExperimentConfig {
  std::string name = "experiment";
  std::string method = "proxytta";
  std::uint64_t seed = 0;

  // [data]
  std::string dataset = "synthetic";
  std::string source_dir;  // empty: synthesize in memory
  std::string target_dir;
  SceneConfig scene;
  int source_count = 200;
  int target_count = 200;
  std::uint64_t source_seed = 1;
  std::uint64_t target_seed = 2;
  std::string shift = "strong";
  std::uint64_t shift_seed = 0;

  ModelConfig model;
  ProxyConfig proxy;

  StageConfig pretrain;
  StageConfig init;
  StageConfig prepare;
  StageConfig adapt;
  std::string bn_variant = "affine_with_losses";
  CottaConfig cotta;

  // [eval]
  DepthRange range{0.0, 80.0};
  std::vector<double> densities{0.01, 0.05, 0.1};

  ExperimentConfig();
  /// Cross-field checks; throws ConfigError naming the offending key.
  void validate() const;
};

/// All recognised keys, in canonical order.
const std::vector<std::string>& config_keys();

/// Parses a TOML-style file (tables, key = value, numbers, booleans, quoted
/// strings, flat arrays, # comments) or a JSON snapshot (by extension) on
/// top of `base`. Unknown keys throw ConfigError naming the key.
void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path);
void apply_config_text(ExperimentConfig& config, const std::string& text,
                       const std::string& origin = "<text>");

/// Applies one "key=value" override. String values may omit quotes.
void apply_override(ExperimentConfig& config, const std::string& assignment);

/// Canonical JSON snapshot (nested by section).
std::string to_json_text(const ExperimentConfig& config);

}  // namespace proxytta

#endif  // PROXYTTA_CONFIG_HPP_
