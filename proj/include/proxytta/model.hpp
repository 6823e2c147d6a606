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

#ifndef PROXYTTA_MODEL_HPP_
#define PROXYTTA_MODEL_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "proxytta/autograd.hpp"
#include "proxytta/datasets.hpp"

namespace proxytta {

/// Reference dual-branch depth completion network.
///
///   image (3)  -> [conv s2] x3 -> m_phi (optional) --+--> fusion -> dec3
///   sparse (2) -> [conv s2] x3 ----------------------+        ^
///                                                  m_phi skip +
///   dec3 -> up -> dec2 (+ stage-2 skips) -> up -> dec1 (+ stage-1 skips)
///        -> up -> out (+ raw sparse input) -> scaled sigmoid
///
/// Every encoder stage halves the resolution, so the fused features are
/// (H/8, W/8). The depth branch sees the sparse map and its validity mask.
struct ModelConfig {
  int height = 64;
  int width = 64;
  std::array<int, 3> image_channels{16, 32, 64};
  std::array<int, 3> depth_channels{16, 32, 64};
  int fusion_width = 64;
  std::array<int, 3> decoder_widths{64, 32, 16};
  bool use_batch_norm = true;
  int adaptation_channels = 64;
  int adaptation_kernel = 1;
  double max_depth = 10.0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup {
  ImageEncoder,
  DepthEncoder,
  Fusion,
  Decoder,
  AdaptationLayer,
  BnAffine,
  BnStats,
};
const char* to_string(ParamGroup g);
ParamGroup parse_param_group(const std::string& name);

/// Group of a "<group>/<name>" parameter key.
ParamGroup group_of(const std::string& key);

class ModelParams {
 public:
  ModelConfig config;
  bool has_adaptation_layer = false;
  std::vector<Parameter> params;

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;

  std::size_t total_count() const;
  std::map<ParamGroup, std::size_t> group_counts() const;

  void zero_grad();
  /// Sets `trainable` from a name set; everything else becomes frozen.
  void set_trainable(const std::set<std::string>& names);
  void freeze_all();

  /// Exact equality of the named tensor values.
  bool values_equal(const ModelParams& other) const;
  bool group_equal(const ModelParams& other, ParamGroup group) const;
};

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

/// Adds a residual convolution y = x + conv(x), zero-initialized, after the
/// last image-encoder stage. Its output also feeds the first decoder stage.
ModelParams insert_adaptation_layer(const ModelParams& params);

enum class Selector { AdaptationOnly, AdaptationPlusBn, BnAffineOnly, All };
Selector parse_selector(const std::string& name);
const char* to_string(Selector s);

struct Partition {
  std::set<std::string> trainable;
  std::set<std::string> frozen;
};
Partition partition_params(const ModelParams& params, Selector selector);

enum class Mode { Train, Eval };

struct ForwardOptions {
  Mode mode = Mode::Eval;
  /// Train mode only: fold batch statistics into the running estimates.
  bool update_bn_stats = true;
};

struct FeatureTaps {
  Var image_feat;  // after the adaptation layer when present
  Var depth_feat;
  Var fused_feat;
  std::vector<Var> decoder_skips;
};

struct ForwardResult {
  Var depth;  // (n, 1, H, W), strictly positive
  FeatureTaps taps;
};

/// Batched forward on network input tensors (see image_tensor/sparse_tensor).
/// Train mode uses batch statistics in BN layers and needs n >= 2.
ForwardResult forward(ModelParams& params, const Tensor& image,
                      const Tensor& sparse, const ForwardOptions& options = {});

/// Single-sample convenience wrapper in eval mode unless stated.
std::pair<DepthMap, FeatureTaps> forward(ModelParams& params, const Image& image,
                                         const DepthMap& sparse,
                                         Mode mode = Mode::Eval);

/// Converts a (n, 1, H, W) prediction tensor into dense depth maps.
std::vector<DepthMap> to_depth_maps(const Tensor& prediction);

}  // namespace proxytta

#endif  // PROXYTTA_MODEL_HPP_
