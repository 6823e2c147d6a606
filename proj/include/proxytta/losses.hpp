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

#ifndef PROXYTTA_LOSSES_HPP_
#define PROXYTTA_LOSSES_HPP_

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "proxytta/autograd.hpp"
#include "proxytta/datasets.hpp"
#include "proxytta/proxy.hpp"

namespace proxytta {

struct LossWeights {
  double w_z = 1.0;
  double w_sm = 1.0;
  double w_proxy = 0.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossReport {
  double total = 0.0;
  double l_z = 0.0;
  double l_sm = 0.0;
  double l_proxy = 0.0;
  std::size_t valid_points = 0;
  /// Scalar graph of the weighted total; only non-zero weights take part.
  Var graph;

  std::map<std::string, double> components() const;
};

// Graph forms. `pred` is (n, 1, H, W); `sparse` is a network input tensor
// (n, 2, H, W) whose channel 1 is the validity mask; `image` is (n, 3, H, W).

/// Mean |pred - z| over the valid sparse points of the whole batch.
Var sparse_consistency(const Var& pred, const Tensor& sparse);

/// Edge-aware smoothness, averaged over n * H * W.
Var local_smoothness(const Var& pred, const Tensor& image);

/// Mean |pred - gt| over valid ground-truth pixels of the whole batch.
/// `gt` holds depth in channel 0 and the mask in channel 1.
Var supervised_loss(const Var& pred, const Tensor& gt);

Var proxy_consistency(const EmbeddingPair& pair);

/// `pair` may be absent only when w_proxy is zero; l_proxy then reports 0.
LossReport adapt_loss(const Var& pred, const Tensor& sparse, const Tensor& image,
                      const std::optional<EmbeddingPair>& pair,
                      const LossWeights& weights);

// Single-raster forms.
double sparse_consistency(const DepthMap& pred, const DepthMap& z);
double local_smoothness(const DepthMap& pred, const Image& image);
double proxy_consistency_value(const EmbeddingPair& pair);
double supervised_loss(const DepthMap& pred, const DepthMap& gt);
LossReport adapt_loss(const DepthMap& pred, const DepthMap& z,
                      const Image& image,
                      const std::optional<EmbeddingPair>& pair,
                      const LossWeights& weights);

/// (1, 1, H, W) tensor of depth values.
Tensor depth_tensor(const DepthMap& d);

/// One line of a run's losses.csv.
struct LossRow {
  long long step = 0;
  double l_z = 0.0;
  double l_sm = 0.0;
  double l_proxy = 0.0;
  double total = 0.0;
  std::size_t valid_points = 0;
};

inline constexpr const char* kLossHeader = "step,l_z,l_sm,l_proxy,total,valid_points";

LossRow to_row(long long step, const LossReport& report);
/// Appends rows, writing the header first when the file is new or empty.
void append_loss_csv(const std::filesystem::path& path,
                     const std::vector<LossRow>& rows);
std::vector<LossRow> read_loss_csv(const std::filesystem::path& path);

}  // namespace proxytta

#endif  // PROXYTTA_LOSSES_HPP_
