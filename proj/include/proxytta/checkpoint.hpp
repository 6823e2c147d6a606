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

#ifndef PROXYTTA_CHECKPOINT_HPP_
#define PROXYTTA_CHECKPOINT_HPP_

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "proxytta/model.hpp"
#include "proxytta/optim.hpp"
#include "proxytta/proxy.hpp"

namespace proxytta {

inline constexpr int kCheckpointVersion = 1;

struct OptimizerState {
  double lr = 0.0;
  long long steps = 0;
  std::map<std::string, Adam::Moments> moments;
};

/// On-disk layout: 8-byte magic, u32 LE header length, JSON header, then a
/// blob of little-endian float32 tensors at the offsets the header lists.
/// Model tensors keep their group-prefixed names; proxy heads live under
/// `proxy/` and optimizer moments under `optim/m/` and `optim/v/`.
struct Checkpoint {
  ModelParams model;
  std::optional<ProxyHeads> heads;
  std::optional<OptimizerState> optimizer;
  /// Free-form string metadata (stage name, epoch, step counters).
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every tensor through float32, matching what a save/load would do.
void quantize_to_float32(std::vector<Parameter>& params);

OptimizerState capture(const Adam& adam);
void restore(Adam& adam, const OptimizerState& state);

}  // namespace proxytta

#endif  // PROXYTTA_CHECKPOINT_HPP_
