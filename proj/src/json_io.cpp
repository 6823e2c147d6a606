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

#include "json_io.hpp"

#include "proxytta/errors.hpp"

namespace proxytta {

using nlohmann::json;

json to_json(const ModelConfig& c) {
  return json{{"height", c.height},
              {"width", c.width},
              {"image_channels", c.image_channels},
              {"depth_channels", c.depth_channels},
              {"fusion_width", c.fusion_width},
              {"decoder_widths", c.decoder_widths},
              {"use_batch_norm", c.use_batch_norm},
              {"adaptation_channels", c.adaptation_channels},
              {"adaptation_kernel", c.adaptation_kernel},
              {"max_depth", c.max_depth}};
}

ModelConfig model_config_from_json(const json& j) {
  try {
    ModelConfig c;
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.image_channels = j.at("image_channels").get<std::array<int, 3>>();
    c.depth_channels = j.at("depth_channels").get<std::array<int, 3>>();
    c.fusion_width = j.at("fusion_width").get<int>();
    c.decoder_widths = j.at("decoder_widths").get<std::array<int, 3>>();
    c.use_batch_norm = j.at("use_batch_norm").get<bool>();
    c.adaptation_channels = j.at("adaptation_channels").get<int>();
    c.adaptation_kernel = j.at("adaptation_kernel").get<int>();
    c.max_depth = j.at("max_depth").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

json to_json(const ProxyConfig& c) {
  return json{{"embed_dim", c.embed_dim},
              {"hidden_dim", c.hidden_dim},
              {"tau", c.tau}};
}

ProxyConfig proxy_config_from_json(const json& j) {
  try {
    ProxyConfig c;
    c.embed_dim = j.at("embed_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.tau = j.at("tau").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("proxy config: ") + e.what());
  }
}

}  // namespace proxytta
