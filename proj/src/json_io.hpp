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

// JSON conversions shared by checkpoints and experiment configs.

#ifndef PROXYTTA_SRC_JSON_IO_HPP_
#define PROXYTTA_SRC_JSON_IO_HPP_

#include <json.hpp>

#include "proxytta/model.hpp"
#include "proxytta/proxy.hpp"

namespace proxytta {

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ProxyConfig& c);
ProxyConfig proxy_config_from_json(const nlohmann::json& j);

}  // namespace proxytta

#endif  // PROXYTTA_SRC_JSON_IO_HPP_
