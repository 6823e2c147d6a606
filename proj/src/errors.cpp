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

#include "proxytta/errors.hpp"

namespace proxytta {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Format: return "format";
    case ErrorKind::EmptySupport: return "empty_support";
    case ErrorKind::DegenerateEmbedding: return "degenerate_embedding";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Lifecycle: return "lifecycle";
    case ErrorKind::Training: return "training";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::Report: return "report";
  }
  return "unknown";
}

}  // namespace proxytta
