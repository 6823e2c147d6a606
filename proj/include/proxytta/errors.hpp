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

#ifndef PROXYTTA_ERRORS_HPP_
#define PROXYTTA_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace proxytta {

enum class ErrorKind {
  Config,
  Format,
  EmptySupport,
  DegenerateEmbedding,
  Contract,
  Lifecycle,
  Training,
  Protocol,
  Report,
};

const char* to_string(ErrorKind kind);

/// Base of every error this library raises. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};

/// Malformed or missing on-disk data; the message names the offending file.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& w) : Error(ErrorKind::Format, w) {}
};

/// A masked mean was requested over an empty pixel set.
class EmptySupportError : public Error {
 public:
  explicit EmptySupportError(const std::string& w)
      : Error(ErrorKind::EmptySupport, w) {}
};

class DegenerateEmbeddingError : public Error {
 public:
  explicit DegenerateEmbeddingError(const std::string& w)
      : Error(ErrorKind::DegenerateEmbedding, w) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& w) : Error(ErrorKind::Contract, w) {}
};

class LifecycleError : public Error {
 public:
  explicit LifecycleError(const std::string& w)
      : Error(ErrorKind::Lifecycle, w) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& w) : Error(ErrorKind::Training, w) {}
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& w) : Error(ErrorKind::Protocol, w) {}
};

class ReportError : public Error {
 public:
  explicit ReportError(const std::string& w) : Error(ErrorKind::Report, w) {}
};

}  // namespace proxytta

#endif  // PROXYTTA_ERRORS_HPP_
