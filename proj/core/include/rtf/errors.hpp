/*
 * Copyright 2026-present the rtfusion authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace rtf {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or axis mismatch; the message names the offending shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input values outside the documented domain (e.g. labels not in {0,1}).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An operation was called in violation of its contract (e.g. non-scalar loss).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// An operation requires state that has not been established (e.g. no cached
/// forward pass) or has already been consumed (e.g. backward run twice).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (bad hyperparameter, malformed config file).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A metric's preconditions do not hold (e.g. AUC with a single class).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values were produced where finiteness is guaranteed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or encoding failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Dataset generation could not satisfy the requested invariants.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// The requested operation is not defined for the given mode or strategy.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace rtf
