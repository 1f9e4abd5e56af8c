// Copyright 2026 The HelioQA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace helioqa {

/// Base of every error raised by the library. Callers that only need to
/// report and exit catch this; tests match on the concrete subclasses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or missing configuration (empty lexicon, vocab too small, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data rejected at a module boundary (bad UTF-8, empty answer, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Sequence longer than the model or prompt budget allows.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Token id outside the vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// A loss was requested over zero selected positions.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Operation not valid for the object's current state.
class StateError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Remote peer answered with something outside the wire contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Network transport failed (connection, timeout, retryable status).
class TransportError : public Error {
 public:
  using Error::Error;
};

/// A statistic is undefined for the given input (e.g. empty verdict list).
class UndefinedRateError : public Error {
 public:
  using Error::Error;
};

/// Internal invariant violated; indicates a bug rather than bad input.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace helioqa
