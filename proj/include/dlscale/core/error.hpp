/*
 * Copyright 2026 The dlscale Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
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

namespace dlscale {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape/extent problems: mismatched lengths, bad graph shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Transport failures: unknown destination, broken connection, shutdown.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Malformed frames or control messages that violate the protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared in a numeric computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A post-run verification failed (rank divergence, missing staged data, ...).
class VerificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace dlscale
