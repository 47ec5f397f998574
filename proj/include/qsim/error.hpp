// Copyright 2026 The qsim Authors. All Rights Reserved.
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

#ifndef QSIM_ERROR_HPP_
#define QSIM_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qsim {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed format string, config file or manifest. `position` is the
/// zero-based character offset of the offending token when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position = 0)
      : Error(what + " (at position " + std::to_string(position) + ")"),
        position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (nonpositive scale, bad bit width, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// File I/O and dataset problems.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss, divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace qsim

#endif  // QSIM_ERROR_HPP_
