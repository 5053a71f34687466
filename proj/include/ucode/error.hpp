// Copyright 2026 The ucode Authors
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

#ifndef UCODE_ERROR_HPP_
#define UCODE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace ucode {

// Base class for every error raised by the toolchain. Emulated CPU faults are
// not errors; they are reported as values (see engine.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EncodingError : public Error {
 public:
  EncodingError(const std::string& field, const std::string& detail)
      : Error("encoding error in field '" + field + "': " + detail),
        field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

// Syntax or semantic error in RTL or x86 assembly text. line() is 1-based,
// 0 when the error is not tied to a line.
class AssemblyError : public Error {
 public:
  AssemblyError(int line, const std::string& detail)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + detail
                       : detail),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class MappingError : public Error {
 public:
  using Error::Error;
};

class UpdateError : public Error {
 public:
  using Error::Error;
};

class EngineError : public Error {
 public:
  using Error::Error;
};

}  // namespace ucode

#endif  // UCODE_ERROR_HPP_
