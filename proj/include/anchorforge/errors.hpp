// Copyright 2026 The AnchorForge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace anchorforge {

// Malformed input: annotation files, canonical datasets, anchor files,
// config files. `location` is a line number or byte offset when known
// (0 otherwise).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t location = 0)
      : std::runtime_error(what), location_(location) {}

  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

// Non-finite loss or parameters during optimization.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, long iteration)
      : std::runtime_error(what), iteration_(iteration) {}

  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

}  // namespace anchorforge
