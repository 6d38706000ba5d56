// Copyright 2026 The maskdesk Authors
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

#include <cstdint>
#include <stdexcept>
#include <string>

namespace maskdesk {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents do not satisfy an op's shape contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition (non-scalar loss, non-square
// cost matrix, mixed batch sizes, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed shard data. Carries the shard path and the byte offset of the
// record that failed to parse.
class RecordError : public Error {
 public:
  RecordError(const std::string& shard, std::uint64_t offset,
              const std::string& what)
      : Error(shard + " @" + std::to_string(offset) + ": " + what),
        shard_(shard),
        offset_(offset) {}

  const std::string& shard() const { return shard_; }
  std::uint64_t offset() const { return offset_; }

 private:
  std::string shard_;
  std::uint64_t offset_;
};

// Class id that is not present in the contiguous id mapping.
class UnknownClassError : public Error {
 public:
  explicit UnknownClassError(std::int64_t id)
      : Error("unknown class id " + std::to_string(id)), id_(id) {}
  std::int64_t id() const { return id_; }

 private:
  std::int64_t id_;
};

// More ground-truth segments than model queries.
class TargetOverflowError : public Error {
 public:
  TargetOverflowError(std::int64_t targets, std::int64_t queries)
      : Error("target overflow: " + std::to_string(targets) +
              " targets > " + std::to_string(queries) + " queries") {}
};

// Bad evaluator input (e.g. overlapping segments).
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace maskdesk
