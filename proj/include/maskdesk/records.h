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

// Binary record shards.
//
// Shard file:  "MFR1" | u32 version | record*
// Record:      u64 payload length | u32 CRC32(payload) | payload
// Payload:     u32 key count, then per key (in sorted key order):
//              u16 key length | key bytes | u8 type tag | u32 count | values
//              tag 0 = bytes (count = byte length)
//              tag 1 = i64 list, tag 2 = f32 list (count = element count)
// All integers and floats are little-endian.
//
// A directory of shards is described by a plain-text manifest
// (manifest.txt) listing every shard with its record count and byte size,
// plus the original -> contiguous class id table.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "maskdesk/error.h"

namespace maskdesk::records {

using Bytes = std::string;
using Int64List = std::vector<std::int64_t>;
using FloatList = std::vector<float>;
using FeatureValue = std::variant<Bytes, Int64List, FloatList>;
using RecordEntry = std::map<std::string, FeatureValue>;

inline constexpr std::string_view kMagic = "MFR1";
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint64_t kFileHeaderBytes = 8;
inline constexpr std::uint64_t kRecordHeaderBytes = 12;
inline constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t{1} << 32;
inline constexpr std::string_view kManifestName = "manifest.txt";

// Keys every panoptic sample carries.
namespace keys {
inline constexpr const char* kHeight = "image/height";
inline constexpr const char* kWidth = "image/width";
inline constexpr const char* kEncoded = "image/encoded";
inline constexpr const char* kImageId = "image/id";
inline constexpr const char* kContiguousMask = "segmentation/contiguous_mask";
inline constexpr const char* kInstanceMask = "segmentation/instance_mask";
}  // namespace keys

std::uint32_t crc32(std::string_view data);

std::string encode_payload(const RecordEntry& entry);
// Throws Error on malformed payloads.
RecordEntry decode_payload(std::string_view payload);

// Serialized size of one record including its 12-byte header.
std::uint64_t record_size(const RecordEntry& entry);

struct ShardInfo {
  std::string name;
  std::uint64_t records = 0;
  std::uint64_t bytes = 0;
};

using ClassTable = std::vector<std::pair<std::int64_t, std::int64_t>>;

struct ShardSet {
  std::filesystem::path dir;
  std::vector<ShardInfo> shards;
  std::uint64_t record_count = 0;
  // (original id, contiguous id), sorted by original id.
  ClassTable class_table;

  std::filesystem::path shard_path(std::size_t i) const {
    return dir / shards.at(i).name;
  }
  // Largest shard byte size over the smallest.
  double balance_ratio() const;
};

// Largest-record-first greedy packing: each record goes to the shard with
// the fewest bytes so far, ties to the lowest shard index. Returns the
// shard index of every record.
std::vector<std::size_t> assign_to_shards(std::span<const std::uint64_t> sizes,
                                          std::size_t shard_count);

// Writes `entries` into `shard_count` balanced shards plus a manifest under
// out_dir (created if missing). Within a shard records keep input order.
// On failure every file created by this call is removed before rethrowing.
ShardSet write_shards(const std::vector<RecordEntry>& entries,
                      std::size_t shard_count,
                      const std::filesystem::path& out_dir,
                      const ClassTable& class_table = {});

void write_manifest(const ShardSet& set);
ShardSet load_manifest(const std::filesystem::path& dir);

// Sequential reader over one shard file.
class ShardReader {
 public:
  explicit ShardReader(std::filesystem::path path);

  // Returns false at a clean end of file. Throws RecordError naming the
  // shard and the offset of the offending record.
  bool next(RecordEntry& entry);
  std::uint64_t offset() const { return offset_; }

 private:
  std::filesystem::path path_;
  std::string data_;
  std::uint64_t offset_ = 0;
};

std::vector<RecordEntry> read_shard(const std::filesystem::path& path);

// Visits records in (shard index, record index) order.
void for_each_record(const ShardSet& set,
                     const std::function<void(const RecordEntry&)>& visit);
std::vector<RecordEntry> read_shards(const ShardSet& set);

}  // namespace maskdesk::records
