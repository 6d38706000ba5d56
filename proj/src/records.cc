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

#include "maskdesk/records.h"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <fstream>
#include <numeric>
#include <sstream>

namespace maskdesk::records {
namespace {

namespace fs = std::filesystem;

enum class Tag : std::uint8_t { kBytes = 0, kInt64 = 1, kFloat = 2 };

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

// Bounds-checked little-endian cursor over a byte buffer.
class Cursor {
 public:
  explicit Cursor(std::string_view data) : data_(data) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  std::string_view take(std::uint64_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > remaining()) {
      throw Error(std::string("payload truncated reading ") + what);
    }
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string shard_name(std::size_t i, std::size_t n) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "shard-%05zu-of-%05zu.mfr", i, n);
  return buf;
}

}  // namespace

std::uint32_t crc32(std::string_view data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  std::size_t pos = 0;
  while (pos < data.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(data.size() - pos, 1u << 30));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(data.data() + pos), n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string encode_payload(const RecordEntry& entry) {
  std::string out;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entry.size()));
  for (const auto& [key, value] : entry) {
    if (key.size() > 0xffff) throw Error("record key longer than 65535 bytes");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(key.size()));
    out += key;
    std::visit(
        [&out](const auto& v) {
          using V = std::decay_t<decltype(v)>;
          if (v.size() > 0xffffffffULL) throw Error("record value too large");
          if constexpr (std::is_same_v<V, Bytes>) {
            out.push_back(static_cast<char>(Tag::kBytes));
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
            out += v;
          } else if constexpr (std::is_same_v<V, Int64List>) {
            out.push_back(static_cast<char>(Tag::kInt64));
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
            for (std::int64_t x : v) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(x));
          } else {
            out.push_back(static_cast<char>(Tag::kFloat));
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
            for (float x : v) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(x));
          }
        },
        value);
  }
  return out;
}

RecordEntry decode_payload(std::string_view payload) {
  Cursor cur(payload);
  RecordEntry entry;
  const auto keys = cur.get<std::uint32_t>("key count");
  for (std::uint32_t k = 0; k < keys; ++k) {
    const auto key_len = cur.get<std::uint16_t>("key length");
    std::string key(cur.take(key_len, "key"));
    const auto tag = cur.get<std::uint8_t>("type tag");
    const auto count = cur.get<std::uint32_t>("value count");
    FeatureValue value;
    switch (static_cast<Tag>(tag)) {
      case Tag::kBytes:
        value = Bytes(cur.take(count, "bytes value"));
        break;
      case Tag::kInt64: {
        if (std::uint64_t{count} * 8 > cur.remaining()) throw Error("payload truncated reading i64 list");
        Int64List v(count);
        for (auto& x : v) x = static_cast<std::int64_t>(cur.get<std::uint64_t>("i64"));
        value = std::move(v);
        break;
      }
      case Tag::kFloat: {
        if (std::uint64_t{count} * 4 > cur.remaining()) throw Error("payload truncated reading f32 list");
        FloatList v(count);
        for (auto& x : v) x = std::bit_cast<float>(cur.get<std::uint32_t>("f32"));
        value = std::move(v);
        break;
      }
      default:
        throw Error("unknown type tag " + std::to_string(tag) + " for key '" + key + "'");
    }
    if (!entry.emplace(std::move(key), std::move(value)).second) {
      throw Error("duplicate key in payload");
    }
  }
  if (cur.remaining() != 0) throw Error("trailing bytes after payload");
  return entry;
}

std::uint64_t record_size(const RecordEntry& entry) {
  return kRecordHeaderBytes + encode_payload(entry).size();
}

double ShardSet::balance_ratio() const {
  if (shards.empty()) return 1.0;
  auto [lo, hi] = std::minmax_element(
      shards.begin(), shards.end(),
      [](const ShardInfo& a, const ShardInfo& b) { return a.bytes < b.bytes; });
  return static_cast<double>(hi->bytes) / static_cast<double>(lo->bytes);
}

std::vector<std::size_t> assign_to_shards(std::span<const std::uint64_t> sizes,
                                          std::size_t shard_count) {
  if (shard_count == 0) throw ContractError("shard_count must be >= 1");
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
  std::vector<std::uint64_t> load(shard_count, 0);
  std::vector<std::size_t> assignment(sizes.size());
  for (std::size_t idx : order) {
    const auto target = static_cast<std::size_t>(
        std::min_element(load.begin(), load.end()) - load.begin());
    assignment[idx] = target;
    load[target] += sizes[idx];
  }
  return assignment;
}

ShardSet write_shards(const std::vector<RecordEntry>& entries,
                      std::size_t shard_count, const fs::path& out_dir,
                      const ClassTable& class_table) {
  if (shard_count == 0) throw ContractError("shard_count must be >= 1");
  if (entries.empty()) throw ContractError("write_shards: no entries");

  std::vector<std::string> payloads;
  payloads.reserve(entries.size());
  std::vector<std::uint64_t> sizes;
  for (const auto& e : entries) {
    payloads.push_back(encode_payload(e));
    if (payloads.back().size() >= kMaxPayloadBytes) {
      throw Error("record of " + std::to_string(payloads.back().size()) +
                  " bytes exceeds the 2^32 byte limit");
    }
    sizes.push_back(kRecordHeaderBytes + payloads.back().size());
  }
  const auto assignment = assign_to_shards(sizes, shard_count);

  ShardSet set;
  set.dir = out_dir;
  set.record_count = entries.size();
  set.class_table = class_table;
  std::sort(set.class_table.begin(), set.class_table.end());
  for (std::size_t s = 0; s < shard_count; ++s) {
    set.shards.push_back({shard_name(s, shard_count), 0, kFileHeaderBytes});
  }

  std::vector<fs::path> created;
  try {
    fs::create_directories(out_dir);
    std::vector<std::ofstream> files;
    for (std::size_t s = 0; s < shard_count; ++s) {
      created.push_back(set.shard_path(s));
      files.emplace_back(created.back(), std::ios::binary | std::ios::trunc);
      if (!files.back()) throw Error("cannot open " + created.back().string());
      std::string header(kMagic);
      put_le<std::uint32_t>(header, kVersion);
      files.back().write(header.data(), static_cast<std::streamsize>(header.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const std::size_t s = assignment[i];
      std::string head;
      put_le<std::uint64_t>(head, payloads[i].size());
      put_le<std::uint32_t>(head, crc32(payloads[i]));
      files[s].write(head.data(), static_cast<std::streamsize>(head.size()));
      files[s].write(payloads[i].data(), static_cast<std::streamsize>(payloads[i].size()));
      set.shards[s].records += 1;
      set.shards[s].bytes += sizes[i];
    }
    for (std::size_t s = 0; s < shard_count; ++s) {
      files[s].close();
      if (!files[s]) throw Error("write failed for " + created[s].string());
    }
    created.push_back(out_dir / kManifestName);
    write_manifest(set);
  } catch (...) {
    std::error_code ec;
    for (const auto& p : created) fs::remove(p, ec);
    throw;
  }
  return set;
}

void write_manifest(const ShardSet& set) {
  const auto path = set.dir / kManifestName;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string());
  out << "# maskdesk shard manifest\n";
  out << "format = " << kMagic << "\n";
  out << "version = " << kVersion << "\n";
  out << "record_count = " << set.record_count << "\n";
  out << "shard_count = " << set.shards.size() << "\n";
  for (const auto& s : set.shards) {
    out << "shard = " << s.name << ' ' << s.records << ' ' << s.bytes << "\n";
  }
  for (const auto& [orig, contiguous] : set.class_table) {
    out << "class = " << orig << ' ' << contiguous << "\n";
  }
  if (!out) throw Error("write failed for " + path.string());
}

ShardSet load_manifest(const fs::path& dir) {
  const auto path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  ShardSet set;
  set.dir = dir;
  std::size_t declared_shards = 0;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    std::istringstream value(trim(line.substr(eq + 1)));
    if (key == "format") {
      std::string f;
      value >> f;
      if (f != kMagic) throw Error("unsupported shard format '" + f + "'");
    } else if (key == "version") {
      std::uint32_t v = 0;
      value >> v;
      if (v != kVersion) throw Error("unsupported shard version " + std::to_string(v));
    } else if (key == "record_count") {
      value >> set.record_count;
    } else if (key == "shard_count") {
      value >> declared_shards;
    } else if (key == "shard") {
      ShardInfo info;
      value >> info.name >> info.records >> info.bytes;
      set.shards.push_back(info);
    } else if (key == "class") {
      std::int64_t a = 0, b = 0;
      value >> a >> b;
      set.class_table.emplace_back(a, b);
    }
    if (value.fail()) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  if (declared_shards != set.shards.size()) {
    throw Error("manifest declares " + std::to_string(declared_shards) +
                " shards but lists " + std::to_string(set.shards.size()));
  }
  return set;
}

ShardReader::ShardReader(fs::path path) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw RecordError(path_.string(), 0, "cannot open shard");
  std::ostringstream buf;
  buf << in.rdbuf();
  data_ = std::move(buf).str();
  if (data_.size() < kFileHeaderBytes || std::string_view(data_).substr(0, 4) != kMagic) {
    throw RecordError(path_.string(), 0, "bad magic");
  }
  Cursor cur(std::string_view(data_).substr(4, 4));
  const auto version = cur.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw RecordError(path_.string(), 4, "unsupported version " + std::to_string(version));
  }
  offset_ = kFileHeaderBytes;
}

bool ShardReader::next(RecordEntry& entry) {
  if (offset_ == data_.size()) return false;
  const std::uint64_t start = offset_;
  const std::uint64_t left = data_.size() - start;
  if (left < kRecordHeaderBytes) {
    throw RecordError(path_.string(), start, "truncated record header");
  }
  Cursor head(std::string_view(data_).substr(start, kRecordHeaderBytes));
  const auto length = head.get<std::uint64_t>("length");
  const auto crc = head.get<std::uint32_t>("crc");
  if (length > left - kRecordHeaderBytes) {
    throw RecordError(path_.string(), start,
                      "truncated record: payload of " + std::to_string(length) +
                          " bytes, " + std::to_string(left - kRecordHeaderBytes) +
                          " available");
  }
  const auto payload = std::string_view(data_).substr(start + kRecordHeaderBytes, length);
  if (crc32(payload) != crc) throw RecordError(path_.string(), start, "checksum mismatch");
  try {
    entry = decode_payload(payload);
  } catch (const Error& e) {
    throw RecordError(path_.string(), start, e.what());
  }
  offset_ = start + kRecordHeaderBytes + length;
  return true;
}

std::vector<RecordEntry> read_shard(const fs::path& path) {
  ShardReader reader(path);
  std::vector<RecordEntry> out;
  RecordEntry e;
  while (reader.next(e)) out.push_back(std::move(e));
  return out;
}

void for_each_record(const ShardSet& set,
                     const std::function<void(const RecordEntry&)>& visit) {
  for (std::size_t s = 0; s < set.shards.size(); ++s) {
    ShardReader reader(set.shard_path(s));
    RecordEntry e;
    while (reader.next(e)) visit(e);
  }
}

std::vector<RecordEntry> read_shards(const ShardSet& set) {
  std::vector<RecordEntry> out;
  for_each_record(set, [&out](const RecordEntry& e) { out.push_back(e); });
  return out;
}

}  // namespace maskdesk::records
