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

#include "maskdesk/dataset.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"

namespace maskdesk::dataset {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum Shape { kCircle = 0, kRectangle = 1, kTriangle = 2, kBand = 3 };

struct Rgb {
  int r, g, b;
};

// Base colours per category; pixels get jittered around them.
constexpr Rgb kPalette[] = {{220, 60, 50}, {60, 190, 70}, {60, 90, 220}, {200, 180, 90}};

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

std::uint8_t clamp_byte(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

std::string image_name(std::int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "images/%06lld.ppm", static_cast<long long>(i));
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

const std::vector<Category>& synth_categories() {
  static const std::vector<Category> cats{
      {3, "circle", true}, {7, "rectangle", true}, {12, "triangle", true}, {25, "band", false}};
  return cats;
}

void write_ppm(const fs::path& path, std::int64_t height, std::int64_t width,
               const std::vector<std::uint8_t>& rgb) {
  if (static_cast<std::int64_t>(rgb.size()) != height * width * 3) {
    throw ContractError("write_ppm: pixel buffer does not match " + std::to_string(height) +
                        "x" + std::to_string(width));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

std::vector<std::uint8_t> read_ppm(const fs::path& path, std::int64_t& height,
                                   std::int64_t& width) {
  const std::string data = slurp(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const auto start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  };
  if (token() != "P6") throw InputError(path.string() + ": not a binary PPM (P6)");
  try {
    width = std::stoll(token());
    height = std::stoll(token());
    if (std::stoll(token()) != 255) throw InputError(path.string() + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw InputError(path.string() + ": malformed PPM header");
  }
  ++pos;  // single whitespace before the raster
  const auto n = static_cast<std::size_t>(height * width * 3);
  if (height <= 0 || width <= 0 || data.size() < pos + n) {
    throw InputError(path.string() + ": truncated PPM raster");
  }
  return {data.begin() + static_cast<std::ptrdiff_t>(pos),
          data.begin() + static_cast<std::ptrdiff_t>(pos + n)};
}

std::vector<std::int64_t> rle_encode(const LabelGrid& g) {
  std::vector<std::int64_t> out;
  for (std::int64_t i = 0; i < g.size(); ++i) {
    const auto v = g.values[i];
    if (!out.empty() && out[out.size() - 2] == v) {
      ++out.back();
    } else {
      out.push_back(v);
      out.push_back(1);
    }
  }
  return out;
}

LabelGrid rle_decode(const std::vector<std::int64_t>& counts, std::int64_t height,
                     std::int64_t width) {
  if (counts.size() % 2) throw InputError("segmentation runs must come in (value, length) pairs");
  LabelGrid g(height, width);
  std::int64_t at = 0;
  for (std::size_t i = 0; i < counts.size(); i += 2) {
    const auto v = counts[i], n = counts[i + 1];
    if (n < 0 || at + n > g.size()) throw InputError("segmentation runs overflow the image");
    std::fill_n(g.values.begin() + at, n, static_cast<std::int32_t>(v));
    at += n;
  }
  if (at != g.size()) {
    throw InputError("segmentation runs cover " + std::to_string(at) + " of " +
                     std::to_string(g.size()) + " pixels");
  }
  return g;
}

SynthSummary synth(std::int64_t n, const fs::path& out_dir, std::uint64_t seed) {
  if (n < 0) throw ContractError("synth: negative image count");
  fs::create_directories(out_dir / "images");
  const auto& cats = synth_categories();

  json categories = json::array();
  for (const auto& c : cats)
    categories.push_back({{"id", c.id}, {"name", c.name}, {"isthing", c.isthing ? 1 : 0}});
  std::ofstream(out_dir / "categories.json", std::ios::trunc) << categories.dump(1) << '\n';

  SynthSummary summary;
  summary.segments_per_category.assign(cats.size(), 0);
  std::mt19937_64 rng(seed);
  std::ofstream ann(out_dir / "annotations.jsonl", std::ios::trunc);
  auto uniform = [&](std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  };

  for (std::int64_t img = 0; img < n; ++img) {
    const auto h = uniform(48, 96), w = uniform(48, 96);
    LabelGrid seg(h, w);
    std::vector<std::int64_t> seg_category;  // segment id - 1 -> category index

    if (uniform(0, 9) < 8) {
      const auto top = h - uniform(h / 5, 2 * h / 5);
      seg_category.push_back(kBand);
      for (auto y = top; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) seg(y, x) = static_cast<std::int32_t>(seg_category.size());
    }
    const auto shapes = uniform(1, 4);
    for (std::int64_t s = 0; s < shapes; ++s) {
      const auto kind = uniform(0, 2);
      const auto size = uniform(10, std::min(h, w) / 2);
      const double cy = static_cast<double>(uniform(0, h - 1));
      const double cx = static_cast<double>(uniform(0, w - 1));
      const double r = static_cast<double>(size) / 2;
      // Triangle corners: apex up.
      const double ax = cx, ay = cy - r, bx = cx - r, by = cy + r, ex = cx + r, ey = cy + r;
      seg_category.push_back(kind);
      const auto id = static_cast<std::int32_t>(seg_category.size());
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
          bool inside = false;
          if (kind == kCircle) {
            inside = (py - cy) * (py - cy) + (px - cx) * (px - cx) <= r * r;
          } else if (kind == kRectangle) {
            inside = std::abs(py - cy) <= r && std::abs(px - cx) <= 0.7 * r;
          } else {
            inside = edge(ax, ay, bx, by, px, py) <= 0 && edge(bx, by, ex, ey, px, py) <= 0 &&
                     edge(ex, ey, ax, ay, px, py) <= 0;
          }
          if (inside) seg(y, x) = id;
        }
    }

    // Fully occluded segments are not listed.
    std::vector<std::int64_t> area(seg_category.size() + 1, 0);
    for (auto v : seg.values) ++area[v];

    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h * w * 3));
    const int bg = static_cast<int>(uniform(20, 90));
    std::vector<Rgb> tint(seg_category.size());
    for (std::size_t k = 0; k < seg_category.size(); ++k) {
      const Rgb base = kPalette[seg_category[k]];
      tint[k] = {base.r + static_cast<int>(uniform(-25, 25)),
                 base.g + static_cast<int>(uniform(-25, 25)),
                 base.b + static_cast<int>(uniform(-25, 25))};
    }
    for (std::int64_t i = 0; i < h * w; ++i) {
      const auto v = seg.values[i];
      const Rgb c = v ? tint[v - 1] : Rgb{bg, bg, bg};
      const int noise = static_cast<int>(uniform(-12, 12));
      rgb[3 * i] = clamp_byte(c.r + noise);
      rgb[3 * i + 1] = clamp_byte(c.g + noise);
      rgb[3 * i + 2] = clamp_byte(c.b + noise);
    }
    const std::string file = image_name(img);
    write_ppm(out_dir / file, h, w, rgb);

    json info = json::array();
    for (std::size_t k = 0; k < seg_category.size(); ++k) {
      if (!area[k + 1]) continue;
      info.push_back({{"id", k + 1}, {"category_id", cats[seg_category[k]].id}});
      ++summary.segments_per_category[seg_category[k]];
    }
    json line = {{"image_id", img},   {"file_name", file},     {"height", h},
                 {"width", w},        {"segments_info", info}, {"segmentation", rle_encode(seg)}};
    ann << line.dump() << '\n';
    ++summary.images;
  }
  return summary;
}

std::vector<Category> read_categories(const fs::path& path) {
  std::vector<Category> out;
  try {
    for (const auto& c : json::parse(slurp(path))) {
      out.push_back({c.at("id").get<std::int64_t>(), c.value("name", std::string()),
                     c.value("isthing", 1) != 0});
    }
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return out;
}

std::vector<Annotation> read_annotations(const fs::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw InputError("cannot open " + jsonl.string());
  std::vector<Annotation> out;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      Annotation a;
      a.image_id = j.at("image_id").get<std::int64_t>();
      a.file_name = j.at("file_name").get<std::string>();
      a.height = j.at("height").get<std::int64_t>();
      a.width = j.at("width").get<std::int64_t>();
      for (const auto& s : j.at("segments_info"))
        a.segments.emplace_back(s.at("id").get<std::int64_t>(),
                                s.at("category_id").get<std::int64_t>());
      a.segment_ids =
          rle_decode(j.at("segmentation").get<std::vector<std::int64_t>>(), a.height, a.width);
      out.push_back(std::move(a));
    } catch (const json::exception& e) {
      throw InputError(jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

pipeline::RawSample to_raw_sample(const Annotation& ann, const std::vector<std::uint8_t>& rgb,
                                  const pipeline::IdMapper& mapper) {
  std::map<std::int64_t, std::pair<std::int32_t, std::int32_t>> lookup;  // seg -> (class, inst)
  for (std::size_t i = 0; i < ann.segments.size(); ++i) {
    const auto [seg, cat] = ann.segments[i];
    lookup[seg] = {static_cast<std::int32_t>(mapper.to_contiguous(cat)),
                   static_cast<std::int32_t>(i + 1)};
  }
  pipeline::RawSample s;
  s.height = ann.height;
  s.width = ann.width;
  s.image_id = ann.image_id;
  s.rgb = rgb;
  s.class_mask = LabelGrid(ann.height, ann.width);
  s.instance_mask = LabelGrid(ann.height, ann.width);
  for (std::int64_t i = 0; i < ann.segment_ids.size(); ++i) {
    const auto v = ann.segment_ids.values[i];
    if (v == 0) continue;
    auto it = lookup.find(v);
    if (it == lookup.end()) {
      throw InputError("image " + std::to_string(ann.image_id) + ": segment id " +
                       std::to_string(v) + " is not listed in segments_info");
    }
    s.class_mask.values[i] = it->second.first;
    s.instance_mask.values[i] = it->second.second;
  }
  return s;
}

IngestSummary ingest(const fs::path& raw_dir, std::size_t shard_count, const fs::path& out_dir) {
  std::vector<std::int64_t> ids;
  for (const auto& c : read_categories(raw_dir / "categories.json")) ids.push_back(c.id);
  const auto mapper = pipeline::build_id_mapper(ids);

  IngestSummary summary;
  std::vector<records::RecordEntry> entries;
  for (const auto& ann : read_annotations(raw_dir / "annotations.jsonl")) {
    std::int64_t h = 0, w = 0;
    auto rgb = read_ppm(raw_dir / ann.file_name, h, w);
    if (h != ann.height || w != ann.width) {
      throw InputError(ann.file_name + " is " + std::to_string(h) + "x" + std::to_string(w) +
                       " but its annotation says " + std::to_string(ann.height) + "x" +
                       std::to_string(ann.width));
    }
    entries.push_back(pipeline::to_record(to_raw_sample(ann, rgb, mapper)));
    summary.segments += static_cast<std::int64_t>(ann.segments.size());
  }
  if (entries.empty()) throw InputError(raw_dir.string() + ": no annotations to ingest");
  summary.shards = records::write_shards(entries, shard_count, out_dir, mapper.table());
  return summary;
}

}  // namespace maskdesk::dataset
