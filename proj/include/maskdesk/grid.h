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

#include <algorithm>
#include <cstdint>
#include <vector>

#include "maskdesk/error.h"

namespace maskdesk {

// Row-major 2-D grid of small integer values (labels, binary masks).
template <typename V>
struct Grid {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<V> values;

  Grid() = default;
  Grid(std::int64_t h, std::int64_t w, V fill = V{})
      : height(h), width(w), values(static_cast<std::size_t>(h * w), fill) {}
  Grid(std::int64_t h, std::int64_t w, std::vector<V> v)
      : height(h), width(w), values(std::move(v)) {
    if (static_cast<std::int64_t>(values.size()) != h * w) {
      throw ShapeError("grid " + std::to_string(h) + "x" + std::to_string(w) +
                       " given " + std::to_string(values.size()) + " values");
    }
  }

  V& operator()(std::int64_t y, std::int64_t x) { return values[y * width + x]; }
  const V& operator()(std::int64_t y, std::int64_t x) const {
    return values[y * width + x];
  }
  std::int64_t size() const { return height * width; }
  std::int64_t count_nonzero() const {
    return std::count_if(values.begin(), values.end(), [](V v) { return v != V{}; });
  }
  template <typename U>
  bool same_extent(const Grid<U>& o) const {
    return height == o.height && width == o.width;
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using BinaryMask = Grid<std::uint8_t>;
using LabelGrid = Grid<std::int32_t>;

// Picks the pixel nearest to each destination pixel centre:
// src = floor((dst + 0.5) * src_extent / dst_extent).
template <typename V>
Grid<V> resize_nearest(const Grid<V>& src, std::int64_t out_h, std::int64_t out_w) {
  Grid<V> out(out_h, out_w);
  for (std::int64_t y = 0; y < out_h; ++y) {
    const auto sy = std::min<std::int64_t>(src.height - 1, (2 * y + 1) * src.height / (2 * out_h));
    for (std::int64_t x = 0; x < out_w; ++x) {
      const auto sx = std::min<std::int64_t>(src.width - 1, (2 * x + 1) * src.width / (2 * out_w));
      out(y, x) = src(sy, sx);
    }
  }
  return out;
}

// Nearest-neighbour reduction by an integer factor (extents must divide).
template <typename V>
Grid<V> downsample_nearest(const Grid<V>& src, std::int64_t factor) {
  if (factor < 1 || src.height % factor || src.width % factor) {
    throw ShapeError("cannot downsample " + std::to_string(src.height) + "x" +
                     std::to_string(src.width) + " by " + std::to_string(factor));
  }
  return resize_nearest(src, src.height / factor, src.width / factor);
}

}  // namespace maskdesk
