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

#include "maskdesk/position_embedding.h"

#include <cmath>
#include <numbers>
#include <vector>

namespace maskdesk {

template <typename T>
BasicTensor<T> sine_position_embedding(std::int64_t h, std::int64_t w,
                                       std::int64_t channels) {
  if (channels <= 0 || channels % 2 != 0) {
    throw ConfigError("position embedding needs a positive even channel "
                      "count, got " + std::to_string(channels));
  }
  if (h < 0 || w < 0) throw ConfigError("negative position embedding extent");
  constexpr double kTemperature = 10000.0;
  constexpr double kEps = 1e-6;
  const double scale = 2.0 * std::numbers::pi;
  const std::int64_t half = channels / 2;

  std::vector<double> inv_freq(static_cast<std::size_t>(half));
  for (std::int64_t i = 0; i < half; ++i) {
    inv_freq[i] = 1.0 / std::pow(kTemperature,
                                 2.0 * static_cast<double>(i / 2) /
                                     static_cast<double>(half));
  }
  std::vector<T> out(static_cast<std::size_t>(h * w * channels));
  for (std::int64_t y = 0; y < h; ++y) {
    const double ycoord = (y + 1) / (h + kEps) * scale;
    for (std::int64_t x = 0; x < w; ++x) {
      const double xcoord = (x + 1) / (w + kEps) * scale;
      T* px = out.data() + (y * w + x) * channels;
      for (std::int64_t i = 0; i < half; ++i) {
        const double ay = ycoord * inv_freq[i];
        const double ax = xcoord * inv_freq[i];
        px[i] = static_cast<T>(i % 2 == 0 ? std::sin(ay) : std::cos(ay));
        px[half + i] = static_cast<T>(i % 2 == 0 ? std::sin(ax) : std::cos(ax));
      }
    }
  }
  return BasicTensor<T>({1, h, w, channels}, std::move(out));
}

template BasicTensor<float> sine_position_embedding<float>(std::int64_t,
                                                           std::int64_t,
                                                           std::int64_t);
template BasicTensor<double> sine_position_embedding<double>(std::int64_t,
                                                             std::int64_t,
                                                             std::int64_t);

}  // namespace maskdesk
