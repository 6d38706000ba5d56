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

#include "maskdesk/tensor.h"

namespace maskdesk {

// Fixed sine/cosine embedding of a h x w grid, shape [1, h, w, channels].
//
// Half of the channels encode the row, half the column. Coordinates run
// 1..h (1..w), are divided by the extent and scaled by 2*pi. Channel i of
// each half uses frequency 10000^(2*floor(i/2)/(channels/2)), sine on even i
// and cosine on odd i. Row channels come first.
//
// Throws ConfigError when channels is odd or zero.
template <typename T = float>
BasicTensor<T> sine_position_embedding(std::int64_t h, std::int64_t w,
                                       std::int64_t channels);

}  // namespace maskdesk
