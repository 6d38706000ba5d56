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

// Dense GEMM on contiguous row-major buffers, backed by Eigen.

#include <cstdint>

namespace maskdesk::kernels {

// C[M,N] = op(A) * op(B)  (or += when accumulate). op(A) is [M,K]; with
// trans_a the buffer A holds [K,M]. Same for B with [K,N] / [N,K].
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n,
          std::int64_t k, const T* a, const T* b, T* c, bool accumulate);

}  // namespace maskdesk::kernels
