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

// Differentiable tensor ops. Every op is pure: inputs are never modified.
// Broadcasting is limited to tensor-scalar forms plus add_bias; anything
// else needs an explicit reshape/tile.

#include <cstdint>
#include <vector>

#include "maskdesk/tensor.h"

namespace maskdesk {

// [m,k] x [k,n] -> [m,n].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Batched product: [B,m,k] x [B,k,n] -> [B,m,n], or with transpose_b
// [B,m,k] x [B,n,k]^T -> [B,m,n].
template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b,
                   bool transpose_b = false);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T s);
template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& x, T s);
// x[..., C] + bias[C].
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);
// Natural log; non-positive inputs give -inf/NaN like std::log.
template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x);

// Max-subtracted softmax along `axis`. NaN inputs propagate to the whole
// slice that contains them.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::int64_t axis = -1);

// Normalizes over the last axis then applies scale/shift of shape [C].
// Statistics accumulate in double regardless of T.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps = 1e-5);

// NHWC convolution. weight is [KH, KW, C_in, C_out], bias is [C_out].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding);

// [B,H,W,C] -> [B,2H,2W,C], each input pixel copied to a 2x2 block.
template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x);

// Scaled dot-product attention split across `heads` channel groups.
// q: [B,Lq,C], k and v: [B,Lk,C]; softmax runs over the key axis.
template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& q,
                                    const BasicTensor<T>& k,
                                    const BasicTensor<T>& v, int heads);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
// 2-D transpose.
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x,
                       const std::vector<std::int64_t>& axes);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

// x[index] along axis 0.
template <typename T>
BasicTensor<T> select(const BasicTensor<T>& x, std::int64_t index);
// Rows of x along axis 0, in the order given (repeats allowed).
template <typename T>
BasicTensor<T> index_select(const BasicTensor<T>& x,
                            const std::vector<std::int64_t>& indices);
// Stacks equally shaped tensors along a new leading axis.
template <typename T>
BasicTensor<T> stack(const std::vector<BasicTensor<T>>& xs);
// [1,...] -> [n,...].
template <typename T>
BasicTensor<T> tile_batch(const BasicTensor<T>& x, std::int64_t n);

}  // namespace maskdesk
