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

// Toy mask-classification network: conv backbone stub, pixel decoder
// (transformer encoder + upsampling convs), transformer decoder over learned
// queries, linear classifier and MLP mask-embedding head.
//
// Tensors are NHWC. Attention blocks use pre-norm residuals.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "maskdesk/losses.h"
#include "maskdesk/tensor.h"

namespace maskdesk {

struct ModelConfig {
  std::int64_t input_size = 640;
  std::int64_t n_queries = 100;
  std::int64_t hidden_size = 256;
  std::int64_t backbone_channels = 256;
  std::int64_t num_encoder_layers = 6;
  std::int64_t num_decoder_layers = 6;
  std::int64_t num_heads = 8;
  std::int64_t dim_feedforward = 2048;
  std::int64_t num_classes = 133;
  std::uint64_t seed = 0;

  // Throws ConfigError on inconsistent settings.
  void validate() const;
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<T>>>;

namespace nn {

template <typename T>
struct Linear {
  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;    // [out]
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;  // [..., in] -> [..., out]
};

template <typename T>
struct Conv {
  BasicTensor<T> weight;  // [k, k, in, out]
  BasicTensor<T> bias;
  int stride = 1;
  int padding = 0;
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
};

template <typename T>
struct Norm {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
};

template <typename T>
struct Attention {
  Linear<T> q, k, v, out;
  int heads = 1;
  // query [B,Lq,C], key/value [B,Lk,C].
  BasicTensor<T> operator()(const BasicTensor<T>& query, const BasicTensor<T>& key,
                            const BasicTensor<T>& value) const;
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
};

template <typename T>
struct EncoderLayer {
  Norm<T> norm1, norm2;
  Attention<T> self_attn;
  FeedForward<T> ffn;
};

template <typename T>
struct DecoderLayer {
  Norm<T> norm1, norm2, norm3;
  Attention<T> self_attn, cross_attn;
  FeedForward<T> ffn;
};

}  // namespace nn

template <typename T>
class BasicMaskFormer {
 public:
  explicit BasicMaskFormer(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // [B,H,W,3] -> [B,H/32,W/32,C_b]. H and W must be multiples of 32.
  BasicTensor<T> backbone(const BasicTensor<T>& image) const;

  struct PixelDecoderOutput {
    BasicTensor<T> encoded;        // [B,H/32,W/32,C]
    BasicTensor<T> mask_features;  // [B,H/4,W/4,C]
  };
  PixelDecoderOutput pixel_decoder(const BasicTensor<T>& features) const;

  // encoded [B,h,w,C] -> [B,N_q,C].
  BasicTensor<T> transformer_decoder(const BasicTensor<T>& encoded) const;

  BasicModelOutputs<T> heads(const BasicTensor<T>& decoder_out,
                             const BasicTensor<T>& mask_features) const;

  BasicModelOutputs<T> forward(const BasicTensor<T>& image) const;

  // Every trainable tensor with its dotted name, in a fixed order.
  const NamedTensors<T>& parameters() const { return params_; }
  std::int64_t parameter_count() const;

  // Copies values by name; names and shapes must match exactly.
  void load_parameters(const NamedTensors<float>& values);
  NamedTensors<float> export_parameters() const;

 private:
  BasicTensor<T> new_param(const std::string& name, Shape shape, int init, double scale);
  nn::Linear<T> make_linear(const std::string& name, std::int64_t in, std::int64_t out,
                            bool head);
  nn::Conv<T> make_conv(const std::string& name, std::int64_t k, std::int64_t in,
                        std::int64_t out, int stride);
  nn::Norm<T> make_norm(const std::string& name, std::int64_t c);
  nn::Attention<T> make_attention(const std::string& name);
  nn::FeedForward<T> make_ffn(const std::string& name);

  ModelConfig cfg_;
  std::mt19937_64 rng_;
  NamedTensors<T> params_;

  std::vector<std::pair<nn::Conv<T>, nn::Norm<T>>> backbone_;
  nn::Conv<T> input_proj_;
  std::vector<nn::EncoderLayer<T>> encoder_;
  nn::Norm<T> encoder_norm_;
  std::vector<std::pair<nn::Conv<T>, nn::Norm<T>>> upsample_;
  BasicTensor<T> queries_;  // [N_q, C]
  std::vector<nn::DecoderLayer<T>> decoder_;
  nn::Norm<T> decoder_norm_;
  nn::Linear<T> class_head_;
  std::vector<nn::Linear<T>> mask_mlp_;
};

using MaskFormer = BasicMaskFormer<float>;

// mask_embed [B,N_q,C] . mask_features [B,h,w,C] -> [B,N_q,h,w].
template <typename T>
BasicTensor<T> mask_logits_from(const BasicTensor<T>& mask_embed,
                                const BasicTensor<T>& mask_features);

// Flat checkpoint: per tensor u32 name length, UTF-8 name, u8 rank,
// u32 dims, f32 data (all little-endian).
void save_checkpoint(const std::filesystem::path& path, const NamedTensors<float>& tensors);
NamedTensors<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace maskdesk
