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

#include "maskdesk/model.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "maskdesk/ops.h"
#include "maskdesk/position_embedding.h"

namespace maskdesk {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (input_size <= 0 || input_size % 32) fail("input_size must be a positive multiple of 32");
  if (hidden_size <= 0 || hidden_size % 2) fail("hidden_size must be positive and even");
  if (num_heads <= 0 || hidden_size % num_heads) fail("hidden_size must divide by num_heads");
  if (backbone_channels < 8 || backbone_channels % 8) {
    fail("backbone_channels must be a positive multiple of 8");
  }
  if (n_queries <= 0) fail("n_queries must be positive");
  if (num_encoder_layers < 0 || num_decoder_layers < 0) fail("negative layer count");
  if (dim_feedforward <= 0) fail("dim_feedforward must be positive");
  if (num_classes <= 0) fail("num_classes must be positive");
}

namespace nn {

template <typename T>
BasicTensor<T> Linear<T>::operator()(const BasicTensor<T>& x) const {
  const auto in = weight.dim(0), out = weight.dim(1);
  Shape shape = x.shape();
  if (shape.empty() || shape.back() != in) {
    throw ShapeError("linear: input " + to_string(shape) + " vs weight " +
                     to_string(weight.shape()));
  }
  const auto rows = x.numel() / in;
  auto y = add_bias(matmul(reshape(x, {rows, in}), weight), bias);
  shape.back() = out;
  return reshape(y, shape);
}

template <typename T>
BasicTensor<T> Conv<T>::operator()(const BasicTensor<T>& x) const {
  return conv2d(x, weight, bias, stride, padding);
}

template <typename T>
BasicTensor<T> Norm<T>::operator()(const BasicTensor<T>& x) const {
  return layer_norm(x, gamma, beta);
}

template <typename T>
BasicTensor<T> Attention<T>::operator()(const BasicTensor<T>& query, const BasicTensor<T>& key,
                                        const BasicTensor<T>& value) const {
  return out(multi_head_attention(q(query), k(key), v(value), heads));
}

template <typename T>
BasicTensor<T> FeedForward<T>::operator()(const BasicTensor<T>& x) const {
  return down(relu(up(x)));
}

}  // namespace nn

namespace {

enum Init { kTruncNormal, kUniform, kConstant, kNormal };

}  // namespace

template <typename T>
BasicTensor<T> BasicMaskFormer<T>::new_param(const std::string& name, Shape shape, int init,
                                             double scale) {
  std::vector<T> data(static_cast<std::size_t>(numel(shape)));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(-scale, scale);
  for (auto& v : data) {
    switch (init) {
      case kTruncNormal: {
        double z;
        do z = normal(rng_); while (std::abs(z) > 2.0);
        v = static_cast<T>(z * scale);
        break;
      }
      case kUniform:
        v = static_cast<T>(uniform(rng_));
        break;
      case kNormal:
        v = static_cast<T>(normal(rng_) * scale);
        break;
      default:
        v = static_cast<T>(scale);
    }
  }
  BasicTensor<T> t(std::move(shape), std::move(data), true);
  params_.emplace_back(name, t);
  return t;
}

template <typename T>
nn::Linear<T> BasicMaskFormer<T>::make_linear(const std::string& name, std::int64_t in,
                                              std::int64_t out, bool head) {
  nn::Linear<T> l;
  if (head) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    l.weight = new_param(name + ".weight", {in, out}, kUniform, bound);
    l.bias = new_param(name + ".bias", {out}, kUniform, bound);
  } else {
    l.weight = new_param(name + ".weight", {in, out}, kTruncNormal, 0.02);
    l.bias = new_param(name + ".bias", {out}, kConstant, 0.0);
  }
  return l;
}

template <typename T>
nn::Conv<T> BasicMaskFormer<T>::make_conv(const std::string& name, std::int64_t k,
                                          std::int64_t in, std::int64_t out, int stride) {
  nn::Conv<T> c;
  const double fan_in = static_cast<double>(k * k * in);
  c.weight = new_param(name + ".weight", {k, k, in, out}, kUniform, std::sqrt(6.0 / fan_in));
  c.bias = new_param(name + ".bias", {out}, kConstant, 0.0);
  c.stride = stride;
  c.padding = static_cast<int>(k / 2);
  return c;
}

template <typename T>
nn::Norm<T> BasicMaskFormer<T>::make_norm(const std::string& name, std::int64_t c) {
  return {new_param(name + ".gamma", {c}, kConstant, 1.0),
          new_param(name + ".beta", {c}, kConstant, 0.0)};
}

template <typename T>
nn::Attention<T> BasicMaskFormer<T>::make_attention(const std::string& name) {
  const auto C = cfg_.hidden_size;
  nn::Attention<T> a;
  a.q = make_linear(name + ".q", C, C, false);
  a.k = make_linear(name + ".k", C, C, false);
  a.v = make_linear(name + ".v", C, C, false);
  a.out = make_linear(name + ".out", C, C, false);
  a.heads = static_cast<int>(cfg_.num_heads);
  return a;
}

template <typename T>
nn::FeedForward<T> BasicMaskFormer<T>::make_ffn(const std::string& name) {
  return {make_linear(name + ".up", cfg_.hidden_size, cfg_.dim_feedforward, false),
          make_linear(name + ".down", cfg_.dim_feedforward, cfg_.hidden_size, false)};
}

template <typename T>
BasicMaskFormer<T>::BasicMaskFormer(const ModelConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  const auto C = cfg_.hidden_size, Cb = cfg_.backbone_channels;

  const std::int64_t widths[] = {Cb / 8, Cb / 4, Cb / 2, Cb, Cb};
  std::int64_t in = 3;
  for (int s = 0; s < 5; ++s) {
    const std::string name = "backbone.stage" + std::to_string(s);
    auto conv = make_conv(name + ".conv", 3, in, widths[s], 2);
    backbone_.emplace_back(conv, make_norm(name + ".norm", widths[s]));
    in = widths[s];
  }

  input_proj_ = make_conv("pixel_decoder.input_proj", 1, Cb, C, 1);
  for (std::int64_t i = 0; i < cfg_.num_encoder_layers; ++i) {
    const std::string name = "pixel_decoder.encoder.layer" + std::to_string(i);
    nn::EncoderLayer<T> layer;
    layer.norm1 = make_norm(name + ".norm1", C);
    layer.self_attn = make_attention(name + ".self_attn");
    layer.norm2 = make_norm(name + ".norm2", C);
    layer.ffn = make_ffn(name + ".ffn");
    encoder_.push_back(std::move(layer));
  }
  if (cfg_.num_encoder_layers > 0) encoder_norm_ = make_norm("pixel_decoder.encoder.norm", C);
  for (int s = 0; s < 3; ++s) {
    const std::string name = "pixel_decoder.upsample" + std::to_string(s);
    auto conv = make_conv(name + ".conv", 3, C, C, 1);
    upsample_.emplace_back(conv, make_norm(name + ".norm", C));
  }

  queries_ = new_param("transformer_decoder.queries", {cfg_.n_queries, C}, kNormal, 1.0);
  for (std::int64_t i = 0; i < cfg_.num_decoder_layers; ++i) {
    const std::string name = "transformer_decoder.layer" + std::to_string(i);
    nn::DecoderLayer<T> layer;
    layer.norm1 = make_norm(name + ".norm1", C);
    layer.self_attn = make_attention(name + ".self_attn");
    layer.norm2 = make_norm(name + ".norm2", C);
    layer.cross_attn = make_attention(name + ".cross_attn");
    layer.norm3 = make_norm(name + ".norm3", C);
    layer.ffn = make_ffn(name + ".ffn");
    decoder_.push_back(std::move(layer));
  }

  decoder_norm_ = make_norm("heads.norm", C);
  class_head_ = make_linear("heads.class", C, cfg_.num_classes + 1, true);
  for (int i = 0; i < 3; ++i) {
    mask_mlp_.push_back(make_linear("heads.mask_mlp" + std::to_string(i), C, C, true));
  }
}

template <typename T>
BasicTensor<T> BasicMaskFormer<T>::backbone(const BasicTensor<T>& image) const {
  if (image.rank() != 4 || image.dim(3) != 3) {
    throw ShapeError("backbone: expected [B,H,W,3], got " + to_string(image.shape()));
  }
  if (image.dim(1) <= 0 || image.dim(2) <= 0 || image.dim(1) % 32 || image.dim(2) % 32) {
    throw ConfigError("backbone: input extent " + std::to_string(image.dim(1)) + "x" +
                      std::to_string(image.dim(2)) + " is not a multiple of 32");
  }
  auto x = image;
  for (const auto& [conv, norm] : backbone_) x = relu(norm(conv(x)));
  return x;
}

template <typename T>
typename BasicMaskFormer<T>::PixelDecoderOutput BasicMaskFormer<T>::pixel_decoder(
    const BasicTensor<T>& features) const {
  if (features.rank() != 4 || features.dim(3) != cfg_.backbone_channels) {
    throw ShapeError("pixel_decoder: expected [B,h,w," + std::to_string(cfg_.backbone_channels) +
                     "], got " + to_string(features.shape()));
  }
  const auto B = features.dim(0), h = features.dim(1), w = features.dim(2);
  const auto C = cfg_.hidden_size;
  auto pos = tile_batch(sine_position_embedding<T>(h, w, C), B);
  auto tokens = reshape(add(input_proj_(features), pos), {B, h * w, C});
  for (const auto& layer : encoder_) {
    auto y = layer.norm1(tokens);
    tokens = add(tokens, layer.self_attn(y, y, y));
    tokens = add(tokens, layer.ffn(layer.norm2(tokens)));
  }
  if (!encoder_.empty()) tokens = encoder_norm_(tokens);
  PixelDecoderOutput out;
  out.encoded = reshape(tokens, {B, h, w, C});
  auto m = out.encoded;
  for (std::size_t s = 0; s < upsample_.size(); ++s) {
    m = upsample_[s].second(upsample_[s].first(upsample_nearest2x(m)));
    if (s + 1 < upsample_.size()) m = relu(m);
  }
  out.mask_features = m;
  return out;
}

template <typename T>
BasicTensor<T> BasicMaskFormer<T>::transformer_decoder(const BasicTensor<T>& encoded) const {
  if (encoded.rank() != 4 || encoded.dim(3) != cfg_.hidden_size) {
    throw ShapeError("transformer_decoder: expected [B,h,w," + std::to_string(cfg_.hidden_size) +
                     "], got " + to_string(encoded.shape()));
  }
  const auto B = encoded.dim(0), h = encoded.dim(1), w = encoded.dim(2);
  const auto C = cfg_.hidden_size;
  auto memory = reshape(encoded, {B, h * w, C});
  auto keys = add(memory, reshape(tile_batch(sine_position_embedding<T>(h, w, C), B),
                                  {B, h * w, C}));
  auto x = tile_batch(reshape(queries_, {1, cfg_.n_queries, C}), B);
  for (const auto& layer : decoder_) {
    auto y = layer.norm1(x);
    x = add(x, layer.self_attn(y, y, y));
    x = add(x, layer.cross_attn(layer.norm2(x), keys, memory));
    x = add(x, layer.ffn(layer.norm3(x)));
  }
  return x;
}

template <typename T>
BasicTensor<T> mask_logits_from(const BasicTensor<T>& mask_embed,
                                const BasicTensor<T>& mask_features) {
  if (mask_embed.rank() != 3 || mask_features.rank() != 4 ||
      mask_embed.dim(0) != mask_features.dim(0) || mask_embed.dim(2) != mask_features.dim(3)) {
    throw ShapeError("mask_logits_from: mask embed " + to_string(mask_embed.shape()) +
                     " vs mask features " + to_string(mask_features.shape()));
  }
  const auto B = mask_features.dim(0), h = mask_features.dim(1), w = mask_features.dim(2);
  const auto C = mask_features.dim(3), Q = mask_embed.dim(1);
  auto logits = bmm(mask_embed, reshape(mask_features, {B, h * w, C}), true);
  return reshape(logits, {B, Q, h, w});
}

template <typename T>
BasicModelOutputs<T> BasicMaskFormer<T>::heads(const BasicTensor<T>& decoder_out,
                                               const BasicTensor<T>& mask_features) const {
  auto y = decoder_norm_(decoder_out);
  BasicModelOutputs<T> out;
  out.class_logits = class_head_(y);
  auto e = y;
  for (std::size_t i = 0; i < mask_mlp_.size(); ++i) {
    e = mask_mlp_[i](e);
    if (i + 1 < mask_mlp_.size()) e = relu(e);
  }
  out.mask_logits = mask_logits_from(e, mask_features);
  return out;
}

template <typename T>
BasicModelOutputs<T> BasicMaskFormer<T>::forward(const BasicTensor<T>& image) const {
  auto pix = pixel_decoder(backbone(image));
  return heads(transformer_decoder(pix.encoded), pix.mask_features);
}

template <typename T>
std::int64_t BasicMaskFormer<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

template <typename T>
void BasicMaskFormer<T>::load_parameters(const NamedTensors<float>& values) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : values) {
    if (!by_name.emplace(name, &t).second) throw InputError("duplicate tensor " + name);
  }
  if (by_name.size() != params_.size()) {
    throw InputError("checkpoint holds " + std::to_string(by_name.size()) +
                     " tensors, model has " + std::to_string(params_.size()));
  }
  for (auto& [name, param] : params_) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw InputError("checkpoint is missing " + name);
    if (it->second->shape() != param.shape()) {
      throw InputError("checkpoint tensor " + name + " has shape " +
                       to_string(it->second->shape()) + ", model expects " +
                       to_string(param.shape()));
    }
    auto dst = param.mutable_data();
    const auto src = it->second->data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

template <typename T>
NamedTensors<float> BasicMaskFormer<T>::export_parameters() const {
  NamedTensors<float> out;
  for (const auto& [name, t] : params_) out.emplace_back(name, t.template cast<float>());
  return out;
}

namespace {

template <typename V>
void put(std::ofstream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::ifstream& in, const std::filesystem::path& path) {
  V v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw InputError("truncated checkpoint " + path.string());
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedTensors<float>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  for (const auto& [name, t] : tensors) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.data().size_bytes()));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

NamedTensors<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  NamedTensors<float> out;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto len = get<std::uint32_t>(in, path);
    if (len > (1u << 16)) throw InputError("implausible name length in " + path.string());
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw InputError("truncated checkpoint " + path.string());
    const auto rank = get<std::uint8_t>(in, path);
    Shape shape;
    for (int i = 0; i < rank; ++i) shape.push_back(get<std::uint32_t>(in, path));
    std::vector<float> data(static_cast<std::size_t>(numel(shape)));
    if (!in.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(float)))) {
      throw InputError("truncated checkpoint " + path.string());
    }
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

#define MASKDESK_MODEL(T)                                                         \
  template struct nn::Linear<T>;                                                  \
  template struct nn::Conv<T>;                                                    \
  template struct nn::Norm<T>;                                                    \
  template struct nn::Attention<T>;                                               \
  template struct nn::FeedForward<T>;                                             \
  template class BasicMaskFormer<T>;                                              \
  template BasicTensor<T> mask_logits_from(const BasicTensor<T>&, const BasicTensor<T>&);

MASKDESK_MODEL(float)
MASKDESK_MODEL(double)

#undef MASKDESK_MODEL

}  // namespace maskdesk
