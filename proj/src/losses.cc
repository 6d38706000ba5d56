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

#include "maskdesk/losses.h"

#include <atomic>
#include <cmath>
#include <set>

#include "maskdesk/ops.h"

namespace maskdesk {

namespace {

std::atomic<std::int64_t> degenerate_masks{0};

constexpr double kClampLo = 1e-7;
constexpr double kClampHi = 1.0 - 1e-7;

double sigmoid_of(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct MaskLayout {
  std::int64_t pairs = 0;
  std::int64_t pixels = 0;
};

template <typename T>
MaskLayout mask_layout(const BasicTensor<T>& logits, std::span<const std::uint8_t> gt,
                       std::span<const std::uint8_t> valid, const char* op) {
  if (logits.rank() < 2) {
    throw ShapeError(std::string(op) + ": logits need at least 2 dims, got " +
                     to_string(logits.shape()));
  }
  MaskLayout l;
  l.pixels = logits.dim(-2) * logits.dim(-1);
  l.pairs = l.pixels ? logits.numel() / l.pixels : 0;
  if (static_cast<std::int64_t>(gt.size()) != logits.numel() ||
      static_cast<std::int64_t>(valid.size()) != l.pixels) {
    throw ShapeError(std::string(op) + ": logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(gt.size()) + " target and " +
                     std::to_string(valid.size()) + " valid values");
  }
  return l;
}

// Focal term and its derivative w.r.t. the (clamped) probability.
struct FocalTerm {
  double value;
  double d_prob;
};

FocalTerm focal_term(double p, bool positive, double alpha, double gamma) {
  const double pc = std::clamp(p, kClampLo, kClampHi);
  const bool clamped = pc != p;
  if (positive) {
    const double q = 1.0 - pc;
    const double lg = std::log(pc);
    const double value = -alpha * std::pow(q, gamma) * lg;
    const double d = clamped ? 0.0
                             : alpha * (gamma * std::pow(q, gamma - 1) * lg - std::pow(q, gamma) / pc);
    return {value, d};
  }
  const double lg = std::log(1.0 - pc);
  const double value = -(1.0 - alpha) * std::pow(pc, gamma) * lg;
  const double d = clamped ? 0.0
                           : -(1.0 - alpha) * (gamma * std::pow(pc, gamma - 1) * lg -
                                               std::pow(pc, gamma) / (1.0 - pc));
  return {value, d};
}

}  // namespace

std::int64_t degenerate_mask_count() { return degenerate_masks.load(); }
void reset_degenerate_mask_count() { degenerate_masks.store(0); }

template <typename T>
BasicTensor<T> dice_loss(const BasicTensor<T>& logits, std::span<const std::uint8_t> gt,
                         std::span<const std::uint8_t> valid, double eps) {
  const auto [P, S] = mask_layout(logits, gt, valid, "dice_loss");
  const auto z = logits.data();
  std::int64_t n_valid = 0;
  for (auto v : valid) n_valid += v != 0;
  std::vector<double> inter(P, 0.0), denom(P, 0.0);
  double total = 0.0;
  for (std::int64_t p = 0; p < P; ++p) {
    if (n_valid == 0) {
      degenerate_masks.fetch_add(1);
      continue;
    }
    double a = 0, sp = 0, sg = 0;
    for (std::int64_t i = 0; i < S; ++i) {
      if (!valid[i]) continue;
      const double prob = sigmoid_of(z[p * S + i]);
      const double g = gt[p * S + i] ? 1.0 : 0.0;
      a += prob * g;
      sp += prob;
      sg += g;
    }
    inter[p] = 2 * a + eps;
    denom[p] = sp + sg + eps;
    total += 1.0 - inter[p] / denom[p];
  }
  const double value = P ? total / static_cast<double>(P) : 0.0;
  auto zn = logits.node();
  std::vector<std::uint8_t> g_copy(gt.begin(), gt.end()), v_copy(valid.begin(), valid.end());
  return make_result<T>(
      {}, {static_cast<T>(value)}, "dice_loss", {logits},
      [zn, P, S, n_valid, inter, denom, g_copy, v_copy](const TensorNode<T>& o) {
        T* dz = zn->grad_target();
        if (!dz || n_valid == 0) return;
        const double scale = static_cast<double>((*o.grad)[0]) / static_cast<double>(P);
        for (std::int64_t p = 0; p < P; ++p) {
          const double D = denom[p];
          for (std::int64_t i = 0; i < S; ++i) {
            if (!v_copy[i]) continue;
            const double prob = sigmoid_of(zn->data[p * S + i]);
            const double g = g_copy[p * S + i] ? 1.0 : 0.0;
            const double d_prob = -(2 * g * D - inter[p]) / (D * D);
            dz[p * S + i] += static_cast<T>(scale * d_prob * prob * (1 - prob));
          }
        }
      });
}

template <typename T>
BasicTensor<T> focal_loss(const BasicTensor<T>& logits, std::span<const std::uint8_t> gt,
                          std::span<const std::uint8_t> valid, double alpha, double gamma) {
  if (alpha < 0 || alpha > 1 || gamma < 0) {
    throw ContractError("focal_loss: need alpha in [0,1] and gamma >= 0");
  }
  const auto [P, S] = mask_layout(logits, gt, valid, "focal_loss");
  const auto z = logits.data();
  std::int64_t n_valid = 0;
  for (auto v : valid) n_valid += v != 0;
  double total = 0.0;
  for (std::int64_t p = 0; p < P && n_valid; ++p) {
    double acc = 0;
    for (std::int64_t i = 0; i < S; ++i) {
      if (!valid[i]) continue;
      acc += focal_term(sigmoid_of(z[p * S + i]), gt[p * S + i] != 0, alpha, gamma).value;
    }
    total += acc / static_cast<double>(n_valid);
  }
  const double value = P ? total / static_cast<double>(P) : 0.0;
  auto zn = logits.node();
  std::vector<std::uint8_t> g_copy(gt.begin(), gt.end()), v_copy(valid.begin(), valid.end());
  return make_result<T>(
      {}, {static_cast<T>(value)}, "focal_loss", {logits},
      [zn, P, S, n_valid, alpha, gamma, g_copy, v_copy](const TensorNode<T>& o) {
        T* dz = zn->grad_target();
        if (!dz || n_valid == 0) return;
        const double scale = static_cast<double>((*o.grad)[0]) /
                             (static_cast<double>(P) * static_cast<double>(n_valid));
        for (std::int64_t k = 0; k < P * S; ++k) {
          if (!v_copy[k % S]) continue;
          const double prob = sigmoid_of(zn->data[k]);
          const auto term = focal_term(prob, g_copy[k] != 0, alpha, gamma);
          dz[k] += static_cast<T>(scale * term.d_prob * prob * (1 - prob));
        }
      });
}

template <typename T>
BasicTensor<T> classification_loss(const BasicTensor<T>& logits,
                                   std::span<const std::int64_t> labels,
                                   double no_object_weight) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw ShapeError("classification_loss: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::int64_t Q = logits.dim(0), C = logits.dim(1);
  const std::int64_t K = C - 1;
  std::vector<std::int64_t> column(Q);
  std::vector<double> weight(Q);
  double weight_sum = 0;
  for (std::int64_t q = 0; q < Q; ++q) {
    const auto l = labels[q];
    if (l < 1 || l > K + 1) {
      throw ContractError("classification_loss: label " + std::to_string(l) + " at query " +
                          std::to_string(q) + " outside 1.." + std::to_string(K + 1));
    }
    column[q] = l - 1;
    weight[q] = l == K + 1 ? no_object_weight : 1.0;
    weight_sum += weight[q];
  }
  // Softmax per row in double.
  std::vector<double> prob(static_cast<std::size_t>(Q * C));
  double total = 0;
  const auto z = logits.data();
  for (std::int64_t q = 0; q < Q; ++q) {
    double mx = -INFINITY;
    for (std::int64_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(z[q * C + c]));
    double s = 0;
    for (std::int64_t c = 0; c < C; ++c) s += std::exp(z[q * C + c] - mx);
    for (std::int64_t c = 0; c < C; ++c) prob[q * C + c] = std::exp(z[q * C + c] - mx) / s;
    const double log_p = static_cast<double>(z[q * C + column[q]]) - mx - std::log(s);
    total += weight[q] * -log_p;
  }
  const double value = weight_sum > 0 ? total / weight_sum : 0.0;
  auto zn = logits.node();
  return make_result<T>({}, {static_cast<T>(value)}, "classification_loss", {logits},
                        [zn, Q, C, column, weight, weight_sum, prob](const TensorNode<T>& o) {
                          T* dz = zn->grad_target();
                          if (!dz || weight_sum <= 0) return;
                          const double g = static_cast<double>((*o.grad)[0]) / weight_sum;
                          for (std::int64_t q = 0; q < Q; ++q)
                            for (std::int64_t c = 0; c < C; ++c) {
                              const double onehot = c == column[q] ? 1.0 : 0.0;
                              dz[q * C + c] +=
                                  static_cast<T>(g * weight[q] * (prob[q * C + c] - onehot));
                            }
                        });
}

template <typename T>
BasicLossBundle<T> total_loss(const BasicModelOutputs<T>& outputs,
                              std::span<const pipeline::TargetSet> targets,
                              std::span<const BinaryMask> valid,
                              std::span<const Assignment> assignments, const LossConfig& cfg) {
  const auto& masks = outputs.mask_logits;
  const auto& classes = outputs.class_logits;
  if (masks.rank() != 4 || classes.rank() != 3 || masks.dim(0) != classes.dim(0) ||
      masks.dim(1) != classes.dim(1)) {
    throw ShapeError("total_loss: mask logits " + to_string(masks.shape()) +
                     " and class logits " + to_string(classes.shape()) + " disagree");
  }
  const std::int64_t B = masks.dim(0), Q = masks.dim(1), h = masks.dim(2), w = masks.dim(3);
  const std::int64_t K = classes.dim(2) - 1;
  const auto nb = static_cast<std::size_t>(B);
  if (targets.size() != nb || valid.size() != nb || assignments.size() != nb) {
    throw ContractError("total_loss: batch of " + std::to_string(B) + " with " +
                        std::to_string(targets.size()) + " target sets, " +
                        std::to_string(valid.size()) + " valid masks, " +
                        std::to_string(assignments.size()) + " assignments");
  }

  std::vector<BasicTensor<T>> dice_terms, focal_terms, class_terms;
  std::int64_t pairs = 0;
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& tgt = targets[b];
    const auto& assign = assignments[b].query_for_gt;
    if (assign.size() != tgt.size()) {
      throw ContractError("total_loss: image " + std::to_string(b) + " has " +
                          std::to_string(tgt.size()) + " targets but " +
                          std::to_string(assign.size()) + " assigned queries");
    }
    std::set<std::int64_t> used;
    for (auto q : assign) {
      if (q < 0 || q >= Q || !used.insert(q).second) {
        throw ContractError("total_loss: invalid or repeated query " + std::to_string(q));
      }
    }
    const auto val = to_resolution(valid[b], h, w);
    std::vector<std::int64_t> labels(static_cast<std::size_t>(Q), K + 1);
    const std::int64_t n = static_cast<std::int64_t>(tgt.size());
    if (n > 0) {
      std::vector<std::uint8_t> gt;
      gt.reserve(static_cast<std::size_t>(n * h * w));
      for (std::int64_t i = 0; i < n; ++i) {
        const auto m = to_resolution(tgt.masks[i], h, w);
        gt.insert(gt.end(), m.values.begin(), m.values.end());
        labels[assign[i]] = tgt.labels[i];
      }
      const auto rows = index_select(select(masks, b), assign);
      const T weight = static_cast<T>(n);
      dice_terms.push_back(mul_scalar(dice_loss(rows, gt, val.values, cfg.dice_eps), weight));
      focal_terms.push_back(mul_scalar(
          focal_loss(rows, gt, val.values, cfg.focal_alpha, cfg.focal_gamma), weight));
      pairs += n;
    }
    class_terms.push_back(
        classification_loss(select(classes, b), labels, cfg.no_object_weight));
  }

  auto average = [](const std::vector<BasicTensor<T>>& terms, double count) {
    if (terms.empty()) return BasicTensor<T>::scalar(T(0));
    auto acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return mul_scalar(acc, static_cast<T>(1.0 / count));
  };
  const auto cls = average(class_terms, static_cast<double>(B));
  const auto focal = average(focal_terms, static_cast<double>(pairs));
  const auto dice = average(dice_terms, static_cast<double>(pairs));

  BasicLossBundle<T> out;
  out.weights = cfg.weights;
  out.no_object_weight = cfg.no_object_weight;
  out.classification = cls.item();
  out.focal = focal.item();
  out.dice = dice.item();
  out.total = cfg.weights[0] * out.classification + cfg.weights[1] * out.focal +
              cfg.weights[2] * out.dice;
  out.objective = add(add(mul_scalar(cls, static_cast<T>(cfg.weights[0])),
                          mul_scalar(focal, static_cast<T>(cfg.weights[1]))),
                      mul_scalar(dice, static_cast<T>(cfg.weights[2])));
  return out;
}

#define MASKDESK_LOSSES(T)                                                             \
  template BasicTensor<T> dice_loss(const BasicTensor<T>&, std::span<const std::uint8_t>, \
                                    std::span<const std::uint8_t>, double);           \
  template BasicTensor<T> focal_loss(const BasicTensor<T>&, std::span<const std::uint8_t>, \
                                     std::span<const std::uint8_t>, double, double);   \
  template BasicTensor<T> classification_loss(const BasicTensor<T>&,                  \
                                              std::span<const std::int64_t>, double);  \
  template BasicLossBundle<T> total_loss(                                              \
      const BasicModelOutputs<T>&, std::span<const pipeline::TargetSet>,               \
      std::span<const BinaryMask>, std::span<const Assignment>, const LossConfig&);

MASKDESK_LOSSES(float)
MASKDESK_LOSSES(double)

#undef MASKDESK_LOSSES

}  // namespace maskdesk
