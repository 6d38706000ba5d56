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

#include "maskdesk/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kernels.h"

namespace maskdesk {
namespace {

using std::int64_t;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b,
                        const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      to_string(a.shape()) + " vs " +
                                      to_string(b.shape()));
}

template <typename T>
void accumulate(const NodePtr<T>& node, const std::vector<T>& g) {
  if (T* dst = node->grad_target()) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + to_string(a.shape()) + " and " +
              to_string(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  kernels::gemm(false, false, m, n, k, a.data().data(), b.data().data(),
                out.data(), false);
  auto an = a.node(), bn = b.node();
  return make_result<T>(
      {m, n}, std::move(out), "matmul", {a, b},
      [an, bn, m, n, k](const TensorNode<T>& o) {
        const T* g = o.grad->data();
        if (T* da = an->grad_target()) {
          kernels::gemm(false, true, m, k, n, g, bn->data.data(), da, true);
        }
        if (T* db = bn->grad_target()) {
          kernels::gemm(true, false, k, n, m, an->data.data(), g, db, true);
        }
      });
}

template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b,
                   bool transpose_b) {
  const bool ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                  a.dim(2) == (transpose_b ? b.dim(2) : b.dim(1));
  require(ok, "bmm: incompatible shapes " + to_string(a.shape()) + " and " +
                  to_string(b.shape()));
  const int64_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int64_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<T> out(static_cast<std::size_t>(batch * m * n));
  for (int64_t i = 0; i < batch; ++i) {
    kernels::gemm(false, transpose_b, m, n, k, a.data().data() + i * m * k,
                  b.data().data() + i * k * n, out.data() + i * m * n, false);
  }
  auto an = a.node(), bn = b.node();
  return make_result<T>(
      {batch, m, n}, std::move(out), "bmm", {a, b},
      [an, bn, batch, m, n, k, transpose_b](const TensorNode<T>& o) {
        const T* g = o.grad->data();
        T* da = an->grad_target();
        T* db = bn->grad_target();
        for (int64_t i = 0; i < batch; ++i) {
          const T* gi = g + i * m * n;
          const T* ai = an->data.data() + i * m * k;
          const T* bi = bn->data.data() + i * k * n;
          if (da) {
            // dA = G * op(B)^T
            kernels::gemm(false, !transpose_b, m, k, n, gi, bi, da + i * m * k,
                          true);
          }
          if (db) {
            if (transpose_b) {
              // B is [n,k]: dB = G^T * A
              kernels::gemm(true, false, n, k, m, gi, ai, db + i * k * n, true);
            } else {
              kernels::gemm(true, false, k, n, m, ai, gi, db + i * k * n, true);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), "add", {a, b},
                        [an, bn](const TensorNode<T>& o) {
                          accumulate(an, *o.grad);
                          accumulate(bn, *o.grad);
                        });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), "sub", {a, b},
                        [an, bn](const TensorNode<T>& o) {
                          accumulate(an, *o.grad);
                          if (T* db = bn->grad_target()) {
                            for (std::size_t i = 0; i < o.grad->size(); ++i)
                              db[i] -= (*o.grad)[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), "mul", {a, b},
                        [an, bn](const TensorNode<T>& o) {
                          const auto& g = *o.grad;
                          if (T* da = an->grad_target()) {
                            for (std::size_t i = 0; i < g.size(); ++i)
                              da[i] += g[i] * bn->data[i];
                          }
                          if (T* db = bn->grad_target()) {
                            for (std::size_t i = 0; i < g.size(); ++i)
                              db[i] += g[i] * an->data[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T s) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + s;
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), "add_scalar", {x},
                        [xn](const TensorNode<T>& o) { accumulate(xn, *o.grad); });
}

template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& x, T s) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * s;
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), "mul_scalar", {x},
                        [xn, s](const TensorNode<T>& o) {
                          if (T* dx = xn->grad_target()) {
                            for (std::size_t i = 0; i < o.grad->size(); ++i)
                              dx[i] += (*o.grad)[i] * s;
                          }
                        });
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  require(x.rank() >= 1 && bias.rank() == 1 && bias.dim(0) == x.dim(-1),
          "add_bias: bias " + to_string(bias.shape()) + " does not match " +
              to_string(x.shape()));
  const int64_t c = bias.dim(0);
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.data()[i % c];
  auto xn = x.node(), bn = bias.node();
  return make_result<T>(x.shape(), std::move(out), "add_bias", {x, bias},
                        [xn, bn, c](const TensorNode<T>& o) {
                          accumulate(xn, *o.grad);
                          if (T* db = bn->grad_target()) {
                            for (std::size_t i = 0; i < o.grad->size(); ++i)
                              db[i % c] += (*o.grad)[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.data()[i], T(0));
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), "relu", {x},
                        [xn](const TensorNode<T>& o) {
                          if (T* dx = xn->grad_target()) {
                            for (std::size_t i = 0; i < o.grad->size(); ++i)
                              if (xn->data[i] > T(0)) dx[i] += (*o.grad)[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
  }
  auto xn = x.node();
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_result<T>(x.shape(), std::move(out), "sigmoid", {x},
                        [xn, saved](const TensorNode<T>& o) {
                          if (T* dx = xn->grad_target()) {
                            const auto& y = *saved;
                            for (std::size_t i = 0; i < y.size(); ++i)
                              dx[i] += (*o.grad)[i] * y[i] * (T(1) - y[i]);
                          }
                        });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.data()[i]);
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), "log", {x},
                        [xn](const TensorNode<T>& o) {
                          if (T* dx = xn->grad_target()) {
                            for (std::size_t i = 0; i < o.grad->size(); ++i)
                              dx[i] += (*o.grad)[i] / xn->data[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.data()[i]);
  auto xn = x.node();
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_result<T>(x.shape(), std::move(out), "exp", {x},
                        [xn, saved](const TensorNode<T>& o) {
                          if (T* dx = xn->grad_target()) {
                            for (std::size_t i = 0; i < o.grad->size(); ++i)
                              dx[i] += (*o.grad)[i] * (*saved)[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int64_t axis) {
  const int64_t r = x.rank();
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, "softmax: axis out of range for " +
                                     to_string(x.shape()));
  const int64_t n = x.shape()[axis];
  require(n >= 1, "softmax: empty axis");
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (int64_t i = axis + 1; i < r; ++i) inner *= x.shape()[i];
  std::vector<T> out(x.data().size());
  const T* in = x.data().data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t j = 0; j < inner; ++j) {
      const int64_t base = o * n * inner + j;
      T mx = -std::numeric_limits<T>::infinity();
      for (int64_t i = 0; i < n; ++i) mx = std::max(mx, in[base + i * inner]);
      // std::max drops NaN; make it propagate.
      for (int64_t i = 0; i < n; ++i) {
        if (std::isnan(in[base + i * inner])) mx = in[base + i * inner];
      }
      T total = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (int64_t i = 0; i < n; ++i) out[base + i * inner] /= total;
    }
  }
  auto xn = x.node();
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_result<T>(
      x.shape(), std::move(out), "softmax", {x},
      [xn, saved, outer, inner, n](const TensorNode<T>& o) {
        T* dx = xn->grad_target();
        if (!dx) return;
        const auto& y = *saved;
        const auto& g = *o.grad;
        for (int64_t a = 0; a < outer; ++a) {
          for (int64_t j = 0; j < inner; ++j) {
            const int64_t base = a * n * inner + j;
            T dot = 0;
            for (int64_t i = 0; i < n; ++i)
              dot += g[base + i * inner] * y[base + i * inner];
            for (int64_t i = 0; i < n; ++i) {
              const int64_t idx = base + i * inner;
              dx[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps) {
  require(x.rank() >= 1, "layer_norm: rank-0 input");
  const int64_t c = x.dim(-1);
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
          "layer_norm: scale/shift must be [" + std::to_string(c) + "]");
  const int64_t rows = c == 0 ? 0 : x.numel() / c;
  std::vector<T> out(x.data().size());
  auto xhat = std::make_shared<std::vector<double>>(x.data().size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  const T* in = x.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    double mu = 0;
    for (int64_t i = 0; i < c; ++i) mu += in[r * c + i];
    mu /= static_cast<double>(c);
    double var = 0;
    for (int64_t i = 0; i < c; ++i) {
      const double d = in[r * c + i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double s = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = s;
    for (int64_t i = 0; i < c; ++i) {
      const double h = (in[r * c + i] - mu) * s;
      (*xhat)[r * c + i] = h;
      out[r * c + i] = static_cast<T>(h * gamma.data()[i] + beta.data()[i]);
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [xn, gn, bn, xhat, rstd, rows, c](const TensorNode<T>& o) {
        const auto& g = *o.grad;
        T* dx = xn->grad_target();
        T* dg = gn->grad_target();
        T* db = bn->grad_target();
        std::vector<double> dh(static_cast<std::size_t>(c));
        for (int64_t r = 0; r < rows; ++r) {
          double mean_dh = 0, mean_dh_h = 0;
          for (int64_t i = 0; i < c; ++i) {
            const double gi = g[r * c + i];
            const double h = (*xhat)[r * c + i];
            if (dg) dg[i] += static_cast<T>(gi * h);
            if (db) db[i] += static_cast<T>(gi);
            dh[i] = gi * gn->data[i];
            mean_dh += dh[i];
            mean_dh_h += dh[i] * h;
          }
          if (!dx) continue;
          mean_dh /= static_cast<double>(c);
          mean_dh_h /= static_cast<double>(c);
          for (int64_t i = 0; i < c; ++i) {
            const double h = (*xhat)[r * c + i];
            dx[r * c + i] +=
                static_cast<T>((*rstd)[r] * (dh[i] - mean_dh - h * mean_dh_h));
          }
        }
      });
}

namespace {

struct ConvGeometry {
  int64_t batch, h, w, cin, kh, kw, cout, stride, pad, ho, wo;
  int64_t patch() const { return kh * kw * cin; }
  int64_t chunk_rows() const {
    constexpr int64_t kBudget = int64_t{1} << 22;  // elements per im2col chunk
    return std::max<int64_t>(1, kBudget / std::max<int64_t>(1, patch()));
  }
};

// Fills col[rows, patch] for output pixels [row0, row0+rows) of image b.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, int64_t b, int64_t row0,
            int64_t rows, T* col) {
  const T* img = x + b * g.h * g.w * g.cin;
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t oy = (row0 + r) / g.wo, ox = (row0 + r) % g.wo;
    T* dst = col + r * g.patch();
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      const int64_t iy = oy * g.stride - g.pad + ky;
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const int64_t ix = ox * g.stride - g.pad + kx;
        T* d = dst + (ky * g.kw + kx) * g.cin;
        if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
          std::fill(d, d + g.cin, T(0));
        } else {
          const T* s = img + (iy * g.w + ix) * g.cin;
          std::copy(s, s + g.cin, d);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, int64_t b, int64_t row0,
                int64_t rows, T* dx) {
  T* img = dx + b * g.h * g.w * g.cin;
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t oy = (row0 + r) / g.wo, ox = (row0 + r) % g.wo;
    const T* src = col + r * g.patch();
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      const int64_t iy = oy * g.stride - g.pad + ky;
      if (iy < 0 || iy >= g.h) continue;
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const int64_t ix = ox * g.stride - g.pad + kx;
        if (ix < 0 || ix >= g.w) continue;
        const T* s = src + (ky * g.kw + kx) * g.cin;
        T* d = img + (iy * g.w + ix) * g.cin;
        for (int64_t c = 0; c < g.cin; ++c) d[c] += s[c];
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding) {
  require(x.rank() == 4, "conv2d: input must be NHWC, got " + to_string(x.shape()));
  require(weight.rank() == 4 && weight.dim(2) == x.dim(3),
          "conv2d: weight " + to_string(weight.shape()) +
              " does not match input " + to_string(x.shape()));
  require(bias.shape() == Shape{weight.dim(3)},
          "conv2d: bias must be [" + std::to_string(weight.dim(3)) + "]");
  if (stride < 1 || padding < 0) {
    throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0),
                 weight.dim(1), weight.dim(3), stride, padding, 0, 0};
  const int64_t span_h = g.h + 2 * g.pad - g.kh;
  const int64_t span_w = g.w + 2 * g.pad - g.kw;
  require(span_h >= 0 && span_w >= 0,
          "conv2d: kernel larger than padded input " + to_string(x.shape()));
  g.ho = span_h / g.stride + 1;
  g.wo = span_w / g.stride + 1;
  const int64_t pixels = g.ho * g.wo;
  std::vector<T> out(static_cast<std::size_t>(g.batch * pixels * g.cout));
  const int64_t chunk = g.chunk_rows();
  std::vector<T> col(static_cast<std::size_t>(std::min(chunk, pixels) * g.patch()));
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t row0 = 0; row0 < pixels; row0 += chunk) {
      const int64_t rows = std::min(chunk, pixels - row0);
      im2col(g, x.data().data(), b, row0, rows, col.data());
      T* dst = out.data() + (b * pixels + row0) * g.cout;
      kernels::gemm(false, false, rows, g.cout, g.patch(), col.data(),
                    weight.data().data(), dst, false);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < g.cout; ++c) dst[r * g.cout + c] += bias.data()[c];
    }
  }
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_result<T>(
      {g.batch, g.ho, g.wo, g.cout}, std::move(out), "conv2d", {x, weight, bias},
      [xn, wn, bn, g](const TensorNode<T>& o) {
        const T* grad = o.grad->data();
        T* dx = xn->grad_target();
        T* dw = wn->grad_target();
        T* db = bn->grad_target();
        const int64_t pixels = g.ho * g.wo;
        if (db) {
          for (int64_t p = 0; p < g.batch * pixels; ++p)
            for (int64_t c = 0; c < g.cout; ++c) db[c] += grad[p * g.cout + c];
        }
        if (!dx && !dw) return;
        const int64_t chunk = g.chunk_rows();
        std::vector<T> col(static_cast<std::size_t>(std::min(chunk, pixels) * g.patch()));
        for (int64_t b = 0; b < g.batch; ++b) {
          for (int64_t row0 = 0; row0 < pixels; row0 += chunk) {
            const int64_t rows = std::min(chunk, pixels - row0);
            const T* gchunk = grad + (b * pixels + row0) * g.cout;
            if (dw) {
              im2col(g, xn->data.data(), b, row0, rows, col.data());
              kernels::gemm(true, false, g.patch(), g.cout, rows, col.data(),
                            gchunk, dw, true);
            }
            if (dx) {
              kernels::gemm(false, true, rows, g.patch(), g.cout, gchunk,
                            wn->data.data(), col.data(), false);
              col2im_add(g, col.data(), b, row0, rows, dx);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x) {
  require(x.rank() == 4, "upsample_nearest2x: input must be NHWC, got " +
                             to_string(x.shape()));
  const int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(b * 4 * h * w * c));
  const T* in = x.data().data();
  for (int64_t n = 0; n < b; ++n)
    for (int64_t y = 0; y < 2 * h; ++y)
      for (int64_t xx = 0; xx < 2 * w; ++xx) {
        const T* s = in + ((n * h + y / 2) * w + xx / 2) * c;
        std::copy(s, s + c, out.data() + ((n * 2 * h + y) * 2 * w + xx) * c);
      }
  auto xn = x.node();
  return make_result<T>(
      {b, 2 * h, 2 * w, c}, std::move(out), "upsample_nearest2x", {x},
      [xn, b, h, w, c](const TensorNode<T>& o) {
        T* dx = xn->grad_target();
        if (!dx) return;
        const T* g = o.grad->data();
        for (int64_t n = 0; n < b; ++n)
          for (int64_t y = 0; y < 2 * h; ++y)
            for (int64_t xx = 0; xx < 2 * w; ++xx) {
              const T* s = g + ((n * 2 * h + y) * 2 * w + xx) * c;
              T* d = dx + ((n * h + y / 2) * w + xx / 2) * c;
              for (int64_t k = 0; k < c; ++k) d[k] += s[k];
            }
      });
}

namespace {

// Copies head `h` (channels [h*d, (h+1)*d)) of a [L,C] slice into [L,d].
template <typename T>
void gather_head(const T* src, int64_t len, int64_t channels, int64_t h,
                 int64_t d, T* dst) {
  for (int64_t i = 0; i < len; ++i)
    std::copy(src + i * channels + h * d, src + i * channels + (h + 1) * d,
              dst + i * d);
}

template <typename T>
void scatter_head_add(const T* src, int64_t len, int64_t channels, int64_t h,
                      int64_t d, T* dst) {
  for (int64_t i = 0; i < len; ++i)
    for (int64_t j = 0; j < d; ++j) dst[i * channels + h * d + j] += src[i * d + j];
}

}  // namespace

template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& q,
                                    const BasicTensor<T>& k,
                                    const BasicTensor<T>& v, int heads) {
  require(q.rank() == 3 && k.rank() == 3 && v.shape() == k.shape() &&
              q.dim(0) == k.dim(0) && q.dim(2) == k.dim(2),
          "multi_head_attention: incompatible q " + to_string(q.shape()) +
              ", k " + to_string(k.shape()) + ", v " + to_string(v.shape()));
  const int64_t batch = q.dim(0), lq = q.dim(1), lk = k.dim(1), c = q.dim(2);
  if (heads < 1 || c % heads != 0) {
    throw ShapeError("multi_head_attention: " + std::to_string(c) +
                     " channels not divisible by " + std::to_string(heads) +
                     " heads");
  }
  require(lk >= 1, "multi_head_attention: no keys");
  const int64_t d = c / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  std::vector<T> out(static_cast<std::size_t>(batch * lq * c));
  auto probs = std::make_shared<std::vector<T>>(
      static_cast<std::size_t>(batch * heads * lq * lk));
  std::vector<T> qh(lq * d), kh(lk * d), vh(lk * d), oh(lq * d);
  for (int64_t b = 0; b < batch; ++b) {
    const T* qb = q.data().data() + b * lq * c;
    const T* kb = k.data().data() + b * lk * c;
    const T* vb = v.data().data() + b * lk * c;
    for (int64_t h = 0; h < heads; ++h) {
      gather_head(qb, lq, c, h, d, qh.data());
      gather_head(kb, lk, c, h, d, kh.data());
      gather_head(vb, lk, c, h, d, vh.data());
      T* p = probs->data() + (b * heads + h) * lq * lk;
      kernels::gemm(false, true, lq, lk, d, qh.data(), kh.data(), p, false);
      for (int64_t i = 0; i < lq; ++i) {
        T* row = p + i * lk;
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t j = 0; j < lk; ++j) {
          row[j] *= scale;
          mx = std::max(mx, row[j]);
        }
        T total = 0;
        for (int64_t j = 0; j < lk; ++j) {
          row[j] = std::exp(row[j] - mx);
          total += row[j];
        }
        for (int64_t j = 0; j < lk; ++j) row[j] /= total;
      }
      kernels::gemm(false, false, lq, d, lk, p, vh.data(), oh.data(), false);
      for (int64_t i = 0; i < lq; ++i)
        std::copy(oh.begin() + i * d, oh.begin() + (i + 1) * d,
                  out.begin() + (b * lq + i) * c + h * d);
    }
  }
  auto qn = q.node(), kn = k.node(), vn = v.node();
  return make_result<T>(
      q.shape(), std::move(out), "multi_head_attention", {q, k, v},
      [qn, kn, vn, probs, batch, lq, lk, c, d, heads, scale](
          const TensorNode<T>& o) {
        T* dq = qn->grad_target();
        T* dk = kn->grad_target();
        T* dv = vn->grad_target();
        std::vector<T> qh(lq * d), kh(lk * d), vh(lk * d), goh(lq * d);
        std::vector<T> dp(lq * lk), tmp_q(lq * d), tmp_k(lk * d);
        for (int64_t b = 0; b < batch; ++b) {
          const T* qb = qn->data.data() + b * lq * c;
          const T* kb = kn->data.data() + b * lk * c;
          const T* vb = vn->data.data() + b * lk * c;
          const T* gb = o.grad->data() + b * lq * c;
          for (int64_t h = 0; h < heads; ++h) {
            gather_head(qb, lq, c, h, d, qh.data());
            gather_head(kb, lk, c, h, d, kh.data());
            gather_head(vb, lk, c, h, d, vh.data());
            gather_head(gb, lq, c, h, d, goh.data());
            const T* p = probs->data() + (b * heads + h) * lq * lk;
            if (dv) {
              kernels::gemm(true, false, lk, d, lq, p, goh.data(), tmp_k.data(),
                            false);
              scatter_head_add(tmp_k.data(), lk, c, h, d, dv + b * lk * c);
            }
            if (!dq && !dk) continue;
            kernels::gemm(false, true, lq, lk, d, goh.data(), vh.data(),
                          dp.data(), false);
            for (int64_t i = 0; i < lq; ++i) {
              T dot = 0;
              for (int64_t j = 0; j < lk; ++j) dot += dp[i * lk + j] * p[i * lk + j];
              for (int64_t j = 0; j < lk; ++j)
                dp[i * lk + j] = p[i * lk + j] * (dp[i * lk + j] - dot) * scale;
            }
            if (dq) {
              kernels::gemm(false, false, lq, d, lk, dp.data(), kh.data(),
                            tmp_q.data(), false);
              scatter_head_add(tmp_q.data(), lq, c, h, d, dq + b * lq * c);
            }
            if (dk) {
              kernels::gemm(true, false, lk, d, lq, dp.data(), qh.data(),
                            tmp_k.data(), false);
              scatter_head_add(tmp_k.data(), lk, c, h, d, dk + b * lk * c);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(), "reshape: cannot view " +
                                         to_string(x.shape()) + " as " +
                                         to_string(shape));
  auto xn = x.node();
  return make_result<T>(std::move(shape),
                        std::vector<T>(x.data().begin(), x.data().end()),
                        "reshape", {x},
                        [xn](const TensorNode<T>& o) { accumulate(xn, *o.grad); });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  require(x.rank() == 2, "transpose: expected rank 2, got " + to_string(x.shape()));
  return permute(x, {1, 0});
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<int64_t>& axes) {
  const int64_t r = x.rank();
  std::vector<int64_t> sorted(axes);
  std::sort(sorted.begin(), sorted.end());
  std::vector<int64_t> iota(static_cast<std::size_t>(r));
  std::iota(iota.begin(), iota.end(), 0);
  require(sorted == iota, "permute: axes are not a permutation of rank " +
                              std::to_string(r));
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<int64_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int64_t i = r - 2; i >= 0; --i)
    in_strides[i] = in_strides[i + 1] * x.shape()[i + 1];
  std::vector<int64_t> step(static_cast<std::size_t>(r));
  for (int64_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[axes[i]];
    step[i] = in_strides[axes[i]];
  }
  // src_index[j] = input offset of output element j.
  auto src_index = std::make_shared<std::vector<int64_t>>(x.data().size());
  std::vector<int64_t> counter(static_cast<std::size_t>(r), 0);
  int64_t offset = 0;
  for (std::size_t j = 0; j < src_index->size(); ++j) {
    (*src_index)[j] = offset;
    for (int64_t a = r - 1; a >= 0; --a) {
      offset += step[a];
      if (++counter[a] < out_shape[a]) break;
      offset -= step[a] * out_shape[a];
      counter[a] = 0;
    }
  }
  std::vector<T> out(x.data().size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = x.data()[(*src_index)[j]];
  auto xn = x.node();
  return make_result<T>(std::move(out_shape), std::move(out), "permute", {x},
                        [xn, src_index](const TensorNode<T>& o) {
                          if (T* dx = xn->grad_target()) {
                            for (std::size_t j = 0; j < src_index->size(); ++j)
                              dx[(*src_index)[j]] += (*o.grad)[j];
                          }
                        });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  auto xn = x.node();
  return make_result<T>({}, {total}, "sum", {x}, [xn](const TensorNode<T>& o) {
    if (T* dx = xn->grad_target()) {
      const T g = (*o.grad)[0];
      for (std::size_t i = 0; i < xn->data.size(); ++i) dx[i] += g;
    }
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> select(const BasicTensor<T>& x, int64_t index) {
  require(x.rank() >= 1 && index >= 0 && index < x.dim(0),
          "select: index " + std::to_string(index) + " out of range for " +
              to_string(x.shape()));
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const int64_t n = numel(shape);
  std::vector<T> out(x.data().begin() + index * n,
                     x.data().begin() + (index + 1) * n);
  auto xn = x.node();
  return make_result<T>(std::move(shape), std::move(out), "select", {x},
                        [xn, index, n](const TensorNode<T>& o) {
                          if (T* dx = xn->grad_target()) {
                            for (int64_t i = 0; i < n; ++i)
                              dx[index * n + i] += (*o.grad)[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> index_select(const BasicTensor<T>& x, const std::vector<int64_t>& indices) {
  require(x.rank() >= 1, "index_select: scalar input");
  Shape shape = x.shape();
  shape[0] = static_cast<int64_t>(indices.size());
  const int64_t n = x.dim(0) ? x.numel() / x.dim(0) : 0;
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(n) * indices.size());
  for (int64_t index : indices) {
    require(index >= 0 && index < x.dim(0),
            "index_select: index " + std::to_string(index) + " out of range for " +
                to_string(x.shape()));
    out.insert(out.end(), x.data().begin() + index * n, x.data().begin() + (index + 1) * n);
  }
  auto xn = x.node();
  return make_result<T>(std::move(shape), std::move(out), "index_select", {x},
                        [xn, indices, n](const TensorNode<T>& o) {
                          if (T* dx = xn->grad_target()) {
                            for (std::size_t r = 0; r < indices.size(); ++r)
                              for (int64_t i = 0; i < n; ++i)
                                dx[indices[r] * n + i] += (*o.grad)[r * n + i];
                          }
                        });
}

template <typename T>
BasicTensor<T> stack(const std::vector<BasicTensor<T>>& xs) {
  require(!xs.empty(), "stack: no inputs");
  for (const auto& t : xs) require_same_shape(xs.front(), t, "stack");
  Shape shape = xs.front().shape();
  const int64_t n = xs.front().numel();
  shape.insert(shape.begin(), static_cast<int64_t>(xs.size()));
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(n) * xs.size());
  std::vector<NodePtr<T>> nodes;
  for (const auto& t : xs) {
    out.insert(out.end(), t.data().begin(), t.data().end());
    nodes.push_back(t.node());
  }
  return make_result<T>(std::move(shape), std::move(out), "stack", xs,
                        [nodes, n](const TensorNode<T>& o) {
                          for (std::size_t i = 0; i < nodes.size(); ++i) {
                            if (T* dx = nodes[i]->grad_target()) {
                              for (int64_t j = 0; j < n; ++j)
                                dx[j] += (*o.grad)[i * n + j];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> tile_batch(const BasicTensor<T>& x, int64_t n) {
  require(x.rank() >= 1 && x.dim(0) == 1 && n >= 1,
          "tile_batch: expected leading extent 1, got " + to_string(x.shape()));
  Shape shape = x.shape();
  shape[0] = n;
  const int64_t m = x.numel();
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(n * m));
  for (int64_t i = 0; i < n; ++i) out.insert(out.end(), x.data().begin(), x.data().end());
  auto xn = x.node();
  return make_result<T>(std::move(shape), std::move(out), "tile_batch", {x},
                        [xn, n, m](const TensorNode<T>& o) {
                          if (T* dx = xn->grad_target()) {
                            for (int64_t i = 0; i < n; ++i)
                              for (int64_t j = 0; j < m; ++j)
                                dx[j] += (*o.grad)[i * m + j];
                          }
                        });
}

#define MASKDESK_OPS(T)                                                          \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);  \
  template BasicTensor<T> bmm(const BasicTensor<T>&, const BasicTensor<T>&, bool); \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);     \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);     \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);     \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                  \
  template BasicTensor<T> mul_scalar(const BasicTensor<T>&, T);                  \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> relu(const BasicTensor<T>&);                           \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                        \
  template BasicTensor<T> log(const BasicTensor<T>&);                            \
  template BasicTensor<T> exp(const BasicTensor<T>&);                            \
  template BasicTensor<T> softmax(const BasicTensor<T>&, int64_t);               \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, \
                                     const BasicTensor<T>&, double);             \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                 const BasicTensor<T>&, int, int);               \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);             \
  template BasicTensor<T> multi_head_attention(                                  \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int); \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                 \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                      \
  template BasicTensor<T> permute(const BasicTensor<T>&,                         \
                                  const std::vector<int64_t>&);                  \
  template BasicTensor<T> sum(const BasicTensor<T>&);                            \
  template BasicTensor<T> mean(const BasicTensor<T>&);                           \
  template BasicTensor<T> select(const BasicTensor<T>&, int64_t);                \
  template BasicTensor<T> index_select(const BasicTensor<T>&,                    \
                                       const std::vector<int64_t>&);             \
  template BasicTensor<T> stack(const std::vector<BasicTensor<T>>&);             \
  template BasicTensor<T> tile_batch(const BasicTensor<T>&, int64_t);

MASKDESK_OPS(float)
MASKDESK_OPS(double)

#undef MASKDESK_OPS

}  // namespace maskdesk
