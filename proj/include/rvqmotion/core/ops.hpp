// Copyright 2026 The rvqmotion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Differentiable operations over row-major 2-D tensors. Sequences are laid
// out as [batch * frames, channels]; ops that act along time take the
// per-sequence frame count explicitly.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "rvqmotion/core/tensor.hpp"

namespace rvqmotion {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

inline void require_2d(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  if (t.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline CMatMap cmap(const Node& n, std::size_t r, std::size_t c) { return CMatMap(n.data.data(), r, c); }

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n);
  detail::MatMap(out.data(), m, n).noalias() =
      detail::CMatMap(a.data().data(), m, k) * detail::CMatMap(b.data().data(), k, n);
  return detail::make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    detail::CMatMap g(self.grad.data(), m, n);
    if (double* ga = detail::parent_grad(self, 0)) {
      detail::MatMap(ga, m, k).noalias() += g * detail::cmap(*self.parents[1], k, n).transpose();
    }
    if (double* gb = detail::parent_grad(self, 1)) {
      detail::MatMap(gb, k, n).noalias() += detail::cmap(*self.parents[0], m, k).transpose() * g;
    }
  });
}

/// a[m,k] * b[n,k]^T -> [m,n]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul_nt");
  detail::require_2d(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: row widths differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n);
  detail::MatMap(out.data(), m, n).noalias() =
      detail::CMatMap(a.data().data(), m, k) * detail::CMatMap(b.data().data(), n, k).transpose();
  return detail::make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    detail::CMatMap g(self.grad.data(), m, n);
    if (double* ga = detail::parent_grad(self, 0)) {
      detail::MatMap(ga, m, k).noalias() += g * detail::cmap(*self.parents[1], n, k);
    }
    if (double* gb = detail::parent_grad(self, 1)) {
      detail::MatMap(gb, n, k).noalias() += g.transpose() * detail::cmap(*self.parents[0], m, k);
    }
  });
}

/// x[m,k] * w[k,n] + b[n]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require_2d(x, "linear");
  detail::require_2d(w, "linear");
  if (x.cols() != w.rows() || b.numel() != w.cols()) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()) + " and bias " + shape_str(b.shape()));
  }
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  std::vector<double> out(m * n);
  detail::MatMap o(out.data(), m, n);
  o.noalias() = detail::CMatMap(x.data().data(), m, k) * detail::CMatMap(w.data().data(), k, n);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), n);
  return detail::make_result({m, n}, std::move(out), {&x, &w, &b}, [m, k, n](detail::Node& self) {
    detail::CMatMap g(self.grad.data(), m, n);
    if (double* gx = detail::parent_grad(self, 0)) {
      detail::MatMap(gx, m, k).noalias() += g * detail::cmap(*self.parents[1], k, n).transpose();
    }
    if (double* gw = detail::parent_grad(self, 1)) {
      detail::MatMap(gw, k, n).noalias() += detail::cmap(*self.parents[0], m, k).transpose() * g;
    }
    if (double* gb = detail::parent_grad(self, 2)) {
      Eigen::Map<Eigen::RowVectorXd>(gb, n) += g.colwise().sum();
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = detail::parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return detail::make_result(a.shape(), std::move(out), {&a}, [c](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
    }
  });
}

/// Adds a row vector b[n] to every row of x[m,n].
inline Tensor add_row(const Tensor& x, const Tensor& b) {
  detail::require_2d(x, "add_row");
  if (b.numel() != x.cols()) {
    throw ShapeError("add_row: row of " + std::to_string(b.numel()) + " values for " + shape_str(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.values());
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += b[c];
  }
  return detail::make_result(x.shape(), std::move(out), {&x, &b}, [m, n](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
    }
    if (double* g = detail::parent_grad(self, 1)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
      }
    }
  });
}

inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  return detail::make_result(x.shape(), std::move(out), {&x}, [slope](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      const auto& xv = self.parents[0]->data;
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (xv[i] > 0.0 ? 1.0 : slope);
    }
  });
}

inline Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return detail::make_result(x.shape(), out, {&x}, [out](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (1.0 - out[i] * out[i]);
    }
  });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result({1}, {s}, {&x}, [](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// Mean of squared differences over all elements.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mse");
  const std::size_t n = a.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return detail::make_result({1}, {s / static_cast<double>(n)}, {&a, &b}, [n](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    const double c = 2.0 * self.grad[0] / static_cast<double>(n);
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += c * (av[i] - bv[i]);
    }
    if (double* g = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) g[i] -= c * (av[i] - bv[i]);
    }
  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return detail::make_result(std::move(shape), x.values(), {&x}, [](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// Forward value of `quantized`, gradient routed unchanged to `pre_quant`.
inline Tensor straight_through(const Tensor& quantized, const Tensor& pre_quant) {
  detail::require_same_shape(quantized, pre_quant, "straight_through");
  return detail::make_result(quantized.shape(), quantized.values(), {&pre_quant}, [](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution over time

enum class Padding {
  kCausal,     // output[t] reads input[t - (K-1)*dilation .. t], zeros before 0
  kSame,       // centered window, zeros outside the sequence
  kReplicate,  // centered window, edge frames repeated outside the sequence
};

struct ConvGeometry {
  std::size_t seq_len = 1;
  std::size_t kernel = 1;
  std::size_t dilation = 1;
  Padding padding = Padding::kCausal;
};

namespace detail {

// Source row for output row `r` at tap `k`, or -1 for a zero pad.
inline long conv_source(std::size_t r, std::size_t k, const ConvGeometry& g) {
  const long t = static_cast<long>(r % g.seq_len);
  const long base = static_cast<long>(r - r % g.seq_len);
  const long K = static_cast<long>(g.kernel);
  const long dil = static_cast<long>(g.dilation);
  long offset = 0;
  if (g.padding == Padding::kCausal) {
    offset = -(K - 1 - static_cast<long>(k)) * dil;
  } else {
    offset = (static_cast<long>(k) - (K - 1) / 2) * dil;
  }
  long s = t + offset;
  const long T = static_cast<long>(g.seq_len);
  if (s < 0 || s >= T) {
    if (g.padding != Padding::kReplicate) return -1;
    s = std::clamp(s, 0L, T - 1);
  }
  return base + s;
}

inline void conv_im2col(const double* x, std::size_t rows, std::size_t cin, const ConvGeometry& g,
                        std::vector<double>& cols) {
  const std::size_t K = g.kernel;
  cols.assign(rows * K * cin, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < K; ++k) {
      const long s = conv_source(r, k, g);
      if (s < 0) continue;
      std::copy_n(x + static_cast<std::size_t>(s) * cin, cin, cols.data() + (r * K + k) * cin);
    }
  }
}

}  // namespace detail

/// 1-D convolution: x[B*T, Cin], w[K*Cin, Cout] (tap-major), b[Cout].
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeometry& geom) {
  detail::require_2d(x, "conv1d");
  detail::require_2d(w, "conv1d");
  const std::size_t rows = x.rows(), cin = x.cols(), K = geom.kernel;
  if (geom.seq_len == 0 || rows % geom.seq_len != 0) {
    throw ShapeError("conv1d: " + std::to_string(rows) + " rows are not a whole number of sequences of length " +
                     std::to_string(geom.seq_len));
  }
  if (K == 0 || geom.dilation == 0) throw ShapeError("conv1d: kernel and dilation must be positive");
  if (geom.padding != Padding::kCausal && K % 2 == 0) {
    throw ShapeError("conv1d: centered padding needs an odd kernel, got " + std::to_string(K));
  }
  if (w.rows() != K * cin || b.numel() != w.cols()) {
    throw ShapeError("conv1d: weight " + shape_str(w.shape()) + " / bias " + shape_str(b.shape()) +
                     " incompatible with input channels " + std::to_string(cin) + " and kernel " +
                     std::to_string(K));
  }
  const std::size_t cout = w.cols();
  std::vector<double> cols;
  detail::conv_im2col(x.data().data(), rows, cin, geom, cols);
  std::vector<double> out(rows * cout);
  detail::MatMap o(out.data(), rows, cout);
  o.noalias() = detail::CMatMap(cols.data(), rows, K * cin) * detail::CMatMap(w.data().data(), K * cin, cout);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), cout);
  return detail::make_result({rows, cout}, std::move(out), {&x, &w, &b},
                             [rows, cin, cout, K, geom](detail::Node& self) {
    detail::CMatMap g(self.grad.data(), rows, cout);
    if (double* gw = detail::parent_grad(self, 1)) {
      std::vector<double> cols;
      detail::conv_im2col(self.parents[0]->data.data(), rows, cin, geom, cols);
      detail::MatMap(gw, K * cin, cout).noalias() +=
          detail::CMatMap(cols.data(), rows, K * cin).transpose() * g;
    }
    if (double* gb = detail::parent_grad(self, 2)) {
      Eigen::Map<Eigen::RowVectorXd>(gb, cout) += g.colwise().sum();
    }
    if (double* gx = detail::parent_grad(self, 0)) {
      std::vector<double> gcols(rows * K * cin);
      detail::MatMap(gcols.data(), rows, K * cin).noalias() =
          g * detail::cmap(*self.parents[1], K * cin, cout).transpose();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < K; ++k) {
          const long s = detail::conv_source(r, k, geom);
          if (s < 0) continue;
          const double* src = gcols.data() + (r * K + k) * cin;
          double* dst = gx + static_cast<std::size_t>(s) * cin;
          for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and probability

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  detail::require_2d(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n) {
    throw ShapeError("layer_norm: affine parameters do not match width " + std::to_string(n));
  }
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = x.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (row[c] - mu) * inv_std[r];
      out[r * n + c] = xhat[r * n + c] * gamma[c] + beta[c];
    }
  }
  return detail::make_result({m, n}, std::move(out), {&x, &gamma, &beta},
                             [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
    const auto& gam = self.parents[1]->data;
    double* gx = detail::parent_grad(self, 0);
    double* gg = detail::parent_grad(self, 1);
    double* gbt = detail::parent_grad(self, 2);
    std::vector<double> dxhat(n);
    for (std::size_t r = 0; r < m; ++r) {
      const double* dy = self.grad.data() + r * n;
      const double* xh = xhat.data() + r * n;
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        dxhat[c] = dy[c] * gam[c];
        mean_d += dxhat[c];
        mean_dx += dxhat[c] * xh[c];
        if (gg) gg[c] += dy[c] * xh[c];
        if (gbt) gbt[c] += dy[c];
      }
      mean_d /= static_cast<double>(n);
      mean_dx /= static_cast<double>(n);
      if (gx) {
        for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
      }
    }
  });
}

namespace detail {

inline void softmax_row(const double* in, double* out, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, in[c]);
  double s = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    out[c] = std::exp(in[c] - mx);
    s += out[c];
  }
  for (std::size_t c = 0; c < n; ++c) out[c] /= s;
}

inline void log_softmax_row(const double* in, double* out, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, in[c]);
  double s = 0.0;
  for (std::size_t c = 0; c < n; ++c) s += std::exp(in[c] - mx);
  const double lse = mx + std::log(s);
  for (std::size_t c = 0; c < n; ++c) out[c] = in[c] - lse;
}

}  // namespace detail

inline Tensor softmax_rows(const Tensor& x) {
  detail::require_2d(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) detail::softmax_row(x.data().data() + r * n, out.data() + r * n, n);
  return detail::make_result({m, n}, out, {&x}, [m, n, out](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t r = 0; r < m; ++r) {
        const double* s = out.data() + r * n;
        const double* dy = self.grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += dy[c] * s[c];
        for (std::size_t c = 0; c < n; ++c) g[r * n + c] += s[c] * (dy[c] - dot);
      }
    }
  });
}

inline Tensor log_softmax_rows(const Tensor& x) {
  detail::require_2d(x, "log_softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) detail::log_softmax_row(x.data().data() + r * n, out.data() + r * n, n);
  return detail::make_result({m, n}, out, {&x}, [m, n, out](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t r = 0; r < m; ++r) {
        const double* dy = self.grad.data() + r * n;
        double total = 0.0;
        for (std::size_t c = 0; c < n; ++c) total += dy[c];
        for (std::size_t c = 0; c < n; ++c) g[r * n + c] += dy[c] - std::exp(out[r * n + c]) * total;
      }
    }
  });
}

/// Mean over rows of -log softmax(logits)[target].
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  detail::require_2d(logits, "cross_entropy");
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) + " rows");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> probs(m * n);
  double loss = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= n) {
      throw ShapeError("cross_entropy: target " + std::to_string(tgt[r]) + " outside [0," + std::to_string(n) + ")");
    }
    std::vector<double> lsm(n);
    detail::log_softmax_row(logits.data().data() + r * n, lsm.data(), n);
    loss -= lsm[static_cast<std::size_t>(tgt[r])];
    for (std::size_t c = 0; c < n; ++c) probs[r * n + c] = std::exp(lsm[c]);
  }
  return detail::make_result({1}, {loss / static_cast<double>(m)}, {&logits},
                             [m, n, tgt = std::move(tgt), probs = std::move(probs)](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      const double c = self.grad[0] / static_cast<double>(m);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t k = 0; k < n; ++k) {
          g[r * n + k] += c * (probs[r * n + k] - (static_cast<int>(k) == tgt[r] ? 1.0 : 0.0));
        }
      }
    }
  });
}

/// Mean over rows of -sum_k q[r,k] log softmax(logits)[r,k]; q is constant.
inline Tensor soft_cross_entropy(const Tensor& logits, const Tensor& target_probs) {
  detail::require_2d(logits, "soft_cross_entropy");
  detail::require_same_shape(logits, target_probs, "soft_cross_entropy");
  const std::size_t m = logits.rows(), n = logits.cols();
  std::vector<double> probs(m * n), lsm(n);
  double loss = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    detail::log_softmax_row(logits.data().data() + r * n, lsm.data(), n);
    for (std::size_t c = 0; c < n; ++c) {
      loss -= target_probs[r * n + c] * lsm[c];
      probs[r * n + c] = std::exp(lsm[c]);
    }
  }
  std::vector<double> q(target_probs.values());
  return detail::make_result({1}, {loss / static_cast<double>(m)}, {&logits},
                             [m, n, q = std::move(q), probs = std::move(probs)](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      const double c = self.grad[0] / static_cast<double>(m);
      for (std::size_t r = 0; r < m; ++r) {
        double mass = 0.0;
        for (std::size_t k = 0; k < n; ++k) mass += q[r * n + k];
        for (std::size_t k = 0; k < n; ++k) g[r * n + k] += c * (probs[r * n + k] * mass - q[r * n + k]);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Attention and row plumbing

/// Multi-head scaled dot-product attention within consecutive groups of
/// `group_len` rows. With `causal`, row i of a group attends to rows <= i only.
inline Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t group_len,
                                std::size_t heads, bool causal) {
  detail::require_2d(q, "grouped_attention");
  detail::require_same_shape(q, k, "grouped_attention");
  detail::require_same_shape(q, v, "grouped_attention");
  const std::size_t rows = q.rows(), width = q.cols();
  if (group_len == 0 || rows % group_len != 0) {
    throw ShapeError("grouped_attention: " + std::to_string(rows) + " rows not divisible by group length " +
                     std::to_string(group_len));
  }
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("grouped_attention: width " + std::to_string(width) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t L = group_len, groups = rows / L, hd = width / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> probs(groups * heads * L * L, 0.0);
  std::vector<double> out(rows * width, 0.0);
  const double* Q = q.data().data();
  const double* Kd = k.data().data();
  const double* V = v.data().data();
  std::vector<double> scores(L);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + (g * heads + h) * L * L;
      for (std::size_t i = 0; i < L; ++i) {
        const std::size_t ri = g * L + i;
        const std::size_t jmax = causal ? i + 1 : L;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < jmax; ++j) {
          const std::size_t rj = g * L + j;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += Q[ri * width + h * hd + c] * Kd[rj * width + h * hd + c];
          scores[j] = s * inv_scale;
          mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < jmax; ++j) {
          P[i * L + j] = std::exp(scores[j] - mx);
          z += P[i * L + j];
        }
        for (std::size_t j = 0; j < jmax; ++j) {
          P[i * L + j] /= z;
          const std::size_t rj = g * L + j;
          for (std::size_t c = 0; c < hd; ++c) out[ri * width + h * hd + c] += P[i * L + j] * V[rj * width + h * hd + c];
        }
      }
    }
  }
  return detail::make_result({rows, width}, std::move(out), {&q, &k, &v},
                             [=, probs = std::move(probs)](detail::Node& self) {
    const double* Qv = self.parents[0]->data.data();
    const double* Kv = self.parents[1]->data.data();
    const double* Vv = self.parents[2]->data.data();
    double* gq = detail::parent_grad(self, 0);
    double* gk = detail::parent_grad(self, 1);
    double* gv = detail::parent_grad(self, 2);
    const double* dO = self.grad.data();
    std::vector<double> dP(L);
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t h = 0; h < heads; ++h) {
        const double* P = probs.data() + (g * heads + h) * L * L;
        for (std::size_t i = 0; i < L; ++i) {
          const std::size_t ri = g * L + i;
          const std::size_t jmax = causal ? i + 1 : L;
          double dot = 0.0;
          for (std::size_t j = 0; j < jmax; ++j) {
            const std::size_t rj = g * L + j;
            double s = 0.0;
            for (std::size_t c = 0; c < hd; ++c) s += dO[ri * width + h * hd + c] * Vv[rj * width + h * hd + c];
            dP[j] = s;
            dot += s * P[i * L + j];
            if (gv) {
              for (std::size_t c = 0; c < hd; ++c) gv[rj * width + h * hd + c] += P[i * L + j] * dO[ri * width + h * hd + c];
            }
          }
          for (std::size_t j = 0; j < jmax; ++j) {
            const double ds = P[i * L + j] * (dP[j] - dot) * inv_scale;
            const std::size_t rj = g * L + j;
            for (std::size_t c = 0; c < hd; ++c) {
              if (gq) gq[ri * width + h * hd + c] += ds * Kv[rj * width + h * hd + c];
              if (gk) gk[rj * width + h * hd + c] += ds * Qv[ri * width + h * hd + c];
            }
          }
        }
      }
    }
  });
}

/// Adds row i of `table` to row i of every consecutive group of `group_len`
/// rows; `table` may hold more rows than the group length.
inline Tensor add_positional(const Tensor& x, const Tensor& table, std::size_t group_len) {
  detail::require_2d(x, "add_positional");
  detail::require_2d(table, "add_positional");
  const std::size_t rows = x.rows(), width = x.cols();
  if (group_len == 0 || rows % group_len != 0 || table.rows() < group_len || table.cols() != width) {
    throw ShapeError("add_positional: input " + shape_str(x.shape()) + ", table " + shape_str(table.shape()) +
                     ", group length " + std::to_string(group_len));
  }
  std::vector<double> out(x.values());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t i = r % group_len;
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] += table[i * width + c];
  }
  return detail::make_result(x.shape(), std::move(out), {&x, &table}, [rows, width, group_len](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < rows * width; ++i) g[i] += self.grad[i];
    }
    if (double* g = detail::parent_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t i = r % group_len;
        for (std::size_t c = 0; c < width; ++c) g[i * width + c] += self.grad[r * width + c];
      }
    }
  });
}

struct RowRef {
  int source = -1;  // index into the source list, -1 for a zero row
  std::size_t row = 0;
};

/// Assembles a matrix whose rows are copied from several sources of equal width.
inline Tensor gather_rows(const std::vector<Tensor>& sources, const std::vector<RowRef>& refs) {
  if (sources.empty()) throw ShapeError("gather_rows: no sources");
  const std::size_t width = sources.front().cols();
  for (const Tensor& s : sources) {
    detail::require_2d(s, "gather_rows");
    if (s.cols() != width) throw ShapeError("gather_rows: sources differ in width");
  }
  if (refs.empty()) throw ShapeError("gather_rows: no rows requested");
  std::vector<double> out(refs.size() * width, 0.0);
  for (std::size_t r = 0; r < refs.size(); ++r) {
    const RowRef& ref = refs[r];
    if (ref.source < 0) continue;
    const Tensor& src = sources.at(static_cast<std::size_t>(ref.source));
    if (ref.row >= src.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(src.data().data() + ref.row * width, width, out.data() + r * width);
  }
  return detail::make_result({refs.size(), width}, std::move(out), sources, [refs, width](detail::Node& self) {
    for (std::size_t r = 0; r < refs.size(); ++r) {
      const RowRef& ref = refs[r];
      if (ref.source < 0) continue;
      double* g = detail::parent_grad(self, static_cast<std::size_t>(ref.source));
      if (!g) continue;
      for (std::size_t c = 0; c < width; ++c) g[ref.row * width + c] += self.grad[r * width + c];
    }
  });
}

/// Mean over each consecutive block of `seg_len` rows: [B*T, F] -> [B, F].
inline Tensor segment_mean(const Tensor& x, std::size_t seg_len) {
  detail::require_2d(x, "segment_mean");
  const std::size_t rows = x.rows(), width = x.cols();
  if (seg_len == 0 || rows % seg_len != 0) {
    throw ShapeError("segment_mean: " + std::to_string(rows) + " rows not divisible by " + std::to_string(seg_len));
  }
  const std::size_t segs = rows / seg_len;
  const double inv = 1.0 / static_cast<double>(seg_len);
  std::vector<double> out(segs * width, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out[(r / seg_len) * width + c] += x[r * width + c];
  }
  for (double& v : out) v *= inv;
  return detail::make_result({segs, width}, std::move(out), {&x}, [rows, width, seg_len, inv](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < width; ++c) g[r * width + c] += self.grad[(r / seg_len) * width + c] * inv;
      }
    }
  });
}

/// Scales every row to unit Euclidean norm.
inline Tensor normalize_rows(const Tensor& x, double eps = 1e-12) {
  detail::require_2d(x, "normalize_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n), norms(m);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += x[r * n + c] * x[r * n + c];
    norms[r] = std::max(std::sqrt(s), eps);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[r * n + c] / norms[r];
  }
  return detail::make_result({m, n}, out, {&x}, [m, n, out, norms = std::move(norms)](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t r = 0; r < m; ++r) {
        const double* dy = self.grad.data() + r * n;
        const double* y = out.data() + r * n;
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += dy[c] * y[c];
        for (std::size_t c = 0; c < n; ++c) g[r * n + c] += (dy[c] - y[c] * dot) / norms[r];
      }
    }
  });
}

/// All pairings of windows: a[Na*W, F], b[Nb*W, F] -> [Na*Nb*W, F] where
/// block (i*Nb + j) holds a-window i plus b-window j, frame by frame.
inline Tensor pairwise_add(const Tensor& a, const Tensor& b, std::size_t window) {
  detail::require_2d(a, "pairwise_add");
  detail::require_2d(b, "pairwise_add");
  if (a.cols() != b.cols() || window == 0 || a.rows() % window != 0 || b.rows() % window != 0) {
    throw ShapeError("pairwise_add: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t F = a.cols(), na = a.rows() / window, nb = b.rows() / window;
  std::vector<double> out(na * nb * window * F);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      for (std::size_t w = 0; w < window; ++w) {
        const double* ar = a.data().data() + (i * window + w) * F;
        const double* br = b.data().data() + (j * window + w) * F;
        double* o = out.data() + ((i * nb + j) * window + w) * F;
        for (std::size_t c = 0; c < F; ++c) o[c] = ar[c] + br[c];
      }
    }
  }
  return detail::make_result({na * nb * window, F}, std::move(out), {&a, &b}, [=](detail::Node& self) {
    double* ga = detail::parent_grad(self, 0);
    double* gb = detail::parent_grad(self, 1);
    for (std::size_t i = 0; i < na; ++i) {
      for (std::size_t j = 0; j < nb; ++j) {
        for (std::size_t w = 0; w < window; ++w) {
          const double* go = self.grad.data() + ((i * nb + j) * window + w) * F;
          if (ga) {
            for (std::size_t c = 0; c < F; ++c) ga[(i * window + w) * F + c] += go[c];
          }
          if (gb) {
            for (std::size_t c = 0; c < F; ++c) gb[(j * window + w) * F + c] += go[c];
          }
        }
      }
    }
  });
}

/// Additive angular margin logits: scale*cos(theta + margin) at the target
/// column, scale*cos(theta) elsewhere. Past theta = pi - margin the target
/// logit falls back to the linear penalty cos(theta) - margin*sin(margin).
inline Tensor angular_margin_logits(const Tensor& cosines, std::span<const int> targets, double margin,
                                    double scale_factor) {
  detail::require_2d(cosines, "angular_margin_logits");
  const std::size_t m = cosines.rows(), n = cosines.cols();
  if (targets.size() != m) throw ShapeError("angular_margin_logits: target count mismatch");
  const double cos_m = std::cos(margin), sin_m = std::sin(margin);
  const double threshold = std::cos(std::numbers::pi - margin), fallback = std::sin(std::numbers::pi - margin) * margin;
  std::vector<double> out(m * n), slope(m * n, scale_factor);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double cosv = std::clamp(cosines[r * n + c], -1.0, 1.0);
      double val = cosv;
      if (static_cast<int>(c) == targets[r]) {
        if (cosv > threshold) {
          const double sinv = std::sqrt(std::max(1.0 - cosv * cosv, 1e-12));
          val = cosv * cos_m - sinv * sin_m;
          slope[r * n + c] = scale_factor * (cos_m + sin_m * cosv / sinv);
        } else {
          val = cosv - fallback;
        }
      }
      out[r * n + c] = scale_factor * val;
    }
  }
  return detail::make_result({m, n}, std::move(out), {&cosines}, [slope = std::move(slope)](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < slope.size(); ++i) g[i] += self.grad[i] * slope[i];
    }
  });
}

}  // namespace rvqmotion
