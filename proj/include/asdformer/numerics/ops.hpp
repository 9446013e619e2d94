#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "asdformer/numerics/tensor.hpp"

namespace asdformer::numerics {

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  return std::any_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->requires_grad(); });
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// outer x axis x inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline double normal_pdf(double x) {
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product. `b` is either a plain matrix shared across the
/// batch or carries exactly the same leading dimensions as `a`.
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(a.rank() - 2), p = a.dim(a.rank() - 1);
  const std::size_t pb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  const Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  const Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  const bool shared_b = lead_b.empty();
  if (p != pb || (!shared_b && lead_a != lead_b)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t batch = shape_size(lead_a);
  Shape out_shape = lead_a;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<double> out(batch * m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t bt = 0; bt < batch; ++bt) {
    const double* pa = A.data() + bt * m * p;
    const double* pbm = B.data() + (shared_b ? 0 : bt * p * n);
    double* pc = out.data() + bt * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < p; ++k) {
        const double aik = pa[i * p + k];
        if (aik == 0.0) continue;
        const double* brow = pbm + k * n;
        double* crow = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
    }
  }

  const bool rg = detail::any_requires_grad({&a, &b});
  Tensor result = make_result(std::move(out_shape), std::move(out), rg);
  if (rg) {
    tape.record({a, b}, result, [a, b, batch, m, p, n, shared_b](std::span<const double> gc, std::span<std::vector<double>*> gin) {
      const auto A = a.data();
      const auto B = b.data();
      for (std::size_t bt = 0; bt < batch; ++bt) {
        const double* pa = A.data() + bt * m * p;
        const double* pbm = B.data() + (shared_b ? 0 : bt * p * n);
        const double* pg = gc.data() + bt * m * n;
        if (gin[0]) {
          double* ga = gin[0]->data() + bt * m * p;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t k = 0; k < p; ++k) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += pg[i * n + j] * pbm[k * n + j];
              ga[i * p + k] += s;
            }
        }
        if (gin[1]) {
          double* gb = gin[1]->data() + (shared_b ? 0 : bt * p * n);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t k = 0; k < p; ++k) {
              const double aik = pa[i * p + k];
              for (std::size_t j = 0; j < n; ++j) gb[k * n + j] += aik * pg[i * n + j];
            }
        }
      }
    });
  }
  return result;
}

/// Swaps the last two axes.
inline Tensor transpose_last2(Tape& tape, const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  const std::size_t batch = x.size() / (r * c);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  std::vector<double> out(x.size());
  const auto X = x.data();
  for (std::size_t bt = 0; bt < batch; ++bt)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[bt * r * c + j * r + i] = X[bt * r * c + i * c + j];
  Tensor result = make_result(std::move(shape), std::move(out), x.requires_grad());
  if (x.requires_grad()) {
    tape.record({x}, result, [batch, r, c](std::span<const double> g, std::span<std::vector<double>*> gin) {
      auto& gx = *gin[0];
      for (std::size_t bt = 0; bt < batch; ++bt)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[bt * r * c + i * c + j] += g[bt * r * c + j * r + i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  const bool rg = detail::any_requires_grad({&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record({a, b}, result, [](std::span<const double> g, std::span<std::vector<double>*> gin) {
      for (auto* gi : gin)
        if (gi)
          for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
    });
  }
  return result;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  const bool rg = detail::any_requires_grad({&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record({a, b}, result, [a, b](std::span<const double> g, std::span<std::vector<double>*> gin) {
      if (gin[0])
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * b[i];
      if (gin[1])
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * a[i];
    });
  }
  return result;
}

inline Tensor scale(Tape& tape, const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i];
  Tensor result = make_result(x.shape(), std::move(out), x.requires_grad());
  if (x.requires_grad()) {
    tape.record({x}, result, [c](std::span<const double> g, std::span<std::vector<double>*> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += c * g[i];
    });
  }
  return result;
}

/// x[..., n] + bias[n]
inline Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.dim(x.rank() - 1);
  if (bias.rank() != 1 || bias.dim(0) != n) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % n];
  const bool rg = detail::any_requires_grad({&x, &bias});
  Tensor result = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record({x, bias}, result, [n](std::span<const double> g, std::span<std::vector<double>*> gin) {
      if (gin[0])
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
      if (gin[1])
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i % n] += g[i];
    });
  }
  return result;
}

/// Exact GELU, x * Phi(x) with the erf-based normal CDF.
inline Tensor gelu(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * detail::normal_cdf(x[i]);
  Tensor result = make_result(x.shape(), std::move(out), x.requires_grad());
  if (x.requires_grad()) {
    tape.record({x}, result, [x](std::span<const double> g, std::span<std::vector<double>*> gin) {
      const double fudge = corrupt_backward_hook().load() ? 1.01 : 1.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = x[i];
        (*gin[0])[i] += fudge * g[i] * (detail::normal_cdf(v) + v * detail::normal_pdf(v));
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Normalisation

/// Max-subtracted softmax along `axis`.
inline Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  const auto s = detail::split_at(x.shape(), axis);
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = x[base];
      for (std::size_t j = 1; j < s.extent; ++j) mx = std::max(mx, x[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const double e = std::exp(x[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] /= z;
    }
  Tensor result = make_result(x.shape(), std::move(out), x.requires_grad());
  if (x.requires_grad()) {
    tape.record({x}, result, [result_data = result.values(), s](std::span<const double> g, std::span<std::vector<double>*> gin) {
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.extent * s.inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < s.extent; ++j) dot += g[base + j * s.inner] * result_data[base + j * s.inner];
          for (std::size_t j = 0; j < s.extent; ++j) {
            const std::size_t idx = base + j * s.inner;
            (*gin[0])[idx] += result_data[idx] * (g[idx] - dot);
          }
        }
    });
  }
  return result;
}

inline Tensor softmax(Tape& tape, const Tensor& x) { return softmax(tape, x, x.rank() - 1); }

/// LayerNorm over the last axis with population variance, eps inside the root.
inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  std::vector<double> xhat(x.size()), inv_std(rows), out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* px = x.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += px[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (px[j] - mean) * (px[j] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (px[j] - mean) * inv_std[r];
      out[r * d + j] = gamma[j] * xhat[r * d + j] + beta[j];
    }
  }
  const bool rg = detail::any_requires_grad({&x, &gamma, &beta});
  Tensor result = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record({x, gamma, beta}, result,
                [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), d, rows](
                    std::span<const double> g, std::span<std::vector<double>*> gin) {
                  std::vector<double> dxhat(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * d;
                    const double* xh = xhat.data() + r * d;
                    if (gin[1])
                      for (std::size_t j = 0; j < d; ++j) (*gin[1])[j] += gr[j] * xh[j];
                    if (gin[2])
                      for (std::size_t j = 0; j < d; ++j) (*gin[2])[j] += gr[j];
                    if (!gin[0]) continue;
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      dxhat[j] = gr[j] * gamma[j];
                      mean_dxhat += dxhat[j];
                      mean_dxhat_xhat += dxhat[j] * xh[j];
                    }
                    mean_dxhat /= static_cast<double>(d);
                    mean_dxhat_xhat /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j)
                      (*gin[0])[r * d + j] += inv_std[r] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
                  }
                });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sparse selection

/// Indices of the k largest entries, ties to the lower index, returned in
/// ascending index order.
inline std::vector<std::size_t> top_k_indices(std::span<const double> x, std::size_t k) {
  if (k < 1 || k > x.size()) {
    throw ArgumentError("top_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(x.size()) + "]");
  }
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return x[a] > x[b] || (x[a] == x[b] && a < b); });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct TopkSoftmax {
  Tensor weights;                                   // same shape as the logits
  std::vector<std::vector<std::size_t>> selected;   // one index set per row
};

/// Row-wise (last axis) softmax restricted to each row's top-k logits; every
/// other weight is exactly zero. The selection is a constant under
/// differentiation.
inline TopkSoftmax masked_topk_softmax(Tape& tape, const Tensor& logits, std::size_t k) {
  const std::size_t n = logits.dim(logits.rank() - 1);
  const std::size_t rows = logits.size() / n;
  std::vector<double> out(logits.size(), 0.0);
  std::vector<std::vector<std::size_t>> selected(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::span<const double> row = logits.data().subspan(r * n, n);
    selected[r] = top_k_indices(row, k);
    double mx = row[selected[r].front()];
    for (auto i : selected[r]) mx = std::max(mx, row[i]);
    double z = 0.0;
    for (auto i : selected[r]) {
      out[r * n + i] = std::exp(row[i] - mx);
      z += out[r * n + i];
    }
    for (auto i : selected[r]) out[r * n + i] /= z;
  }
  Tensor result = make_result(logits.shape(), std::move(out), logits.requires_grad());
  if (logits.requires_grad()) {
    tape.record({logits}, result, [w = result.values(), selected, n](std::span<const double> g, std::span<std::vector<double>*> gin) {
      for (std::size_t r = 0; r < selected.size(); ++r) {
        double dot = 0.0;
        for (auto i : selected[r]) dot += g[r * n + i] * w[r * n + i];
        for (auto i : selected[r]) (*gin[0])[r * n + i] += w[r * n + i] * (g[r * n + i] - dot);
      }
    });
  }
  return {result, std::move(selected)};
}

// ---------------------------------------------------------------------------
// Losses and reductions

/// Mean over the batch of -log softmax(logits)[label].
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw ArgumentError("cross_entropy: label " + std::to_string(labels[b]) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
    const double* row = logits.data().data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - log_z);
    loss += log_z - row[labels[b]];
  }
  loss /= static_cast<double>(batch);
  Tensor result = make_result({1}, {loss}, logits.requires_grad());
  if (logits.requires_grad()) {
    std::vector<int> lab(labels.begin(), labels.end());
    tape.record({logits}, result, [probs = std::move(probs), lab = std::move(lab), batch, classes](
                                      std::span<const double> g, std::span<std::vector<double>*> gin) {
      const double s = g[0] / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < classes; ++c) {
          const double onehot = static_cast<int>(c) == lab[b] ? 1.0 : 0.0;
          (*gin[0])[b * classes + c] += s * (probs[b * classes + c] - onehot);
        }
    });
  }
  return result;
}

inline Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor result = make_result({1}, {s}, x.requires_grad());
  if (x.requires_grad()) {
    tape.record({x}, result, [](std::span<const double> g, std::span<std::vector<double>*> gin) {
      for (auto& v : *gin[0]) v += g[0];
    });
  }
  return result;
}

inline Tensor mean(Tape& tape, const Tensor& x) { return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.size())); }

/// Sums out the leading axis: [B, ...] -> [...].
inline Tensor sum_leading(Tape& tape, const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("sum_leading needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), inner = x.size() / batch;
  std::vector<double> out(inner, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < inner; ++i) out[i] += x[b * inner + i];
  Tensor result = make_result(Shape(x.shape().begin() + 1, x.shape().end()), std::move(out), x.requires_grad());
  if (x.requires_grad()) {
    tape.record({x}, result, [batch, inner](std::span<const double> g, std::span<std::vector<double>*> gin) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < inner; ++i) (*gin[0])[b * inner + i] += g[i];
    });
  }
  return result;
}

/// (sigma / (mu + eps))^2 over a rank-1 tensor, population sigma; 0 for E == 1.
inline Tensor cv_squared(Tape& tape, const Tensor& importance, double eps = 1e-8) {
  if (importance.rank() != 1) throw ShapeError("cv_squared expects a vector, got " + shape_str(importance.shape()));
  const std::size_t e = importance.size();
  const double n = static_cast<double>(e);
  double mu = 0.0;
  for (double v : importance.data()) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : importance.data()) var += (v - mu) * (v - mu);
  var /= n;
  const double denom = mu + eps;
  const double value = e == 1 ? 0.0 : var / (denom * denom);
  Tensor result = make_result({1}, {value}, importance.requires_grad());
  if (importance.requires_grad() && e > 1) {
    tape.record({importance}, result, [importance, mu, var, denom, n](std::span<const double> g, std::span<std::vector<double>*> gin) {
      for (std::size_t i = 0; i < importance.size(); ++i) {
        const double dvar = 2.0 * (importance[i] - mu) / n;
        const double dmu = 1.0 / n;
        (*gin[0])[i] += g[0] * (dvar / (denom * denom) - 2.0 * var * dmu / (denom * denom * denom));
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Layout

inline Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor result = make_result(std::move(shape), x.values(), x.requires_grad());
  if (x.requires_grad()) {
    tape.record({x}, result, [](std::span<const double> g, std::span<std::vector<double>*> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    });
  }
  return result;
}

inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch " + shape_str(ref) + " vs " + shape_str(p.shape()));
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (i != axis && p.dim(i) != ref[i])
        throw ShapeError("concat: shape mismatch " + shape_str(ref) + " vs " + shape_str(p.shape()));
    extents.push_back(p.dim(axis));
    total += p.dim(axis);
    rg = rg || p.requires_grad();
  }
  const auto s = detail::split_at(ref, axis);
  Shape shape = ref;
  shape[axis] = total;
  std::vector<double> out(shape_size(shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::size_t offset = o * total * s.inner;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const std::size_t block = extents[pi] * s.inner;
      const auto src = parts[pi].data().subspan(o * block, block);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += block;
    }
  }
  Tensor result = make_result(std::move(shape), std::move(out), rg);
  if (rg) {
    tape.record(parts, result, [extents, s, total](std::span<const double> g, std::span<std::vector<double>*> gin) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        std::size_t offset = o * total * s.inner;
        for (std::size_t pi = 0; pi < extents.size(); ++pi) {
          const std::size_t block = extents[pi] * s.inner;
          if (gin[pi])
            for (std::size_t i = 0; i < block; ++i) (*gin[pi])[o * block + i] += g[offset + i];
          offset += block;
        }
      }
    });
  }
  return result;
}

inline Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto s = detail::split_at(x.shape(), axis);
  if (length == 0 || start + length > s.extent) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
                     shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<double> out(shape_size(shape));
  const std::size_t block = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    const auto src = x.data().subspan(o * s.extent * s.inner + start * s.inner, block);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(o * block));
  }
  Tensor result = make_result(std::move(shape), std::move(out), x.requires_grad());
  if (x.requires_grad()) {
    tape.record({x}, result, [s, start, block](std::span<const double> g, std::span<std::vector<double>*> gin) {
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < block; ++i) (*gin[0])[o * s.extent * s.inner + start * s.inner + i] += g[o * block + i];
    });
  }
  return result;
}

/// Inserts a new axis at `axis` on every part and concatenates along it.
inline Tensor stack(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape shape = p.shape();
    if (axis > shape.size()) throw ShapeError("stack axis out of range for " + shape_str(shape));
    shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(tape, p, std::move(shape)));
  }
  return concat(tape, expanded, axis);
}

/// Repeats x along a new leading axis of length `count`.
inline Tensor expand_leading(Tape& tape, const Tensor& x, std::size_t count) {
  Shape shape = x.shape();
  shape.insert(shape.begin(), count);
  std::vector<double> out;
  out.reserve(count * x.size());
  for (std::size_t c = 0; c < count; ++c) out.insert(out.end(), x.data().begin(), x.data().end());
  Tensor result = make_result(std::move(shape), std::move(out), x.requires_grad());
  if (x.requires_grad()) {
    tape.record({x}, result, [count, n = x.size()](std::span<const double> g, std::span<std::vector<double>*> gin) {
      for (std::size_t c = 0; c < count; ++c)
        for (std::size_t i = 0; i < n; ++i) (*gin[0])[i] += g[c * n + i];
    });
  }
  return result;
}

}  // namespace asdformer::numerics
