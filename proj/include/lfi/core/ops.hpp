#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lfi/core/error.hpp"
#include "lfi/core/tape.hpp"
#include "lfi/core/tensor.hpp"

/// Differentiable tensor operations recorded on a Tape.
///
/// Shape rules: elementwise binary ops take equal shapes, or shapes equal except
/// for a leading extent of 1 on one side, which is broadcast over the batch axis.
/// Reductions return (1, 1). Column ops (slice/concat/gather/sum_cols) act on
/// rank-2 (rows, cols) tensors.
namespace lfi::ops {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
using StridedMapC = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

inline MapC as_matrix(const Tensor& t) { return MapC(t.data(), t.rows(), t.row_size()); }
inline Map as_matrix(Tensor& t) { return Map(t.data(), t.rows(), t.row_size()); }

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                   " do not conform");
}

inline void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(a.shape()));
  }
}

enum class Broadcast { none, lhs, rhs };

inline Broadcast broadcast_rule(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::none;
  if (a.size() == b.size() && !a.empty() && std::equal(a.begin() + 1, a.end(), b.begin() + 1)) {
    if (a[0] == 1) return Broadcast::lhs;
    if (b[0] == 1) return Broadcast::rhs;
  }
  shape_mismatch(op, a, b);
}

template <typename F, typename Da, typename Db>
Var binary(const char* op, const Var& a, const Var& b, F f, Da dfa, Db dfb) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast rule = broadcast_rule(op, av.shape(), bv.shape());
  const Shape& out_shape = rule == Broadcast::lhs ? bv.shape() : av.shape();
  Tensor out(out_shape);
  const std::size_t n = out.size();
  const std::size_t row = out.row_size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ia = rule == Broadcast::lhs ? i % row : i;
    const std::size_t ib = rule == Broadcast::rhs ? i % row : i;
    out[i] = f(av[ia], bv[ib]);
  }
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record(op, std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ai);
    const Tensor& y = t.value(bi);
    Tensor* ga = t.requires_grad(ai) ? &t.grad(ai) : nullptr;
    Tensor* gb = t.requires_grad(bi) ? &t.grad(bi) : nullptr;
    if (rule == Broadcast::none) {
      for (std::size_t i = 0; i < n; ++i) {
        if (ga) (*ga)[i] += g[i] * dfa(x[i], y[i]);
        if (gb) (*gb)[i] += g[i] * dfb(x[i], y[i]);
      }
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ia = rule == Broadcast::lhs ? i % row : i;
      const std::size_t ib = rule == Broadcast::rhs ? i % row : i;
      if (ga) (*ga)[ia] += g[i] * dfa(x[ia], y[ib]);
      if (gb) (*gb)[ib] += g[i] * dfb(x[ia], y[ib]);
    }
  });
}

/// Elementwise map where the derivative is expressed through input x and output y.
template <typename F, typename D>
Var unary(const char* op, const Var& a, F f, D df) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ai = a.index();
  return a.tape().record(op, std::move(out), {a}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ai);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

inline double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var scale(const Var& a, double c) {
  return detail::unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& a, double c) {
  return detail::unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var exp(const Var& a) {
  return detail::unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var softplus(const Var& a) {
  return detail::unary("softplus", a, detail::softplus_value,
                       [](double x, double) { return detail::sigmoid(x); });
}

inline Var square(const Var& a) {
  return detail::unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// c * tanh(a / c): smooth clamp of values into (-c, c).
inline Var soft_clamp(const Var& a, double c) {
  return detail::unary(
      "soft_clamp", a, [c](double x) { return c * std::tanh(x / c); },
      [c](double, double y) { return 1.0 - (y / c) * (y / c); });
}

/// (n, k) x (k, m) -> (n, m).
inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  if (a.shape()[1] != b.shape()[0]) detail::shape_mismatch("matmul", a.shape(), b.shape());
  Tensor out({a.shape()[0], b.shape()[1]});
  detail::as_matrix(out).noalias() = detail::as_matrix(a.value()) * detail::as_matrix(b.value());
  const std::size_t ai = a.index(), bi = b.index();
  return a.tape().record("matmul", std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    auto g = detail::as_matrix(t.grad(self));
    if (t.requires_grad(ai)) {
      detail::as_matrix(t.grad(ai)).noalias() += g * detail::as_matrix(t.value(bi)).transpose();
    }
    if (t.requires_grad(bi)) {
      detail::as_matrix(t.grad(bi)).noalias() += detail::as_matrix(t.value(ai)).transpose() * g;
    }
  });
}

/// x W + b for x (n, k), W (k, m), b (1, m).
inline Var affine(const Var& x, const Var& w, const Var& b) {
  detail::require_rank("affine", x, 2);
  detail::require_rank("affine", w, 2);
  if (x.shape()[1] != w.shape()[0]) detail::shape_mismatch("affine", x.shape(), w.shape());
  if (b.shape() != Shape{1, w.shape()[1]}) detail::shape_mismatch("affine", w.shape(), b.shape());
  Tensor out({x.shape()[0], w.shape()[1]});
  auto o = detail::as_matrix(out);
  o.noalias() = detail::as_matrix(x.value()) * detail::as_matrix(w.value());
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), b.value().size());
  const std::size_t xi = x.index(), wi = w.index(), bi = b.index();
  return x.tape().record("affine", std::move(out), {x, w, b}, [xi, wi, bi](Tape& t, std::size_t self) {
    auto g = detail::as_matrix(t.grad(self));
    if (t.requires_grad(xi)) {
      detail::as_matrix(t.grad(xi)).noalias() += g * detail::as_matrix(t.value(wi)).transpose();
    }
    if (t.requires_grad(wi)) {
      detail::as_matrix(t.grad(wi)).noalias() += detail::as_matrix(t.value(xi)).transpose() * g;
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad(bi);
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), gb.size()) += g.colwise().sum();
    }
  });
}

/// Softmax over the last axis.
inline Var softmax(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t n = av.shape().back();
  const std::size_t rows = av.size() / n;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= s;
  }
  const std::size_t ai = a.index();
  return a.tape().record("softmax", std::move(out), {a}, [ai, n, rows](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[o + j] * y[o + j];
      for (std::size_t j = 0; j < n; ++j) ga[o + j] += y[o + j] * (g[o + j] - dot);
    }
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ai = a.index();
  return a.tape().record("sum", Tensor::scalar(s), {a}, [ai](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(ai).values()) v += g;
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Sum over the last axis of a rank-2 tensor: (rows, cols) -> (rows, 1).
inline Var sum_cols(const Var& a) {
  detail::require_rank("sum_cols", a, 2);
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += a.value()(r, c);
    out[r] = s;
  }
  const std::size_t ai = a.index();
  return a.tape().record("sum_cols", std::move(out), {a}, [ai, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r];
  });
}

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ai = a.index();
  return a.tape().record("reshape", std::move(out), {a}, [ai](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Columns [begin, end) of a rank-2 tensor.
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  detail::require_rank("slice_cols", a, 2);
  const std::size_t rows = a.rows(), cols = a.cols();
  if (begin >= end || end > cols) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for shape " + shape_string(a.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.value().data() + r * cols + begin, w, out.data() + r * w);
  const std::size_t ai = a.index();
  return a.tape().record("slice_cols", std::move(out), {a}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += g[r * w + c];
  });
}

/// Column-wise concatenation of rank-2 tensors with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::require_rank("concat_cols", p, 2);
    if (p.rows() != rows) detail::shape_mismatch("concat_cols", parts.front().shape(), p.shape());
    total += p.cols();
  }
  Tensor out({rows, total});
  std::vector<std::size_t> index, width;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.value().data() + r * w, w, out.data() + r * total + offset);
    offset += w;
    index.push_back(p.index());
    width.push_back(w);
  }
  return parts.front().tape().record(
      "concat_cols", std::move(out), std::span<const Var>(parts), [index, width, rows, total](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < index.size(); ++k) {
          const std::size_t w = width[k];
          if (t.requires_grad(index[k])) {
            Tensor& gp = t.grad(index[k]);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * total + off + c];
          }
          off += w;
        }
      });
}

/// out[:, j] = a[:, columns[j]].
inline Var gather_cols(const Var& a, std::span<const std::size_t> columns) {
  detail::require_rank("gather_cols", a, 2);
  const std::size_t rows = a.rows(), cols = a.cols(), w = columns.size();
  std::vector<std::size_t> idx(columns.begin(), columns.end());
  for (std::size_t c : idx) {
    if (c >= cols) throw ShapeError("gather_cols: column " + std::to_string(c) + " out of range for " +
                                    shape_string(a.shape()));
  }
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = a.value()[r * cols + idx[j]];
  const std::size_t ai = a.index();
  return a.tape().record("gather_cols", std::move(out), {a}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) ga[r * cols + idx[j]] += g[r * w + j];
  });
}

/// Inclusive cumulative sum over the last axis with a leading zero: (R, K) -> (R, K+1).
inline Var cumsum_pad(const Var& a) {
  detail::require_rank("cumsum_pad", a, 2);
  const std::size_t rows = a.rows(), k = a.cols();
  Tensor out({rows, k + 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) out[r * (k + 1) + j + 1] = (s += a.value()[r * k + j]);
  }
  const std::size_t ai = a.index();
  return a.tape().record("cumsum_pad", std::move(out), {a}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t j = k; j-- > 0;) {
        acc += g[r * (k + 1) + j + 1];
        ga[r * k + j] += acc;
      }
    }
  });
}

/// Output length of a valid (unpadded) 1D convolution.
constexpr std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride) {
  return length < kernel ? 0 : (length - kernel) / stride + 1;
}

/// Valid 1D convolution over the time axis.
///
/// x: (batch, time, in_channels); weight: (kernel, in_channels, out_channels);
/// bias: (1, out_channels). Output: (batch, (time - kernel) / stride + 1, out_channels) with
/// out[b, t, o] = bias[o] + sum_{j, c} x[b, t * stride + j, c] * weight[j, c, o].
inline Var conv1d(const Var& x, const Var& weight, const Var& bias, std::size_t stride = 1) {
  detail::require_rank("conv1d", x, 3);
  detail::require_rank("conv1d", weight, 3);
  const std::size_t batch = x.shape()[0], len = x.shape()[1], cin = x.shape()[2];
  const std::size_t kernel = weight.shape()[0], cout = weight.shape()[2];
  if (weight.shape()[1] != cin) detail::shape_mismatch("conv1d", x.shape(), weight.shape());
  if (bias.value().size() != cout) detail::shape_mismatch("conv1d", weight.shape(), bias.shape());
  if (stride == 0) throw ShapeError("conv1d: stride must be positive");
  const std::size_t tout = conv1d_output_length(len, kernel, stride);
  if (tout == 0) {
    throw ShapeError("conv1d: input length " + std::to_string(len) + " shorter than kernel " +
                     std::to_string(kernel));
  }
  const std::size_t kc = kernel * cin;
  Tensor out({batch, tout, cout});
  const detail::MapC w(weight.value().data(), kc, cout);
  const Eigen::Map<const Eigen::RowVectorXd> b(bias.value().data(), cout);
  for (std::size_t n = 0; n < batch; ++n) {
    const detail::StridedMapC cols(x.value().data() + n * len * cin, tout, kc,
                                   Eigen::OuterStride<>(static_cast<Eigen::Index>(stride * cin)));
    detail::Map o(out.data() + n * tout * cout, tout, cout);
    o.noalias() = cols * w;
    o.rowwise() += b;
  }
  const std::size_t xi = x.index(), wi = weight.index(), bi = bias.index();
  return x.tape().record(
      "conv1d", std::move(out), {x, weight, bias}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(xi);
        const detail::MapC wv(t.value(wi).data(), kc, cout);
        detail::RowMat dcols(tout, kc);
        for (std::size_t n = 0; n < batch; ++n) {
          const detail::MapC go(g.data() + n * tout * cout, tout, cout);
          if (t.requires_grad(wi)) {
            const detail::StridedMapC cols(xv.data() + n * len * cin, tout, kc,
                                           Eigen::OuterStride<>(static_cast<Eigen::Index>(stride * cin)));
            detail::Map(t.grad(wi).data(), kc, cout).noalias() += cols.transpose() * go;
          }
          if (t.requires_grad(bi)) {
            Eigen::Map<Eigen::RowVectorXd>(t.grad(bi).data(), cout) += go.colwise().sum();
          }
          if (t.requires_grad(xi)) {
            dcols.noalias() = go * wv.transpose();
            double* gx = t.grad(xi).data() + n * len * cin;
            for (std::size_t r = 0; r < tout; ++r) {
              double* dst = gx + r * stride * cin;
              for (std::size_t j = 0; j < kc; ++j) dst[j] += dcols(r, j);
            }
          }
        }
      });
}

/// Mean over the time axis: (batch, time, channels) -> (batch, channels).
inline Var mean_time(const Var& x) {
  detail::require_rank("mean_time", x, 3);
  const std::size_t batch = x.shape()[0], len = x.shape()[1], ch = x.shape()[2];
  Tensor out({batch, ch});
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < ch; ++c) out[b * ch + c] += x.value()(b, t, c) * inv;
  const std::size_t xi = x.index();
  return x.tape().record("mean_time", std::move(out), {x}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(xi);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < len; ++s)
        for (std::size_t c = 0; c < ch; ++c) gx[(b * len + s) * ch + c] += g[b * ch + c] * inv;
  });
}

/// Inverted dropout: in train mode zeroes each entry with probability `rate` and
/// scales survivors by 1 / (1 - rate), drawing from the tape's RngState.
/// Identity in eval mode.
inline Var dropout(const Var& a, double rate) {
  Tape& tape = a.tape();
  if (!tape.training() || rate <= 0.0) return a;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be below 1");
  const double keep = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.value().size());
  for (double& m : mask) m = tape.rng().uniform() < rate ? 0.0 : keep;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * mask[i];
  const std::size_t ai = a.index();
  return tape.record("dropout", std::move(out), {a}, [ai, mask = std::move(mask)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

}  // namespace lfi::ops
