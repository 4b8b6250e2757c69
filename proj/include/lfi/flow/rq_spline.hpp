#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lfi/core/error.hpp"
#include "lfi/core/ops.hpp"
#include "lfi/core/tape.hpp"

namespace lfi::flow {

/// One bin of a monotone rational-quadratic spline: knots (x0, y0), (x1, y1)
/// and knot derivatives d0, d1.
struct RqBin {
  double x0, x1, y0, y1, d0, d1;
};

/// Partial derivatives with respect to (x, x0, x1, y0, y1, d0, d1).
using RqPartials = std::array<double, 7>;

struct RqPoint {
  double y = 0.0;
  double log_deriv = 0.0;
  RqPartials dy{};  ///< of y
  RqPartials dl{};  ///< of log dy/dx
};

namespace detail {

// Maps partials in the reduced coordinates (xi, s, h, d0, d1, y0) back to the
// bin parameters, using w = x1 - x0, h = y1 - y0, s = h / w, xi = (x - x0) / w.
inline RqPartials chain_bin(double g_xi, double g_s, double g_h, double g_d0, double g_d1, double g_y0,
                            double w, double h, double xi) {
  const double g_w = -g_s * h / (w * w) - g_xi * xi / w;
  const double g_height = g_h + g_s / w;
  return {g_xi / w, -g_xi / w - g_w, g_w, g_y0 - g_height, g_height, g_d0, g_d1};
}

}  // namespace detail

/// Rational-quadratic map inside one bin, with value, log-derivative and
/// their partials.
///
///   y = y0 + h [s xi^2 + d0 xi (1 - xi)] / [s + (d0 + d1 - 2 s) xi (1 - xi)]
///   dy/dx = s^2 [d1 xi^2 + 2 s xi (1 - xi) + d0 (1 - xi)^2] / [s + (d0 + d1 - 2 s) xi (1 - xi)]^2
inline RqPoint rq_eval(double x, const RqBin& b) {
  const double w = b.x1 - b.x0, h = b.y1 - b.y0, s = h / w;
  const double xi = (x - b.x0) / w;
  const double a = xi * (1.0 - xi);
  const double c = b.d0 + b.d1 - 2.0 * s;
  const double p = s * xi * xi + b.d0 * a;
  const double q = s + c * a;
  const double r = b.d1 * xi * xi + 2.0 * s * a + b.d0 * (1.0 - xi) * (1.0 - xi);

  RqPoint out;
  out.y = b.y0 + h * p / q;
  out.log_deriv = 2.0 * std::log(s) + std::log(r) - 2.0 * std::log(q);

  const double gp = h / q, gq = -h * p / (q * q);
  const double y_xi = gp * (2.0 * s * xi + b.d0 * (1.0 - 2.0 * xi)) + gq * c * (1.0 - 2.0 * xi);
  const double y_s = gp * xi * xi + gq * (1.0 - 2.0 * a);
  out.dy = detail::chain_bin(y_xi, y_s, p / q, (gp + gq) * a, gq * a, 1.0, w, h, xi);

  const double l_xi = (2.0 * b.d1 * xi + 2.0 * s * (1.0 - 2.0 * xi) - 2.0 * b.d0 * (1.0 - xi)) / r -
                      2.0 * c * (1.0 - 2.0 * xi) / q;
  const double l_s = 2.0 / s + 2.0 * a / r - 2.0 * (1.0 - 2.0 * a) / q;
  const double l_d0 = (1.0 - xi) * (1.0 - xi) / r - 2.0 * a / q;
  const double l_d1 = xi * xi / r - 2.0 * a / q;
  out.dl = detail::chain_bin(l_xi, l_s, 0.0, l_d0, l_d1, 0.0, w, h, xi);
  return out;
}

/// Inverts rq_eval inside one bin by taking the root of the quadratic in xi
/// that lies in [0, 1].
inline double rq_invert(double y, const RqBin& b) {
  const double w = b.x1 - b.x0, h = b.y1 - b.y0, s = h / w;
  const double dy = y - b.y0;
  const double c_sum = b.d0 + b.d1 - 2.0 * s;
  const double qa = h * (s - b.d0) + dy * c_sum;
  const double qb = h * b.d0 - dy * c_sum;
  const double qc = -s * dy;
  const double disc = qb * qb - 4.0 * qa * qc;
  if (!(disc >= 0.0)) throw NumericalError("rq_invert: negative discriminant; spline is not monotone");
  const double denom = -qb - std::sqrt(disc);
  const double xi = denom == 0.0 ? 0.0 : 2.0 * qc / denom;
  constexpr double tol = 1e-9;
  if (!(xi >= -tol && xi <= 1.0 + tol)) {
    throw NumericalError("rq_invert: no root in [0, 1] (xi = " + std::to_string(xi) + ")");
  }
  return b.x0 + std::clamp(xi, 0.0, 1.0) * w;
}

/// Index of the bin of `knots` (K + 1 increasing values) containing v.
inline std::size_t find_bin(std::span<const double> knots, double v) {
  const auto it = std::upper_bound(knots.begin() + 1, knots.end() - 1, v);
  return static_cast<std::size_t>(it - knots.begin()) - 1;
}

/// Knot arrays for R independent splines, each (R, K + 1).
struct SplineKnots {
  Var x;
  Var y;
  Var d;
};

struct SplineResult {
  Var value;      ///< (R, 1)
  Var log_deriv;  ///< (R, 1): log |d forward / d x| at the input (forward) or output (inverse) point
};

namespace detail {

inline RqBin bin_at(const Tensor& xk, const Tensor& yk, const Tensor& dk, std::size_t r, std::size_t k,
                    std::size_t nk, double bound) {
  const std::size_t o = r * nk;
  // End knots are pinned to the box corners; the normalized widths sum to one,
  // so this only removes rounding.
  return {k == 0 ? -bound : xk[o + k],
          k + 2 == nk ? bound : xk[o + k + 1],
          k == 0 ? -bound : yk[o + k],
          k + 2 == nk ? bound : yk[o + k + 1],
          dk[o + k],
          dk[o + k + 1]};
}

inline void check_knots(const SplineKnots& k, const Var& v) {
  if (v.shape().size() != 2 || v.cols() != 1) {
    throw ShapeError("rq_spline: input must be (R, 1), got " + shape_string(v.shape()));
  }
  for (const Var* p : {&k.x, &k.y, &k.d}) {
    if (p->shape().size() != 2 || p->rows() != v.rows() || p->cols() < 2) {
      throw ShapeError("rq_spline: knot shape " + shape_string(p->shape()) + " incompatible with input " +
                       shape_string(v.shape()));
    }
  }
  if (k.y.cols() != k.x.cols() || k.d.cols() != k.x.cols()) {
    throw ShapeError("rq_spline: knot arrays disagree in bin count");
  }
}

inline void verify_monotone(const Tensor& xk, const Tensor& yk, std::size_t r, std::size_t nk) {
  for (std::size_t k = 1; k < nk; ++k) {
    if (!(xk[r * nk + k] > xk[r * nk + k - 1]) || !(yk[r * nk + k] > yk[r * nk + k - 1])) {
      throw NumericalError("rq_spline: knots not strictly increasing");
    }
  }
}

struct SavedPartials {
  std::vector<std::size_t> bin;  // bins per row; npos when outside the box
  std::vector<RqPartials> value;
  std::vector<RqPartials> log_deriv;
};

inline Var record_partials(const char* op, Tensor out, const Var& input, const SplineKnots& k,
                           std::shared_ptr<const SavedPartials> saved, bool for_log) {
  const std::size_t ii = input.index(), xi = k.x.index(), yi = k.y.index(), di = k.d.index();
  const std::size_t nk = k.x.cols();
  return input.tape().record(op, std::move(out), {input, k.x, k.y, k.d},
                             [=](Tape& t, std::size_t self) {
                               const Tensor& g = t.grad(self);
                               const auto& parts = for_log ? saved->log_deriv : saved->value;
                               for (std::size_t r = 0; r < g.size(); ++r) {
                                 const std::size_t bin = saved->bin[r];
                                 const RqPartials& p = parts[r];
                                 const double gr = g[r];
                                 if (t.requires_grad(ii)) t.grad(ii)[r] += gr * p[0];
                                 if (bin == static_cast<std::size_t>(-1)) continue;
                                 const std::size_t o = r * nk + bin;
                                 const std::size_t last = nk - 2;
                                 if (t.requires_grad(xi)) {
                                   Tensor& gx = t.grad(xi);
                                   if (bin != 0) gx[o] += gr * p[1];
                                   if (bin != last) gx[o + 1] += gr * p[2];
                                 }
                                 if (t.requires_grad(yi)) {
                                   Tensor& gy = t.grad(yi);
                                   if (bin != 0) gy[o] += gr * p[3];
                                   if (bin != last) gy[o + 1] += gr * p[4];
                                 }
                                 if (t.requires_grad(di)) {
                                   Tensor& gd = t.grad(di);
                                   gd[o] += gr * p[5];
                                   gd[o + 1] += gr * p[6];
                                 }
                               }
                             });
}

}  // namespace detail

/// Elementwise monotone rational-quadratic spline on [-bound, bound], identity outside.
/// Row r of `input` is transformed by the spline described by row r of the knots.
inline SplineResult rq_spline(const Var& input, const SplineKnots& knots, double bound) {
  detail::check_knots(knots, input);
  const Tensor& xv = input.value();
  const Tensor &xk = knots.x.value(), &yk = knots.y.value(), &dk = knots.d.value();
  const std::size_t rows = xv.size(), nk = xk.cols();
  auto saved = std::make_shared<detail::SavedPartials>();
  saved->bin.resize(rows);
  saved->value.resize(rows);
  saved->log_deriv.resize(rows);
  Tensor y({rows, 1}), ld({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    const double x = xv[r];
    if (x < -bound || x > bound) {
      saved->bin[r] = static_cast<std::size_t>(-1);
      y[r] = x;
      saved->value[r] = {1.0, 0, 0, 0, 0, 0, 0};
      saved->log_deriv[r] = {};
      continue;
    }
    detail::verify_monotone(xk, yk, r, nk);
    const std::size_t k = find_bin(xk.row_values(r), x);
    const RqPoint p = rq_eval(x, detail::bin_at(xk, yk, dk, r, k, nk, bound));
    saved->bin[r] = k;
    y[r] = p.y;
    ld[r] = p.log_deriv;
    saved->value[r] = p.dy;
    saved->log_deriv[r] = p.dl;
  }
  std::shared_ptr<const detail::SavedPartials> shared = saved;
  Var value = detail::record_partials("rq_spline", std::move(y), input, knots, shared, false);
  Var log_deriv = detail::record_partials("rq_spline_logdet", std::move(ld), input, knots, shared, true);
  return {value, log_deriv};
}

/// Analytic inverse of rq_spline. The returned log_deriv is that of the forward
/// map at the recovered point, so the inverse log-det is its negative.
///
/// Gradients follow the implicit function theorem: dx/dy = 1 / f'(x) and
/// dx/dp = -(df/dp) / f'(x).
inline SplineResult rq_spline_inverse(const Var& input, const SplineKnots& knots, double bound) {
  detail::check_knots(knots, input);
  const Tensor& yv = input.value();
  const Tensor &xk = knots.x.value(), &yk = knots.y.value(), &dk = knots.d.value();
  const std::size_t rows = yv.size(), nk = xk.cols();
  auto saved = std::make_shared<detail::SavedPartials>();
  saved->bin.resize(rows);
  saved->value.resize(rows);
  saved->log_deriv.resize(rows);
  Tensor x({rows, 1}), ld({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = yv[r];
    if (y < -bound || y > bound) {
      saved->bin[r] = static_cast<std::size_t>(-1);
      x[r] = y;
      saved->value[r] = {1.0, 0, 0, 0, 0, 0, 0};
      saved->log_deriv[r] = {};
      continue;
    }
    detail::verify_monotone(xk, yk, r, nk);
    const std::size_t k = find_bin(yk.row_values(r), y);
    const RqBin bin = detail::bin_at(xk, yk, dk, r, k, nk, bound);
    const double xr = rq_invert(y, bin);
    const RqPoint p = rq_eval(xr, bin);
    const double fx = p.dy[0];
    RqPartials dx{}, dl{};
    dx[0] = 1.0 / fx;
    for (std::size_t j = 1; j < 7; ++j) dx[j] = -p.dy[j] / fx;
    // log f'(x(y, p), p)
    dl[0] = p.dl[0] * dx[0];
    for (std::size_t j = 1; j < 7; ++j) dl[j] = p.dl[j] + p.dl[0] * dx[j];
    saved->bin[r] = k;
    x[r] = xr;
    ld[r] = p.log_deriv;
    saved->value[r] = dx;
    saved->log_deriv[r] = dl;
  }
  std::shared_ptr<const detail::SavedPartials> shared = saved;
  Var value = detail::record_partials("rq_spline_inverse", std::move(x), input, knots, shared, false);
  Var log_deriv = detail::record_partials("rq_spline_inverse_logdet", std::move(ld), input, knots, shared, true);
  return {value, log_deriv};
}

}  // namespace lfi::flow
