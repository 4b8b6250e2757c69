#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "lfi/core/grad_check.hpp"
#include "lfi/flow/conditional_flow.hpp"

namespace {

using namespace lfi;
using namespace lfi::flow;

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

MlpConfig small_random_subnet() { return {.hidden = {16, 16}, .dropout = 0.0, .zero_output = false}; }

// Numeric Jacobian of a map R^n -> R^n by central differences; returns log|det|.
template <typename F>
double numeric_logabsdet(F map, const std::vector<double>& x, double h = 1e-6) {
  const std::size_t n = x.size();
  Eigen::MatrixXd jac(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> up = x, down = x;
    up[j] += h;
    down[j] -= h;
    const std::vector<double> fu = map(up), fd = map(down);
    for (std::size_t i = 0; i < n; ++i) jac(i, j) = (fu[i] - fd[i]) / (2 * h);
  }
  return std::log(std::abs(jac.determinant()));
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  auto v = t.row_values(r);
  return {v.begin(), v.end()};
}

template <typename Layer>
LayerOutput run(const Layer& layer, const ParameterStore& store, Tape& tape, const Tensor& x, const Tensor& u,
                bool inverse) {
  Var xv = tape.constant(x), uv = tape.constant(u);
  return inverse ? layer.inverse(store, xv, uv) : layer.forward(store, xv, uv);
}

// ---------------------------------------------------------------- RQ kernel

TEST(RqKernel, PartialsMatchFiniteDifferences) {
  const RqBin base{-0.4, 0.7, -1.1, 0.2, 0.6, 2.3};
  for (double x : {-0.35, -0.1, 0.25, 0.66}) {
    const RqPoint p = rq_eval(x, base);
    std::array<double, 7> params{x, base.x0, base.x1, base.y0, base.y1, base.d0, base.d1};
    for (std::size_t j = 0; j < 7; ++j) {
      auto eval = [&](double delta) {
        auto q = params;
        q[j] += delta;
        return rq_eval(q[0], {q[1], q[2], q[3], q[4], q[5], q[6]});
      };
      const double h = 1e-6;
      const RqPoint up = eval(h), down = eval(-h);
      EXPECT_NEAR(p.dy[j], (up.y - down.y) / (2 * h), 1e-7) << "dy " << j;
      EXPECT_NEAR(p.dl[j], (up.log_deriv - down.log_deriv) / (2 * h), 1e-6) << "dl " << j;
    }
  }
}

TEST(RqKernel, InvertRecoversInput) {
  const RqBin b{-1.0, 0.5, -0.2, 1.3, 0.3, 4.0};
  for (double x = -1.0; x <= 0.5; x += 0.01) EXPECT_NEAR(rq_invert(rq_eval(x, b).y, b), x, 1e-12);
}

TEST(RqOps, GradientsMatchFiniteDifferences) {
  Rng rng(21);
  const std::size_t rows = 6, k = 5;
  ParameterStore store;
  const double bound = 2.0;
  ParamId in = store.add("x", random_tensor({rows, 1}, rng, 1.5));
  ParamId wl = store.add("w", random_tensor({rows, k}, rng));
  ParamId hl = store.add("h", random_tensor({rows, k}, rng));
  ParamId dl = store.add("d", random_tensor({rows, k + 1}, rng));
  store.value(in)[0] = 2.5;  // outside the box
  for (bool inverse : {false, true}) {
    auto f = [&](Tape& t, const ParameterStore& s) {
      auto edges = [&](ParamId id) {
        return ops::add_scalar(ops::scale(ops::cumsum_pad(ops::softmax(t.parameter(s, id))), 2 * bound), -bound);
      };
      SplineKnots kn{edges(wl), edges(hl), ops::add_scalar(ops::softplus(t.parameter(s, dl)), 1e-3)};
      Var x = t.parameter(s, in);
      SplineResult r = inverse ? rq_spline_inverse(x, kn, bound) : rq_spline(x, kn, bound);
      Tensor w1({rows, 1}), w2({rows, 1});
      for (std::size_t i = 0; i < rows; ++i) w1[i] = 0.3 + 0.1 * i, w2[i] = 1.0 - 0.2 * i;
      return ops::add(ops::sum(ops::mul(r.value, t.constant(w1))), ops::sum(ops::mul(r.log_deriv, t.constant(w2))));
    };
    EXPECT_LT(grad_check(f, store), 1e-6) << (inverse ? "inverse" : "forward");
  }
}

// ------------------------------------------------------------ coupling layer

TEST(Coupling, ZeroSubnetsAreIdentity) {
  ParameterStore store;
  Rng init(1);
  CouplingLayer layer(store, "c", 6, 3, MlpConfig{.hidden = {8}, .dropout = 0.0}, 2.0, init);
  Rng rng(2);
  const Tensor x = random_tensor({5, 6}, rng), u = random_tensor({5, 3}, rng);
  Tape tape;
  LayerOutput out = run(layer, store, tape, x, u, false);
  EXPECT_EQ(out.value.value(), x);
  for (double v : out.logdet.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Coupling, LogdetMatchesNumericJacobian) {
  ParameterStore store;
  Rng init(3);
  CouplingLayer layer(store, "c", 4, 3, small_random_subnet(), 2.0, init);
  Rng rng(4);
  const Tensor u = random_tensor({1, 3}, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = random_tensor({1, 4}, rng);
    Tape tape;
    const double logdet = run(layer, store, tape, x, u, false).logdet.value()[0];
    auto map = [&](const std::vector<double>& v) {
      Tape t;
      return row_of(run(layer, store, t, Tensor({1, 4}, v), u, false).value.value(), 0);
    };
    EXPECT_NEAR(logdet, numeric_logabsdet(map, row_of(x, 0)), 1e-5);
  }
}

TEST(Coupling, RoundTripsAndLogdetsCancel) {
  ParameterStore store;
  Rng init(5);
  CouplingLayer layer(store, "c", 32, 8, small_random_subnet(), 2.0, init);
  Rng rng(6);
  const Tensor x = random_tensor({64, 32}, rng, 2.0), u = random_tensor({64, 8}, rng);
  Tape tape;
  LayerOutput fwd = run(layer, store, tape, x, u, false);
  LayerOutput inv = run(layer, store, tape, fwd.value.value(), u, true);
  EXPECT_LT(max_abs_diff(inv.value.value(), x), 1e-9);
  for (std::size_t r = 0; r < 64; ++r) EXPECT_NEAR(fwd.logdet.value()[r] + inv.logdet.value()[r], 0.0, 1e-10);
  // forward(inverse(z)) as well
  LayerOutput back = run(layer, store, tape, x, u, true);
  LayerOutput again = run(layer, store, tape, back.value.value(), u, false);
  EXPECT_LT(max_abs_diff(again.value.value(), x), 1e-9);
}

TEST(Coupling, FirstHalfIsElementwiseAffineInFirstHalf) {
  ParameterStore store;
  Rng init(7);
  CouplingLayer layer(store, "c", 6, 2, small_random_subnet(), 2.0, init);
  Rng rng(8);
  const Tensor u = random_tensor({1, 2}, rng);
  Tensor a = random_tensor({1, 6}, rng), b = a;
  for (std::size_t j = 0; j < 3; ++j) b[j] += rng.normal();  // same x2, different x1
  auto z1 = [&](const Tensor& x) {
    Tape t;
    return row_of(run(layer, store, t, x, u, false).value.value(), 0);
  };
  Tensor mid = a;
  for (std::size_t j = 0; j < 3; ++j) mid[j] = 0.3 * a[j] + 0.7 * b[j];
  const auto za = z1(a), zb = z1(b), zm = z1(mid);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(zm[j], 0.3 * za[j] + 0.7 * zb[j], 1e-12);
  // Perturbing one x1 component moves only the matching z1 component.
  Tensor c = a;
  c[1] += 0.5;
  const auto zc = z1(c);
  EXPECT_EQ(zc[0], za[0]);
  EXPECT_EQ(zc[2], za[2]);
  EXPECT_NE(zc[1], za[1]);
}

// -------------------------------------------------------------- spline layer

TEST(Spline, ZeroConditionerIsIdentity) {
  ParameterStore store;
  Rng init(9);
  SplineLayer layer(store, "s", 4, 3, MlpConfig{.hidden = {8}, .dropout = 0.0}, {}, init);
  Rng rng(10);
  const Tensor x = random_tensor({20, 4}, rng, 2.0), u = random_tensor({20, 3}, rng);
  Tape tape;
  LayerOutput out = run(layer, store, tape, x, u, false);
  EXPECT_LT(max_abs_diff(out.value.value(), x), 1e-14);
  for (double v : out.logdet.value().values()) EXPECT_NEAR(v, 0.0, 1e-14);
}

struct RandomSpline {
  ParameterStore store;
  Rng init{11};
  SplineLayer layer{store, "s", 4, 3, small_random_subnet(), SplineConfig{.bins = 16, .bound = 3.0}, init};
  Tensor u;
  RandomSpline() {
    Rng rng(12);
    u = random_tensor({1, 3}, rng);
  }
  Tensor apply(const Tensor& x, bool inverse = false) {
    Tape tape;
    return run(layer, store, tape, x, u, inverse).value.value();
  }
};

TEST(Spline, IdentityOutsideBox) {
  RandomSpline s;
  Tensor x = Tensor::matrix(3, 4, {0.1, -0.2, 4.0, -4.0, 0.0, 0.5, -3.0001, 3.5, 1.0, 1.0, 1e6, -1e6});
  Tape tape;
  LayerOutput out = run(s.layer, s.store, tape, x, s.u, false);
  EXPECT_EQ(out.value.value()(0, 2), 4.0);
  EXPECT_EQ(out.value.value()(0, 3), -4.0);
  EXPECT_EQ(out.value.value()(2, 2), 1e6);
  // B + 1 passes through unchanged with zero log-derivative
  Tensor edge = Tensor::matrix(1, 4, {0.3, -0.3, 4.0, 4.0});
  LayerOutput e = run(s.layer, s.store, tape, edge, s.u, false);
  EXPECT_EQ(e.value.value()(0, 2), 4.0);
  EXPECT_EQ(e.value.value()(0, 3), 4.0);
  EXPECT_EQ(e.logdet.value()[0], 0.0);
}

TEST(Spline, DerivativeAndLogdetMatchFiniteDifferences) {
  RandomSpline s;
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({1, 4}, rng, 1.5);
    Tape tape;
    const double logdet = run(s.layer, s.store, tape, x, s.u, false).logdet.value()[0];
    // Elementwise in the transformed half: compare each log-derivative.
    double sum = 0.0;
    for (std::size_t j = 2; j < 4; ++j) {
      const double h = 1e-6;
      Tensor up = x, down = x;
      up[j] += h;
      down[j] -= h;
      const double fd = (s.apply(up)[j] - s.apply(down)[j]) / (2 * h);
      sum += std::log(fd);
    }
    EXPECT_NEAR(logdet, sum, 1e-6);
    auto map = [&](const std::vector<double>& v) { return row_of(s.apply(Tensor({1, 4}, v)), 0); };
    EXPECT_NEAR(logdet, numeric_logabsdet(map, row_of(x, 0)), 1e-5);
  }
}

TEST(Spline, InverseRoundTripInsideAndOutside) {
  RandomSpline s;
  Rng rng(14);
  Tensor x({10000 / 4, 4});
  for (double& v : x.values()) v = rng.uniform(-5.0, 5.0);
  const Tensor z = s.apply(x);
  EXPECT_LT(max_abs_diff(s.apply(z, true), x), 1e-8);
}

TEST(Spline, KnotsAreFixedPointsOfInverse) {
  RandomSpline s;
  Tensor x = Tensor::matrix(1, 4, {0.2, -0.7, 0.0, 0.0});
  Tape tape;
  Var xv = tape.constant(x);
  SplineKnots k = s.layer.knots(s.store, xv, tape.constant(s.u));
  const std::size_t nk = k.x.cols();
  for (std::size_t row = 0; row < 2; ++row) {
    for (std::size_t j = 0; j < nk; ++j) {
      Tensor z = x;
      z[2 + row] = k.y.value()(row, j);
      const Tensor back = s.apply(z, true);
      EXPECT_NEAR(back[2 + row], k.x.value()(row, j), 1e-10) << "knot " << j;
    }
  }
}

TEST(Spline, StrictlyIncreasingAndSmoothAcrossKnots) {
  RandomSpline s;
  // monotonicity on a sorted sweep of the transformed coordinate
  const std::size_t n = 2001;
  Tensor x({n, 4});
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = 0.4;
    x(i, 1) = -0.1;
    x(i, 2) = -3.0 + 6.0 * static_cast<double>(i) / (n - 1);
    x(i, 3) = x(i, 2);
  }
  const Tensor z = s.apply(x);
  double min_gap = 1e9;
  for (std::size_t i = 1; i < n; ++i) min_gap = std::min(min_gap, z(i, 2) - z(i - 1, 2));
  EXPECT_GT(min_gap, 0.0);

  // value and derivative continuity at interior knots, from the bin formulas on each side
  Tape tape;
  SplineKnots k = s.layer.knots(s.store, tape.constant(x.reshaped({n, 4})), tape.constant(s.u));
  const std::size_t nk = k.x.cols();
  for (std::size_t j = 1; j + 1 < nk; ++j) {
    auto bin = [&](std::size_t b) {
      return RqBin{k.x.value()(0, b), k.x.value()(0, b + 1), k.y.value()(0, b), k.y.value()(0, b + 1),
                   k.d.value()(0, b), k.d.value()(0, b + 1)};
    };
    const double knot = k.x.value()(0, j);
    const RqPoint left = rq_eval(knot, bin(j - 1)), right = rq_eval(knot, bin(j));
    EXPECT_NEAR(left.y, right.y, 1e-8);
    EXPECT_NEAR(left.dy[0], right.dy[0], 1e-8);
  }
}

// ---------------------------------------------------------------- full flow

FlowConfig random_flow_config(std::size_t dim, std::size_t features) {
  return {.dim = dim,
          .features = features,
          .coupling_layers = 5,
          .spline_layers = 5,
          .subnet = small_random_subnet(),
          .clamp = 2.0,
          .spline = {.bins = 16, .bound = 3.0},
          .permutation_seed = 17,
          .init_seed = 18};
}

TEST(Flow, AlternatesLayerKindsAndPermutes) {
  ParameterStore store;
  ConditionalFlow flow(store, random_flow_config(6, 2));
  ASSERT_EQ(flow.layer_count(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(flow.is_coupling(i), i % 2 == 0);
  auto p = flow.permutation(3);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(p[i], i);
}

TEST(Flow, IdentityInitialisedStack) {
  ParameterStore store;
  FlowConfig cfg = random_flow_config(5, 3);
  cfg.subnet.zero_output = true;
  ConditionalFlow flow(store, cfg);
  Rng rng(19);
  const Tensor x = random_tensor({7, 5}, rng);
  Tape tape;
  auto out = flow.forward(store, tape.constant(x), tape.constant(random_tensor({7, 3}, rng)));
  EXPECT_LT(max_abs_diff(out.value.value(), x), 1e-14);
  for (double v : out.logdet.value().values()) EXPECT_NEAR(v, 0.0, 1e-13);
}

TEST(Flow, RoundTripN32) {
  ParameterStore store;
  ConditionalFlow flow(store, random_flow_config(32, 8));
  Rng rng(20);
  const Tensor x = random_tensor({200, 32}, rng, 1.5), u = random_tensor({200, 8}, rng);
  Tape tape;
  auto fwd = flow.forward(store, tape.constant(x), tape.constant(u));
  auto inv = flow.inverse(store, fwd.value, tape.constant(u));
  EXPECT_LT(max_abs_diff(inv.value.value(), x), 1e-6);
  for (std::size_t r = 0; r < 200; ++r) EXPECT_NEAR(fwd.logdet.value()[r] + inv.logdet.value()[r], 0.0, 1e-8);
}

TEST(Flow, LogdetMatchesNumericJacobianN6) {
  ParameterStore store;
  ConditionalFlow flow(store, random_flow_config(6, 3));
  Rng rng(22);
  const Tensor u = random_tensor({1, 3}, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = random_tensor({1, 6}, rng);
    Tape tape;
    const double logdet = flow.forward(store, tape.constant(x), tape.constant(u)).logdet.value()[0];
    auto map = [&](const std::vector<double>& v) {
      Tape t;
      return row_of(flow.forward(store, t.constant(Tensor({1, 6}, v)), t.constant(u)).value.value(), 0);
    };
    EXPECT_NEAR(logdet, numeric_logabsdet(map, row_of(x, 0)), 1e-4);
  }
}

TEST(Flow, RejectsWrongDimensions) {
  ParameterStore store;
  ConditionalFlow flow(store, random_flow_config(4, 2));
  Tape tape;
  EXPECT_THROW((void)flow.forward(store, tape.constant(Tensor({2, 5})), tape.constant(Tensor({2, 2}))), ShapeError);
  EXPECT_THROW((void)flow.forward(store, tape.constant(Tensor({2, 4})), tape.constant(Tensor({3, 2}))), ShapeError);
  FlowConfig bad = random_flow_config(0, 2);
  EXPECT_THROW(ConditionalFlow(store, bad), ConfigError);
}

TEST(Flow, OneDimensionalDensityIntegratesToOne) {
  ParameterStore store;
  FlowConfig cfg = random_flow_config(1, 2);
  ConditionalFlow flow(store, cfg);
  Rng rng(23);
  const Tensor u = random_tensor({1, 2}, rng);
  const double lo = -20.0, hi = 20.0;
  const std::size_t n = 20001;
  const double h = (hi - lo) / static_cast<double>(n - 1);
  Tensor grid({n, 1});
  for (std::size_t i = 0; i < n; ++i) grid[i] = lo + h * static_cast<double>(i);
  Tape tape(Mode::eval, 0, false);
  auto out = flow.forward(store, tape.constant(grid), tape.constant(u));
  const Tensor lz = latent_logprob(out.value.value());
  double integral = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::exp(lz[i] + out.logdet.value()[i]);
    integral += (i == 0 || i + 1 == n ? 0.5 : 1.0) * p * h;
  }
  EXPECT_NEAR(integral, 1.0, 1e-3);
}

TEST(Latent, LogprobFormula) {
  const double c = -std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(latent_logprob(Tensor({1, 2}, 0.0))[0], c, 1e-12);
  EXPECT_NEAR(c, -1.837877, 1e-6);
  for (std::size_t n : {1u, 3u, 10u}) {
    Tensor e({1, n}, 0.0);
    e[0] = 1.0;
    EXPECT_NEAR(latent_logprob(e)[0], latent_logprob(Tensor({1, n}, 0.0))[0] - 0.5, 1e-12);
  }
}

TEST(Latent, MonteCarloMeanLogprob) {
  const std::size_t n = 1000, dim = 5;
  Rng rng(24);
  const Tensor z = random_tensor({n, dim}, rng);
  const Tensor lp = latent_logprob(z);
  double mean = 0.0, sq = 0.0;
  for (double v : lp.values()) mean += v;
  mean /= n;
  for (double v : lp.values()) sq += (v - mean) * (v - mean);
  const double se = std::sqrt(sq / (n - 1) / n);
  const double expected = -0.5 * dim * std::log(2 * std::numbers::pi) - 0.5 * dim;
  EXPECT_LT(std::abs(mean - expected), 3 * se);
}

}  // namespace
