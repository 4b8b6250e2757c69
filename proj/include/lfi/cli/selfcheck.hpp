#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lfi/core/grad_check.hpp"
#include "lfi/flow/conditional_flow.hpp"
#include "lfi/simulate/groundwater.hpp"
#include "lfi/train/trainer.hpp"

namespace lfi::cli {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  [[nodiscard]] bool passed() const { return std::isfinite(max_error) && max_error < tolerance; }
};

struct SelfCheckOptions {
  /// Perturb one flow weight between the forward and inverse passes of the
  /// round-trip check; the check must then fail.
  bool corrupt_weights = false;
};

namespace detail {

inline Tensor normal_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

inline flow::FlowConfig check_flow(std::size_t dim, std::size_t features) {
  return {.dim = dim,
          .features = features,
          .coupling_layers = 5,
          .spline_layers = 5,
          .subnet = {.hidden = {16, 16}, .dropout = 0.0, .zero_output = false},
          .clamp = 2.0,
          .spline = {.bins = 16, .bound = 3.0},
          .permutation_seed = 101,
          .init_seed = 102};
}

}  // namespace detail

inline CheckResult check_invertibility(const SelfCheckOptions& opt) {
  ParameterStore store;
  flow::ConditionalFlow f(store, detail::check_flow(32, 8));
  Rng rng(201);
  const std::size_t n = 1000;
  const Tensor x = detail::normal_tensor({n, 32}, rng, 1.5), u = detail::normal_tensor({n, 8}, rng);
  Tape tape(Mode::eval, 0, false);
  auto fwd = f.forward(store, tape.constant(x), tape.constant(u));
  if (opt.corrupt_weights) store.value(0)[0] += 0.5;
  auto inv = f.inverse(store, fwd.value, tape.constant(u));
  return {"invertibility (N=32, 10 layers, 1000 points)", max_abs_diff(inv.value.value(), x), 1e-6};
}

inline CheckResult check_logdet() {
  ParameterStore store;
  flow::ConditionalFlow f(store, detail::check_flow(6, 3));
  Rng rng(202);
  const Tensor u = detail::normal_tensor({1, 3}, rng);
  auto map = [&](const Eigen::VectorXd& v) {
    Tape t(Mode::eval, 0, false);
    Tensor x({1, 6});
    for (std::size_t j = 0; j < 6; ++j) x[j] = v[static_cast<Eigen::Index>(j)];
    const Tensor y = f.forward(store, t.constant(x), t.constant(u)).value.value();
    Eigen::VectorXd out(6);
    for (std::size_t j = 0; j < 6; ++j) out[static_cast<Eigen::Index>(j)] = y[j];
    return out;
  };
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd x(6);
    for (auto& v : x) v = rng.normal();
    Tensor xt({1, 6});
    for (std::size_t j = 0; j < 6; ++j) xt[j] = x[static_cast<Eigen::Index>(j)];
    Tape t(Mode::eval, 0, false);
    const double logdet = f.forward(store, t.constant(xt), t.constant(u)).logdet.value()[0];
    Eigen::MatrixXd jac(6, 6);
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < 6; ++j) {
      Eigen::VectorXd up = x, down = x;
      up[j] += h;
      down[j] -= h;
      jac.col(j) = (map(up) - map(down)) / (2 * h);
    }
    worst = std::max(worst, std::abs(logdet - std::log(std::abs(jac.determinant()))));
  }
  return {"log-det vs numeric Jacobian (N=6, 20 points)", worst, 1e-4};
}

inline CheckResult check_gradient() {
  train::ModelConfig mc;
  mc.flow.dim = 4;
  mc.flow.coupling_layers = 2;
  mc.flow.spline_layers = 2;
  mc.flow.subnet = {.hidden = {8, 8}, .dropout = 0.0, .zero_output = false};
  mc.summary.sensors = 2;
  mc.summary.stages = {{4, 3, 1}};
  mc.summary.features = 4;
  train::PosteriorModel model(mc);
  Rng rng(203);
  const Tensor theta = detail::normal_tensor({6, 4}, rng), obs = detail::normal_tensor({6, 5, 2}, rng);
  model.set_standardization(train::Standardizer::identity(4), train::Standardizer::identity(2));
  const LossBuilder loss = [&](Tape& tape, const ParameterStore&) { return train::joint_loss(tape, model, theta, obs); };
  return {"joint-loss gradient vs central differences (N=4)", grad_check(loss, model.params()), 1e-4};
}

inline CheckResult check_spline_continuity() {
  ParameterStore store;
  Rng init(204);
  flow::SplineLayer layer(store, "s", 4, 3, {.hidden = {16, 16}, .dropout = 0.0, .zero_output = false},
                          {.bins = 16, .bound = 3.0}, init);
  Rng rng(205);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Tape tape(Mode::eval, 0, false);
    const Tensor x = detail::normal_tensor({1, 4}, rng), u = detail::normal_tensor({1, 3}, rng);
    const flow::SplineKnots k = layer.knots(store, tape.constant(x), tape.constant(u));
    for (std::size_t r = 0; r < k.x.rows(); ++r) {
      auto bin = [&](std::size_t b) {
        return flow::RqBin{k.x.value()(r, b), k.x.value()(r, b + 1), k.y.value()(r, b),
                           k.y.value()(r, b + 1), k.d.value()(r, b), k.d.value()(r, b + 1)};
      };
      for (std::size_t j = 1; j + 1 < k.x.cols(); ++j) {
        const double knot = k.x.value()(r, j);
        const flow::RqPoint left = flow::rq_eval(knot, bin(j - 1)), right = flow::rq_eval(knot, bin(j));
        worst = std::max({worst, std::abs(left.y - right.y), std::abs(left.dy[0] - right.dy[0])});
      }
    }
  }
  return {"spline knot continuity (value, derivative)", worst, 1e-8};
}

inline CheckResult check_mass_balance() {
  simulate::GridSpec g;
  simulate::ForwardConfig fc;
  fc.north = fc.south = fc.west = fc.east = simulate::Edge::no_flux();
  fc.wells.clear();
  Rng rng(206);
  fc.initial_heads.resize(g.dim());
  for (double& h : fc.initial_heads) h = 20.0 + 3.0 * rng.normal();
  std::vector<double> theta(g.dim());
  for (double& t : theta) t = rng.normal();
  const Tensor f = simulate::GroundwaterSolver(g, fc).solve_fields(theta);
  auto volume = [&](std::size_t s) {
    double v = 0.0;
    for (std::size_t i = 0; i < f.cols(); ++i) v += f(s, i);
    return v;
  };
  const double v0 = volume(0);
  double worst = 0.0;
  for (std::size_t s = 1; s <= g.steps; ++s) worst = std::max(worst, std::abs(volume(s) - v0) / v0);
  return {"no-flux mass balance drift (25 steps)", worst, 1e-8};
}

inline std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& opt = {}) {
  std::vector<std::function<CheckResult()>> checks = {
      [&] { return check_invertibility(opt); }, check_logdet, check_gradient, check_spline_continuity,
      check_mass_balance};
  std::vector<CheckResult> out;
  for (auto& c : checks) {
    try {
      out.push_back(c());
    } catch (const std::exception& e) {
      out.push_back({std::string("check raised: ") + e.what(), std::numeric_limits<double>::infinity(), 0.0});
    }
  }
  return out;
}

}  // namespace lfi::cli
