#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "lfi/core/ops.hpp"
#include "lfi/core/tape.hpp"
#include "lfi/flow/mlp.hpp"
#include "lfi/flow/rq_spline.hpp"

namespace lfi::flow {

/// Result of one invertible layer: transformed batch and per-row log|det J|, shape (B, 1).
struct LayerOutput {
  Var value;
  Var logdet;
};

/// Conditional affine coupling layer.
///
/// With x = (x1, x2) split at `split`, the forward map is
///   z1 = x1 * exp(s2(x2, u)) + t2(x2, u)
///   z2 = x2 * exp(s1(z1, u)) + t1(z1, u)
/// and the scales pass through c * tanh(. / c) before exponentiation.
class CouplingLayer {
 public:
  CouplingLayer(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t features,
                const MlpConfig& subnet, double clamp, Rng& init)
      : dim_(dim), split_(dim / 2), clamp_(clamp) {
    if (clamp <= 0.0) throw ConfigError(name + ": scale clamp must be positive");
    const std::size_t n1 = split_, n2 = dim - split_;
    if (n1 > 0) {
      s2_ = Mlp(store, name + ".s2", n2, features, n1, subnet, init);
      t2_ = Mlp(store, name + ".t2", n2, features, n1, subnet, init);
    }
    s1_ = Mlp(store, name + ".s1", n1, features, n2, subnet, init);
    t1_ = Mlp(store, name + ".t1", n1, features, n2, subnet, init);
  }

  [[nodiscard]] std::size_t split() const noexcept { return split_; }

  LayerOutput forward(const ParameterStore& store, Var x, Var u) const {
    const std::size_t rows = x.rows();
    if (split_ == 0) {
      Var s1 = scale_net(store, s1_, std::nullopt, u, rows);
      Var z = ops::add(ops::mul(x, ops::exp(s1)), t1_.forward(store, std::nullopt, u, rows));
      return {z, ops::sum_cols(s1)};
    }
    Var x1 = ops::slice_cols(x, 0, split_);
    Var x2 = ops::slice_cols(x, split_, dim_);
    Var s2 = scale_net(store, s2_, x2, u, rows);
    Var z1 = ops::add(ops::mul(x1, ops::exp(s2)), t2_.forward(store, x2, u, rows));
    Var s1 = scale_net(store, s1_, z1, u, rows);
    Var z2 = ops::add(ops::mul(x2, ops::exp(s1)), t1_.forward(store, z1, u, rows));
    return {ops::concat_cols({z1, z2}), ops::add(ops::sum_cols(s2), ops::sum_cols(s1))};
  }

  /// Exact inverse; the returned logdet is that of the inverse map.
  LayerOutput inverse(const ParameterStore& store, Var z, Var u) const {
    const std::size_t rows = z.rows();
    if (split_ == 0) {
      Var s1 = scale_net(store, s1_, std::nullopt, u, rows);
      Var x = ops::mul(ops::sub(z, t1_.forward(store, std::nullopt, u, rows)), ops::exp(ops::scale(s1, -1.0)));
      return {x, ops::scale(ops::sum_cols(s1), -1.0)};
    }
    Var z1 = ops::slice_cols(z, 0, split_);
    Var z2 = ops::slice_cols(z, split_, dim_);
    Var s1 = scale_net(store, s1_, z1, u, rows);
    Var x2 = ops::mul(ops::sub(z2, t1_.forward(store, z1, u, rows)), ops::exp(ops::scale(s1, -1.0)));
    Var s2 = scale_net(store, s2_, x2, u, rows);
    Var x1 = ops::mul(ops::sub(z1, t2_.forward(store, x2, u, rows)), ops::exp(ops::scale(s2, -1.0)));
    return {ops::concat_cols({x1, x2}),
            ops::scale(ops::add(ops::sum_cols(s2), ops::sum_cols(s1)), -1.0)};
  }

 private:
  Var scale_net(const ParameterStore& store, const Mlp& net, std::optional<Var> in, Var u,
                std::size_t rows) const {
    return ops::soft_clamp(net.forward(store, in, u, rows), clamp_);
  }

  std::size_t dim_, split_;
  double clamp_;
  Mlp s1_, t1_, s2_, t2_;
};

struct SplineConfig {
  std::size_t bins = 16;
  double bound = 3.0;
  double min_width = 1e-3;
  double min_height = 1e-3;
  double min_derivative = 1e-3;
};

/// Conditional rational-quadratic spline layer in coupling form: the first
/// `split` dimensions pass through unchanged and, together with the
/// conditioning features, predict the spline parameters for the rest.
class SplineLayer {
 public:
  SplineLayer(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t features,
              const MlpConfig& subnet, const SplineConfig& cfg, Rng& init)
      : dim_(dim), split_(dim / 2), cfg_(cfg) {
    if (cfg.bins < 2) throw ConfigError(name + ": spline needs at least 2 bins");
    if (cfg.bound <= 0.0) throw ConfigError(name + ": spline bound must be positive");
    if (cfg.min_width * static_cast<double>(cfg.bins) >= 1.0 ||
        cfg.min_height * static_cast<double>(cfg.bins) >= 1.0) {
      throw ConfigError(name + ": minimum bin size too large for bin count");
    }
    if (cfg.min_derivative <= 0.0 || cfg.min_derivative >= 1.0) {
      throw ConfigError(name + ": minimum derivative must lie in (0, 1)");
    }
    conditioner_ = Mlp(store, name + ".cond", split_, features, (dim - split_) * raw_per_dim(), subnet, init);
  }

  [[nodiscard]] std::size_t split() const noexcept { return split_; }
  [[nodiscard]] const SplineConfig& config() const noexcept { return cfg_; }

  /// Knot arrays for every (row, transformed dimension), row-major over (B, dim - split).
  SplineKnots knots(const ParameterStore& store, Var x, Var u) const {
    const std::size_t rows = x.rows(), n2 = dim_ - split_, k = cfg_.bins;
    Tape& tape = x.tape();
    std::optional<Var> cond_in;
    if (split_ > 0) cond_in = ops::slice_cols(x, 0, split_);
    Var raw = ops::reshape(conditioner_.forward(store, cond_in, u, rows), {rows * n2, raw_per_dim()});
    auto edges = [&](Var logits, double min_size) {
      Var frac = ops::add_scalar(ops::scale(ops::softmax(logits), 1.0 - min_size * static_cast<double>(k)), min_size);
      return ops::add_scalar(ops::scale(ops::cumsum_pad(frac), 2.0 * cfg_.bound), -cfg_.bound);
    };
    Var xk = edges(ops::slice_cols(raw, 0, k), cfg_.min_width);
    Var yk = edges(ops::slice_cols(raw, k, 2 * k), cfg_.min_height);
    // Shifted so that a zero pre-activation gives derivative exactly 1.
    const double shift = std::log(std::expm1(1.0 - cfg_.min_derivative));
    Var inner = ops::add_scalar(ops::softplus(ops::add_scalar(ops::slice_cols(raw, 2 * k, 3 * k - 1), shift)),
                                cfg_.min_derivative);
    Var ones = tape.constant(Tensor({rows * n2, 1}, 1.0));
    return {xk, yk, ops::concat_cols({ones, inner, ones})};
  }

  LayerOutput forward(const ParameterStore& store, Var x, Var u) const { return apply(store, x, u, false); }
  LayerOutput inverse(const ParameterStore& store, Var z, Var u) const { return apply(store, z, u, true); }

 private:
  [[nodiscard]] std::size_t raw_per_dim() const { return 3 * cfg_.bins - 1; }

  LayerOutput apply(const ParameterStore& store, Var in, Var u, bool invert) const {
    const std::size_t rows = in.rows(), n2 = dim_ - split_;
    SplineKnots k = knots(store, in, u);
    Var moving = ops::reshape(split_ > 0 ? ops::slice_cols(in, split_, dim_) : in, {rows * n2, 1});
    SplineResult r = invert ? rq_spline_inverse(moving, k, cfg_.bound) : rq_spline(moving, k, cfg_.bound);
    Var out = ops::reshape(r.value, {rows, n2});
    Var logdet = ops::sum_cols(ops::reshape(r.log_deriv, {rows, n2}));
    if (invert) logdet = ops::scale(logdet, -1.0);
    if (split_ > 0) out = ops::concat_cols({ops::slice_cols(in, 0, split_), out});
    return {out, logdet};
  }

  std::size_t dim_, split_;
  SplineConfig cfg_;
  Mlp conditioner_;
};

}  // namespace lfi::flow
