#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "lfi/core/error.hpp"
#include "lfi/core/ops.hpp"
#include "lfi/core/rng.hpp"
#include "lfi/core/tape.hpp"
#include "lfi/flow/layers.hpp"

namespace lfi::flow {

struct FlowConfig {
  std::size_t dim = 0;       ///< latent / parameter dimension N
  std::size_t features = 0;  ///< conditioning feature dimension
  std::size_t coupling_layers = 5;
  std::size_t spline_layers = 5;
  MlpConfig subnet{};
  double clamp = 2.0;
  SplineConfig spline{};
  std::uint64_t permutation_seed = 1;
  std::uint64_t init_seed = 2;
};

/// Ordered stack of conditional coupling and spline layers, alternating while
/// both kinds remain. A fixed permutation of the dimensions, derived from
/// `permutation_seed`, is applied in front of every layer, and the composed
/// ordering is undone after the last one.
class ConditionalFlow {
 public:
  struct Output {
    Var value;
    Var logdet;  ///< (B, 1)
  };

  ConditionalFlow(ParameterStore& store, const FlowConfig& cfg) : cfg_(cfg) {
    if (cfg.dim == 0) throw ConfigError("flow: dimension must be positive");
    if (cfg.features == 0) throw ConfigError("flow: feature dimension must be positive");
    if (cfg.coupling_layers + cfg.spline_layers == 0) throw ConfigError("flow: no layers");
    Rng init(cfg.init_seed);
    std::size_t nc = 0, ns = 0;
    while (nc < cfg.coupling_layers || ns < cfg.spline_layers) {
      const std::size_t i = layers_.size();
      const std::string name = "flow.l" + std::to_string(i);
      if (nc < cfg.coupling_layers && (ns >= cfg.spline_layers || nc <= ns)) {
        layers_.emplace_back(std::in_place_type<CouplingLayer>, store, name + ".coupling", cfg.dim, cfg.features,
                             cfg.subnet, cfg.clamp, init);
        ++nc;
      } else {
        layers_.emplace_back(std::in_place_type<SplineLayer>, store, name + ".spline", cfg.dim, cfg.features,
                             cfg.subnet, cfg.spline, init);
        ++ns;
      }
      perms_.push_back(make_permutation(cfg.dim, derive_seed(cfg.permutation_seed, {i})));
      std::vector<std::size_t> inv(cfg.dim);
      for (std::size_t j = 0; j < cfg.dim; ++j) inv[perms_.back()[j]] = j;
      inverse_perms_.push_back(std::move(inv));
    }
    // Undo the composed permutation at the end so the stack's net reordering is
    // the identity; an identity-initialised flow is then exactly z = theta.
    std::vector<std::size_t> composed(cfg.dim);
    std::iota(composed.begin(), composed.end(), std::size_t{0});
    for (const auto& p : perms_) {
      std::vector<std::size_t> next(cfg.dim);
      for (std::size_t j = 0; j < cfg.dim; ++j) next[j] = composed[p[j]];
      composed = std::move(next);
    }
    restore_.resize(cfg.dim);
    for (std::size_t j = 0; j < cfg.dim; ++j) restore_[composed[j]] = j;
    unrestore_ = composed;
  }

  [[nodiscard]] const FlowConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::size_t dim() const noexcept { return cfg_.dim; }
  [[nodiscard]] std::size_t layer_count() const noexcept { return layers_.size(); }
  [[nodiscard]] bool is_coupling(std::size_t i) const { return std::holds_alternative<CouplingLayer>(layers_.at(i)); }
  [[nodiscard]] const std::vector<std::size_t>& permutation(std::size_t i) const { return perms_.at(i); }

  /// Normalizing direction: theta (B, N) -> z (B, N), with the summed log-det.
  Output forward(const ParameterStore& store, Var theta, Var features) const {
    check_input(theta, features);
    Var x = theta;
    Var logdet;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = ops::gather_cols(x, perms_[i]);
      LayerOutput out = std::visit([&](const auto& layer) { return layer.forward(store, x, features); }, layers_[i]);
      check_finite(out, i);
      x = out.value;
      logdet = logdet.valid() ? ops::add(logdet, out.logdet) : out.logdet;
    }
    return {ops::gather_cols(x, restore_), logdet};
  }

  /// Generative direction: exact inverses in reverse order with inverse permutations.
  Output inverse(const ParameterStore& store, Var z, Var features) const {
    check_input(z, features);
    Var x = ops::gather_cols(z, unrestore_);
    Var logdet;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      LayerOutput out = std::visit([&](const auto& layer) { return layer.inverse(store, x, features); }, layers_[i]);
      check_finite(out, i);
      x = ops::gather_cols(out.value, inverse_perms_[i]);
      logdet = logdet.valid() ? ops::add(logdet, out.logdet) : out.logdet;
    }
    return {x, logdet};
  }

 private:
  static std::vector<std::size_t> make_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(p));
    return p;
  }

  void check_input(const Var& x, const Var& features) const {
    if (x.shape().size() != 2 || x.cols() != cfg_.dim) {
      throw ShapeError("flow: expected input (B, " + std::to_string(cfg_.dim) + "), got " + shape_string(x.shape()));
    }
    if (features.shape().size() != 2 || features.cols() != cfg_.features ||
        (features.rows() != 1 && features.rows() != x.rows())) {
      throw ShapeError("flow: features " + shape_string(features.shape()) + " do not match input " +
                       shape_string(x.shape()));
    }
  }

  void check_finite(const LayerOutput& out, std::size_t i) const {
    if (!out.value.value().all_finite() || !out.logdet.value().all_finite()) {
      throw NumericalError("flow: layer " + std::to_string(i) + (is_coupling(i) ? " (coupling)" : " (spline)") +
                           " produced non-finite output");
    }
  }

  FlowConfig cfg_;
  std::vector<std::variant<CouplingLayer, SplineLayer>> layers_;
  std::vector<std::vector<std::size_t>> perms_;
  std::vector<std::vector<std::size_t>> inverse_perms_;
  std::vector<std::size_t> restore_;
  std::vector<std::size_t> unrestore_;
};

/// Standard normal log-density per row: -N/2 log(2 pi) - |z|^2 / 2. Returns (B, 1).
inline Tensor latent_logprob(const Tensor& z) {
  if (z.rank() != 2) throw ShapeError("latent_logprob: expected (B, N), got " + shape_string(z.shape()));
  const std::size_t rows = z.rows(), n = z.cols();
  const double c = -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += z(r, j) * z(r, j);
    out[r] = c - 0.5 * s;
    if (!std::isfinite(out[r])) throw NumericalError("latent_logprob: non-finite value");
  }
  return out;
}

}  // namespace lfi::flow
