#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lfi/core/ops.hpp"
#include "lfi/core/rng.hpp"
#include "lfi/core/tape.hpp"

namespace lfi::flow {

struct MlpConfig {
  std::vector<std::size_t> hidden{128, 128};
  double dropout = 0.5;
  /// Zero the output layer so the network starts as the constant 0.
  bool zero_output = true;
};

/// Fully connected network on (x, features) with tanh hidden layers and dropout.
///
/// The first layer keeps separate weights for x and for the conditioning
/// features so that a single feature row can be broadcast over a batch of x.
class Mlp {
 public:
  Mlp() = default;

  Mlp(ParameterStore& store, const std::string& name, std::size_t in_x, std::size_t in_features,
      std::size_t out, const MlpConfig& cfg, Rng& init)
      : in_x_(in_x), in_features_(in_features), out_(out), dropout_(cfg.dropout) {
    if (cfg.hidden.empty()) throw ConfigError(name + ": at least one hidden layer required");
    if (in_features == 0) throw ConfigError(name + ": conditioning feature dimension must be positive");
    std::size_t fan_in = in_x + in_features;
    const std::size_t first = cfg.hidden.front();
    if (in_x > 0) first_x_ = store.add(name + ".w0x", glorot(in_x, first, fan_in, first, init));
    first_u_ = store.add(name + ".w0u", glorot(in_features, first, fan_in, first, init));
    biases_.push_back(store.add(name + ".b0", Tensor({1, first}, 0.0)));
    for (std::size_t i = 1; i < cfg.hidden.size(); ++i) {
      const std::size_t a = cfg.hidden[i - 1], b = cfg.hidden[i];
      weights_.push_back(store.add(name + ".w" + std::to_string(i), glorot(a, b, a, b, init)));
      biases_.push_back(store.add(name + ".b" + std::to_string(i), Tensor({1, b}, 0.0)));
    }
    const std::size_t last = cfg.hidden.back();
    Tensor w_out = cfg.zero_output ? Tensor({last, out}, 0.0) : glorot(last, out, last, out, init);
    weights_.push_back(store.add(name + ".wout", std::move(w_out)));
    biases_.push_back(store.add(name + ".bout", cfg.zero_output ? Tensor({1, out}, 0.0)
                                                                : glorot(1, out, last, out, init)));
  }

  [[nodiscard]] std::size_t input_dim() const noexcept { return in_x_; }
  [[nodiscard]] std::size_t output_dim() const noexcept { return out_; }

  /// x: (rows, in_x) or absent when in_x == 0; features: (rows, F) or (1, F).
  Var forward(const ParameterStore& store, std::optional<Var> x, Var features, std::size_t rows) const {
    Tape& tape = features.tape();
    Var h = ops::affine(features, tape.parameter(store, first_u_), tape.parameter(store, biases_[0]));
    if (in_x_ > 0) {
      h = ops::add(ops::matmul(*x, tape.parameter(store, first_x_)), h);
    } else if (h.rows() != rows) {
      h = ops::add(tape.constant(Tensor({rows, h.cols()}, 0.0)), h);
    }
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      h = ops::dropout(ops::tanh(h), dropout_);
      h = ops::affine(h, tape.parameter(store, weights_[i]), tape.parameter(store, biases_[i + 1]));
    }
    return h;
  }

 private:
  static Tensor glorot(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t({rows, cols});
    for (double& v : t.values()) v = rng.uniform(-limit, limit);
    return t;
  }

  std::size_t in_x_ = 0, in_features_ = 0, out_ = 0;
  double dropout_ = 0.0;
  ParamId first_x_ = 0, first_u_ = 0;
  std::vector<ParamId> weights_;
  std::vector<ParamId> biases_;
};

}  // namespace lfi::flow
