#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lfi/core/error.hpp"
#include "lfi/core/ops.hpp"
#include "lfi/core/rng.hpp"
#include "lfi/core/tape.hpp"

namespace lfi::summary {

struct ConvStage {
  std::size_t channels = 64;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

struct SummaryConfig {
  std::size_t sensors = 0;  ///< input channels N_u
  std::vector<ConvStage> stages{{64, 3, 1}, {128, 3, 1}};
  std::size_t features = 256;
  double dropout = 0.0;
  std::uint64_t init_seed = 3;
};

/// Smallest number of timesteps for which every convolution stage still has
/// at least one output position.
inline std::size_t min_timesteps(const std::vector<ConvStage>& stages) {
  std::size_t need = 1;
  for (auto it = stages.rbegin(); it != stages.rend(); ++it) need = (need - 1) * it->stride + it->kernel;
  return need;
}

/// Encoder from a (batch, timesteps, sensors) series to (batch, features):
/// valid 1D convolutions over time with tanh, global mean pooling over the
/// remaining positions, then a dense layer. Mean pooling makes the output
/// size independent of the series length.
class SummaryNetwork {
 public:
  SummaryNetwork(ParameterStore& store, const SummaryConfig& cfg) : cfg_(cfg) {
    if (cfg.sensors == 0) throw ConfigError("summary: sensor count must be positive");
    if (cfg.features == 0) throw ConfigError("summary: feature dimension must be positive");
    Rng init(cfg.init_seed);
    std::size_t in = cfg.sensors;
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
      const ConvStage& s = cfg.stages[i];
      if (s.kernel == 0 || s.stride == 0 || s.channels == 0) {
        throw ConfigError("summary: conv stage " + std::to_string(i) + " has a zero size");
      }
      const std::string name = "summary.conv" + std::to_string(i);
      weights_.push_back(store.add(name + ".w", uniform({s.kernel, in, s.channels}, s.kernel * in, s.channels, init)));
      biases_.push_back(store.add(name + ".b", Tensor({1, s.channels}, 0.0)));
      in = s.channels;
    }
    dense_w_ = store.add("summary.dense.w", uniform({in, cfg.features}, in, cfg.features, init));
    dense_b_ = store.add("summary.dense.b", Tensor({1, cfg.features}, 0.0));
  }

  [[nodiscard]] const SummaryConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::size_t min_steps() const { return min_timesteps(cfg_.stages); }
  [[nodiscard]] std::size_t features() const noexcept { return cfg_.features; }

  /// u: (batch, k, sensors) -> (batch, features). Dropout follows the tape's mode.
  Var summarize(const ParameterStore& store, Var u) const {
    if (u.shape().size() != 3) {
      throw ShapeError("summary: expected (batch, timesteps, sensors), got " + shape_string(u.shape()));
    }
    if (u.shape()[2] != cfg_.sensors) {
      throw ShapeError("summary: network built for " + std::to_string(cfg_.sensors) + " sensors, input has " +
                       std::to_string(u.shape()[2]) + "; retraining is required for a different sensor set");
    }
    if (u.shape()[1] < min_steps()) {
      throw ShapeError("summary: " + std::to_string(u.shape()[1]) + " timesteps given, at least k_min = " +
                       std::to_string(min_steps()) + " required");
    }
    Tape& tape = u.tape();
    Var h = u;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      h = ops::conv1d(h, tape.parameter(store, weights_[i]), tape.parameter(store, biases_[i]), cfg_.stages[i].stride);
      h = ops::dropout(ops::tanh(h), cfg_.dropout);
    }
    return ops::affine(ops::mean_time(h), tape.parameter(store, dense_w_), tape.parameter(store, dense_b_));
  }

 private:
  static Tensor uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(-limit, limit);
    return t;
  }

  SummaryConfig cfg_;
  std::vector<ParamId> weights_;
  std::vector<ParamId> biases_;
  ParamId dense_w_ = 0, dense_b_ = 0;
};

}  // namespace lfi::summary
