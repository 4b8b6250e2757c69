#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lfi/core/error.hpp"
#include "lfi/core/rng.hpp"
#include "lfi/core/tensor.hpp"

namespace lfi::simulate {

/// Independent Gaussian measurement noise per sensor and timestep.
struct NoiseModel {
  double sigma = 0.01;
  std::vector<double> per_sensor;  ///< overrides `sigma` when non-empty

  [[nodiscard]] double sigma_for(std::size_t sensor) const {
    return per_sensor.empty() ? sigma : per_sensor.at(sensor);
  }

  void validate(std::size_t sensors) const {
    if (!per_sensor.empty() && per_sensor.size() != sensors) {
      throw ConfigError("noise: " + std::to_string(per_sensor.size()) + " sigmas for " + std::to_string(sensors) + " sensors");
    }
    for (std::size_t j = 0; j < sensors; ++j) {
      if (!(sigma_for(j) >= 0.0)) throw ConfigError("noise: sigma must be non-negative");
    }
  }

  /// heads (k, N_u) + eps, eps ~ N(0, sigma_j^2).
  [[nodiscard]] Tensor add_noise(const Tensor& heads, Rng& rng) const {
    validate(heads.cols());
    Tensor out = heads;
    for (std::size_t t = 0; t < heads.rows(); ++t)
      for (std::size_t j = 0; j < heads.cols(); ++j) {
        const double e = rng.normal();
        out(t, j) += sigma_for(j) * e;
      }
    return out;
  }
};

}  // namespace lfi::simulate
