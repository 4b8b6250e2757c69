#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "lfi/core/error.hpp"
#include "lfi/core/rng.hpp"
#include "lfi/core/tensor.hpp"
#include "lfi/simulate/grid.hpp"

namespace lfi::simulate {

struct GPPrior {
  double variance = 1.0;
  double length = 200.0;  ///< metres; two cells at the default cell size

  void validate() const {
    if (!(variance > 0.0)) throw ConfigError("prior: variance must be positive");
    if (!(length > 0.0)) throw ConfigError("prior: length must be positive");
  }
};

/// Exponential covariance sigma^2 exp(-|x - x'| / l) over active-cell centres.
inline Eigen::MatrixXd prior_covariance(const GPPrior& prior, const GridSpec& grid) {
  const auto cells = grid.active_cells();
  const auto n = static_cast<Eigen::Index>(cells.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [xi, yi] = grid.centre(cells[i]);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto [xj, yj] = grid.centre(cells[j]);
      k(i, j) = prior.variance * std::exp(-std::hypot(xi - xj, yi - yj) / prior.length);
    }
  }
  return k;
}

/// Lower Cholesky factor of the prior covariance. Jitter starts at
/// 1e-10 sigma^2 and grows tenfold until the factorisation succeeds.
inline Eigen::MatrixXd prior_factor(const GPPrior& prior, const GridSpec& grid) {
  prior.validate();
  const Eigen::MatrixXd k = prior_covariance(prior, grid);
  const auto n = k.rows();
  double jitter = 1e-10 * prior.variance;
  for (int attempt = 0; attempt < 8; ++attempt, jitter *= 10.0) {
    Eigen::LLT<Eigen::MatrixXd> llt(k + jitter * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  throw NumericalError("prior: Cholesky factorisation failed after jitter escalation to " + std::to_string(jitter / 10.0));
}

/// n draws theta = L eps, shape (n, N).
inline Tensor sample_prior(const Eigen::MatrixXd& factor, std::size_t n, Rng& rng) {
  const auto dim = factor.rows();
  Tensor out({n, static_cast<std::size_t>(dim)});
  Eigen::VectorXd eps(dim);
  for (std::size_t s = 0; s < n; ++s) {
    for (Eigen::Index i = 0; i < dim; ++i) eps[i] = rng.normal();
    const Eigen::VectorXd theta = factor.triangularView<Eigen::Lower>() * eps;
    for (Eigen::Index i = 0; i < dim; ++i) out(s, static_cast<std::size_t>(i)) = theta[i];
  }
  return out;
}

inline Tensor sample_prior(const GPPrior& prior, const GridSpec& grid, std::size_t n, Rng& rng) {
  return sample_prior(prior_factor(prior, grid), n, rng);
}

}  // namespace lfi::simulate
