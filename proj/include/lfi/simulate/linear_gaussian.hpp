#pragma once

#include <cstddef>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "lfi/core/error.hpp"
#include "lfi/core/rng.hpp"
#include "lfi/core/tensor.hpp"

namespace lfi::simulate {

/// u = G theta + eps with theta ~ N(0, prior_cov), eps ~ N(0, noise_var I).
/// The posterior is Gaussian and known in closed form, which makes this the
/// reference problem for checking a trained posterior.
class LinearGaussianModel {
 public:
  struct Posterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
  };

  LinearGaussianModel(Eigen::MatrixXd design, Eigen::MatrixXd prior_cov, double noise_var)
      : g_(std::move(design)), prior_(std::move(prior_cov)), noise_var_(noise_var) {
    if (prior_.rows() != prior_.cols() || prior_.rows() != g_.cols()) {
      throw ShapeError("linear model: design is " + std::to_string(g_.rows()) + "x" + std::to_string(g_.cols()) +
                       " but prior covariance is " + std::to_string(prior_.rows()) + "x" + std::to_string(prior_.cols()));
    }
    if (!(noise_var > 0.0)) throw ConfigError("linear model: noise variance must be positive");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(prior_);
    const double top = eig.eigenvalues().maxCoeff();
    if (!(eig.eigenvalues().minCoeff() > 1e-12 * top)) throw NumericalError("linear model: prior covariance is singular");
    prior_factor_ = prior_.llt().matrixL();
    prior_precision_ = prior_.llt().solve(Eigen::MatrixXd::Identity(dim(), dim()));
  }

  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(g_.cols()); }
  [[nodiscard]] std::size_t observations() const noexcept { return static_cast<std::size_t>(g_.rows()); }
  [[nodiscard]] const Eigen::MatrixXd& design() const noexcept { return g_; }
  [[nodiscard]] const Eigen::MatrixXd& prior_cov() const noexcept { return prior_; }

  [[nodiscard]] Eigen::VectorXd sample_prior(Rng& rng) const {
    Eigen::VectorXd eps(dim());
    for (auto& e : eps) e = rng.normal();
    return prior_factor_ * eps;
  }

  [[nodiscard]] Eigen::VectorXd simulate(const Eigen::VectorXd& theta, Rng& rng) const {
    Eigen::VectorXd u = g_ * theta;
    const double s = std::sqrt(noise_var_);
    for (auto& v : u) v += s * rng.normal();
    return u;
  }

  /// Sigma_p = (Sigma_0^-1 + G^T G / s^2)^-1, mean = Sigma_p G^T u / s^2.
  [[nodiscard]] Posterior posterior(const Eigen::VectorXd& u) const {
    if (static_cast<std::size_t>(u.size()) != observations()) throw ShapeError("linear model: observation size mismatch");
    const Eigen::MatrixXd precision = prior_precision_ + g_.transpose() * g_ / noise_var_;
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    Posterior p;
    p.cov = llt.solve(Eigen::MatrixXd::Identity(dim(), dim()));
    p.mean = llt.solve(g_.transpose() * u / noise_var_);
    return p;
  }

 private:
  Eigen::MatrixXd g_;
  Eigen::MatrixXd prior_;
  double noise_var_;
  Eigen::MatrixXd prior_factor_;
  Eigen::MatrixXd prior_precision_;
};

}  // namespace lfi::simulate
