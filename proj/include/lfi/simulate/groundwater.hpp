#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "lfi/core/error.hpp"
#include "lfi/core/tensor.hpp"
#include "lfi/simulate/grid.hpp"

namespace lfi::simulate {

struct Edge {
  enum class Kind { no_flux, fixed_head };
  Kind kind = Kind::no_flux;
  double head = 0.0;  ///< metres, for fixed_head

  static Edge no_flux() { return {}; }
  static Edge fixed(double h) { return {Kind::fixed_head, h}; }
};

/// Pumping (positive rate, m^3/day withdrawn) active on steps [start, end).
struct Well {
  std::size_t cell = 0;
  double rate = 0.0;
  std::size_t start = 0;
  std::size_t end = static_cast<std::size_t>(-1);
};

/// Rotating pumping test: one well at a time, three steps each, visiting
/// cells spread over the default 8 x 4 grid.
inline std::vector<Well> rotating_wells(double rate = 100.0, std::size_t steps_each = 3) {
  const std::size_t cells[] = {1, 13, 26, 6, 18, 29, 11, 24, 3};
  std::vector<Well> wells;
  for (std::size_t i = 0; i < std::size(cells); ++i) {
    wells.push_back({cells[i], rate, i * steps_each, (i + 1) * steps_each});
  }
  return wells;
}

/// Defaults are the desk-scale experiment: river at fixed head on the north
/// edge, a lower fixed head on the south edge, closed sides, and a rotating
/// pumping test.
struct ForwardConfig {
  double specific_yield = 0.1;
  double initial_head = 20.0;
  std::vector<double> initial_heads;  ///< per active cell; overrides initial_head when non-empty
  Edge north = Edge::fixed(20.0);  ///< row 0
  Edge south = Edge::fixed(15.0);
  Edge west = Edge::no_flux();
  Edge east = Edge::no_flux();
  double recharge = 0.0;  ///< m/day, enters the equation as -r
  std::vector<Well> wells = rotating_wells();
  double picard_tolerance = 1e-8;
  std::size_t picard_max_iterations = 50;

  void validate(const GridSpec& grid) const {
    if (!(specific_yield > 0.0)) throw ConfigError("forward: specific_yield must be positive");
    if (!(initial_head > 0.0)) throw ConfigError("forward: initial_head must be positive");
    if (!initial_heads.empty() && initial_heads.size() != grid.dim()) {
      throw ConfigError("forward: initial_heads has " + std::to_string(initial_heads.size()) + " entries for " +
                        std::to_string(grid.dim()) + " active cells");
    }
    for (double h : initial_heads)
      if (!(h > 0.0)) throw ConfigError("forward: initial heads must be positive");
    for (const Edge* e : {&north, &south, &west, &east}) {
      if (e->kind == Edge::Kind::fixed_head && !(e->head > 0.0)) throw ConfigError("forward: fixed heads must be positive");
    }
    if (!(picard_tolerance > 0.0) || picard_max_iterations == 0) throw ConfigError("forward: bad Picard settings");
    for (const Well& w : wells) {
      if (w.cell >= grid.cells() || !grid.is_active(w.cell)) {
        throw ConfigError("forward: well cell " + std::to_string(w.cell) + " is not an active cell");
      }
    }
  }

  /// Source term r (m/day) per step and active cell, shape (steps, N).
  [[nodiscard]] Tensor source(const GridSpec& grid) const {
    const auto index = grid.parameter_index();
    const double area = grid.cell_size * grid.cell_size;
    Tensor r({grid.steps, grid.dim()}, -recharge);
    for (const Well& w : wells)
      for (std::size_t s = w.start; s < std::min(w.end, grid.steps); ++s) r(s, index[w.cell]) += w.rate / area;
    return r;
  }
};

/// Backward-Euler, five-point finite-volume solver for
///   S_y du/dt = div(kappa u grad u) - r,   kappa = exp(theta),
/// with the face transmissivity the harmonic mean of kappa u in the two
/// cells, lagged one Picard iterate. A fixed-head edge acts through a
/// half-cell face with conductance 2 kappa u of the boundary cell.
class GroundwaterSolver {
 public:
  GroundwaterSolver(GridSpec grid, ForwardConfig fc) : grid_(std::move(grid)), fc_(std::move(fc)) {
    grid_.validate();
    fc_.validate(grid_);
    const auto index = grid_.parameter_index();
    cells_ = grid_.active_cells();
    for (std::size_t p = 0; p < cells_.size(); ++p) {
      const std::size_t c = cells_[p];
      for (std::size_t nb : grid_.neighbours(c))
        if (nb > c && grid_.is_active(nb)) faces_.push_back({p, index[nb]});
      const std::size_t r = c / grid_.cols, col = c % grid_.cols;
      auto boundary = [&](bool on_edge, const Edge& e) {
        if (on_edge && e.kind == Edge::Kind::fixed_head) boundary_.push_back({p, e.head});
      };
      boundary(r == 0, fc_.north);
      boundary(r + 1 == grid_.rows, fc_.south);
      boundary(col == 0, fc_.west);
      boundary(col + 1 == grid_.cols, fc_.east);
    }
    for (std::size_t s : grid_.sensors) sensor_params_.push_back(index[s]);
    source_ = fc_.source(grid_);
  }

  [[nodiscard]] const GridSpec& grid() const noexcept { return grid_; }
  [[nodiscard]] const ForwardConfig& config() const noexcept { return fc_; }
  [[nodiscard]] std::size_t dim() const noexcept { return cells_.size(); }

  /// Head field at t_0..t_k over active cells, shape (k + 1, N).
  [[nodiscard]] Tensor solve_fields(std::span<const double> theta) const {
    const std::size_t n = dim();
    if (theta.size() != n) {
      throw ShapeError("groundwater: theta has " + std::to_string(theta.size()) + " entries, grid has " +
                       std::to_string(n) + " active cells");
    }
    Eigen::VectorXd kappa(n);
    for (std::size_t i = 0; i < n; ++i) {
      kappa[i] = std::exp(theta[i]);
      if (!std::isfinite(kappa[i]) || kappa[i] <= 0.0) throw NumericalError("groundwater: conductivity out of range in cell " + std::to_string(i));
    }
    const double area = grid_.cell_size * grid_.cell_size;
    const double storage = fc_.specific_yield * area / grid_.dt;

    Tensor fields({grid_.steps + 1, n});
    Eigen::VectorXd u = Eigen::VectorXd::Constant(n, fc_.initial_head);
    for (std::size_t i = 0; i < fc_.initial_heads.size(); ++i) u[i] = fc_.initial_heads[i];
    for (std::size_t i = 0; i < n; ++i) fields(0, i) = u[i];

    Eigen::MatrixXd a(n, n);
    Eigen::VectorXd b(n), w(n), next(n), trans(n);
    Eigen::LLT<Eigen::MatrixXd> llt(n);
    for (std::size_t step = 0; step < grid_.steps; ++step) {
      w = u;
      bool converged = false;
      for (std::size_t it = 0; it < fc_.picard_max_iterations; ++it) {
        // Solve for the correction to w against the flux-form residual, so a
        // state that already balances (e.g. a uniform steady state) is kept exactly.
        trans = kappa.cwiseProduct(w);
        a.setZero();
        for (std::size_t i = 0; i < n; ++i) {
          a(i, i) = storage;
          b[i] = storage * (u[i] - w[i]) - source_(step, i) * area;
        }
        for (const auto& [i, j] : faces_) {
          const double c = 2.0 * trans[i] * trans[j] / (trans[i] + trans[j]);
          a(i, i) += c;
          a(j, j) += c;
          a(i, j) -= c;
          a(j, i) -= c;
          const double q = c * (w[j] - w[i]);
          b[i] += q;
          b[j] -= q;
        }
        for (const auto& [i, h] : boundary_) {
          const double c = 2.0 * trans[i];
          a(i, i) += c;
          b[i] += c * (h - w[i]);
        }
        llt.compute(a);
        if (llt.info() != Eigen::Success) throw NumericalError("groundwater: singular system at step " + std::to_string(step));
        next = w + llt.solve(b);
        if (!next.allFinite()) throw NumericalError("groundwater: non-finite head at step " + std::to_string(step));
        if (next.minCoeff() <= 0.0) {
          throw NumericalError("groundwater: non-positive head at step " + std::to_string(step) +
                               " (aquifer dried out; model outside its validity range)");
        }
        const double change = (next - w).cwiseAbs().maxCoeff();
        w = next;
        if (change < fc_.picard_tolerance) {
          converged = true;
          break;
        }
      }
      if (!converged) {
        throw NumericalError("groundwater: Picard iteration did not converge within " +
                             std::to_string(fc_.picard_max_iterations) + " iterations at step " + std::to_string(step));
      }
      u = w;
      for (std::size_t i = 0; i < n; ++i) fields(step + 1, i) = u[i];
    }
    return fields;
  }

  /// Heads at the sensor cells for steps 1..k, shape (k, N_u).
  [[nodiscard]] Tensor solve(std::span<const double> theta) const { return at_sensors(solve_fields(theta)); }

  [[nodiscard]] Tensor at_sensors(const Tensor& fields) const {
    Tensor out({grid_.steps, sensor_params_.size()});
    for (std::size_t s = 0; s < grid_.steps; ++s)
      for (std::size_t j = 0; j < sensor_params_.size(); ++j) out(s, j) = fields(s + 1, sensor_params_[j]);
    return out;
  }

 private:
  GridSpec grid_;
  ForwardConfig fc_;
  std::vector<std::size_t> cells_;
  std::vector<std::pair<std::size_t, std::size_t>> faces_;
  std::vector<std::pair<std::size_t, double>> boundary_;
  std::vector<std::size_t> sensor_params_;
  Tensor source_;
};

inline Tensor solve_groundwater(std::span<const double> theta, const GridSpec& grid, const ForwardConfig& fc) {
  return GroundwaterSolver(grid, fc).solve(theta);
}

}  // namespace lfi::simulate
