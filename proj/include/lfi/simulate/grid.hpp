#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lfi/core/error.hpp"

namespace lfi::simulate {

/// Rectangular cell grid with an active mask, sensor cells and time stepping.
/// Cells are numbered row-major over the full grid; parameters are indexed by
/// the active cells in that order.
struct GridSpec {
  std::size_t rows = 8;
  std::size_t cols = 4;
  double cell_size = 100.0;  ///< metres
  std::vector<bool> active;  ///< empty means all active
  std::vector<std::size_t> sensors{9, 14, 17, 22};  ///< grid cell indices
  double dt = 20.0;          ///< days
  std::size_t steps = 25;

  [[nodiscard]] std::size_t cells() const noexcept { return rows * cols; }
  [[nodiscard]] bool is_active(std::size_t cell) const { return active.empty() || active.at(cell); }

  [[nodiscard]] std::vector<std::size_t> active_cells() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < cells(); ++c)
      if (is_active(c)) out.push_back(c);
    return out;
  }

  /// Parameter count N.
  [[nodiscard]] std::size_t dim() const { return active_cells().size(); }

  /// Map from grid cell to parameter index, or npos for inactive cells.
  [[nodiscard]] std::vector<std::size_t> parameter_index() const {
    std::vector<std::size_t> idx(cells(), npos);
    std::size_t n = 0;
    for (std::size_t c = 0; c < cells(); ++c)
      if (is_active(c)) idx[c] = n++;
    return idx;
  }

  /// Cell centre in metres (x along columns, y along rows).
  [[nodiscard]] std::pair<double, double> centre(std::size_t cell) const {
    return {(static_cast<double>(cell % cols) + 0.5) * cell_size, (static_cast<double>(cell / cols) + 0.5) * cell_size};
  }

  void validate() const {
    if (rows == 0 || cols == 0) throw ConfigError("grid: rows and cols must be positive");
    if (!(cell_size > 0.0)) throw ConfigError("grid: cell_size must be positive");
    if (!(dt > 0.0)) throw ConfigError("grid: dt must be positive");
    if (steps == 0) throw ConfigError("grid: steps must be positive");
    if (!active.empty() && active.size() != cells()) {
      throw ConfigError("grid: active mask has " + std::to_string(active.size()) + " entries for " +
                        std::to_string(cells()) + " cells");
    }
    const auto act = active_cells();
    if (act.empty()) throw ConfigError("grid: no active cells");
    if (sensors.empty()) throw ConfigError("grid: at least one sensor is required");
    for (std::size_t s : sensors) {
      if (s >= cells() || !is_active(s)) throw ConfigError("grid: sensor cell " + std::to_string(s) + " is not an active cell");
    }
    // Connectivity of the active region by flood fill.
    std::vector<bool> seen(cells(), false);
    std::vector<std::size_t> stack{act.front()};
    seen[act.front()] = true;
    std::size_t reached = 0;
    while (!stack.empty()) {
      const std::size_t c = stack.back();
      stack.pop_back();
      ++reached;
      for (std::size_t nb : neighbours(c)) {
        if (!seen[nb] && is_active(nb)) {
          seen[nb] = true;
          stack.push_back(nb);
        }
      }
    }
    if (reached != act.size()) throw ConfigError("grid: active region is not connected");
  }

  /// In-grid 4-neighbours of a cell.
  [[nodiscard]] std::vector<std::size_t> neighbours(std::size_t cell) const {
    std::vector<std::size_t> out;
    const std::size_t r = cell / cols, c = cell % cols;
    if (r > 0) out.push_back(cell - cols);
    if (r + 1 < rows) out.push_back(cell + cols);
    if (c > 0) out.push_back(cell - 1);
    if (c + 1 < cols) out.push_back(cell + 1);
    return out;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

}  // namespace lfi::simulate
