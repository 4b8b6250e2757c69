#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lfi/core/error.hpp"
#include "lfi/core/tensor.hpp"

namespace lfi::train {

/// Simulated (theta, observation) pairs: theta (M, N), obs (M, k, N_u).
struct Pairs {
  Tensor theta;
  Tensor obs;

  [[nodiscard]] std::size_t size() const { return theta.empty() ? 0 : theta.rows(); }
  [[nodiscard]] std::size_t dim() const { return theta.cols(); }
  [[nodiscard]] std::size_t steps() const { return obs.shape().at(1); }
  [[nodiscard]] std::size_t sensors() const { return obs.shape().at(2); }

  void validate() const {
    if (theta.rank() != 2 || obs.rank() != 3 || obs.shape()[0] != theta.rows()) {
      throw ShapeError("pairs: expected theta (M, N) and obs (M, k, N_u), got " + shape_string(theta.shape()) +
                       " and " + shape_string(obs.shape()));
    }
  }

  [[nodiscard]] Pairs subset(std::span<const std::size_t> rows) const {
    return {gather(theta, rows), gather(obs, rows)};
  }

  [[nodiscard]] Pairs slice(std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = begin; i < end; ++i) rows.push_back(i);
    return subset(rows);
  }

  /// Rows of a tensor along its leading axis.
  static Tensor gather(const Tensor& t, std::span<const std::size_t> rows) {
    if (rows.empty()) throw ShapeError("pairs: empty row selection");
    Shape shape = t.shape();
    const std::size_t stride = t.size() / shape[0];
    shape[0] = rows.size();
    Tensor out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= t.shape()[0]) throw ShapeError("pairs: row " + std::to_string(rows[i]) + " out of range");
      std::copy_n(t.data() + rows[i] * stride, stride, out.data() + i * stride);
    }
    return out;
  }
};

}  // namespace lfi::train
