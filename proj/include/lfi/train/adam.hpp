#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lfi/core/binary_io.hpp"
#include "lfi/core/error.hpp"
#include "lfi/core/tape.hpp"

namespace lfi::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias-corrected moments, one moment pair per parameter tensor.
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterStore& store, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const Tensor& t : store.values()) {
      m_.emplace_back(t.shape(), 0.0);
      v_.emplace_back(t.shape(), 0.0);
    }
  }

  [[nodiscard]] std::uint64_t steps() const noexcept { return t_; }

  void step(ParameterStore& store, const GradientMap& grads, double lr) {
    if (grads.size() != store.size() || m_.size() != store.size()) {
      throw ShapeError("adam: gradient map covers " + std::to_string(grads.size()) + " of " +
                       std::to_string(store.size()) + " parameters");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < store.size(); ++p) {
      Tensor& x = store.value(p);
      const Tensor& g = grads[p];
      if (g.size() != x.size()) throw ShapeError("adam: gradient shape mismatch for " + store.name(p));
      Tensor& m = m_[p];
      Tensor& v = v_[p];
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
    }
  }

  void save(std::ostream& os) const {
    io::write_u64(os, t_);
    io::write_u64(os, m_.size());
    for (const auto* moments : {&m_, &v_})
      for (const Tensor& t : *moments)
        for (double x : t.values()) io::write_f64(os, x);
  }

  void load(std::istream& is) {
    t_ = io::read_u64(is);
    if (io::read_u64(is) != m_.size()) throw FormatError("adam state: parameter count mismatch");
    for (auto* moments : {&m_, &v_})
      for (Tensor& t : *moments)
        for (double& x : t.values()) x = io::read_f64(is);
  }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace lfi::train
