#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "lfi/core/error.hpp"
#include "lfi/core/tensor.hpp"
#include "lfi/simulate/groundwater.hpp"

namespace lfi::diagnose {

/// Empirical quantile with linear interpolation between order statistics:
/// position (n - 1) p in the sorted sample.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ConfigError("quantile: empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Draws (n, N) with per-dimension mean, standard deviation and 95% interval.
struct PosteriorSamples {
  Tensor samples;
  std::vector<double> mean, std, lo, hi, median;

  explicit PosteriorSamples(Tensor s) : samples(std::move(s)) {
    if (samples.rank() != 2) throw ShapeError("posterior samples: expected (n, N), got " + shape_string(samples.shape()));
    const std::size_t n = samples.rows(), dim = samples.cols();
    mean.assign(dim, 0.0);
    std.assign(dim, 0.0);
    lo.resize(dim);
    hi.resize(dim);
    median.resize(dim);
    std::vector<double> col(n);
    for (std::size_t j = 0; j < dim; ++j) {
      for (std::size_t i = 0; i < n; ++i) col[i] = samples(i, j);
      for (double v : col) mean[j] += v;
      mean[j] /= static_cast<double>(n);
      for (double v : col) std[j] += (v - mean[j]) * (v - mean[j]);
      std[j] = n > 1 ? std::sqrt(std[j] / static_cast<double>(n - 1)) : 0.0;
      std::sort(col.begin(), col.end());
      lo[j] = quantile_sorted(col, 0.025);
      hi[j] = quantile_sorted(col, 0.975);
      median[j] = quantile_sorted(col, 0.5);
    }
  }

  [[nodiscard]] std::size_t count() const { return samples.rows(); }
  [[nodiscard]] std::size_t dim() const { return samples.cols(); }

  void write_summary_csv(std::ostream& os) const {
    os << "parameter,mean,std,q2.5,q50,q97.5\n";
    char buf[200];
    for (std::size_t j = 0; j < dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", j, mean[j], std[j], lo[j], median[j], hi[j]);
      os << buf;
    }
  }
};

namespace detail {
inline void same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError(std::string(what) + ": sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
}
}  // namespace detail

struct RelativeErrors {
  std::vector<double> values;  ///< NaN where the reference is zero
  std::size_t undefined = 0;

  /// Mean over defined components.
  [[nodiscard]] double mean() const {
    double s = 0.0;
    std::size_t n = 0;
    for (double v : values)
      if (!std::isnan(v)) s += v, ++n;
    return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  }
};

/// |est_i - ref_i| / |ref_i|; zero references are flagged and left out of averages.
inline RelativeErrors relative_error(std::span<const double> est, std::span<const double> ref) {
  detail::same_size(est, ref, "relative_error");
  RelativeErrors r;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (ref[i] == 0.0) {
      r.values.push_back(std::numeric_limits<double>::quiet_NaN());
      ++r.undefined;
    } else {
      r.values.push_back(std::abs(est[i] - ref[i]) / std::abs(ref[i]));
    }
  }
  return r;
}

/// |est - ref|_2 / |ref|_2.
inline double rel_l2_error(std::span<const double> est, std::span<const double> ref) {
  detail::same_size(est, ref, "rel_l2_error");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    num += (est[i] - ref[i]) * (est[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  if (den == 0.0) throw ConfigError("rel_l2_error: reference has zero norm");
  return std::sqrt(num / den);
}

/// Log predictive probability as printed in the metric definition:
/// sum_i (est_i - ref_i)^2 / (2 ref_i^2) + log(2 pi ref_i^2) / 2.
inline double lpp(std::span<const double> est, std::span<const double> ref) {
  detail::same_size(est, ref, "lpp");
  double s = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (ref[i] == 0.0) throw ConfigError("lpp: reference component " + std::to_string(i) + " is zero");
    const double r2 = ref[i] * ref[i];
    s += (est[i] - ref[i]) * (est[i] - ref[i]) / (2.0 * r2) + 0.5 * std::log(2.0 * std::numbers::pi * r2);
  }
  return s;
}

struct Coverage {
  std::vector<bool> flags;
  double fraction = 0.0;
};

inline constexpr std::size_t kMinCoverageSamples = 40;

/// Whether each reference component lies in its central 95% interval.
inline Coverage coverage(const PosteriorSamples& s, std::span<const double> ref) {
  if (s.count() < kMinCoverageSamples) {
    throw ConfigError("coverage: " + std::to_string(s.count()) + " samples; at least " +
                      std::to_string(kMinCoverageSamples) + " are needed for 95% quantiles");
  }
  detail::same_size(s.mean, ref, "coverage");
  Coverage c;
  std::size_t inside = 0;
  for (std::size_t j = 0; j < ref.size(); ++j) {
    const bool in = ref[j] >= s.lo[j] && ref[j] <= s.hi[j];
    c.flags.push_back(in);
    inside += in;
  }
  c.fraction = static_cast<double>(inside) / static_cast<double>(ref.size());
  return c;
}

struct MetricsReport {
  RelativeErrors relative;
  double rel_l2 = 0.0;
  double lpp = 0.0;
  Coverage cover;

  static MetricsReport compute(const PosteriorSamples& s, std::span<const double> ref) {
    return {relative_error(s.mean, ref), rel_l2_error(s.mean, ref), diagnose::lpp(s.mean, ref), coverage(s, ref)};
  }

  /// Columns in the order average relative error, relative l2 error, LPP, then coverage.
  void write_csv(std::ostream& os) const {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%zu\n", relative.mean(), rel_l2, lpp, cover.fraction,
                  relative.undefined);
    os << "avg_relative_error,relative_l2_error,lpp,coverage_95,undefined_relative\n" << buf;
  }

  void write_table(std::ostream& os) const {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-24s %-24s %-10s %s\n", "Average relative error", "Relative l2 error", "LPP",
                  "95% coverage");
    os << buf;
    std::snprintf(buf, sizeof buf, "%-24.4f %-24.4f %-10.2f %.3f\n", relative.mean(), rel_l2, lpp, cover.fraction);
    os << buf;
    if (relative.undefined) os << relative.undefined << " components with zero reference excluded from the average\n";
  }

  /// One row per parameter cell.
  void write_coverage_csv(std::ostream& os, const PosteriorSamples& s, std::span<const double> ref) const {
    os << "parameter,reference,q2.5,q97.5,covered\n";
    char buf[160];
    for (std::size_t j = 0; j < ref.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%d\n", j, ref[j], s.lo[j], s.hi[j], int(cover.flags[j]));
      os << buf;
    }
  }
};

struct Predictive {
  Tensor draws;  ///< (n, k, N_u)
  Tensor mean, lo, hi;  ///< (k, N_u)

  void write_bands_csv(std::ostream& os) const {
    os << "time,sensor,mean,lo95,hi95\n";
    char buf[160];
    for (std::size_t t = 0; t < mean.rows(); ++t)
      for (std::size_t j = 0; j < mean.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g\n", t, j, mean(t, j), lo(t, j), hi(t, j));
        os << buf;
      }
  }
};

/// Forward runs for each posterior draw with 95% bands per time and sensor.
inline Predictive posterior_predictive(const Tensor& samples, const simulate::GroundwaterSolver& solver,
                                       std::size_t workers = 1) {
  if (samples.rank() != 2 || samples.cols() != solver.dim()) {
    throw ShapeError("posterior_predictive: samples " + shape_string(samples.shape()) + " do not match " +
                     std::to_string(solver.dim()) + " cells");
  }
  const std::size_t n = samples.rows(), k = solver.grid().steps, nu = solver.grid().sensors.size();
  Predictive p{Tensor({n, k, nu}), Tensor({k, nu}), Tensor({k, nu}), Tensor({k, nu})};
  std::vector<std::string> errors(n);
  auto one = [&](std::size_t i) {
    try {
      const Tensor h = solver.solve(samples.row_values(i));
      std::copy(h.data(), h.data() + h.size(), p.draws.data() + i * k * nu);
    } catch (const NumericalError& e) {
      errors[i] = e.what();
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) one(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) one(i);
      });
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!errors[i].empty()) throw NumericalError("posterior_predictive: sample " + std::to_string(i) + ": " + errors[i]);
  std::vector<double> col(n);
  for (std::size_t t = 0; t < k; ++t)
    for (std::size_t j = 0; j < nu; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += (col[i] = p.draws(i, t, j));
      p.mean(t, j) = m / static_cast<double>(n);
      std::sort(col.begin(), col.end());
      p.lo(t, j) = quantile_sorted(col, 0.025);
      p.hi(t, j) = quantile_sorted(col, 0.975);
    }
  return p;
}

}  // namespace lfi::diagnose
