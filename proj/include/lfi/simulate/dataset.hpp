#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lfi/core/binary_io.hpp"
#include "lfi/core/error.hpp"
#include "lfi/core/key_value.hpp"
#include "lfi/core/rng.hpp"
#include "lfi/core/tensor.hpp"
#include "lfi/simulate/gp_prior.hpp"
#include "lfi/simulate/groundwater.hpp"
#include "lfi/simulate/linear_gaussian.hpp"
#include "lfi/simulate/noise.hpp"
#include "lfi/train/pairs.hpp"

namespace lfi::simulate {

struct Split {
  std::size_t validation = 0;
  std::size_t test = 0;
};

/// M simulated pairs with their provenance. Rows are ordered train, validation, test.
struct SimulationDataset {
  train::Pairs data;
  std::string provenance;  ///< `key = value` text: configs, seed, split
  Split split;
  std::size_t resampled = 0;  ///< draws replaced after a simulator failure

  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] std::size_t train_size() const { return size() - split.validation - split.test; }
  [[nodiscard]] train::Pairs train() const { return data.slice(0, train_size()); }
  [[nodiscard]] train::Pairs validation() const { return data.slice(train_size(), train_size() + split.validation); }
  [[nodiscard]] train::Pairs test() const { return data.slice(size() - split.test, size()); }
};

/// One draw: theta (N) and observations (k, N_u).
using Simulator = std::function<std::pair<std::vector<double>, Tensor>(Rng&)>;

inline constexpr std::size_t kMaxAttempts = 20;

/// Runs `sim` for samples 0..M-1 with seeds derived from (seed, sample,
/// attempt), so the output does not depend on how samples are scheduled.
/// Values are rounded to float32, the precision of the dataset file.
inline SimulationDataset generate(const Simulator& sim, std::size_t m, std::uint64_t seed, std::size_t workers = 1) {
  if (m == 0) throw ConfigError("generate: sample count must be positive");
  std::vector<std::vector<double>> thetas(m);
  std::vector<Tensor> obs(m);
  std::vector<std::size_t> retries(m, 0);
  std::vector<std::exception_ptr> errors(m);
  auto one = [&](std::size_t i) {
    std::string last;
    for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
      Rng rng(derive_seed(seed, {i, attempt}));
      try {
        auto [t, u] = sim(rng);
        thetas[i] = std::move(t);
        obs[i] = std::move(u);
        retries[i] = attempt;
        return;
      } catch (const NumericalError& e) {
        last = e.what();
      }
    }
    errors[i] = std::make_exception_ptr(
        NumericalError("generate: sample " + std::to_string(i) + " failed " + std::to_string(kMaxAttempts) + " times: " + last));
  };
  workers = std::max<std::size_t>(1, std::min(workers, m));
  if (workers == 1) {
    for (std::size_t i = 0; i < m; ++i) one(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < m; i += workers) one(i);
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  const std::size_t n = thetas[0].size();
  const Shape us = obs[0].shape();
  SimulationDataset ds;
  ds.data.theta = Tensor({m, n});
  ds.data.obs = Tensor({m, us.at(0), us.at(1)});
  const std::size_t stride = obs[0].size();
  for (std::size_t i = 0; i < m; ++i) {
    if (thetas[i].size() != n || obs[i].shape() != us) throw ShapeError("generate: simulator output shape changed");
    for (std::size_t j = 0; j < n; ++j) ds.data.theta(i, j) = static_cast<float>(thetas[i][j]);
    for (std::size_t j = 0; j < stride; ++j) ds.data.obs[i * stride + j] = static_cast<float>(obs[i][j]);
    ds.resampled += retries[i];
  }
  return ds;
}

/// Prior draw, forward solve and measurement noise.
inline Simulator groundwater_simulator(const GridSpec& grid, const GPPrior& prior, const ForwardConfig& fc,
                                       const NoiseModel& noise) {
  auto solver = std::make_shared<GroundwaterSolver>(grid, fc);
  auto factor = std::make_shared<Eigen::MatrixXd>(prior_factor(prior, grid));
  noise.validate(grid.sensors.size());
  return [solver, factor, noise](Rng& rng) {
    const Tensor theta = sample_prior(*factor, 1, rng);
    const Tensor heads = solver->solve(theta.values());
    return std::pair{std::vector<double>(theta.values().begin(), theta.values().end()), noise.add_noise(heads, rng)};
  };
}

/// Observations as one timestep of m sensors, so the pair fits the (k, N_u) layout.
inline Simulator linear_simulator(const LinearGaussianModel& model) {
  return [model](Rng& rng) {
    const Eigen::VectorXd theta = model.sample_prior(rng);
    const Eigen::VectorXd u = model.simulate(theta, rng);
    Tensor obs({1, static_cast<std::size_t>(u.size())});
    for (Eigen::Index j = 0; j < u.size(); ++j) obs[static_cast<std::size_t>(j)] = u[j];
    return std::pair{std::vector<double>(theta.begin(), theta.end()), obs};
  };
}

// File layout: "LFI1", u16 version, u32 M, N, k, N_u, then M records of
// theta (N x f32) and u (k x N_u x f32, time-major), then the provenance text.
inline constexpr std::uint16_t kDatasetVersion = 1;

inline void write_dataset(std::ostream& os, const SimulationDataset& ds) {
  const auto& d = ds.data;
  d.validate();
  io::write_magic(os, "LFI1");
  io::write_u16(os, kDatasetVersion);
  for (std::size_t v : {d.size(), d.dim(), d.steps(), d.sensors()}) io::write_u32(os, static_cast<std::uint32_t>(v));
  const std::size_t stride = d.steps() * d.sensors();
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.dim(); ++j) io::write_f32(os, static_cast<float>(d.theta(i, j)));
    for (std::size_t j = 0; j < stride; ++j) io::write_f32(os, static_cast<float>(d.obs[i * stride + j]));
  }
  KeyValue prov = KeyValue::parse(ds.provenance, "provenance");
  prov.set("split_validation", std::to_string(ds.split.validation));
  prov.set("split_test", std::to_string(ds.split.test));
  io::write_string(os, prov.text());
}

inline void write_dataset(const std::string& path, const SimulationDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_dataset(os, ds);
  if (!os) throw Error("write to '" + path + "' failed");
}

inline SimulationDataset read_dataset(std::istream& is) {
  io::expect_magic(is, "LFI1", "dataset");
  const std::uint16_t version = io::read_u16(is);
  if (version != kDatasetVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
  const std::size_t m = io::read_u32(is), n = io::read_u32(is), k = io::read_u32(is), nu = io::read_u32(is);
  if (m == 0 || n == 0 || k == 0 || nu == 0) throw FormatError("dataset: zero dimension in header");
  if (static_cast<double>(m) * (n + k * nu) > 2e9) throw FormatError("dataset: implausible header sizes");
  SimulationDataset ds;
  ds.data.theta = Tensor({m, n});
  ds.data.obs = Tensor({m, k, nu});
  const std::size_t stride = k * nu;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) ds.data.theta(i, j) = io::read_f32(is);
    for (std::size_t j = 0; j < stride; ++j) ds.data.obs[i * stride + j] = io::read_f32(is);
  }
  ds.provenance = io::read_string(is);
  const KeyValue prov = KeyValue::parse(ds.provenance, "provenance");
  if (prov.has("split_validation")) ds.split.validation = prov.get_size("split_validation");
  if (prov.has("split_test")) ds.split.test = prov.get_size("split_test");
  if (ds.split.validation + ds.split.test >= m) throw FormatError("dataset: split leaves no training samples");
  return ds;
}

inline SimulationDataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open dataset '" + path + "'");
  return read_dataset(is);
}

/// theta as one row per sample; u as one row per (sample, timestep).
inline void write_dataset_csv(const SimulationDataset& ds, const std::string& theta_path, const std::string& obs_path) {
  std::ofstream th(theta_path), ob(obs_path);
  if (!th || !ob) throw Error("cannot open CSV output");
  const auto& d = ds.data;
  th << "sample";
  for (std::size_t j = 0; j < d.dim(); ++j) th << ",theta_" << j;
  th << '\n' << std::setprecision(9);
  ob << "sample,step";
  for (std::size_t j = 0; j < d.sensors(); ++j) ob << ",sensor_" << j;
  ob << '\n' << std::setprecision(9);
  for (std::size_t i = 0; i < d.size(); ++i) {
    th << i;
    for (std::size_t j = 0; j < d.dim(); ++j) th << ',' << d.theta(i, j);
    th << '\n';
    for (std::size_t t = 0; t < d.steps(); ++t) {
      ob << i << ',' << t;
      for (std::size_t j = 0; j < d.sensors(); ++j) ob << ',' << d.obs(i, t, j);
      ob << '\n';
    }
  }
}

}  // namespace lfi::simulate
