#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lfi/cli/run_config.hpp"
#include "lfi/cli/selfcheck.hpp"
#include "lfi/diagnose/metrics.hpp"

namespace lfi::cli {

struct CommonOptions {
  std::string config;  ///< empty: defaults only
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::string out = ".";
};

struct TrainOptions {
  std::string data;
  bool resume = false;
};

/// Observation source for infer and predict: a k x N_u CSV, or a test-split row of a dataset.
struct ObservationOptions {
  std::string obs_csv;
  std::string data;
  std::optional<std::size_t> index;
  std::optional<std::size_t> steps;  ///< keep only the first `steps` timesteps
};

struct InferOptions {
  std::string model;
  ObservationOptions obs;
  std::optional<std::size_t> samples;
};

struct PredictOptions {
  std::string samples;  ///< NFPS file; alternatively a model plus observations
  std::string model;
  ObservationOptions obs;
  std::optional<std::size_t> draws;
};

struct EvaluateOptions {
  std::string samples;
  std::string reference_csv;
  std::string data;
  std::optional<std::size_t> index;
};

inline constexpr const char* kResolvedName = "resolved.cfg";

// ------------------------------------------------------------------ files

inline RunConfig load_config(const CommonOptions& o) {
  RunConfig rc = o.config.empty() ? RunConfig::defaults() : RunConfig::load(o.config);
  if (o.seed) rc.set("seed", std::to_string(*o.seed));
  return rc;
}

inline std::filesystem::path prepare_out(const CommonOptions& o, const RunConfig& rc) {
  const std::filesystem::path dir(o.out);
  std::filesystem::create_directories(dir);
  rc.write_resolved((dir / kResolvedName).string());
  return dir;
}

/// Numeric CSV rows. Blank and '#' lines are skipped; a first line that does
/// not parse as numbers is taken as a header.
inline std::vector<std::vector<double>> read_csv_rows(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    bool ok = true;
    for (std::string cell; std::getline(ss, cell, ',');) {
      try {
        row.push_back(KeyValue::to_double("csv", cell));
      } catch (const ConfigError&) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      if (first) {
        first = false;
        continue;
      }
      throw FormatError(path + ":" + std::to_string(lineno) + ": non-numeric value");
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(rows.front().size()) +
                        " columns, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path + ": no numeric rows");
  return rows;
}

// Posterior samples: "NFPS", u16 version, u32 n, u32 N, then n*N f64 row-major.
inline void write_samples(const std::string& path, const Tensor& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  io::write_magic(os, "NFPS");
  io::write_u16(os, 1);
  io::write_u32(os, static_cast<std::uint32_t>(s.rows()));
  io::write_u32(os, static_cast<std::uint32_t>(s.cols()));
  for (double v : s.values()) io::write_f64(os, v);
  if (!os) throw Error("write to '" + path + "' failed");
}

inline Tensor read_samples(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open samples '" + path + "'");
  io::expect_magic(is, "NFPS", "posterior samples");
  if (io::read_u16(is) != 1) throw FormatError("posterior samples: unsupported version");
  const std::size_t n = io::read_u32(is), dim = io::read_u32(is);
  if (n == 0 || dim == 0 || static_cast<double>(n) * dim > 1e9) throw FormatError("posterior samples: bad header");
  Tensor s({n, dim});
  for (double& v : s.values()) v = io::read_f64(is);
  return s;
}

inline void write_samples_csv(const std::string& path, const Tensor& s) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  for (std::size_t j = 0; j < s.cols(); ++j) os << (j ? "," : "") << "theta" << j;
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t j = 0; j < s.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", s(i, j));
      os << (j ? "," : "") << buf;
    }
    os << '\n';
  }
}

/// Test-split row `index` of a dataset: theta (N) and observations (k, N_u).
inline std::pair<std::vector<double>, Tensor> dataset_case(const std::string& path, std::size_t index) {
  const simulate::SimulationDataset ds = simulate::read_dataset(path);
  const train::Pairs test = ds.test();
  if (index >= test.size()) {
    throw ConfigError("index " + std::to_string(index) + " is outside the test split of " +
                      std::to_string(test.size()) + " cases");
  }
  Tensor obs({test.steps(), test.sensors()});
  std::copy(test.obs.data() + index * obs.size(), test.obs.data() + (index + 1) * obs.size(), obs.data());
  const auto row = test.theta.row_values(index);
  return {std::vector<double>(row.begin(), row.end()), obs};
}

inline Tensor load_observations(const ObservationOptions& o) {
  Tensor obs;
  if (!o.obs_csv.empty()) {
    if (!o.data.empty()) throw ConfigError("give either --obs or --data, not both");
    const auto rows = read_csv_rows(o.obs_csv);
    obs = Tensor({rows.size(), rows.front().size()});
    for (std::size_t t = 0; t < rows.size(); ++t)
      for (std::size_t j = 0; j < rows[t].size(); ++j) obs(t, j) = rows[t][j];
  } else if (!o.data.empty()) {
    if (!o.index) throw ConfigError("--data needs --index");
    obs = dataset_case(o.data, *o.index).second;
  } else {
    throw ConfigError("missing observations: give --obs FILE or --data FILE --index I");
  }
  if (o.steps) {
    if (*o.steps == 0 || *o.steps > obs.rows()) {
      throw ConfigError("--steps " + std::to_string(*o.steps) + " must be in [1, " + std::to_string(obs.rows()) + "]");
    }
    Tensor cut({*o.steps, obs.cols()});
    std::copy(obs.data(), obs.data() + cut.size(), cut.data());
    obs = cut;
  }
  return obs;
}

// --------------------------------------------------------------- commands

inline void cmd_generate(const CommonOptions& o, std::ostream& log = std::cout) {
  RunConfig rc = load_config(o);
  rc.require({"samples"});
  if (rc.linear()) rc.require({"linear_design"});
  const std::size_t m = rc.values().get_size("samples");
  const simulate::Split split = rc.split();
  if (split.validation + split.test >= m) throw ConfigError("split_validation + split_test must be below samples");
  const simulate::Simulator sim = rc.simulator();
  const auto dir = prepare_out(o, rc);

  simulate::SimulationDataset ds = simulate::generate(sim, m, derive_seed(rc.seed(), {1}), o.workers);
  ds.split = split;
  ds.provenance = rc.values().text();
  simulate::write_dataset((dir / "dataset.lfi").string(), ds);
  log << "M=" << ds.size() << " N=" << ds.data.dim() << " k=" << ds.data.steps() << " N_u=" << ds.data.sensors()
      << " seed=" << rc.seed() << " resampled=" << ds.resampled << "\n";
}

inline void cmd_train(const CommonOptions& o, const TrainOptions& t, std::ostream& log = std::cout) {
  if (t.data.empty()) throw ConfigError("train needs --data");
  const RunConfig rc = load_config(o);
  const simulate::SimulationDataset ds = simulate::read_dataset(t.data);
  const auto dir = prepare_out(o, rc);

  train::TrainingConfig tc = rc.training();
  tc.workers = o.workers;
  tc.state_path = (dir / "state.nfts").string();
  tc.on_epoch = [&log](std::size_t e, double tl, double vl, double lr) {
    if (e % 10 == 0) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "epoch %zu train %.4f val %.4f lr %.3g\n", e, tl, vl, lr);
      log << buf << std::flush;
    }
  };
  std::optional<train::Trainer> trainer;
  if (t.resume) {
    std::ifstream is(tc.state_path, std::ios::binary);
    if (!is) throw ConfigError("--resume: no training state at '" + tc.state_path + "'");
    trainer.emplace(train::Trainer::resume(is, tc));
    log << "resumed at epoch " << trainer->epochs_done() << "\n";
  } else {
    trainer.emplace(train::PosteriorModel(rc.model(ds.data.dim(), ds.data.sensors())), tc);
  }
  trainer->run(ds.train(), ds.validation());
  const auto& h = trainer->history();
  trainer->best_model().save((dir / "model.nfck").string());
  h.write_csv((dir / "history.csv").string());
  log << "epochs=" << trainer->epochs_done() << " best_epoch=" << h.best_epoch << " best_val=" << h.best_val
      << (h.stopped_early ? " (early stop)" : "") << "\n";
}

/// Loads the model, draws the samples and writes samples.csv, samples.bin and summary.csv.
inline Tensor cmd_infer(const CommonOptions& o, const InferOptions& in, std::ostream& log = std::cout) {
  if (in.model.empty()) throw ConfigError("infer needs --model");
  RunConfig rc = load_config(o);
  const std::size_t n = in.samples ? *in.samples : rc.values().get_size("posterior_samples");
  if (n == 0) throw ConfigError("sample count must be positive");
  if (in.samples) rc.set("posterior_samples", std::to_string(n));
  const Tensor obs = load_observations(in.obs);
  const train::PosteriorModel model = train::PosteriorModel::load(in.model);
  const auto dir = prepare_out(o, rc);

  Rng rng(derive_seed(rc.seed(), {4}));
  const auto start = std::chrono::steady_clock::now();
  const Tensor s = model.sample(obs, n, rng);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  write_samples((dir / "samples.bin").string(), s);
  write_samples_csv((dir / "samples.csv").string(), s);
  std::ofstream summary(dir / "summary.csv");
  diagnose::PosteriorSamples(s).write_summary_csv(summary);
  char buf[128];
  std::snprintf(buf, sizeof buf, "drew %zu samples of dimension %zu from k=%zu steps in %.1f ms\n", n, s.cols(),
                obs.rows(), ms);
  log << buf;
  return s;
}

inline void cmd_predict(const CommonOptions& o, const PredictOptions& p, std::ostream& log = std::cout) {
  RunConfig rc = load_config(o);
  if (rc.linear()) throw ConfigError("predict needs simulator = groundwater");
  const simulate::GroundwaterSolver solver(rc.grid(), rc.forward());
  Tensor samples;
  if (!p.samples.empty()) {
    if (!p.model.empty()) throw ConfigError("give either --samples or --model, not both");
    samples = read_samples(p.samples);
  } else if (!p.model.empty()) {
    const Tensor obs = load_observations(p.obs);
    const train::PosteriorModel model = train::PosteriorModel::load(p.model);
    Rng rng(derive_seed(rc.seed(), {4}));
    samples = model.sample(obs, rc.values().get_size("posterior_samples"), rng);
  } else {
    throw ConfigError("predict needs --samples or --model");
  }
  if (p.draws) {
    if (*p.draws == 0 || *p.draws > samples.rows()) throw ConfigError("--draws must be in [1, sample count]");
    Tensor head({*p.draws, samples.cols()});
    std::copy(samples.data(), samples.data() + head.size(), head.data());
    samples = head;
  }
  const auto dir = prepare_out(o, rc);
  const diagnose::Predictive pred = diagnose::posterior_predictive(samples, solver, o.workers);
  std::ofstream os(dir / "bands.csv");
  pred.write_bands_csv(os);
  log << "predictive bands from " << samples.rows() << " draws over " << pred.mean.rows() << " steps and "
      << pred.mean.cols() << " sensors\n";
}

inline diagnose::MetricsReport cmd_evaluate(const CommonOptions& o, const EvaluateOptions& e,
                                            std::ostream& log = std::cout) {
  if (e.samples.empty()) throw ConfigError("evaluate needs --samples");
  const RunConfig rc = load_config(o);
  std::vector<double> ref;
  if (!e.reference_csv.empty()) {
    for (const auto& row : read_csv_rows(e.reference_csv)) ref.insert(ref.end(), row.begin(), row.end());
  } else if (!e.data.empty()) {
    if (!e.index) throw ConfigError("--data needs --index");
    ref = dataset_case(e.data, *e.index).first;
  } else {
    throw ConfigError("evaluate needs --reference FILE or --data FILE --index I");
  }
  const diagnose::PosteriorSamples s(read_samples(e.samples));
  if (ref.size() != s.dim()) {
    throw ShapeError("reference has " + std::to_string(ref.size()) + " values, samples have dimension " +
                     std::to_string(s.dim()));
  }
  const auto dir = prepare_out(o, rc);
  const diagnose::MetricsReport report = diagnose::MetricsReport::compute(s, ref);
  std::ofstream csv(dir / "metrics.csv"), txt(dir / "metrics.txt"), cov(dir / "coverage.csv");
  report.write_csv(csv);
  report.write_table(txt);
  report.write_coverage_csv(cov, s, ref);
  report.write_table(log);
  return report;
}

/// Returns true when every check passes.
inline bool cmd_selfcheck(const SelfCheckOptions& opt, std::ostream& log = std::cout) {
  bool all = true;
  char buf[200];
  for (const CheckResult& r : run_selfcheck(opt)) {
    all = all && r.passed();
    std::snprintf(buf, sizeof buf, "%s  %-50s max error %.3e (tolerance %.0e)\n", r.passed() ? "PASS" : "FAIL",
                  r.name.c_str(), r.max_error, r.tolerance);
    log << buf;
  }
  return all;
}

/// Maps library errors to exit codes: 2 for usage, configuration and file
/// format problems, 1 for numerical and other runtime failures.
template <typename F>
int run_guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace lfi::cli
