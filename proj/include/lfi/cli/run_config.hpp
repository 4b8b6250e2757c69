#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lfi/core/error.hpp"
#include "lfi/core/key_value.hpp"
#include "lfi/simulate/dataset.hpp"
#include "lfi/train/model.hpp"
#include "lfi/train/trainer.hpp"

namespace lfi::cli {

struct KeySpec {
  const char* key;
  const char* fallback;  ///< nullptr: required
  const char* help;
};

// Every accepted key with its default. Order is the order of the resolved file.
inline const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      {"simulator", "groundwater", "groundwater | linear_gaussian"},
      {"seed", "1", "base seed for every random stream"},
      // grid
      {"grid_rows", "8", ""},
      {"grid_cols", "4", ""},
      {"cell_size", "100", "metres"},
      {"active_mask", "", "row-major 0/1 string; empty means all cells active"},
      {"sensors", "9, 14, 17, 22", "sensor cell indices"},
      {"dt", "20", "days"},
      {"steps", "25", "timesteps k"},
      // prior
      {"prior_variance", "1", ""},
      {"prior_length", "200", "metres"},
      // forward model
      {"specific_yield", "0.1", ""},
      {"initial_head", "20", "metres"},
      {"boundary_north", "fixed 20", "none | fixed <head>"},
      {"boundary_south", "fixed 15", "none | fixed <head>"},
      {"boundary_west", "none", "none | fixed <head>"},
      {"boundary_east", "none", "none | fixed <head>"},
      {"recharge", "0", "m/day"},
      {"wells", "1:100:0:3, 13:100:3:6, 26:100:6:9, 6:100:9:12, 18:100:12:15, 29:100:15:18, 11:100:18:21, 24:100:21:24, 3:100:24:27",
       "cell:rate:start:end, rate in m^3/day withdrawn on steps [start, end)"},
      {"picard_tolerance", "1e-8", "metres"},
      {"picard_max_iterations", "50", ""},
      // noise
      {"noise_sigma", "0.01", ""},
      {"noise_per_sensor", "", "optional per-sensor sigmas"},
      // linear-Gaussian simulator
      {"linear_dim", "4", "parameter dimension"},
      {"linear_design", nullptr, "row-major design matrix, required for linear_gaussian; empty means identity"},
      {"linear_prior_variance", "1", ""},
      {"linear_noise_variance", "0.01", ""},
      // dataset
      {"samples", nullptr, "number of simulated pairs M"},
      {"split_validation", "100", ""},
      {"split_test", "100", ""},
      // flow
      {"coupling_layers", "5", ""},
      {"spline_layers", "5", ""},
      {"subnet_hidden", "128, 128", ""},
      {"dropout", "0.5", "dropout rate in flow subnetworks"},
      {"clamp", "2", "soft clamp on coupling scales"},
      {"spline_bins", "16", ""},
      {"spline_bound", "3", ""},
      {"spline_min_width", "1e-3", ""},
      {"spline_min_height", "1e-3", ""},
      {"spline_min_derivative", "1e-3", ""},
      {"permutation_seed", "1", ""},
      {"flow_init_seed", "2", ""},
      // summary network
      {"conv_stages", "64:3:1, 128:3:1", "channels:kernel:stride per stage"},
      {"summary_features", "256", ""},
      {"summary_dropout", "0", ""},
      {"summary_init_seed", "3", ""},
      // training
      {"epochs", "4000", ""},
      {"batch_size", "120", ""},
      {"learning_rate", "1e-3", ""},
      {"decay_rate", "0.95", ""},
      {"max_decay_events", "100", ""},
      {"clip_norm", "10", ""},
      {"patience", "200", ""},
      {"shards", "4", "gradient shards per batch"},
      {"checkpoint_every", "0", "epochs between resume-state saves; 0 disables"},
      {"max_seconds", "0", "wall-clock training limit; 0 disables (a limit makes runs timing dependent)"},
      // inference
      {"posterior_samples", "2000", ""},
  };
  return specs;
}

/// Flat `key = value` run configuration. Unknown keys are rejected; defaults
/// fill everything else except required keys.
class RunConfig {
 public:
  static RunConfig parse(const std::string& text, const std::string& origin = "config") {
    RunConfig rc;
    const KeyValue given = KeyValue::parse(text, origin);
    std::set<std::string> known;
    for (const auto& s : key_specs()) known.insert(s.key);
    for (const auto& k : given.keys()) {
      if (!known.contains(k)) throw ConfigError(origin + ": unknown key '" + k + "'");
    }
    for (const auto& s : key_specs()) {
      if (given.has(s.key)) rc.kv_.set(s.key, given.get(s.key));
      else if (s.fallback) rc.kv_.set(s.key, s.fallback);
    }
    return rc;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path);
  }

  static RunConfig defaults() { return parse(""); }

  void set(const std::string& key, const std::string& value) {
    bool known = false;
    for (const auto& s : key_specs()) known = known || key == s.key;
    if (!known) throw ConfigError("unknown key '" + key + "'");
    kv_.set(key, value);
    // Keep the spec order in the resolved text.
    KeyValue ordered;
    for (const auto& s : key_specs())
      if (kv_.has(s.key)) ordered.set(s.key, kv_.get(s.key));
    kv_ = ordered;
  }

  [[nodiscard]] const KeyValue& values() const noexcept { return kv_; }

  /// Throws ConfigError naming the first missing key.
  void require(std::initializer_list<const char*> keys) const {
    for (const char* k : keys) {
      if (!kv_.has(k)) throw ConfigError("missing required key '" + std::string(k) + "'");
    }
  }

  [[nodiscard]] std::string resolved_text() const {
    return "# resolved configuration\n" + kv_.text();
  }

  void write_resolved(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw Error("cannot write '" + path + "'");
    os << resolved_text();
  }

  [[nodiscard]] std::uint64_t seed() const { return kv_.get_u64("seed"); }

  [[nodiscard]] simulate::GridSpec grid() const {
    simulate::GridSpec g;
    g.rows = kv_.get_size("grid_rows");
    g.cols = kv_.get_size("grid_cols");
    g.cell_size = kv_.get_double("cell_size");
    const std::string mask = kv_.get("active_mask");
    g.active.clear();
    for (char c : mask) {
      if (c == '0' || c == '1') g.active.push_back(c == '1');
      else if (c != ' ' && c != ',') throw ConfigError("active_mask: expected 0/1 characters");
    }
    g.sensors = kv_.get_sizes("sensors");
    g.dt = kv_.get_double("dt");
    g.steps = kv_.get_size("steps");
    g.validate();
    return g;
  }

  [[nodiscard]] simulate::GPPrior prior() const {
    simulate::GPPrior p{kv_.get_double("prior_variance"), kv_.get_double("prior_length")};
    p.validate();
    return p;
  }

  [[nodiscard]] simulate::ForwardConfig forward() const {
    simulate::ForwardConfig fc;
    fc.specific_yield = kv_.get_double("specific_yield");
    fc.initial_head = kv_.get_double("initial_head");
    fc.north = edge("boundary_north");
    fc.south = edge("boundary_south");
    fc.west = edge("boundary_west");
    fc.east = edge("boundary_east");
    fc.recharge = kv_.get_double("recharge");
    fc.wells.clear();
    for (const auto& item : kv_.get_list("wells")) {
      std::vector<std::string> parts;
      std::stringstream ss(item);
      for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
      if (parts.size() != 4) throw ConfigError("wells: '" + item + "' is not cell:rate:start:end");
      fc.wells.push_back({static_cast<std::size_t>(KeyValue::to_u64("wells", parts[0])), KeyValue::to_double("wells", parts[1]),
                          static_cast<std::size_t>(KeyValue::to_u64("wells", parts[2])),
                          static_cast<std::size_t>(KeyValue::to_u64("wells", parts[3]))});
    }
    fc.picard_tolerance = kv_.get_double("picard_tolerance");
    fc.picard_max_iterations = kv_.get_size("picard_max_iterations");
    fc.validate(grid());
    return fc;
  }

  [[nodiscard]] simulate::NoiseModel noise() const {
    simulate::NoiseModel n{kv_.get_double("noise_sigma"), kv_.get_doubles("noise_per_sensor")};
    return n;
  }

  [[nodiscard]] simulate::LinearGaussianModel linear_model() const {
    const std::size_t n = kv_.get_size("linear_dim");
    if (n == 0) throw ConfigError("linear_dim must be positive");
    const std::vector<double> d = kv_.get_doubles("linear_design");
    Eigen::MatrixXd g;
    if (d.empty()) {
      g = Eigen::MatrixXd::Identity(n, n);
    } else {
      if (d.size() % n != 0) throw ConfigError("linear_design: " + std::to_string(d.size()) + " values do not fill rows of " + std::to_string(n));
      g.resize(static_cast<Eigen::Index>(d.size() / n), n);
      for (std::size_t i = 0; i < d.size(); ++i) g(i / n, i % n) = d[i];
    }
    const Eigen::MatrixXd prior = kv_.get_double("linear_prior_variance") * Eigen::MatrixXd::Identity(n, n);
    return {g, prior, kv_.get_double("linear_noise_variance")};
  }

  [[nodiscard]] bool linear() const {
    const std::string& s = kv_.get("simulator");
    if (s == "linear_gaussian") return true;
    if (s == "groundwater") return false;
    throw ConfigError("simulator: expected groundwater or linear_gaussian, got '" + s + "'");
  }

  [[nodiscard]] simulate::Simulator simulator() const {
    if (linear()) return simulate::linear_simulator(linear_model());
    return simulate::groundwater_simulator(grid(), prior(), forward(), noise());
  }

  [[nodiscard]] simulate::Split split() const {
    return {kv_.get_size("split_validation"), kv_.get_size("split_test")};
  }

  /// Architecture for data with N parameters and N_u sensors.
  [[nodiscard]] train::ModelConfig model(std::size_t dim, std::size_t sensors) const {
    train::ModelConfig c;
    c.flow.dim = dim;
    c.flow.coupling_layers = kv_.get_size("coupling_layers");
    c.flow.spline_layers = kv_.get_size("spline_layers");
    c.flow.subnet.hidden = kv_.get_sizes("subnet_hidden");
    c.flow.subnet.dropout = rate("dropout");
    c.flow.clamp = kv_.get_double("clamp");
    c.flow.spline.bins = kv_.get_size("spline_bins");
    c.flow.spline.bound = kv_.get_double("spline_bound");
    c.flow.spline.min_width = kv_.get_double("spline_min_width");
    c.flow.spline.min_height = kv_.get_double("spline_min_height");
    c.flow.spline.min_derivative = kv_.get_double("spline_min_derivative");
    c.flow.permutation_seed = kv_.get_u64("permutation_seed");
    c.flow.init_seed = kv_.get_u64("flow_init_seed");
    c.summary.sensors = sensors;
    c.summary.stages = train::ModelConfig::parse_stages(kv_.get_list("conv_stages"));
    c.summary.features = kv_.get_size("summary_features");
    c.summary.dropout = rate("summary_dropout");
    c.summary.init_seed = kv_.get_u64("summary_init_seed");
    return c;
  }

  [[nodiscard]] train::TrainingConfig training() const {
    train::TrainingConfig t;
    t.epochs = kv_.get_size("epochs");
    t.batch_size = kv_.get_size("batch_size");
    t.learning_rate = kv_.get_double("learning_rate");
    t.decay_rate = kv_.get_double("decay_rate");
    t.max_decay_events = kv_.get_size("max_decay_events");
    t.clip_norm = kv_.get_double("clip_norm");
    t.patience = kv_.get_size("patience");
    t.shards = kv_.get_size("shards");
    t.checkpoint_every = kv_.get_size("checkpoint_every");
    t.max_seconds = kv_.get_double("max_seconds");
    t.seed = derive_seed(seed(), {3});
    t.validate();
    return t;
  }

 private:
  [[nodiscard]] simulate::Edge edge(const std::string& key) const {
    const std::string& v = kv_.get(key);
    if (v == "none") return simulate::Edge::no_flux();
    if (v.rfind("fixed ", 0) == 0) return simulate::Edge::fixed(KeyValue::to_double(key, v.substr(6)));
    throw ConfigError(key + ": expected 'none' or 'fixed <head>', got '" + v + "'");
  }

  [[nodiscard]] double rate(const std::string& key) const {
    const double r = kv_.get_double(key);
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError(key + ": dropout rate must be in [0, 1)");
    return r;
  }

  KeyValue kv_;
};

}  // namespace lfi::cli
