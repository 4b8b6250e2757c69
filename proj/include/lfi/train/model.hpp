#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lfi/core/binary_io.hpp"
#include "lfi/core/error.hpp"
#include "lfi/core/key_value.hpp"
#include "lfi/core/ops.hpp"
#include "lfi/core/rng.hpp"
#include "lfi/core/tape.hpp"
#include "lfi/flow/conditional_flow.hpp"
#include "lfi/summary/summary_network.hpp"
#include "lfi/train/pairs.hpp"

namespace lfi::train {

struct ModelConfig {
  flow::FlowConfig flow;  ///< flow.features is taken from summary.features
  summary::SummaryConfig summary;

  /// Architecture as `key = value` text; stored in checkpoints.
  [[nodiscard]] std::string describe() const {
    KeyValue kv;
    kv.set("dim", std::to_string(flow.dim));
    kv.set("coupling_layers", std::to_string(flow.coupling_layers));
    kv.set("spline_layers", std::to_string(flow.spline_layers));
    kv.set("subnet_hidden", KeyValue::join(flow.subnet.hidden));
    kv.set("subnet_dropout", KeyValue::format(flow.subnet.dropout));
    kv.set("clamp", KeyValue::format(flow.clamp));
    kv.set("spline_bins", std::to_string(flow.spline.bins));
    kv.set("spline_bound", KeyValue::format(flow.spline.bound));
    kv.set("spline_min_width", KeyValue::format(flow.spline.min_width));
    kv.set("spline_min_height", KeyValue::format(flow.spline.min_height));
    kv.set("spline_min_derivative", KeyValue::format(flow.spline.min_derivative));
    kv.set("permutation_seed", std::to_string(flow.permutation_seed));
    kv.set("flow_init_seed", std::to_string(flow.init_seed));
    kv.set("sensors", std::to_string(summary.sensors));
    std::vector<std::string> stages;
    for (const auto& s : summary.stages) {
      stages.push_back(std::to_string(s.channels) + ":" + std::to_string(s.kernel) + ":" + std::to_string(s.stride));
    }
    std::string joined;
    for (std::size_t i = 0; i < stages.size(); ++i) joined += (i ? ", " : "") + stages[i];
    kv.set("conv_stages", joined);
    kv.set("summary_features", std::to_string(summary.features));
    kv.set("summary_dropout", KeyValue::format(summary.dropout));
    kv.set("summary_init_seed", std::to_string(summary.init_seed));
    return kv.text();
  }

  static ModelConfig from_description(const std::string& text) {
    const KeyValue kv = KeyValue::parse(text, "model descriptor");
    ModelConfig c;
    c.flow.dim = kv.get_size("dim");
    c.flow.coupling_layers = kv.get_size("coupling_layers");
    c.flow.spline_layers = kv.get_size("spline_layers");
    c.flow.subnet.hidden = kv.get_sizes("subnet_hidden");
    c.flow.subnet.dropout = kv.get_double("subnet_dropout");
    c.flow.clamp = kv.get_double("clamp");
    c.flow.spline.bins = kv.get_size("spline_bins");
    c.flow.spline.bound = kv.get_double("spline_bound");
    c.flow.spline.min_width = kv.get_double("spline_min_width");
    c.flow.spline.min_height = kv.get_double("spline_min_height");
    c.flow.spline.min_derivative = kv.get_double("spline_min_derivative");
    c.flow.permutation_seed = kv.get_u64("permutation_seed");
    c.flow.init_seed = kv.get_u64("flow_init_seed");
    c.summary.sensors = kv.get_size("sensors");
    c.summary.stages = parse_stages(kv.get_list("conv_stages"));
    c.summary.features = kv.get_size("summary_features");
    c.summary.dropout = kv.get_double("summary_dropout");
    c.summary.init_seed = kv.get_u64("summary_init_seed");
    return c;
  }

  /// "channels:kernel:stride" entries.
  static std::vector<summary::ConvStage> parse_stages(const std::vector<std::string>& items) {
    std::vector<summary::ConvStage> out;
    for (const auto& item : items) {
      std::size_t a = item.find(':'), b = item.rfind(':');
      if (a == std::string::npos || a == b) {
        throw ConfigError("conv stage '" + item + "': expected channels:kernel:stride");
      }
      out.push_back({static_cast<std::size_t>(KeyValue::to_u64("conv_stages", item.substr(0, a))),
                     static_cast<std::size_t>(KeyValue::to_u64("conv_stages", item.substr(a + 1, b - a - 1))),
                     static_cast<std::size_t>(KeyValue::to_u64("conv_stages", item.substr(b + 1)))});
    }
    return out;
  }
};

/// Per-column affine standardisation (x - mean) / std.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  [[nodiscard]] std::size_t size() const noexcept { return mean.size(); }

  /// Statistics over all leading positions of a tensor whose last axis has `cols` entries.
  static Standardizer fit(const Tensor& t) {
    const std::size_t cols = t.shape().back();
    const std::size_t n = t.size() / cols;
    Standardizer s{std::vector<double>(cols, 0.0), std::vector<double>(cols, 0.0)};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cols; ++c) s.mean[c] += t[i * cols + c];
    for (double& m : s.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cols; ++c) s.std[c] += std::pow(t[i * cols + c] - s.mean[c], 2);
    for (double& v : s.std) {
      v = n > 1 ? std::sqrt(v / static_cast<double>(n - 1)) : 0.0;
      if (!(v > 1e-12)) v = 1.0;  // constant column: centre only
    }
    return s;
  }

  static Standardizer identity(std::size_t cols) {
    return {std::vector<double>(cols, 0.0), std::vector<double>(cols, 1.0)};
  }

  [[nodiscard]] Tensor apply(const Tensor& t) const {
    check(t);
    Tensor out = t;
    const std::size_t cols = size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % cols]) / std[i % cols];
    return out;
  }

  [[nodiscard]] Tensor undo(const Tensor& t) const {
    check(t);
    Tensor out = t;
    const std::size_t cols = size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * std[i % cols] + mean[i % cols];
    return out;
  }

  [[nodiscard]] double log_scale() const {
    double s = 0.0;
    for (double v : std) s += std::log(v);
    return s;
  }

 private:
  void check(const Tensor& t) const {
    if (t.empty() || t.shape().back() != size()) {
      throw ShapeError("standardizer: expected last axis " + std::to_string(size()) + ", got " +
                       shape_string(t.shape()));
    }
  }
};

/// Conditional flow plus summary network, with the standardisation statistics
/// of the training set. The flow models standardised theta; densities in the
/// original units include the standardisation Jacobian.
class PosteriorModel {
 public:
  explicit PosteriorModel(ModelConfig cfg) : cfg_(normalise(std::move(cfg))), summary_(store_, cfg_.summary), flow_(store_, cfg_.flow) {
    theta_scale_ = Standardizer::identity(cfg_.flow.dim);
    obs_scale_ = Standardizer::identity(cfg_.summary.sensors);
  }

  [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] ParameterStore& params() noexcept { return store_; }
  [[nodiscard]] const ParameterStore& params() const noexcept { return store_; }
  [[nodiscard]] const flow::ConditionalFlow& flow() const noexcept { return flow_; }
  [[nodiscard]] const summary::SummaryNetwork& summary() const noexcept { return summary_; }
  [[nodiscard]] std::size_t dim() const noexcept { return cfg_.flow.dim; }
  [[nodiscard]] std::size_t sensors() const noexcept { return cfg_.summary.sensors; }
  [[nodiscard]] std::size_t min_steps() const { return summary_.min_steps(); }
  [[nodiscard]] const Standardizer& theta_scale() const noexcept { return theta_scale_; }
  [[nodiscard]] const Standardizer& obs_scale() const noexcept { return obs_scale_; }

  /// Whether standardisation has been fitted or loaded; sampling requires it.
  [[nodiscard]] bool ready() const noexcept { return ready_; }

  void fit_standardization(const Pairs& train) {
    train.validate();
    if (train.dim() != dim() || train.sensors() != sensors()) {
      throw ShapeError("model: data has N = " + std::to_string(train.dim()) + ", N_u = " +
                       std::to_string(train.sensors()) + " but model expects N = " + std::to_string(dim()) +
                       ", N_u = " + std::to_string(sensors()));
    }
    theta_scale_ = Standardizer::fit(train.theta);
    obs_scale_ = Standardizer::fit(train.obs);
    ready_ = true;
  }

  void set_standardization(Standardizer theta, Standardizer obs) {
    if (theta.size() != dim() || obs.size() != sensors()) throw ShapeError("model: standardizer size mismatch");
    theta_scale_ = std::move(theta);
    obs_scale_ = std::move(obs);
    ready_ = true;
  }

  /// obs (B, k, N_u) or (k, N_u) in original units -> features (B, D).
  Var features(Tape& tape, const Tensor& obs) const {
    Tensor u = obs.rank() == 2 ? obs.reshaped({1, obs.rows(), obs.cols()}) : obs;
    if (u.rank() != 3) throw ShapeError("model: observations must be (k, N_u) or (B, k, N_u), got " + shape_string(obs.shape()));
    if (u.shape()[2] != sensors()) {
      throw ShapeError("model: trained for " + std::to_string(sensors()) + " sensors, observations have " +
                       std::to_string(u.shape()[2]));
    }
    return summary_.summarize(store_, tape.constant(obs_scale_.apply(u)));
  }

  /// theta (B, N) in original units -> latent z and flow log-det (standardised space).
  flow::ConditionalFlow::Output encode(Tape& tape, const Tensor& theta, Var features) const {
    return flow_.forward(store_, tape.constant(theta_scale_.apply(theta)), features);
  }

  /// log q(theta | obs) per row in original units: theta (B, N), obs (B, k, N_u) or a single (k, N_u).
  [[nodiscard]] Tensor log_density(const Tensor& theta, const Tensor& obs) const {
    Tape tape(Mode::eval, 0, false);
    const auto out = encode(tape, theta, features(tape, obs));
    Tensor lp = flow::latent_logprob(out.value.value());
    const double shift = theta_scale_.log_scale();
    for (std::size_t r = 0; r < lp.size(); ++r) lp[r] += out.logdet.value()[r] - shift;
    return lp;
  }

  /// n posterior draws (n, N) in original units for one observation set (k, N_u).
  [[nodiscard]] Tensor sample(const Tensor& obs, std::size_t n, Rng& rng, std::size_t chunk = 250) const {
    if (!ready_) throw ConfigError("model: not trained or loaded; standardisation statistics are missing");
    if (n == 0) throw ConfigError("model: sample count must be positive");
    if (obs.rank() != 2) throw ShapeError("model: sample expects one (k, N_u) observation set, got " + shape_string(obs.shape()));
    Tensor z({n, dim()});
    for (double& v : z.values()) v = rng.normal();
    Tensor out({n, dim()});
    Tape feature_tape(Mode::eval, 0, false);
    const Tensor feats = features(feature_tape, obs).value();
    for (std::size_t begin = 0; begin < n; begin += chunk) {
      const std::size_t end = std::min(n, begin + chunk);
      Tape tape(Mode::eval, 0, false);
      Tensor zc({end - begin, dim()});
      std::copy(z.data() + begin * dim(), z.data() + end * dim(), zc.data());
      const Tensor theta = flow_.inverse(store_, tape.constant(std::move(zc)), tape.constant(feats)).value.value();
      const Tensor raw = theta_scale_.undo(theta);
      std::copy(raw.data(), raw.data() + raw.size(), out.data() + begin * dim());
    }
    return out;
  }

  // Checkpoint: "NFCK", u16 version, descriptor text, standardisation, parameters.
  static constexpr std::uint16_t kCheckpointVersion = 1;

  void save(std::ostream& os) const {
    io::write_magic(os, "NFCK");
    io::write_u16(os, kCheckpointVersion);
    io::write_string(os, cfg_.describe());
    for (const Standardizer* s : {&theta_scale_, &obs_scale_}) {
      io::write_u32(os, static_cast<std::uint32_t>(s->size()));
      for (double v : s->mean) io::write_f64(os, v);
      for (double v : s->std) io::write_f64(os, v);
    }
    io::write_u64(os, store_.scalar_count());
    for (const Tensor& t : store_.values())
      for (double v : t.values()) io::write_f64(os, v);
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    save(os);
    if (!os) throw Error("write to '" + path + "' failed");
  }

  static PosteriorModel load(std::istream& is) {
    io::expect_magic(is, "NFCK", "checkpoint");
    const std::uint16_t version = io::read_u16(is);
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    PosteriorModel m(ModelConfig::from_description(io::read_string(is)));
    Standardizer scales[2];
    for (Standardizer& s : scales) {
      const std::uint32_t n = io::read_u32(is);
      s.mean.resize(n);
      s.std.resize(n);
      for (double& v : s.mean) v = io::read_f64(is);
      for (double& v : s.std) v = io::read_f64(is);
    }
    m.set_standardization(std::move(scales[0]), std::move(scales[1]));
    const std::uint64_t count = io::read_u64(is);
    if (count != m.store_.scalar_count()) {
      throw FormatError("checkpoint: " + std::to_string(count) + " parameters stored, architecture has " +
                        std::to_string(m.store_.scalar_count()));
    }
    for (Tensor& t : m.store_.values())
      for (double& v : t.values()) v = io::read_f64(is);
    return m;
  }

  static PosteriorModel load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint '" + path + "'");
    return load(is);
  }

 private:
  static ModelConfig normalise(ModelConfig cfg) {
    cfg.flow.features = cfg.summary.features;
    return cfg;
  }

  ModelConfig cfg_;
  ParameterStore store_;
  summary::SummaryNetwork summary_;
  flow::ConditionalFlow flow_;
  Standardizer theta_scale_;
  Standardizer obs_scale_;
  bool ready_ = false;
};

}  // namespace lfi::train
