#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "lfi/core/binary_io.hpp"
#include "lfi/core/error.hpp"
#include "lfi/core/ops.hpp"
#include "lfi/core/rng.hpp"
#include "lfi/core/tape.hpp"
#include "lfi/train/adam.hpp"
#include "lfi/train/model.hpp"
#include "lfi/train/pairs.hpp"

namespace lfi::train {

/// Per-row loss terms 0.5 |z|^2 - logdet, shape (B, 1).
inline Var joint_loss_terms(Tape& tape, const PosteriorModel& model, const Tensor& theta, const Tensor& obs) {
  const auto out = model.encode(tape, theta, model.features(tape, obs));
  return ops::sub(ops::scale(ops::sum_cols(ops::square(out.value)), 0.5), out.logdet);
}

namespace detail {

inline std::string offending_sample(const PosteriorModel& model, const Tensor& theta, const Tensor& obs) {
  for (std::size_t i = 0; i < theta.rows(); ++i) {
    const std::size_t row[] = {i};
    try {
      Tape tape(Mode::eval, 0, false);
      const Tensor v = joint_loss_terms(tape, model, Pairs::gather(theta, row), Pairs::gather(obs, row)).value();
      if (!v.all_finite()) return "sample " + std::to_string(i);
    } catch (const NumericalError&) {
      return "sample " + std::to_string(i);
    }
  }
  return "a sample under dropout (not reproducible in eval mode)";
}

}  // namespace detail

/// Mean joint loss over a batch; `scale` replaces 1/B when the batch is one shard of a larger one.
inline Var joint_loss(Tape& tape, const PosteriorModel& model, const Tensor& theta, const Tensor& obs,
                      double scale = 0.0) {
  Var terms;
  try {
    terms = joint_loss_terms(tape, model, theta, obs);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("joint loss: ") + e.what() + " at " + detail::offending_sample(model, theta, obs));
  }
  const Tensor& v = terms.value();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw NumericalError("joint loss: non-finite value at sample " + std::to_string(i));
  }
  if (scale == 0.0) scale = 1.0 / static_cast<double>(v.size());
  return ops::scale(ops::sum(terms), scale);
}

struct TrainingConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 120;
  double learning_rate = 1e-3;
  double decay_rate = 0.95;
  std::size_t max_decay_events = 100;  ///< staircase steps spread evenly over `epochs`
  double clip_norm = 10.0;             ///< global gradient norm; 0 disables
  std::size_t patience = 200;          ///< epochs without validation improvement; 0 disables
  std::size_t shards = 4;              ///< fixed gradient shards per batch; results depend on this, not on workers
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  ///< epochs between resume-state saves; 0 disables
  std::string state_path;
  double max_seconds = 0.0;  ///< wall-clock stop; makes the run timing dependent, 0 disables
  std::function<void(std::size_t epoch, double train_loss, double val_loss, double lr)> on_epoch;

  void validate() const {
    if (epochs == 0) throw ConfigError("training: epochs must be positive");
    if (batch_size == 0) throw ConfigError("training: batch_size must be positive");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("training: learning_rate must be in (0, 1]");
    if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("training: decay_rate must be in (0, 1]");
    if (shards == 0 || workers == 0) throw ConfigError("training: shards and workers must be positive");
    if (clip_norm < 0.0) throw ConfigError("training: clip_norm must be non-negative");
  }
};

/// Learning rate after the staircase decay events that precede `epoch`.
inline double learning_rate_at(const TrainingConfig& cfg, std::size_t epoch) {
  const std::size_t events = std::max<std::size_t>(1, std::min(cfg.max_decay_events, cfg.epochs));
  const std::size_t interval = (cfg.epochs + events - 1) / events;
  const std::size_t j = std::min(epoch / interval, cfg.max_decay_events);
  return cfg.learning_rate * std::pow(cfg.decay_rate, static_cast<double>(j));
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;  ///< cumulative wall time
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  bool stopped_early = false;

  [[nodiscard]] std::size_t size() const noexcept { return epochs.size(); }

  void write_csv(std::ostream& os) const {
    os << "epoch,train_loss,val_loss,lr,seconds\n";
    char buf[160];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.3f\n", e.epoch, e.train_loss, e.val_loss, e.lr, e.seconds);
      os << buf;
    }
  }

  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    write_csv(os);
  }
};

/// Mean joint loss over a data set in eval mode (deterministic).
inline double evaluate_loss(const PosteriorModel& model, const Pairs& data, std::size_t chunk = 500) {
  double total = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const Pairs part = data.slice(begin, std::min(data.size(), begin + chunk));
    Tape tape(Mode::eval, 0, false);
    const Tensor v = joint_loss_terms(tape, model, part.theta, part.obs).value();
    for (double x : v.values()) total += x;
  }
  return total / static_cast<double>(data.size());
}

/// Mini-batch Adam on the joint loss with best-validation retention and early stopping.
class Trainer {
 public:
  Trainer(PosteriorModel model, TrainingConfig cfg) : model_(std::move(model)), cfg_(std::move(cfg)) {
    cfg_.validate();
    adam_ = Adam(model_.params());
    best_ = model_.params().values();
  }

  [[nodiscard]] PosteriorModel& model() noexcept { return model_; }
  [[nodiscard]] const TrainingHistory& history() const noexcept { return history_; }
  [[nodiscard]] std::size_t epochs_done() const noexcept { return epoch_; }
  [[nodiscard]] TrainingConfig& config() noexcept { return cfg_; }

  /// Runs the remaining epochs, then leaves the best-validation parameters in the model.
  const TrainingHistory& run(const Pairs& train, const Pairs& val) {
    train.validate();
    val.validate();
    if (train.size() == 0 || val.size() == 0) throw ConfigError("training: empty train or validation split");
    if (cfg_.batch_size > train.size()) {
      throw ConfigError("training: batch_size " + std::to_string(cfg_.batch_size) + " exceeds training set size " +
                        std::to_string(train.size()));
    }
    if (epoch_ == 0 && !model_.ready()) model_.fit_standardization(train);
    const auto start = std::chrono::steady_clock::now();
    const double offset = history_.epochs.empty() ? 0.0 : history_.epochs.back().seconds;
    auto elapsed = [&] { return offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    while (epoch_ < cfg_.epochs && !history_.stopped_early) {
      const double lr = learning_rate_at(cfg_, epoch_);
      const double train_loss = run_epoch(train, lr);
      const double val_loss = evaluate_loss(model_, val);
      if (!std::isfinite(val_loss)) {
        model_.params().values() = best_;
        throw NumericalError("training: validation loss is not finite at epoch " + std::to_string(epoch_) +
                             "; model restored to the last good checkpoint from epoch " +
                             std::to_string(history_.best_epoch));
      }
      if (val_loss < history_.best_val) {
        history_.best_val = val_loss;
        history_.best_epoch = epoch_;
        best_ = model_.params().values();
        since_best_ = 0;
      } else {
        ++since_best_;
      }
      history_.epochs.push_back({epoch_, train_loss, val_loss, lr, elapsed()});
      if (cfg_.on_epoch) cfg_.on_epoch(epoch_, train_loss, val_loss, lr);
      ++epoch_;
      if (cfg_.patience > 0 && since_best_ >= cfg_.patience) history_.stopped_early = true;
      if (cfg_.checkpoint_every > 0 && !cfg_.state_path.empty() && epoch_ % cfg_.checkpoint_every == 0) {
        save_state(cfg_.state_path);
      }
      if (cfg_.max_seconds > 0.0 && elapsed() >= cfg_.max_seconds) break;
    }
    return history_;
  }

  /// Parameters with the lowest validation loss seen so far.
  [[nodiscard]] PosteriorModel best_model() const {
    PosteriorModel m = model_;
    m.params().values() = best_;
    return m;
  }

  // Resume state: "NFTS", version, current model checkpoint, best parameters, optimiser, counters, history.
  void save_state(std::ostream& os) const {
    io::write_magic(os, "NFTS");
    io::write_u16(os, 1);
    model_.save(os);
    for (const Tensor& t : best_)
      for (double v : t.values()) io::write_f64(os, v);
    adam_.save(os);
    io::write_u64(os, epoch_);
    io::write_u64(os, since_best_);
    io::write_u64(os, history_.best_epoch);
    io::write_f64(os, history_.best_val);
    io::write_u16(os, history_.stopped_early ? 1 : 0);
    io::write_u64(os, history_.epochs.size());
    for (const auto& e : history_.epochs) {
      io::write_u64(os, e.epoch);
      for (double v : {e.train_loss, e.val_loss, e.lr, e.seconds}) io::write_f64(os, v);
    }
  }

  void save_state(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw Error("cannot open '" + tmp + "' for writing");
      save_state(os);
      if (!os) throw Error("write to '" + tmp + "' failed");
    }
    std::rename(tmp.c_str(), path.c_str());
  }

  static Trainer resume(std::istream& is, TrainingConfig cfg) {
    io::expect_magic(is, "NFTS", "training state");
    if (io::read_u16(is) != 1) throw FormatError("training state: unsupported version");
    Trainer t(PosteriorModel::load(is), std::move(cfg));
    for (Tensor& b : t.best_)
      for (double& v : b.values()) v = io::read_f64(is);
    t.adam_.load(is);
    t.epoch_ = io::read_u64(is);
    t.since_best_ = io::read_u64(is);
    t.history_.best_epoch = io::read_u64(is);
    t.history_.best_val = io::read_f64(is);
    t.history_.stopped_early = io::read_u16(is) != 0;
    t.history_.epochs.resize(io::read_u64(is));
    for (auto& e : t.history_.epochs) {
      e.epoch = io::read_u64(is);
      e.train_loss = io::read_f64(is);
      e.val_loss = io::read_f64(is);
      e.lr = io::read_f64(is);
      e.seconds = io::read_f64(is);
    }
    return t;
  }

  static Trainer resume(const std::string& path, TrainingConfig cfg) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open training state '" + path + "'");
    return resume(is, std::move(cfg));
  }

 private:
  double run_epoch(const Pairs& train, double lr) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(cfg_.seed, {1, epoch_}));
    shuffle.shuffle(std::span<std::size_t>(order));

    double total = 0.0;
    const std::size_t n = train.size();
    for (std::size_t begin = 0, b = 0; begin < n; begin += cfg_.batch_size, ++b) {
      const std::size_t end = std::min(n, begin + cfg_.batch_size);
      const Pairs batch = train.subset(std::span<const std::size_t>(order).subspan(begin, end - begin));
      auto [loss, grads] = batch_gradient(batch, b);
      total += loss * static_cast<double>(end - begin);
      clip(grads);
      adam_.step(model_.params(), grads, lr);
    }
    return total / static_cast<double>(n);
  }

  std::pair<double, GradientMap> batch_gradient(const Pairs& batch, std::size_t b) {
    const std::size_t rows = batch.size();
    const std::size_t shards = std::min(cfg_.shards, rows);
    std::vector<double> losses(shards, 0.0);
    std::vector<GradientMap> grads(shards);
    std::vector<std::exception_ptr> errors(shards);
    auto work = [&](std::size_t s) {
      try {
        const std::size_t lo = s * rows / shards, hi = (s + 1) * rows / shards;
        const Pairs part = batch.slice(lo, hi);
        Tape tape(Mode::train, derive_seed(cfg_.seed, {2, epoch_, b, s}));
        Var loss = joint_loss(tape, model_, part.theta, part.obs, 1.0 / static_cast<double>(rows));
        losses[s] = loss.value()[0];
        grads[s] = tape.backward(loss, model_.params());
      } catch (...) {
        errors[s] = std::current_exception();
      }
    };
    const std::size_t workers = std::min(cfg_.workers, shards);
    if (workers <= 1) {
      for (std::size_t s = 0; s < shards; ++s) work(s);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t s = w; s < shards; s += workers) work(s);
        });
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    // Fixed summation order keeps the result independent of the worker count.
    GradientMap total = std::move(grads[0]);
    double loss = losses[0];
    for (std::size_t s = 1; s < shards; ++s) {
      loss += losses[s];
      for (std::size_t p = 0; p < total.size(); ++p)
        for (std::size_t i = 0; i < total[p].size(); ++i) total[p][i] += grads[s][p][i];
    }
    return {loss, std::move(total)};
  }

  void clip(GradientMap& grads) const {
    if (cfg_.clip_norm <= 0.0) return;
    double sq = 0.0;
    for (const Tensor& g : grads)
      for (double v : g.values()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("training: non-finite gradient at epoch " + std::to_string(epoch_));
    if (norm > cfg_.clip_norm) {
      const double f = cfg_.clip_norm / norm;
      for (Tensor& g : grads)
        for (double& v : g.values()) v *= f;
    }
  }

  PosteriorModel model_;
  TrainingConfig cfg_;
  Adam adam_;
  std::vector<Tensor> best_;
  std::size_t epoch_ = 0;
  std::size_t since_best_ = 0;
  TrainingHistory history_;
};

}  // namespace lfi::train
