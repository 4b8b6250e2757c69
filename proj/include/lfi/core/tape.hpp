#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lfi/core/error.hpp"
#include "lfi/core/rng.hpp"
#include "lfi/core/tensor.hpp"

namespace lfi {

using ParamId = std::size_t;

/// Named trainable tensors with stable ids assigned in registration order.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor init) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return values_.size() - 1;
  }

  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] const Tensor& value(ParamId id) const { return values_.at(id); }
  [[nodiscard]] Tensor& value(ParamId id) { return values_.at(id); }
  [[nodiscard]] const std::string& name(ParamId id) const { return names_.at(id); }
  [[nodiscard]] std::vector<Tensor>& values() noexcept { return values_; }
  [[nodiscard]] const std::vector<Tensor>& values() const noexcept { return values_; }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Gradient per parameter, indexed by ParamId.
using GradientMap = std::vector<Tensor>;

enum class Mode { eval, train };

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] std::size_t rows() const { return value().rows(); }
  [[nodiscard]] std::size_t cols() const { return value().cols(); }
  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] std::size_t index() const noexcept { return index_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Append-only record of a computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a single reverse sweep visits each node once. Parameter nodes reference
/// the store's tensors directly; the store must outlive the tape and stay
/// unmodified while the tape is in use. A tape is single-owner.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(Mode mode = Mode::eval, std::uint64_t dropout_seed = 0, bool track_gradients = true)
      : mode_(mode), rng_(dropout_seed), track_(track_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] Mode mode() const noexcept { return mode_; }
  [[nodiscard]] bool training() const noexcept { return mode_ == Mode::train; }
  [[nodiscard]] bool tracking() const noexcept { return track_; }
  [[nodiscard]] Rng& rng() noexcept { return rng_; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, {}, kNoParam, false});
    return {this, nodes_.size() - 1};
  }

  Var parameter(const ParameterStore& store, ParamId id) {
    if (auto it = param_nodes_.find(id); it != param_nodes_.end()) return {this, it->second};
    nodes_.push_back(Node{Tensor{}, &store.value(id), {}, {}, id, track_});
    param_nodes_.emplace(id, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  /// Appends an op result. `backward` is kept only when some input needs a gradient.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  Var record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward) {
#ifdef LFI_CHECK_FINITE
    if (!value.all_finite()) throw NumericalError(std::string(op) + ": non-finite output");
#else
    (void)op;
#endif
    bool needs = false;
    for (const Var& v : inputs) needs = needs || nodes_[v.index()].requires_grad;
    nodes_.push_back(Node{std::move(value), nullptr, {}, needs ? std::move(backward) : nullptr,
                          kNoParam, needs});
    return {this, nodes_.size() - 1};
  }

  [[nodiscard]] const Tensor& value(std::size_t i) const {
    const Node& n = nodes_[i];
    return n.external ? *n.external : n.value;
  }

  [[nodiscard]] bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }

  /// Gradient accumulator for node `i`, zero-initialized on first access.
  Tensor& grad(std::size_t i) {
    Node& n = nodes_[i];
    if (n.grad.empty()) n.grad = Tensor(value(i).shape(), 0.0);
    return n.grad;
  }

  [[nodiscard]] bool has_grad(std::size_t i) const { return !nodes_[i].grad.empty(); }

  /// Gradient of a scalar `loss` with respect to every parameter in `store`.
  /// Parameters that do not influence the loss receive zeros of their shape.
  GradientMap backward(Var loss, const ParameterStore& store) {
    if (loss.value().size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor{};
    if (nodes_[loss.index()].requires_grad) {
      grad(loss.index())[0] = 1.0;
      for (std::size_t i = loss.index() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && !n.grad.empty()) n.backward(*this, i);
      }
    }
    GradientMap grads;
    grads.reserve(store.size());
    for (ParamId id = 0; id < store.size(); ++id) {
      auto it = param_nodes_.find(id);
      if (it != param_nodes_.end() && has_grad(it->second)) {
        grads.push_back(std::move(nodes_[it->second].grad));
      } else {
        grads.emplace_back(store.value(id).shape(), 0.0);
      }
    }
    return grads;
  }

 private:
  static constexpr std::size_t kNoParam = static_cast<std::size_t>(-1);

  struct Node {
    Tensor value;
    const Tensor* external;
    Tensor grad;
    Backward backward;
    std::size_t param;
    bool requires_grad;
  };

  Mode mode_;
  Rng rng_;
  bool track_;
  std::vector<Node> nodes_;
  std::unordered_map<ParamId, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(index_); }

}  // namespace lfi
