#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "asdformer/error.hpp"

namespace asdformer::numerics {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // only populated on leaves
  bool requires_grad = false;
  bool leaf = true;
};

}  // namespace detail

/// Dense row-major array of doubles. Copies are shallow: two Tensor values
/// may refer to the same storage, which is how parameters are shared between
/// a ModelParams table and the tape that differentiates through them.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor filled(Shape shape, double value, bool requires_grad = false) {
    const auto n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_size(shape) != data.size()) {
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Mutation is reserved for initialisation and optimiser updates.
  std::span<double> mutable_data() { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }

  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // Deep copy, detached from any tape; keeps requires_grad.
  Tensor clone() const { return from(shape(), node_->data, requires_grad()); }

  const detail::TensorNode* id() const { return node_.get(); }

 private:
  friend class Tape;
  friend Tensor make_result(Shape, std::vector<double>, bool);

  void ensure_grad() {
    if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), 0.0);
  }

  std::shared_ptr<detail::TensorNode> node_;
};

/// Hook that lets the gradient checker prove it can detect a wrong backward
/// rule. When set, gelu's derivative is scaled by 1.01.
inline std::atomic<bool>& corrupt_backward_hook() {
  static std::atomic<bool> flag{false};
  return flag;
}

/// Ordered record of differentiable operations. One tape per forward pass;
/// tapes are not shared between threads.
class Tape {
 public:
  // grad_inputs[i] is null when input i does not need a gradient.
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<std::vector<double>*> grad_inputs)>;

  void record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn) {
    entries_.push_back(Entry{std::move(inputs), output, std::move(fn)});
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Reverse sweep from a scalar. Gradients are gathered in buffers local to
  /// the call and added to each leaf's grad once at the end, so repeated
  /// sweeps accumulate exactly.
  void backward(const Tensor& loss) const {
    if (!loss.defined() || loss.size() != 1) {
      throw ContractError("backward requires a scalar loss");
    }
    if (!loss.requires_grad()) return;

    std::unordered_map<const detail::TensorNode*, std::vector<double>> local;
    std::unordered_map<const detail::TensorNode*, Tensor> leaves;
    auto buffer_for = [&](const Tensor& t) -> std::vector<double>* {
      if (!t.requires_grad()) return nullptr;
      if (t.is_leaf()) leaves.emplace(t.id(), t);
      auto& buf = local[t.id()];
      if (buf.size() != t.size()) buf.assign(t.size(), 0.0);
      return &buf;
    };

    (*buffer_for(loss))[0] += 1.0;

    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      auto found = local.find(it->output.id());
      if (found == local.end()) continue;  // output not on a path to the loss
      const std::vector<double> grad_out = std::move(found->second);
      local.erase(found);
      std::vector<std::vector<double>*> grads;
      grads.reserve(it->inputs.size());
      for (const auto& in : it->inputs) grads.push_back(buffer_for(in));
      it->backward(grad_out, grads);
    }

    for (auto& [id, leaf] : leaves) {
      leaf.ensure_grad();
      const auto& buf = local.at(id);
      for (std::size_t i = 0; i < buf.size(); ++i) leaf.node_->grad[i] += buf[i];
    }
  }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

// Output of a recorded operation: differentiable iff any input was.
inline Tensor make_result(Shape shape, std::vector<double> data, bool requires_grad) {
  Tensor t = Tensor::from(std::move(shape), std::move(data), requires_grad);
  t.node_->leaf = !requires_grad;
  return t;
}

}  // namespace asdformer::numerics
