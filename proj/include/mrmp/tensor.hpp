#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mrmp/errors.hpp"

namespace mrmp {

template <typename T>
class GradTape;

namespace detail {

template <typename T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until a backward pass touches this node
  bool requires_grad = false;
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw shape_error("negative dimension in tensor shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

}  // namespace detail

// Dense row-major tensor handle with value semantics over shared storage.
// The scalar type is a template parameter: float for training, double for
// verification and finite-difference oracles.
template <typename T>
class Tensor {
 public:
  using scalar_type = T;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode<T>>();
    std::size_t n = detail::shape_numel(shape);
    t.node_->shape = std::move(shape);
    t.node_->values.assign(n, T(0));
    return t;
  }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.node_->values) x = v;
    return t;
  }

  static Tensor from_values(std::vector<int> shape, std::vector<T> values) {
    if (detail::shape_numel(shape) != values.size()) {
      throw shape_error("from_values: buffer length " + std::to_string(values.size()) +
                        " does not match shape " + detail::shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    return t;
  }

  static Tensor scalar(T v) { return from_values({1}, {v}); }

  // Leaf tensor that participates in gradient computation.
  static Tensor param(std::vector<int> shape, std::vector<T> values) {
    Tensor t = from_values(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  // A Tensor is a shared handle: const applies to the handle, not the node,
  // so backward closures capturing by value can still write gradients.
  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return node_->values.size(); }

  std::vector<T>& values() const { return node_->values; }
  T* data() const { return node_->values.data(); }

  T item() const {
    if (size() != 1) throw shape_error("item() on non-scalar tensor " + detail::shape_str(shape()));
    return node_->values[0];
  }

  // 2-D accessor, handy in tests and hand-written kernels.
  T& at(int r, int c) const { return node_->values[static_cast<std::size_t>(r) * dim(1) + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) const { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }

  // Lazily allocated, zero-initialized.
  std::vector<T>& grad() const {
    if (node_->grad.empty()) node_->grad.assign(node_->values.size(), T(0));
    return node_->grad;
  }

  void zero_grad() const {
    if (!node_->grad.empty()) node_->grad.assign(node_->values.size(), T(0));
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<detail::TensorNode<T>> node_;
};

namespace detail {

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw numeric_error(std::string(op) + ": non-finite value in result");
    }
  }
}

}  // namespace detail

// Reverse-mode tape. Construction pushes the tape onto a thread-local stack;
// ops record backward closures onto the innermost tape while any of their
// inputs require gradients. Records are appended in forward order, which is a
// topological order by construction, and replayed in reverse exactly once.
template <typename T>
class GradTape {
 public:
  GradTape() { stack().push_back(this); }
  ~GradTape() { stack().pop_back(); }

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* current() { return stack().empty() ? nullptr : stack().back(); }

  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

  std::size_t node_count() const { return records_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
  // accumulate additively at fan-out nodes; parameters not reachable from the
  // loss keep whatever their grad buffer held (zeros after zero_grad).
  void backward(Tensor<T> loss) {
    if (consumed_) throw numeric_error("backward: tape already consumed");
    if (loss.size() != 1) throw shape_error("backward: loss must be scalar");
    consumed_ = true;
    loss.grad()[0] += T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  }

  bool consumed() const { return consumed_; }

 private:
  static std::vector<GradTape*>& stack() {
    thread_local std::vector<GradTape*> s;
    return s;
  }

  std::vector<std::function<void()>> records_;
  bool consumed_ = false;
};

}  // namespace mrmp
