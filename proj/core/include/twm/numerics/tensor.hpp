#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "twm/errors.hpp"

namespace twm {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorNode;

template <typename T>
using BackwardFn = std::function<void(TensorNode<T>&)>;

/// Storage and tape record behind a Tensor handle.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::uint64_t seq = 0;  // creation order; reverse order is a topological order
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  BackwardFn<T> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Gradient recording is on by default; a NoGradGuard disables it for the
/// current thread (imagination, evaluation, finite differences).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor with reverse-mode differentiation.
///
/// Handles share storage: copying a Tensor copies the reference, not the
/// elements. Every op records its inputs and a backward closure when any
/// input requires a gradient and recording is enabled. All forward results
/// are checked for NaN/Inf.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from(Shape shape, std::vector<T> values);
  static Tensor scalar(T value) { return from({}, {value}); }
  /// A leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<T> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  /// Writes bypass the tape; only use on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->data; }
  std::vector<T> to_vector() const { return node_->data; }
  T item() const;
  T at(std::int64_t flat_index) const { return node_->data.at(static_cast<std::size_t>(flat_index)); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer, zero-filled when nothing has been accumulated.
  std::span<const T> grad() const;
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Back-propagates from this scalar. Leaf gradients accumulate; the
  /// recorded graph is released afterwards.
  void backward() const;

  /// Same values, cut from the tape (stop-gradient).
  Tensor detach() const;
  /// Deep copy of the values as a new leaf.
  Tensor clone() const;

  const char* op_name() const { return node_->op; }
  TensorNode<T>& node() const { return *node_; }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

std::uint64_t next_seq();

/// Creates an op result; records the backward closure when needed and
/// rejects non-finite values.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs, BackwardFn<T> backward);

template <typename T>
void check_finite(const char* op, std::span<const T> values);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace twm
