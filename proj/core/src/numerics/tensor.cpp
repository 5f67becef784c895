#include "twm/numerics/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "twm/numerics/rng.hpp"

namespace twm {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ConfigError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::int64_t sample_discrete(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw NumericError("sample_discrete: weights sum to zero");
  double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<std::int64_t>(i);
  }
  // Rounding can leave u == total; return the last positive entry.
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return static_cast<std::int64_t>(i);
  return 0;
}

namespace detail {

std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
void check_finite(const char* op, std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs,
                      BackwardFn<T> backward) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw ConfigError(std::string(op) + ": element count does not match shape " + shape_str(shape));
  check_finite<T>(op, data);
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = next_seq();
  node->op = op;
  if (grad_enabled()) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
    if (needs) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_result(const char*, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   BackwardFn<float>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>, std::vector<Tensor<double>>,
                                    BackwardFn<double>);
template void check_finite<float>(const char*, std::span<const float>);
template void check_finite<double>(const char*, std::span<const double>);

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ConfigError("Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->seq = detail::next_seq();
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  int n = ndim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) throw ConfigError("axis out of range for shape " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) throw UsageError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Collect every node that takes part in the gradient computation. Owning
  // pointers keep intermediates alive while the graph is being released.
  std::vector<std::shared_ptr<TensorNode<T>>> order;
  std::unordered_set<TensorNode<T>*> seen;
  std::vector<std::shared_ptr<TensorNode<T>>> stack{node_};
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (auto& in : n->inputs)
      if (in->requires_grad) stack.push_back(in);
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });

  node_->grad_buffer()[0] += T(1);
  for (auto& n : order) {
    if (!n->backward) continue;  // leaf
    n->grad_buffer();
    n->backward(*n);
    // Release the graph and the intermediate gradient.
    n->backward = nullptr;
    n->inputs.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->seq = detail::next_seq();
  node->op = "detach";
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t = detach();
  t.node_->op = "leaf";
  return t;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace twm
