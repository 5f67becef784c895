#include "twm/numerics/optim.hpp"

#include <cmath>

namespace twm {

template <typename T>
Tensor<T> ParameterSet<T>::add(std::string name, Shape shape, std::vector<T> values) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  auto tensor = Tensor<T>::parameter(std::move(shape), std::move(values));
  const auto n = static_cast<std::size_t>(tensor.numel());
  entries_.push_back({std::move(name), tensor, std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
  return tensor;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.value;
  throw UsageError("unknown parameter '" + name + "'");
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

template <typename T>
std::int64_t ParameterSet<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::set_step(std::int64_t step) {
  if (step < step_) throw UsageError("parameter set step counter cannot decrease");
  step_ = step;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

template <typename T>
double ParameterSet<T>::grad_norm() const {
  double total = 0.0;
  for (const auto& e : entries_) {
    if (!e.value.has_grad()) continue;
    for (T g : e.value.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(total);
}

template <typename T>
void ParameterSet<T>::check_grads_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.has_grad()) continue;
    for (T g : e.value.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter '" + e.name + "'");
  }
}

template <typename T>
template <typename U>
void ParameterSet<T>::copy_values_from(const ParameterSet<U>& other) {
  if (other.entries().size() != entries_.size()) throw ConfigError("parameter set layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& src = other.entries()[i];
    auto& dst = entries_[i];
    if (src.name != dst.name || src.value.shape() != dst.value.shape())
      throw ConfigError("parameter set layout mismatch at '" + dst.name + "'");
    auto out = dst.value.mutable_data();
    auto in = src.value.data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<T>(in[k]);
  }
}

template <typename T>
double Adam::step(ParameterSet<T>& params, double lr, double clip_norm) const {
  params.check_grads_finite();
  const double norm = params.grad_norm();
  const double clip = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  const std::int64_t t = params.step_ + 1;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  for (auto& e : params.entries_) {
    auto value = e.value.mutable_data();
    auto grad = e.value.has_grad() ? e.value.grad() : std::span<const T>{};
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T g = grad.empty() ? T(0) : static_cast<T>(grad[i] * clip);
      e.first_moment[i] = b1 * e.first_moment[i] + (T(1) - b1) * g;
      e.second_moment[i] = b2 * e.second_moment[i] + (T(1) - b2) * g * g;
      const double m_hat = e.first_moment[i] / bc1;
      const double v_hat = e.second_moment[i] / bc2;
      value[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + config_.eps));
    }
  }
  params.step_ = t;
  return norm;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void ParameterSet<float>::copy_values_from(const ParameterSet<float>&);
template void ParameterSet<float>::copy_values_from(const ParameterSet<double>&);
template void ParameterSet<double>::copy_values_from(const ParameterSet<float>&);
template void ParameterSet<double>::copy_values_from(const ParameterSet<double>&);
template double Adam::step(ParameterSet<float>&, double, double) const;
template double Adam::step(ParameterSet<double>&, double, double) const;

}  // namespace twm
