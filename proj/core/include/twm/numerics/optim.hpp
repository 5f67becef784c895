#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "twm/numerics/tensor.hpp"

namespace twm {

/// Named trainable tensors of one model plus the Adam moment buffers.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    std::vector<T> first_moment;
    std::vector<T> second_moment;
  };

  /// Registers a parameter; names must be unique within the set.
  Tensor<T> add(std::string name, Shape shape, std::vector<T> values);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  std::int64_t parameter_count() const;

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t step);

  void zero_grad();
  /// L2 norm over every gradient in the set.
  double grad_norm() const;
  /// Throws NumericError naming the first parameter with a NaN/Inf gradient.
  void check_grads_finite() const;

  /// Copies values (not moments) from another set with identical layout.
  template <typename U>
  void copy_values_from(const ParameterSet<U>& other);

 private:
  friend class Adam;
  std::vector<Entry> entries_;
  std::int64_t step_ = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction and global-norm gradient clipping.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Clips the global gradient norm to clip_norm (<= 0 disables clipping),
  /// applies one update and increments the step counter. Returns the norm
  /// before clipping.
  template <typename T>
  double step(ParameterSet<T>& params, double lr, double clip_norm) const;

  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
};

}  // namespace twm
