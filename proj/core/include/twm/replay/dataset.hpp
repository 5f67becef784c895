#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "twm/numerics/rng.hpp"

namespace twm {

inline constexpr double kUniformTemperature = std::numeric_limits<double>::infinity();

/// Visitation counts and the softmax start distribution over them.
class BalancedSampler {
 public:
  explicit BalancedSampler(double temperature = 20.0);

  double temperature() const { return temperature_; }
  void set_temperature(double t);
  bool uniform() const { return temperature_ == kUniformTemperature; }

  void add_entry() { counts_.push_back(0); }
  std::int64_t size() const { return static_cast<std::int64_t>(counts_.size()); }
  const std::vector<std::int64_t>& counts() const { return counts_; }
  std::vector<std::int64_t>& mutable_counts() { return counts_; }

  /// p_i proportional to exp(-v_i / tau) over the valid starts [0, T - len].
  std::vector<double> start_probabilities(std::int64_t len) const;
  /// Draws n starts i.i.d. and increments the count of each draw.
  std::vector<std::int64_t> sample_starts(std::int64_t n, std::int64_t len, Rng& rng);

 private:
  double temperature_;
  std::vector<std::int64_t> counts_;
};

/// A window of `len` consecutive entries for each start.
struct SampledBatch {
  std::int64_t len = 0;
  std::vector<std::int64_t> starts;
  std::vector<std::uint8_t> frames;   // [N, len, S, H, W]
  std::vector<std::int64_t> actions;  // [N, len]
  std::vector<float> rewards;         // [N, len]
  std::vector<std::uint8_t> dones;    // [N, len]
};

/// Append-only store of (o, a, r, d) with one gray frame per entry. Stacked
/// observations are rebuilt from the preceding frames of the same episode,
/// repeating the episode's first frame where history is missing.
class ExperienceDataset {
 public:
  ExperienceDataset(int height, int width, int stack, std::int64_t capacity, double temperature = 20.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int stack() const { return stack_; }
  std::int64_t capacity() const { return capacity_; }
  std::int64_t size() const { return static_cast<std::int64_t>(actions_.size()); }
  std::size_t frame_size() const { return static_cast<std::size_t>(height_) * width_; }

  /// `frame` is the newest gray frame of o_i (H*W bytes).
  void append(std::span<const std::uint8_t> frame, std::int64_t action, float reward, bool done);

  std::int64_t action(std::int64_t i) const { return actions_.at(i); }
  float reward(std::int64_t i) const { return rewards_.at(i); }
  bool done(std::int64_t i) const { return dones_.at(i) != 0; }
  std::span<const std::uint8_t> frame(std::int64_t i) const;
  std::int64_t episode_start(std::int64_t i) const { return episode_start_.at(i); }
  /// Stacked observation o_i, S*H*W bytes, oldest frame first.
  std::vector<std::uint8_t> observation(std::int64_t i) const;

  BalancedSampler& sampler() { return sampler_; }
  const BalancedSampler& sampler() const { return sampler_; }
  const std::vector<std::int64_t>& counts() const { return sampler_.counts(); }
  std::vector<double> start_probabilities(std::int64_t len) const { return sampler_.start_probabilities(len); }
  SampledBatch sample_sequences(std::int64_t n, std::int64_t len, Rng& rng);
  /// Materializes the windows at the given starts without touching counts.
  SampledBatch gather(const std::vector<std::int64_t>& starts, std::int64_t len) const;

  void save(const std::filesystem::path& path) const;
  static ExperienceDataset load(const std::filesystem::path& path, double temperature = 20.0);

 private:
  int height_, width_, stack_;
  std::int64_t capacity_;
  std::vector<std::uint8_t> frames_;
  std::vector<std::int64_t> actions_;
  std::vector<float> rewards_;
  std::vector<std::uint8_t> dones_;
  std::vector<std::int64_t> episode_start_;
  BalancedSampler sampler_;
};

struct GrowthSimulationConfig {
  std::int64_t final_size = 10000;
  std::int64_t sequences_per_update = 100;  // N
  std::int64_t seq_len = 16;                // l
  double updates_per_step = 4.0;            // may be fractional, e.g. 1/16
  double temperature = 20.0;
  std::uint64_t seed = 0;
};

/// Selections per index after a run where the dataset grows by one entry per
/// env step and N starts are drawn per update.
std::vector<std::int64_t> simulate_growing_dataset(const GrowthSimulationConfig& config);
/// Cumulative fraction of selections at or before each index.
std::vector<double> time_on_prefix(const std::vector<std::int64_t>& selections);
/// Temperature that keeps the selection curve of `reference_tau` at
/// `reference_rate` starts per env step when drawing `rate` starts per step.
double equivalent_temperature(double reference_tau, double reference_rate, double rate);
/// Writes "index,cumulative_fraction" rows.
void write_time_on_prefix_csv(const std::filesystem::path& path, const std::vector<double>& cumulative);

}  // namespace twm
