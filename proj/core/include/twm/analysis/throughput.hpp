#pragma once

#include <filesystem>

#include "twm/dynamics/dynamics_model.hpp"

namespace twm::analysis {

struct ThroughputConfig {
  DynamicsConfig model;  // defaults to the full-size dynamics model
  std::int64_t batch = 64;  // imagined trajectories per rollout
  std::int64_t horizon = 15;
  int repeats = 2;
  std::uint64_t seed = 0;
};

struct ThroughputResult {
  ImagineMode mode = ImagineMode::kCached;
  double seconds = 0;             // best of the repeats
  double samples_per_second = 0;  // batch * horizon / seconds
};

struct ThroughputReport {
  std::vector<ThroughputResult> results;
  double ratio = 0;          // cached over vanilla samples/s, when both ran
  double max_abs_diff = 0;   // |h_cached - h_full| on identical tokens
};

/// Times imagination in the requested modes on one set of weights and checks
/// that the cached hidden states equal a full recomputation of the same
/// token sequence.
ThroughputReport throughput_bench(const ThroughputConfig& config, const std::vector<ImagineMode>& modes);
void write_throughput_csv(const std::filesystem::path& path, const ThroughputConfig& config,
                          const ThroughputReport& report);

}  // namespace twm::analysis
