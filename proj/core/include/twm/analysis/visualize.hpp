#pragma once

#include <filesystem>
#include <optional>

#include "twm/analysis/image.hpp"
#include "twm/envs/preprocess.hpp"
#include "twm/train/trainer.hpp"

namespace twm::analysis {

struct ImaginedTrajectory {
  std::vector<std::vector<float>> stacks;  // steps+1 decoded stacks, S*H*W each, stack-major
  std::vector<std::int64_t> actions;       // steps
  std::vector<double> rewards, discounts;  // steps
};

/// Imagines `steps` steps from one real observation, once per sample with
/// the rng seeded by seed + sample. Actions come from the actor unless a
/// fixed sequence (length >= steps) is given.
std::vector<ImaginedTrajectory> imagine_trajectories(const Models& models, const envs::Observation& start,
                                                     std::int64_t steps, std::int64_t samples, std::uint64_t seed,
                                                     const std::optional<std::vector<std::int64_t>>& actions = {});

/// Newest frame of every stack side by side.
Image trajectory_strip(const ImaginedTrajectory& t, int stack, int height, int width, int scale = 4);

/// Tints stack slot s with hue 360*s/S and averages, so a static scene is
/// gray and motion shows as coloured offsets.
Image frame_stack_composite(const std::vector<float>& stack, int slots, int height, int width);

/// sample<k>.png, sample<k>.csv (step,action,reward,discount) and
/// stack<k>.png (composite of the last imagined stack) per sample.
void write_trajectories(const std::filesystem::path& dir, const std::vector<ImaginedTrajectory>& ts, int stack,
                        int height, int width, int scale = 4);

}  // namespace twm::analysis
