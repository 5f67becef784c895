#include "twm/analysis/visualize.hpp"

#include <cmath>
#include <fstream>

namespace twm::analysis {

namespace {

std::array<double, 3> hue_rgb(double hue) {
  const double h = std::fmod(hue, 360.0) / 60.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  switch (static_cast<int>(h)) {
    case 0: return {1, x, 0};
    case 1: return {x, 1, 0};
    case 2: return {0, 1, x};
    case 3: return {0, x, 1};
    case 4: return {x, 0, 1};
    default: return {1, 0, x};
  }
}

std::vector<float> decode_stack(const ObservationModel<float>& obs, const Tensor<float>& z) {
  return obs.decode(z).to_vector();
}

}  // namespace

std::vector<ImaginedTrajectory> imagine_trajectories(const Models& models, const envs::Observation& start,
                                                     std::int64_t steps, std::int64_t samples, std::uint64_t seed,
                                                     const std::optional<std::vector<std::int64_t>>& actions) {
  if (steps < 0 || samples < 1) throw UsageError("imagine: steps must be >= 0 and samples >= 1");
  if (actions && static_cast<std::int64_t>(actions->size()) < steps) throw UsageError("imagine: too few actions");
  NoGradGuard no_grad;
  const auto& oc = models.observation.config();
  if (start.height != oc.height || start.width != oc.width || start.stack != oc.stack)
    throw UsageError("imagine: observation does not match the encoder");
  const std::int64_t ks = oc.latent_size();
  std::vector<ImaginedTrajectory> out;
  for (std::int64_t k = 0; k < samples; ++k) {
    Rng rng(seed + static_cast<std::uint64_t>(k));
    ImaginedTrajectory t;
    auto z0 = reshape(models.observation.posterior(observation_tensor(start)).sample(rng), {1, ks});
    if (steps == 0) {
      t.stacks.push_back(decode_stack(models.observation, z0));
      out.push_back(std::move(t));
      continue;
    }
    std::int64_t step = 0;
    ImaginationPolicy<float> policy = [&](const Tensor<float>& z, const Tensor<float>& h_prev) {
      if (actions) return std::vector<std::int64_t>{(*actions)[static_cast<std::size_t>(step++)]};
      return models.agent.act(models.agent.policy_state(z, h_prev), rng);
    };
    auto b = models.dynamics.imagine(z0, policy, steps, rng);
    for (std::int64_t s = 0; s <= steps; ++s)
      t.stacks.push_back(decode_stack(models.observation, reshape(slice(b.z, 0, s, 1), {1, ks})));
    t.actions = b.actions;
    for (std::int64_t s = 0; s < steps; ++s) {
      t.rewards.push_back(b.rewards.at(s));
      t.discounts.push_back(b.discounts.at(s));
    }
    out.push_back(std::move(t));
  }
  return out;
}

Image trajectory_strip(const ImaginedTrajectory& t, int stack, int height, int width, int scale) {
  std::vector<Image> frames;
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  for (const auto& s : t.stacks) {
    if (s.size() != hw * stack) throw UsageError("trajectory_strip: decode shape mismatch");
    std::vector<float> newest(s.end() - static_cast<std::ptrdiff_t>(hw), s.end());
    frames.push_back(upscale(gray_image(newest, height, width), scale));
  }
  return hconcat(frames, 2);
}

Image frame_stack_composite(const std::vector<float>& stack, int slots, int height, int width) {
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  if (slots < 1 || stack.size() != hw * slots) throw UsageError("frame_stack_composite: shape mismatch");
  std::vector<std::array<double, 3>> tint(static_cast<std::size_t>(slots));
  std::array<double, 3> total{0, 0, 0};
  for (int s = 0; s < slots; ++s) {
    tint[s] = slots == 1 ? std::array<double, 3>{1, 1, 1} : hue_rgb(360.0 * s / slots);
    for (int c = 0; c < 3; ++c) total[c] += tint[s][c];
  }
  Image img(height, width, 3);
  for (std::size_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) {
      double acc = 0;
      for (int s = 0; s < slots; ++s) acc += tint[s][c] * std::clamp<double>(stack[s * hw + i], 0.0, 1.0);
      img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(255.0 * acc / total[c]));
    }
  return img;
}

void write_trajectories(const std::filesystem::path& dir, const std::vector<ImaginedTrajectory>& ts, int stack,
                        int height, int width, int scale) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const auto& t = ts[k];
    const auto name = "sample" + std::to_string(k);
    write_png(dir / (name + ".png"), trajectory_strip(t, stack, height, width, scale));
    write_png(dir / ("stack" + std::to_string(k) + ".png"),
              upscale(frame_stack_composite(t.stacks.back(), stack, height, width), scale));
    std::ofstream csv(dir / (name + ".csv"));
    if (!csv) throw DataError("cannot write " + (dir / (name + ".csv")).string());
    csv << "step,action,reward,discount\n";
    for (std::size_t s = 0; s < t.actions.size(); ++s)
      csv << s << ',' << t.actions[s] << ',' << t.rewards[s] << ',' << t.discounts[s] << '\n';
  }
}

}  // namespace twm::analysis
