#pragma once

#include <array>
#include <random>

#include "twm/envs/environment.hpp"

namespace twm::envs {

/// Two-paddle pong on the unit square. The agent controls the right paddle,
/// the left paddle tracks the ball with limited speed.
///
/// Actions: 0 no-op, 1 up, 2 down. Reward +1 when the ball leaves on the
/// opponent's side, -1 when it leaves on the agent's side. The episode
/// terminates once either side has scored `points_to_win` points.
class MiniPong final : public RawEnvironment {
 public:
  struct Params {
    double paddle_half_height = 0.15;
    double paddle_width = 0.0625;
    double ball_size = 0.125;
    double agent_speed = 0.02;
    double opponent_speed = 0.011;
    double ball_speed_x = 0.015;
    double max_ball_speed_y = 0.02;
    int points_to_win = 5;
  };

  struct State {
    double ball_x, ball_y, ball_vx, ball_vy;
    double agent_y, opponent_y;
    int agent_points, opponent_points;
  };

  static constexpr int kNoop = 0;
  static constexpr int kUp = 1;
  static constexpr int kDown = 2;

  explicit MiniPong(int raw_size = 64);
  MiniPong(int raw_size, Params params);

  RgbFrame reset(std::uint64_t seed) override;
  RawStep step(int action) override;
  const RawEnvSpec& spec() const override { return spec_; }

  const State& state() const { return state_; }
  void set_state(const State& s) { state_ = s; }
  const Params& params() const { return params_; }
  RgbFrame render() const;

 private:
  void serve();

  RawEnvSpec spec_;
  Params params_;
  State state_{};
  std::mt19937_64 rng_;
  bool terminal_ = true;
};

/// Grid world where coins appear at uniformly random free cells.
///
/// Actions: 0 up, 1 down, 2 left, 3 right, 4 stay. Reward +1 per collected
/// coin. Never terminates by itself; the wrapper truncates episodes.
class StochasticCoins final : public RawEnvironment {
 public:
  struct Params {
    int grid = 8;
    int max_coins = 3;
    double spawn_probability = 0.2;
  };

  explicit StochasticCoins(int raw_size = 64);
  StochasticCoins(int raw_size, Params params);

  RgbFrame reset(std::uint64_t seed) override;
  RawStep step(int action) override;
  const RawEnvSpec& spec() const override { return spec_; }

  int agent_row() const { return agent_row_; }
  int agent_col() const { return agent_col_; }
  const std::vector<std::uint8_t>& coins() const { return coins_; }
  RgbFrame render() const;

 private:
  void maybe_spawn();

  RawEnvSpec spec_;
  Params params_;
  int agent_row_ = 0, agent_col_ = 0;
  std::vector<std::uint8_t> coins_;
  std::mt19937_64 rng_;
};

}  // namespace twm::envs
