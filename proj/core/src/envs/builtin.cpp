#include "twm/envs/builtin.hpp"

#include <algorithm>
#include <cmath>

namespace twm::envs {

void RgbFrame::fill_rect(double y0, double x0, double y1, double x1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  // Coordinates in [0,1]; a pixel is painted when its centre lies inside.
  const int ry0 = std::max(0, static_cast<int>(std::ceil(y0 * height - 0.5)));
  const int ry1 = std::min(height - 1, static_cast<int>(std::floor(y1 * height - 0.5)));
  const int rx0 = std::max(0, static_cast<int>(std::ceil(x0 * width - 0.5)));
  const int rx1 = std::min(width - 1, static_cast<int>(std::floor(x1 * width - 0.5)));
  for (int y = ry0; y <= ry1; ++y) {
    for (int x = rx0; x <= rx1; ++x) {
      auto* p = &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
      p[0] = r;
      p[1] = g;
      p[2] = b;
    }
  }
}

// ---- MiniPong

MiniPong::MiniPong(int raw_size) : MiniPong(raw_size, Params{}) {}

MiniPong::MiniPong(int raw_size, Params params) : params_(params) {
  if (raw_size < 8) throw ConfigError("minipong: raw frame size must be >= 8");
  spec_ = {"minipong", 3, raw_size, raw_size, 1000};
}

void MiniPong::serve() {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  state_.ball_x = 0.5;
  state_.ball_y = 0.5;
  const double dir = u(rng_) < 0.0 ? -1.0 : 1.0;
  state_.ball_vx = dir * params_.ball_speed_x;
  state_.ball_vy = u(rng_) * params_.max_ball_speed_y * 0.75;
}

RgbFrame MiniPong::reset(std::uint64_t seed) {
  rng_.seed(seed);
  state_.agent_y = 0.5;
  state_.opponent_y = 0.5;
  state_.agent_points = 0;
  state_.opponent_points = 0;
  serve();
  terminal_ = false;
  return render();
}

RawStep MiniPong::step(int action) {
  if (action < 0 || action >= spec_.action_count) throw UsageError("minipong: action out of range");
  if (terminal_) throw UsageError("minipong: step after terminal, call reset");
  auto& s = state_;
  const auto& p = params_;
  const double lo = p.paddle_half_height, hi = 1.0 - p.paddle_half_height;

  if (action == kUp) s.agent_y -= p.agent_speed;
  if (action == kDown) s.agent_y += p.agent_speed;
  s.agent_y = std::clamp(s.agent_y, lo, hi);

  // opponent follows the ball only while it approaches
  const double target = s.ball_vx < 0.0 ? s.ball_y : 0.5;
  s.opponent_y += std::clamp(target - s.opponent_y, -p.opponent_speed, p.opponent_speed);
  s.opponent_y = std::clamp(s.opponent_y, lo, hi);

  const double prev_x = s.ball_x;
  s.ball_x += s.ball_vx;
  s.ball_y += s.ball_vy;
  const double r = p.ball_size / 2.0;
  if (s.ball_y < r) {
    s.ball_y = 2.0 * r - s.ball_y;
    s.ball_vy = -s.ball_vy;
  } else if (s.ball_y > 1.0 - r) {
    s.ball_y = 2.0 * (1.0 - r) - s.ball_y;
    s.ball_vy = -s.ball_vy;
  }

  auto deflect = [&](double paddle_y) {
    const double offset = (s.ball_y - paddle_y) / (p.paddle_half_height + r);
    s.ball_vx = -s.ball_vx;
    s.ball_vy = std::clamp(s.ball_vy + offset * 0.01, -p.max_ball_speed_y, p.max_ball_speed_y);
  };
  const double agent_face = 1.0 - p.paddle_width - r;
  const double opp_face = p.paddle_width + r;
  if (s.ball_vx > 0.0 && prev_x <= agent_face && s.ball_x > agent_face &&
      std::abs(s.ball_y - s.agent_y) <= p.paddle_half_height + r) {
    s.ball_x = 2.0 * agent_face - s.ball_x;
    deflect(s.agent_y);
  } else if (s.ball_vx < 0.0 && prev_x >= opp_face && s.ball_x < opp_face &&
             std::abs(s.ball_y - s.opponent_y) <= p.paddle_half_height + r) {
    s.ball_x = 2.0 * opp_face - s.ball_x;
    deflect(s.opponent_y);
  }

  RawStep out;
  if (s.ball_x > 1.0 + r) {
    out.reward = -1.0;
    ++s.opponent_points;
    serve();
  } else if (s.ball_x < -r) {
    out.reward = 1.0;
    ++s.agent_points;
    serve();
  }
  terminal_ = s.agent_points >= p.points_to_win || s.opponent_points >= p.points_to_win;
  out.terminal = terminal_;
  out.frame = render();
  return out;
}

RgbFrame MiniPong::render() const {
  RgbFrame f(spec_.frame_height, spec_.frame_width);
  const auto& s = state_;
  const auto& p = params_;
  f.fill_rect(s.opponent_y - p.paddle_half_height, 0.0, s.opponent_y + p.paddle_half_height, p.paddle_width, 200, 72,
              72);
  f.fill_rect(s.agent_y - p.paddle_half_height, 1.0 - p.paddle_width, s.agent_y + p.paddle_half_height, 1.0, 92, 186,
              92);
  const double r = p.ball_size / 2.0;
  f.fill_rect(s.ball_y - r, s.ball_x - r, s.ball_y + r, s.ball_x + r, 236, 236, 236);
  return f;
}

// ---- StochasticCoins

StochasticCoins::StochasticCoins(int raw_size) : StochasticCoins(raw_size, Params{}) {}

StochasticCoins::StochasticCoins(int raw_size, Params params) : params_(params) {
  if (params_.grid < 2) throw ConfigError("coins: grid must be >= 2");
  if (raw_size < params_.grid) throw ConfigError("coins: raw frame smaller than grid");
  if (params_.max_coins < 1 || params_.max_coins >= params_.grid * params_.grid)
    throw ConfigError("coins: max_coins out of range");
  spec_ = {"coins", 5, raw_size, raw_size, 200};
}

void StochasticCoins::maybe_spawn() {
  const int present = static_cast<int>(std::count(coins_.begin(), coins_.end(), std::uint8_t{1}));
  if (present >= params_.max_coins) return;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng_) >= params_.spawn_probability) return;
  std::vector<int> free;
  const int g = params_.grid;
  for (int i = 0; i < g * g; ++i)
    if (!coins_[i] && i != agent_row_ * g + agent_col_) free.push_back(i);
  if (free.empty()) return;
  std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
  coins_[free[pick(rng_)]] = 1;
}

RgbFrame StochasticCoins::reset(std::uint64_t seed) {
  rng_.seed(seed);
  const int g = params_.grid;
  agent_row_ = g / 2;
  agent_col_ = g / 2;
  coins_.assign(static_cast<std::size_t>(g) * g, 0);
  maybe_spawn();
  return render();
}

RawStep StochasticCoins::step(int action) {
  if (action < 0 || action >= spec_.action_count) throw UsageError("coins: action out of range");
  const int g = params_.grid;
  switch (action) {
    case 0: agent_row_ = std::max(0, agent_row_ - 1); break;
    case 1: agent_row_ = std::min(g - 1, agent_row_ + 1); break;
    case 2: agent_col_ = std::max(0, agent_col_ - 1); break;
    case 3: agent_col_ = std::min(g - 1, agent_col_ + 1); break;
    default: break;
  }
  RawStep out;
  auto& cell = coins_[static_cast<std::size_t>(agent_row_) * g + agent_col_];
  if (cell) {
    cell = 0;
    out.reward = 1.0;
  }
  maybe_spawn();
  out.frame = render();
  return out;
}

RgbFrame StochasticCoins::render() const {
  RgbFrame f(spec_.frame_height, spec_.frame_width);
  const int g = params_.grid;
  const double c = 1.0 / g;
  for (int i = 0; i < g * g; ++i) {
    if (!coins_[i]) continue;
    const int row = i / g, col = i % g;
    f.fill_rect(row * c + 0.2 * c, col * c + 0.2 * c, (row + 1) * c - 0.2 * c, (col + 1) * c - 0.2 * c, 230, 190, 40);
  }
  f.fill_rect(agent_row_ * c, agent_col_ * c, (agent_row_ + 1) * c, (agent_col_ + 1) * c, 80, 140, 255);
  return f;
}

std::unique_ptr<RawEnvironment> make_raw_environment(const std::string& id, int raw_size) {
  if (id == "minipong") return std::make_unique<MiniPong>(raw_size);
  if (id == "coins") return std::make_unique<StochasticCoins>(raw_size);
  throw ConfigError("unknown environment id '" + id + "' (expected minipong or coins)");
}

}  // namespace twm::envs
