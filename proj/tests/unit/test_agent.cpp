#include <doctest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "twm/agent/actor_critic.hpp"

using namespace twm;
using twm::testing::grad_check;
using twm::testing::random_tensor;

namespace {

// independent oracle: advantages straight from the definition
// A_t = sum_k (prod_{j=t}^{k-1} g_j lambda) delta_k
std::vector<double> brute_force_advantages(const std::vector<double>& r, const std::vector<double>& v,
                                           const std::vector<double>& g, double lambda) {
  const std::size_t h = r.size();
  std::vector<double> adv(h, 0.0);
  for (std::size_t t = 0; t < h; ++t) {
    double coef = 1.0;
    for (std::size_t k = t; k < h; ++k) {
      adv[t] += coef * (r[k] + g[k] * v[k + 1] - v[k]);
      coef *= g[k] * lambda;
    }
  }
  return adv;
}

AgentConfig tiny_agent(PolicyInput in = PolicyInput::kZ) {
  AgentConfig c;
  c.actions = 3;
  c.latent_size = 6;
  c.hidden_size = 4;
  c.policy_input = in;
  c.actor_units = 8;
  c.actor_layers = 1;
  c.critic_units = 8;
  c.critic_layers = 1;
  return c;
}

ImaginedBatch<double> random_batch(std::int64_t hzn, std::int64_t m, Rng& rng) {
  ImaginedBatch<double> b;
  b.horizon = hzn;
  b.m = m;
  std::vector<double> z(static_cast<std::size_t>((hzn + 1) * m * 6), 0.0);
  for (std::int64_t i = 0; i < (hzn + 1) * m * 2; ++i) z[i * 3 + rng.index(3)] = 1.0;
  b.z = Tensor<double>::from({hzn + 1, m, 6}, z);
  b.h_prev = random_tensor({hzn + 1, m, 4}, rng);
  b.h = random_tensor({hzn, m, 4}, rng);
  for (std::int64_t i = 0; i < hzn * m; ++i) b.actions.push_back(rng.index(3));
  b.rewards = random_tensor({hzn, m}, rng);
  std::vector<double> g(static_cast<std::size_t>(hzn * m));
  for (auto& x : g) x = 0.99 * rng.uniform();
  b.discounts = Tensor<double>::from({hzn, m}, g);
  return b;
}

}  // namespace

TEST_CASE("gae examples") {
  auto res = gae(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.25, 0}, std::vector<double>{0.99, 0.99}, 0.95);
  CHECK(res.advantages[0] == doctest::Approx(0.512375).epsilon(1e-12));
  CHECK(res.advantages[1] == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(res.returns[0] == doctest::Approx(1.012375));

  std::vector<double> r{1, -2, 3}, v{0.1, 0.2, 0.3, 0.4}, zero{0, 0, 0};
  auto a = gae(r, v, zero, 0.95);
  for (int t = 0; t < 3; ++t) CHECK(a.advantages[t] == doctest::Approx(r[t] - v[t]));
  std::vector<double> g{0.9, 0.8, 0.7};
  auto b = gae(r, v, g, 0.0);
  for (int t = 0; t < 3; ++t) CHECK(b.advantages[t] == doctest::Approx(r[t] + g[t] * v[t + 1] - v[t]));
  CHECK_THROWS_AS(gae(r, zero, g, 0.9), UsageError);
}

TEST_CASE("gae matches brute force and monte-carlo returns") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + rng.index(5);
    std::vector<double> r(h), v(h + 1), g(h), zeros(h + 1, 0.0);
    for (auto& x : r) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    for (auto& x : g) x = rng.uniform();
    const double lambda = rng.uniform();
    auto fast = gae(r, v, g, lambda);
    auto slow = brute_force_advantages(r, v, g, lambda);
    for (std::size_t t = 0; t < h; ++t) CHECK(fast.advantages[t] == doctest::Approx(slow[t]).epsilon(1e-12));
    // lambda = 1, values 0: discounted sum of rewards
    auto mc = gae(r, zeros, g, 1.0);
    for (std::size_t t = 0; t < h; ++t) {
      double acc = 0, coef = 1;
      for (std::size_t k = t; k < h; ++k) {
        acc += coef * r[k];
        coef *= g[k];
      }
      CHECK(mc.advantages[t] == doctest::Approx(acc).epsilon(1e-12));
    }
    // unit discounts, lambda 1: shifting values leaves advantages unchanged
    std::vector<double> ones(h, 1.0), shifted = v;
    for (auto& x : shifted) x += 7.0;
    auto s0 = gae(r, v, ones, 1.0), s1 = gae(r, shifted, ones, 1.0);
    for (std::size_t t = 0; t < h; ++t) {
      CHECK((s0.advantages[t] > 0) == (s1.advantages[t] > 0));
      CHECK(s0.advantages[t] == doctest::Approx(s1.advantages[t]).epsilon(1e-12));
    }
  }
}

TEST_CASE("thresholded entropy loss") {
  const double l3 = std::log(3.0);
  auto uniform = Tensor<double>::full({2, 3}, 1.0 / 3);
  auto logu = Tensor<double>::full({2, 3}, -l3);
  CHECK(thresholded_entropy_loss(uniform, logu, 1.0).item() == doctest::Approx(0.0));
  CHECK(thresholded_entropy_loss(uniform, logu, 0.1).item() == 0.0);
  auto det = Tensor<double>::from({1, 3}, {1, 0, 0});
  auto logdet = Tensor<double>::from({1, 3}, {0, -50, -50});
  CHECK(thresholded_entropy_loss(det, logdet, 0.1).item() == doctest::Approx(0.1));

  // m = 4 with entropy 0.05 ln 4: a two-point distribution solved by bisection
  auto h2 = [](double p) { return -(p * std::log(p) + (1 - p) * std::log(1 - p)); };
  double lo = 1e-12, hi = 0.5;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (h2(mid) < 0.05 * std::log(4.0) ? lo : hi) = mid;
  }
  const double p = lo;
  auto pr = Tensor<double>::from({1, 4}, {p, 1 - p, 0, 0});
  auto lp = Tensor<double>::from({1, 4}, {std::log(p), std::log(1 - p), 0, 0});
  CHECK(thresholded_entropy_loss(pr, lp, 0.1).item() == doctest::Approx(0.05).epsilon(1e-9));
  CHECK_THROWS_AS(thresholded_entropy_loss(Tensor<double>::full({1, 1}, 1.0), Tensor<double>::zeros({1, 1}), 0.1),
                  ConfigError);
}

TEST_CASE("thresholded entropy gradient vanishes above the threshold") {
  Rng rng(2);
  for (double spread : {0.1, 6.0}) {
    auto logits = random_tensor({5, 4}, rng, spread, true);
    auto f = [&] {
      return thresholded_entropy_loss(softmax_last(logits), log_softmax_last(logits), 0.5);
    };
    const double normalized = [&] {
      auto p = softmax_last(logits), lp = log_softmax_last(logits);
      return -sum(mul(p, lp)).item() / 5 / std::log(4.0);
    }();
    auto res = grad_check({logits}, f, rng, 20);
    CHECK(res.max_rel_error < 1e-4);
    double norm = 0;
    for (double g : logits.grad()) norm += std::abs(g);
    if (normalized > 0.5) CHECK(norm == 0.0);
    else CHECK(norm > 0.0);
  }
}

TEST_CASE("act samples the stochastic policy") {
  Rng rng(3);
  AgentConfig c = tiny_agent();
  c.actor_layers = 0;
  ActorCritic<double> ac(c, rng);
  // zero weights: all logits equal
  for (auto& e : ac.actor_params().entries())
    for (auto& x : e.value.mutable_data()) x = 0.0;
  auto state = Tensor<double>::zeros({100000, 6});
  auto acts = ac.act(state, rng);
  std::array<int, 3> counts{};
  for (auto a : acts) {
    REQUIRE(a >= 0);
    REQUIRE(a < 3);
    ++counts[a];
  }
  for (int a = 0; a < 3; ++a) CHECK(std::abs(counts[a] / 1e5 - 1.0 / 3) < 0.01);
  ac.actor_params().get("actor.out.bias").node().data[2] = 20.0;
  auto acts2 = ac.act(Tensor<double>::zeros({10000, 6}), rng);
  CHECK(std::count(acts2.begin(), acts2.end(), 2) >= 9990);
}

TEST_CASE("actor-critic losses") {
  Rng rng(4);
  ActorCritic<double> ac(tiny_agent(), rng);
  auto batch = random_batch(4, 3, rng);
  // gradient check of both losses in their own parameters
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    ActorCritic<double> net(tiny_agent(seed % 2 ? PolicyInput::kZAndH : PolicyInput::kZ), r);
    auto b = random_batch(3, 2, r);
    // targets frozen, as the stop-gradient prescribes
    const auto tg = net.targets(b);
    auto fa = [&] { return net.losses(b, tg).actor; };
    auto fc = [&] { return net.losses(b, tg).critic; };
    CHECK(grad_check(testing::leaves_of(net.actor_params()), fa, r).max_rel_error < 1e-4);
    CHECK(grad_check(testing::leaves_of(net.critic_params()), fc, r).max_rel_error < 1e-4);
  }
  // critic loss never touches the actor, actor loss never touches the critic
  auto l = ac.losses(batch);
  ac.actor_params().zero_grad();
  ac.critic_params().zero_grad();
  l.critic.backward();
  CHECK(ac.actor_params().grad_norm() == 0.0);
  CHECK(ac.critic_params().grad_norm() > 0.0);
  ac.critic_params().zero_grad();
  ac.losses(batch).actor.backward();
  CHECK(ac.critic_params().grad_norm() == 0.0);
}

TEST_CASE("zero advantages leave only the entropy term; zero discounts zero the weights") {
  Rng rng(5);
  ActorCritic<double> ac(tiny_agent(), rng);
  auto batch = random_batch(3, 2, rng);
  // values constant 0 and rewards 0 => advantages 0
  for (auto& e : ac.critic_params().entries())
    for (auto& x : e.value.mutable_data()) x = 0.0;
  batch.rewards = Tensor<double>::zeros({3, 2});
  auto l = ac.losses(batch);
  CHECK(l.actor.item() == doctest::Approx(0.01 * l.terms.entropy_penalty));

  auto b2 = random_batch(3, 2, rng);
  b2.discounts = Tensor<double>::zeros({3, 2});
  ActorCritic<double> net(tiny_agent(), rng);
  auto base = net.losses(b2);
  // change everything after step 0; the losses must not move
  auto b3 = b2;
  auto r3 = b2.rewards.to_vector();
  for (int i = 2; i < 6; ++i) r3[i] += 5.0;
  b3.rewards = Tensor<double>::from({3, 2}, r3);
  for (int i = 2; i < 6; ++i) b3.actions[i] = (b3.actions[i] + 1) % 3;
  auto moved = net.losses(b3);
  const double ent = 0.01 * (moved.terms.entropy_penalty - base.terms.entropy_penalty);
  CHECK(moved.actor.item() - ent == doctest::Approx(base.actor.item()));
  CHECK(moved.critic.item() == doctest::Approx(base.critic.item()));
}
