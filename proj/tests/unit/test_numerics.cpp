#include <doctest.h>

#include <cmath>
#include <numbers>

#include "../support/gradcheck.hpp"
#include "twm/numerics/distributions.hpp"
#include "twm/numerics/nn.hpp"
#include "twm/numerics/ops.hpp"
#include "twm/numerics/optim.hpp"

using namespace twm;
using twm::testing::grad_check;
using twm::testing::random_tensor;

namespace {
using TD = Tensor<double>;
using TF = Tensor<float>;
constexpr double kGradTol = 1e-4;
}  // namespace

TEST_CASE("silu at zero and softmax symmetry") {
  CHECK(silu(TF::from({1}, {0.0f})).item() == 0.0f);
  auto s = softmax_last(TF::from({2}, {0.0f, 0.0f}));
  CHECK(s.at(0) == doctest::Approx(0.5));
  CHECK(s.at(1) == doctest::Approx(0.5));
}

TEST_CASE("silu derivative at 1 matches central differences") {
  auto x = TD::parameter({1}, {1.0});
  sum(silu(x)).backward();
  // oracle: central difference of x*sigmoid(x), h = 1e-5
  auto f = [](double v) { return v / (1.0 + std::exp(-v)); };
  const double h = 1e-5;
  const double fd = (f(1.0 + h) - f(1.0 - h)) / (2 * h);
  CHECK(x.grad()[0] == doctest::Approx(fd).epsilon(1e-8));
  CHECK(x.grad()[0] == doctest::Approx(0.92767).epsilon(1e-5));
}

TEST_CASE("backward basics") {
  auto p = TD::parameter({2}, {1.0, 2.0});
  auto q = TD::parameter({2}, {3.0, 4.0});
  sum(square(p)).backward();
  CHECK(p.grad()[0] == 2.0);
  CHECK(p.grad()[1] == 4.0);
  CHECK(q.grad()[0] == 0.0);
  CHECK(q.grad()[1] == 0.0);
  CHECK_THROWS_AS(square(p).backward(), UsageError);
}

TEST_CASE("shape mismatch and non-finite values are errors") {
  CHECK_THROWS_AS(add(TF::zeros({2}), TF::zeros({3})), ConfigError);
  CHECK_THROWS_AS(matmul(TF::zeros({2, 3}), TF::zeros({2, 3})), ConfigError);
  try {
    (void)log(TF::from({1}, {0.0f}));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("adam single step moves by about lr") {
  ParameterSet<double> ps;
  auto p = ps.add("p", {1}, {1.0});
  sum(square(p)).backward();
  Adam adam;
  adam.step(ps, 0.001, 100.0);
  // hand computation: m=0.2, v=0.004, bias-corrected m=2, v=4
  const double expected = 1.0 - 0.001 * 2.0 / (std::sqrt(4.0) + 1e-8);
  CHECK(p.at(0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(ps.step() == 1);
}

TEST_CASE("adam leaves parameters alone for zero gradient or zero lr") {
  ParameterSet<double> ps;
  auto p = ps.add("p", {2}, {1.0, -3.0});
  Adam adam;
  adam.step(ps, 0.01, 100.0);
  CHECK(p.at(0) == 1.0);
  CHECK(p.at(1) == -3.0);
  sum(square(p)).backward();
  adam.step(ps, 0.0, 100.0);
  CHECK(p.at(0) == 1.0);
  CHECK(p.at(1) == -3.0);
  CHECK(ps.step() == 2);
}

TEST_CASE("adam clips the global norm and names bad gradients") {
  ParameterSet<double> ps;
  auto a = ps.add("a", {1}, {0.0});
  auto b = ps.add("b", {1}, {0.0});
  a.mutable_grad()[0] = 300.0;
  b.mutable_grad()[0] = 400.0;
  Adam adam;
  CHECK(adam.step(ps, 0.0, 100.0) == doctest::Approx(500.0));
  a.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam.step(ps, 0.1, 100.0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("'a'") != std::string::npos);
  }
  CHECK_THROWS_AS(ps.set_step(0), UsageError);
}

TEST_CASE("softmax rows sum to one and layer norm standardizes") {
  Rng rng(3);
  auto x = random_tensor({7, 13}, rng, 4.0);
  auto s = softmax_last(x);
  for (int r = 0; r < 7; ++r) {
    double acc = 0;
    for (int c = 0; c < 13; ++c) acc += s.at(r * 13 + c);
    CHECK(std::abs(acc - 1.0) < 1e-6);
  }
  auto y = layer_norm(x, TD(), TD());
  for (int r = 0; r < 7; ++r) {
    double m = 0, v = 0;
    for (int c = 0; c < 13; ++c) m += y.at(r * 13 + c);
    m /= 13;
    for (int c = 0; c < 13; ++c) v += (y.at(r * 13 + c) - m) * (y.at(r * 13 + c) - m);
    v /= 13;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(v - 1.0) < 1e-4);
  }
}

TEST_CASE("categorical entropy of uniform logits is K ln C") {
  CategoricalVector<double> d(TD::zeros({32, 32}));
  CHECK(std::abs(d.entropy().item() - 32.0 * std::log(32.0)) < 1e-6);
  CHECK(d.entropy().item() == doctest::Approx(110.904).epsilon(1e-5));
  Rng rng(1);
  CategoricalVector<double> r(random_tensor({4, 5}, rng, 3.0), 0.0);
  for (int k = 0; k < 4; ++k) {
    double acc = 0, h = 0;
    for (int c = 0; c < 5; ++c) {
      const double p = r.probs().at(k * 5 + c);
      acc += p;
      if (p > 0) h -= p * std::log(p);
    }
    CHECK(std::abs(acc - 1.0) < 1e-6);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(5.0) + 1e-12);
  }
}

TEST_CASE("categorical sampling") {
  Rng rng(11);
  CategoricalVector<double> certain(TD::from({1, 3}, {0.0, -1e4, -1e4}), 0.0);
  for (int i = 0; i < 200; ++i) CHECK(certain.sample(rng).at(0) == 1.0);

  // Monte-Carlo oracle: binomial(1e5, 0.5) has sd 0.0016
  CategoricalVector<double> coin(TD::zeros({1, 2}), 0.0);
  int ones = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ones += coin.sample(rng).at(0) == 1.0;
  CHECK(std::abs(ones / double(n) - 0.5) < 0.01);
}

TEST_CASE("straight-through sample is one-hot and passes gradients to logits") {
  Rng rng(5);
  auto logits = random_tensor({3, 4}, rng, 1.0, true);
  CategoricalVector<double> d(logits);
  auto s = d.sample_straight_through(rng);
  for (int k = 0; k < 3; ++k) {
    double acc = 0;
    for (int c = 0; c < 4; ++c) {
      const double v = s.at(k * 4 + c);
      CHECK((v == 0.0 || v == 1.0));
      acc += v;
    }
    CHECK(acc == 1.0);
  }
  // A plain sum would give zero gradient since each probability row sums to 1.
  auto w = random_tensor({3, 4}, rng);
  sum(mul(s, w)).backward();
  double norm = 0;
  for (double g : logits.grad()) norm += g * g;
  CHECK(norm > 1e-6);
}

TEST_CASE("normal and bernoulli heads") {
  CHECK(normal_log_density(0.3, 0.3) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
  auto p = sigmoid(TF::from({3}, {-30.0f, 0.0f, 30.0f}));
  for (int i = 0; i < 3; ++i) {
    CHECK(p.at(i) >= 0.0f);
    CHECK(p.at(i) <= 1.0f);
  }
  CHECK(p.at(1) == 0.5f);
  auto nll = bernoulli_nll(TD::from({2}, {0.0, 2.0}), TD::from({2}, {1.0, 0.0}));
  CHECK(nll.at(0) == doctest::Approx(std::log(2.0)));
  CHECK(nll.at(1) == doctest::Approx(std::log(1.0 + std::exp(2.0))));
}

TEST_CASE("op gradients match finite differences over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    auto a = random_tensor({3, 4}, rng, 1.0, true);
    auto b = random_tensor({4, 5}, rng, 1.0, true);
    auto g = random_tensor({5}, rng, 1.0, true);
    auto bias = random_tensor({5}, rng, 1.0, true);
    auto w = random_tensor({3, 5}, rng);
    auto f1 = [&] {
      auto h = layer_norm(matmul(a, b), g, bias);
      return sum(mul(silu(h), w));
    };
    CHECK(grad_check({a, b, g, bias}, f1, rng).max_rel_error < kGradTol);

    auto f2 = [&] {
      auto ls = log_softmax_last(matmul(a, b));
      auto sm = softmax_last(permute(reshape(matmul(a, b), {3, 5, 1}), {0, 2, 1}));
      auto cat = concat<double>({ls, reshape(sm, {3, 5})}, 0);
      return sum(mul(slice(cat, 0, 1, 3), add(w, square(exp(scale(w, 0.1))))));
    };
    CHECK(grad_check({a, b}, f2, rng).max_rel_error < kGradTol);

    auto f3 = [&] {
      auto s = sigmoid(a);
      auto sp = softplus(sub(a, add_scalar(s, 0.5)));
      auto r = relu(add_row(matmul(sp, b), bias));
      return mean(mul(r, w));
    };
    CHECK(grad_check({a, b, bias}, f3, rng).max_rel_error < kGradTol);
  }
}

TEST_CASE("attention primitives gradients") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(100 + seed);
    auto q = random_tensor({2, 3, 4}, rng, 1.0, true);
    auto k = random_tensor({2, 5, 4}, rng, 1.0, true);
    auto r = random_tensor({2, 3, 6}, rng, 1.0, true);
    std::vector<std::uint8_t> vis(15);
    std::vector<std::int64_t> idx(15);
    for (int i = 0; i < 15; ++i) {
      vis[i] = (i % 5) <= (i / 5) + 2;
      idx[i] = (i % 4 == 3) ? -1 : (i * 7) % 6;
    }
    auto w = random_tensor({2, 3, 5}, rng);
    auto f = [&] {
      auto s = add(bmm(q, k, true), rel_gather(r, idx, 5));
      return sum(mul(masked_softmax(s, vis), w));
    };
    CHECK(grad_check({q, k, r}, f, rng).max_rel_error < kGradTol);

    std::vector<std::int64_t> sel{2, 0, 2};
    std::vector<std::int64_t> gi{1, 3, 0, 2, 2, 1};
    auto f2 = [&] {
      auto x = index_select(q, 1, sel);
      return sum(mul(gather_last(x, gi), TD::from({2, 3}, {1, 2, 3, 4, 5, 6})));
    };
    CHECK(grad_check({q}, f2, rng).max_rel_error < kGradTol);
  }
}

TEST_CASE("masked softmax gives exact zeros on hidden entries") {
  std::vector<std::uint8_t> vis{1, 0, 1, 1};
  auto s = masked_softmax(TF::from({2, 2}, {1.0f, 50.0f, 2.0f, 3.0f}), vis);
  CHECK(s.at(1) == 0.0f);
  CHECK(s.at(0) == 1.0f);
}

TEST_CASE("convolution gradients") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(200 + seed);
    auto x = random_tensor({2, 2, 6, 6}, rng, 1.0, true);
    auto w = random_tensor({3, 2, 4, 4}, rng, 0.5, true);
    auto b = random_tensor({3}, rng, 1.0, true);
    auto wt = random_tensor({3, 2, 4, 4}, rng, 0.5, true);
    auto bt = random_tensor({2}, rng, 1.0, true);
    auto out_w = random_tensor({2, 2, 6, 6}, rng);
    auto f = [&] {
      auto h = conv2d(x, w, b, 2, 1);  // [2,3,3,3]
      auto y = conv_transpose2d(silu(h), wt, bt, 2, 1);  // [2,2,6,6]
      return sum(mul(y, out_w));
    };
    CHECK(grad_check({x, w, b, wt, bt}, f, rng, 60).max_rel_error < kGradTol);
  }
}

TEST_CASE("conv transpose is the adjoint of conv") {
  Rng rng(9);
  auto x = random_tensor({1, 2, 8, 8}, rng);
  auto w = random_tensor({3, 2, 4, 4}, rng);
  auto y = random_tensor({1, 3, 4, 4}, rng);
  auto cx = conv2d(x, w, TD(), 2, 1);
  auto ty = conv_transpose2d(y, w, TD(), 2, 1);
  REQUIRE(ty.shape() == x.shape());
  double lhs = 0, rhs = 0;
  for (int i = 0; i < cx.numel(); ++i) lhs += cx.at(i) * y.at(i);
  for (int i = 0; i < x.numel(); ++i) rhs += x.at(i) * ty.at(i);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("mlp gradient and deterministic training replay") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    ParameterSet<float> ps;
    nn::Mlp<float> mlp(ps, "m", 3, 8, 2, 2, rng);
    Adam adam;
    for (int i = 0; i < 5; ++i) {
      ps.zero_grad();
      auto x = TF::from({4, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 2, 3});
      sum(square(mlp(x))).backward();
      adam.step(ps, 1e-3, 100.0);
    }
    std::vector<float> out;
    for (auto& e : ps.entries()) out.insert(out.end(), e.value.data().begin(), e.value.data().end());
    return out;
  };
  CHECK(run(4) == run(4));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    ParameterSet<double> ps;
    nn::Mlp<double> mlp(ps, "m", 3, 6, 2, 2, rng);
    auto x = random_tensor({4, 3}, rng);
    auto f = [&] { return sum(square(mlp(x))); };
    CHECK(grad_check(testing::leaves_of(ps), f, rng).max_rel_error < kGradTol);
  }
}

TEST_CASE("no-grad guard skips the tape") {
  auto p = TF::parameter({1}, {2.0f});
  {
    NoGradGuard g;
    auto y = square(p);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(square(p).requires_grad());
}
