#include <doctest.h>

#include <cmath>

#include "twm/errors.hpp"
#include "twm/verify/kl_equivalence.hpp"

using namespace twm;
using namespace twm::verify;

namespace {

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST_CASE("shared pair yields valid distributions") {
  Rng rng(3);
  auto pair = SharedParamPair::random(5, 7, 6, rng);
  for (const auto& d : {pair.q(pair.theta), pair.p(pair.theta)}) {
    double s = 0;
    for (double x : d) {
      CHECK(x > 0.0);
      s += x;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(SharedParamPair::random(0, 3, 3, rng), ConfigError);
}

TEST_CASE("balanced KL gradient matches central differences") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    auto pair = SharedParamPair::random(4, 8, 5, rng);
    const double lambda = trial == 0 ? 0.8 : rng.uniform();
    CHECK(relative_error(balanced_kl_grad(pair, lambda), finite_difference_kl(pair, lambda)) < 1e-6);
  }
}

TEST_CASE("balanced cross-entropy gradient matches central differences") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    auto pair = SharedParamPair::random(3, 6, 4, rng);
    const double l1 = rng.uniform(), l2 = rng.uniform(), l3 = rng.uniform();
    CHECK(relative_error(balanced_ce_grad(pair, l1, l2, l3), finite_difference_ce(pair, l1, l2, l3)) < 1e-6);
  }
}

TEST_CASE("identity: lambda1 = lambda, lambda2 = lambda3 = 1 - lambda") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    auto pair = SharedParamPair::random(1 + static_cast<int>(rng.index(8)), 1 + static_cast<int>(rng.index(16)),
                                        2 + static_cast<int>(rng.index(8)), rng, 2.0);
    const double lambda = rng.uniform();
    CHECK(relative_error(balanced_kl_grad(pair, lambda), balanced_ce_grad(pair, lambda, 1 - lambda, 1 - lambda)) <
          1e-6);
  }
}

TEST_CASE("lambda = 1 touches only the p pathway") {
  Rng rng(14);
  auto pair = SharedParamPair::random(3, 5, 4, rng);
  const auto g = balanced_kl_grad(pair, 1.0);
  // theta layout: W1, b1, Wq, Wp; the q head gets no gradient
  const std::size_t wq = static_cast<std::size_t>(pair.inputs * pair.hidden + pair.hidden);
  const std::size_t wp = wq + static_cast<std::size_t>(pair.hidden * pair.classes);
  for (std::size_t i = wq; i < wp; ++i) CHECK(g[i] == 0.0);
  CHECK(max_abs({g.begin() + wp, g.end()}) > 0.0);
  // and lambda = 0 only the q pathway
  const auto g0 = balanced_kl_grad(pair, 0.0);
  for (std::size_t i = wp; i < g0.size(); ++i) CHECK(g0[i] == 0.0);
}

TEST_CASE("q equal to p gives zero loss") {
  Rng rng(15);
  auto pair = SharedParamPair::random(3, 5, 4, rng);
  pair.x_p = pair.x_q;
  const std::size_t wq = static_cast<std::size_t>(pair.inputs * pair.hidden + pair.hidden);
  const std::size_t n = static_cast<std::size_t>(pair.hidden * pair.classes);
  std::copy(pair.theta.begin() + wq, pair.theta.begin() + wq + n, pair.theta.begin() + wq + n);
  CHECK(std::abs(balanced_kl_loss(pair, pair.theta, pair.theta, 0.3)) < 1e-14);
  // both gradients vanish at q = p, so compare absolutely
  const auto kl = balanced_kl_grad(pair, 0.3), ce = balanced_ce_grad(pair, 0.3, 0.7, 0.7);
  CHECK(max_abs(kl) < 1e-12);
  CHECK(max_abs(ce) < 1e-12);
}

TEST_CASE("all coefficients zero give a zero gradient") {
  Rng rng(16);
  auto pair = SharedParamPair::random(3, 5, 4, rng);
  CHECK(max_abs(balanced_ce_grad(pair, 0, 0, 0)) == 0.0);
  CHECK_THROWS_AS(balanced_ce_grad(pair, -1, 0, 0), ConfigError);
  CHECK_THROWS_AS(balanced_kl_grad(pair, 1.5), ConfigError);
}

TEST_CASE("term gradients decompose and H(sg q) has none") {
  Rng rng(17);
  auto pair = SharedParamPair::random(4, 6, 5, rng);
  CHECK(max_abs(term_grad(pair, Term::kEntropySgQ)) == 0.0);
  CHECK(balanced_ce_grad(pair, 0.4, 0.6, 0.6) == balanced_ce_grad(pair, 0.4, 0.6, 0.6, 0.4));
  // each term against its own central differences
  const auto ce_sgq = term_grad(pair, Term::kCrossEntropySgQ);
  const auto ce_sgp = term_grad(pair, Term::kCrossEntropySgP);
  const auto h_q = term_grad(pair, Term::kEntropyQ);
  CHECK(relative_error(ce_sgq, finite_difference_ce(pair, 1, 0, 0)) < 1e-6);
  CHECK(relative_error(ce_sgp, finite_difference_ce(pair, 0, 1, 0)) < 1e-6);
  auto neg_h = h_q;
  for (auto& x : neg_h) x = -x;
  CHECK(relative_error(neg_h, finite_difference_ce(pair, 0, 0, 1)) < 1e-6);
  // linear combination
  const auto combined = balanced_ce_grad(pair, 0.2, 0.5, 0.5);
  std::vector<double> manual(combined.size());
  for (std::size_t i = 0; i < manual.size(); ++i) manual[i] = 0.2 * ce_sgq[i] + 0.5 * ce_sgp[i] - 0.5 * h_q[i];
  CHECK(relative_error(combined, manual) < 1e-12);
  // q fixed (lambda2 = lambda3): the q-pathway gradient is that of KL(q || sg p)
  CHECK(relative_error(balanced_ce_grad(pair, 0, 1, 1), term_grad(pair, Term::kKlSgP)) < 1e-10);
}

TEST_CASE("verify_kl report") {
  const auto r = verify_kl(100, 7);
  CHECK(r.trials.size() == 100);
  CHECK(r.passed);
  CHECK(r.max_identity_error < 1e-6);
  CHECK(r.max_fd_error < 1e-6);
  CHECK_THROWS_AS(verify_kl(0, 1), ConfigError);
}
