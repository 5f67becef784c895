#pragma once

#include <cstdint>
#include <vector>

#include "twm/numerics/rng.hpp"

namespace twm::verify {

/// Two categorical distributions q and p computed from one parameter vector:
/// a shared hidden layer silu(W1 x + b1) followed by separate output heads,
/// q on input x_q and p on input x_p.
struct SharedParamPair {
  int inputs = 0, hidden = 0, classes = 0;
  std::vector<double> theta;  // W1 [inputs, hidden], b1 [hidden], Wq [hidden, classes], Wp [hidden, classes]
  std::vector<double> x_q, x_p;

  static SharedParamPair random(int inputs, int hidden, int classes, Rng& rng, double scale = 1.0);
  std::size_t size() const { return theta.size(); }
  /// Plain double forward passes, independent of the autodiff engine.
  std::vector<double> q(const std::vector<double>& at) const;
  std::vector<double> p(const std::vector<double>& at) const;
};

enum class Term {
  kCrossEntropySgQ,  // CE(sg q, p)
  kCrossEntropySgP,  // CE(q, sg p)
  kEntropyQ,         // H(q)
  kEntropySgQ,       // H(sg q)
  kKlSgQ,            // KL(sg q || p)
  kKlSgP,            // KL(q || sg p)
};

/// Reverse-mode gradient of one term with respect to theta.
std::vector<double> term_grad(const SharedParamPair& pair, Term term);

/// Gradient of lambda KL(sg q || p) + (1 - lambda) KL(q || sg p).
std::vector<double> balanced_kl_grad(const SharedParamPair& pair, double lambda);

/// Gradient of l1 CE(sg q, p) + l2 CE(q, sg p) - l3 H(q) - sg_entropy H(sg q).
std::vector<double> balanced_ce_grad(const SharedParamPair& pair, double l1, double l2, double l3,
                                     double sg_entropy = 0.0);

/// Loss value with the stop-gradient operands frozen at `frozen`, evaluated at
/// `at`. Its central differences at at == frozen give the gradient oracle.
double balanced_kl_loss(const SharedParamPair& pair, const std::vector<double>& at,
                        const std::vector<double>& frozen, double lambda);
double balanced_ce_loss(const SharedParamPair& pair, const std::vector<double>& at,
                        const std::vector<double>& frozen, double l1, double l2, double l3);

std::vector<double> finite_difference_kl(const SharedParamPair& pair, double lambda, double h = 1e-5);
std::vector<double> finite_difference_ce(const SharedParamPair& pair, double l1, double l2, double l3,
                                         double h = 1e-5);

/// ||a - b|| / max(||a||, ||b||, floor)
double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12);

struct KlTrial {
  double lambda = 0;
  double identity_error = 0;  // balanced_kl_grad vs balanced_ce_grad(lambda, 1-lambda, 1-lambda)
  double fd_error = 0;        // balanced_kl_grad vs central differences
  bool sg_entropy_exact = false;  // adding H(sg q) leaves the gradient bitwise unchanged
};

struct KlReport {
  std::vector<KlTrial> trials;
  double tolerance = 1e-6;
  double max_identity_error = 0;
  double max_fd_error = 0;
  bool passed = false;
};

/// Random (theta, lambda) draws; each trial samples sizes up to 16 inputs,
/// 32 hidden units and 16 classes.
KlReport verify_kl(int trials, std::uint64_t seed, double tolerance = 1e-6);

}  // namespace twm::verify
