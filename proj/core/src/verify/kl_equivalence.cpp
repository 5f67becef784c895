#include "twm/verify/kl_equivalence.hpp"

#include <algorithm>
#include <cmath>

#include "twm/errors.hpp"
#include "twm/numerics/ops.hpp"

namespace twm::verify {

namespace {

struct Offsets {
  std::size_t w1, b1, wq, wp, end;
};

Offsets offsets(const SharedParamPair& s) {
  const auto i = static_cast<std::size_t>(s.inputs), h = static_cast<std::size_t>(s.hidden),
             c = static_cast<std::size_t>(s.classes);
  Offsets o;
  o.w1 = 0;
  o.b1 = h * i;
  o.wq = o.b1 + h;
  o.wp = o.wq + c * h;
  o.end = o.wp + c * h;
  return o;
}

std::vector<double> forward(const SharedParamPair& s, const std::vector<double>& th, const std::vector<double>& x,
                            std::size_t head) {
  const auto o = offsets(s);
  std::vector<double> a(static_cast<std::size_t>(s.hidden));
  for (int j = 0; j < s.hidden; ++j) {
    double u = th[o.b1 + j];
    for (int k = 0; k < s.inputs; ++k) u += th[o.w1 + k * s.hidden + j] * x[k];
    a[j] = u / (1.0 + std::exp(-u));
  }
  std::vector<double> logits(static_cast<std::size_t>(s.classes));
  for (int c = 0; c < s.classes; ++c) {
    double v = 0;
    for (int j = 0; j < s.hidden; ++j) v += th[head + j * s.classes + c] * a[j];
    logits[c] = v;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (auto& v : logits) z += v = std::exp(v - mx);
  for (auto& v : logits) v /= z;
  return logits;
}

double ce(const std::vector<double>& a, const std::vector<double>& b) {
  double out = 0;
  for (std::size_t i = 0; i < a.size(); ++i) out -= a[i] * std::log(b[i]);
  return out;
}

// autodiff graph over theta split into leaves
struct Graph {
  Tensor<double> w1, b1, wq, wp;
  Tensor<double> log_q, log_p;

  explicit Graph(const SharedParamPair& s) {
    const auto o = offsets(s);
    auto leaf = [&](std::size_t from, std::size_t to, Shape shape) {
      return Tensor<double>::parameter(std::move(shape), {s.theta.begin() + from, s.theta.begin() + to});
    };
    w1 = leaf(o.w1, o.b1, {s.inputs, s.hidden});
    b1 = leaf(o.b1, o.wq, {s.hidden});
    wq = leaf(o.wq, o.wp, {s.hidden, s.classes});
    wp = leaf(o.wp, o.end, {s.hidden, s.classes});
    auto head = [&](const std::vector<double>& x, const Tensor<double>& w) {
      auto in = Tensor<double>::from({1, s.inputs}, x);
      auto a = silu(linear(in, w1, b1));
      return log_softmax_last(linear(a, w, Tensor<double>::zeros({s.classes})));
    };
    log_q = head(s.x_q, wq);
    log_p = head(s.x_p, wp);
  }

  std::vector<double> grad_of(const Tensor<double>& loss) {
    for (auto* t : {&w1, &b1, &wq, &wp}) t->zero_grad();
    loss.backward();
    std::vector<double> out;
    for (auto* t : {&w1, &b1, &wq, &wp}) {
      if (t->has_grad()) {
        auto g = t->grad();
        out.insert(out.end(), g.begin(), g.end());
      } else {
        out.insert(out.end(), static_cast<std::size_t>(t->numel()), 0.0);
      }
    }
    return out;
  }
};

Tensor<double> cross_entropy(const Tensor<double>& log_a, const Tensor<double>& log_b) {
  return neg(sum(mul(exp(log_a), log_b)));
}

Tensor<double> term_loss(const Graph& g, Term term) {
  const auto lq = g.log_q, lp = g.log_p;
  switch (term) {
    case Term::kCrossEntropySgQ: return cross_entropy(lq.detach(), lp);
    case Term::kCrossEntropySgP: return cross_entropy(lq, lp.detach());
    case Term::kEntropyQ: return cross_entropy(lq, lq);
    case Term::kEntropySgQ: return cross_entropy(lq.detach(), lq.detach());
    // direct sum q (ln q - ln p), not via the cross-entropy decomposition
    case Term::kKlSgQ: return sum(mul(exp(lq.detach()), sub(lq.detach(), lp)));
    case Term::kKlSgP: return sum(mul(exp(lq), sub(lq, lp.detach())));
  }
  throw UsageError("unknown term");
}

std::vector<double> central(const SharedParamPair& s, double h,
                            const std::function<double(const std::vector<double>&)>& f) {
  std::vector<double> out(s.size());
  auto th = s.theta;
  for (std::size_t i = 0; i < th.size(); ++i) {
    const double orig = th[i];
    th[i] = orig + h;
    const double fp = f(th);
    th[i] = orig - h;
    const double fm = f(th);
    th[i] = orig;
    out[i] = (fp - fm) / (2 * h);
  }
  return out;
}

}  // namespace

SharedParamPair SharedParamPair::random(int inputs, int hidden, int classes, Rng& rng, double scale) {
  if (inputs < 1 || hidden < 1 || classes < 2) throw ConfigError("shared pair needs inputs, hidden >= 1, classes >= 2");
  SharedParamPair s;
  s.inputs = inputs;
  s.hidden = hidden;
  s.classes = classes;
  s.theta.resize(offsets(s).end);
  for (auto& v : s.theta) v = rng.normal(0.0, scale / std::sqrt(static_cast<double>(std::max(inputs, hidden))));
  s.x_q.resize(static_cast<std::size_t>(inputs));
  s.x_p.resize(static_cast<std::size_t>(inputs));
  for (auto& v : s.x_q) v = rng.normal(0.0, 1.0);
  for (auto& v : s.x_p) v = rng.normal(0.0, 1.0);
  return s;
}

std::vector<double> SharedParamPair::q(const std::vector<double>& at) const { return forward(*this, at, x_q, offsets(*this).wq); }
std::vector<double> SharedParamPair::p(const std::vector<double>& at) const { return forward(*this, at, x_p, offsets(*this).wp); }

std::vector<double> term_grad(const SharedParamPair& pair, Term term) {
  Graph g(pair);
  auto loss = term_loss(g, term);
  if (term == Term::kEntropySgQ) return std::vector<double>(pair.size(), 0.0);  // no path to theta
  return g.grad_of(loss);
}

std::vector<double> balanced_kl_grad(const SharedParamPair& pair, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must be in [0, 1]");
  Graph g(pair);
  auto loss = add(scale(term_loss(g, Term::kKlSgQ), lambda), scale(term_loss(g, Term::kKlSgP), 1.0 - lambda));
  return g.grad_of(loss);
}

std::vector<double> balanced_ce_grad(const SharedParamPair& pair, double l1, double l2, double l3, double sg_entropy) {
  if (l1 < 0 || l2 < 0 || l3 < 0) throw ConfigError("cross-entropy coefficients must be >= 0");
  Graph g(pair);
  auto loss = sub(add(scale(term_loss(g, Term::kCrossEntropySgQ), l1), scale(term_loss(g, Term::kCrossEntropySgP), l2)),
                  scale(term_loss(g, Term::kEntropyQ), l3));
  if (sg_entropy != 0.0) loss = sub(loss, scale(term_loss(g, Term::kEntropySgQ), sg_entropy));
  return g.grad_of(loss);
}

double balanced_kl_loss(const SharedParamPair& pair, const std::vector<double>& at, const std::vector<double>& frozen,
                        double lambda) {
  const auto q = pair.q(at), p = pair.p(at), qf = pair.q(frozen), pf = pair.p(frozen);
  const double kl_sgq = ce(qf, p) - ce(qf, qf);
  const double kl_sgp = ce(q, pf) - ce(q, q);
  return lambda * kl_sgq + (1.0 - lambda) * kl_sgp;
}

double balanced_ce_loss(const SharedParamPair& pair, const std::vector<double>& at, const std::vector<double>& frozen,
                        double l1, double l2, double l3) {
  const auto q = pair.q(at), p = pair.p(at), qf = pair.q(frozen), pf = pair.p(frozen);
  return l1 * ce(qf, p) + l2 * ce(q, pf) - l3 * ce(q, q);
}

std::vector<double> finite_difference_kl(const SharedParamPair& pair, double lambda, double h) {
  return central(pair, h, [&](const std::vector<double>& th) { return balanced_kl_loss(pair, th, pair.theta, lambda); });
}

std::vector<double> finite_difference_ce(const SharedParamPair& pair, double l1, double l2, double l3, double h) {
  return central(pair, h,
                 [&](const std::vector<double>& th) { return balanced_ce_loss(pair, th, pair.theta, l1, l2, l3); });
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  if (a.size() != b.size()) throw UsageError("relative_error: size mismatch");
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

KlReport verify_kl(int trials, std::uint64_t seed, double tolerance) {
  if (trials < 1) throw ConfigError("verify-kl needs at least one trial");
  KlReport report;
  report.tolerance = tolerance;
  Rng rng(seed);
  for (int t = 0; t < trials; ++t) {
    const int inputs = 1 + static_cast<int>(rng.index(16));
    const int hidden = 1 + static_cast<int>(rng.index(32));
    const int classes = 2 + static_cast<int>(rng.index(15));
    const auto pair = SharedParamPair::random(inputs, hidden, classes, rng, 0.5 + 2.0 * rng.uniform());
    KlTrial trial;
    trial.lambda = rng.uniform();
    const auto kl = balanced_kl_grad(pair, trial.lambda);
    const auto ce = balanced_ce_grad(pair, trial.lambda, 1.0 - trial.lambda, 1.0 - trial.lambda);
    const auto ce_sg = balanced_ce_grad(pair, trial.lambda, 1.0 - trial.lambda, 1.0 - trial.lambda, trial.lambda);
    trial.identity_error = relative_error(kl, ce);
    trial.fd_error = relative_error(kl, finite_difference_kl(pair, trial.lambda));
    trial.sg_entropy_exact = ce == ce_sg;
    report.max_identity_error = std::max(report.max_identity_error, trial.identity_error);
    report.max_fd_error = std::max(report.max_fd_error, trial.fd_error);
    report.trials.push_back(trial);
  }
  report.passed = std::all_of(report.trials.begin(), report.trials.end(), [&](const KlTrial& x) {
    return x.identity_error < tolerance && x.fd_error < tolerance && x.sg_entropy_exact;
  });
  return report;
}

}  // namespace twm::verify
