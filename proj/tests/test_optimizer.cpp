#include <doctest.h>

#include <cmath>
#include <vector>

#include "nucleiquant/error.hpp"
#include "nucleiquant/optimizer.hpp"
#include "nucleiquant/rng.hpp"

namespace nq = nucleiquant;

namespace {

// Straight-line Ranger on one vector: rectified Adam, then lookahead.
struct ReferenceRanger {
  nq::OptimizerConfig c;
  std::vector<double> m, v, slow;
  int t = 0;

  void step(std::vector<double>& p, const std::vector<double>& g) {
    if (t == 0) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
      slow = p;
    }
    ++t;
    const double rho_inf = 2.0 / (1.0 - c.beta2) - 1.0;
    const double b2t = std::pow(c.beta2, t);
    const double rho = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / (1.0 - std::pow(c.beta1, t));
      if (rho > c.sma_threshold) {
        const double r = std::sqrt((rho - 4) * (rho - 2) * rho_inf /
                                   ((rho_inf - 4) * (rho_inf - 2) * rho));
        p[i] -= c.lr * r * m_hat * std::sqrt(1.0 - b2t) / (std::sqrt(v[i]) + c.epsilon);
      } else {
        p[i] -= c.lr * m_hat;
      }
    }
    if (t % static_cast<int>(c.lookahead_k) == 0) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        slow[i] += c.lookahead_alpha * (p[i] - slow[i]);
        p[i] = slow[i];
      }
    }
  }
};

void run_step(nq::Optimizer& opt, std::vector<double>& p, const std::vector<double>& g) {
  const std::span<double> ps[] = {p};
  const std::span<const double> gs[] = {g};
  opt.step(ps, gs);
}

}  // namespace

TEST_SUITE("optimizer") {

TEST_CASE("sgd step") {
  nq::OptimizerConfig c;
  c.kind = nq::OptimizerKind::kSgd;
  c.lr = 0.1;
  nq::Optimizer opt(c);
  std::vector<double> p{1.0};
  run_step(opt, p, {1.0});
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(opt.steps() == 1);
}

TEST_CASE("ranger matches the straight-line reference") {
  for (auto [k, alpha] : {std::pair<std::size_t, double>{6, 0.5}, {1, 1.0}, {3, 0.3}}) {
    nq::OptimizerConfig c;
    c.lr = 0.01;
    c.lookahead_k = k;
    c.lookahead_alpha = alpha;
    nq::Optimizer opt(c);
    ReferenceRanger ref{c};
    nq::Rng rng(k);
    std::vector<double> p(7), q;
    for (double& x : p) x = rng.normal();
    q = p;
    for (int step = 0; step < 40; ++step) {
      std::vector<double> g(7);
      for (double& x : g) x = rng.normal();
      run_step(opt, p, g);
      ref.step(q, g);
    }
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-12));
  }
}

TEST_CASE("alpha 1 and k 1 reduce to the inner step") {
  nq::OptimizerConfig inner;
  inner.lr = 0.05;
  inner.lookahead_k = 1;
  inner.lookahead_alpha = 1.0;
  nq::OptimizerConfig no_sync = inner;
  no_sync.lookahead_k = 1000000;
  nq::Optimizer a(inner), b(no_sync);
  std::vector<double> p{0.3, -2.0}, q = p;
  nq::Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    const std::vector<double> g{rng.normal(), rng.normal()};
    run_step(a, p, g);
    run_step(b, q, g);
  }
  CHECK(p == q);
}

TEST_CASE("ranger minimizes p^2 from 3") {
  nq::OptimizerConfig c;
  c.lr = 0.3;
  nq::Optimizer opt(c);
  std::vector<double> p{3.0};
  for (int i = 0; i < 50; ++i) run_step(opt, p, {2.0 * p[0]});
  CHECK(std::abs(p[0]) < 0.5);
}

TEST_CASE("lr 0 leaves parameters unchanged") {
  for (auto kind : {nq::OptimizerKind::kSgd, nq::OptimizerKind::kRanger}) {
    nq::OptimizerConfig c;
    c.kind = kind;
    c.lr = 0.0;
    nq::Optimizer opt(c);
    std::vector<double> p{1.0, -4.0};
    for (int i = 0; i < 12; ++i) run_step(opt, p, {0.5, 3.0});
    CHECK(p == std::vector<double>{1.0, -4.0});
  }
}

TEST_CASE("step decay") {
  nq::OptimizerConfig c;
  c.kind = nq::OptimizerKind::kSgd;
  c.lr = 1.0;
  c.decay_every = 2;
  nq::Optimizer opt(c);
  std::vector<double> p{0.0};
  run_step(opt, p, {1.0});
  run_step(opt, p, {1.0});
  CHECK(opt.current_lr() == doctest::Approx(0.1));
  run_step(opt, p, {1.0});
  CHECK(p[0] == doctest::Approx(-2.1));
}

TEST_CASE("config validation") {
  nq::OptimizerConfig c;
  c.lookahead_alpha = 0.0;
  CHECK_THROWS_AS(nq::Optimizer{c}, nq::Error);
  c.lookahead_alpha = 0.5;
  c.lookahead_k = 0;
  CHECK_THROWS_AS(nq::Optimizer{c}, nq::Error);
  c.lookahead_k = 6;
  c.lr = -1.0;
  CHECK_THROWS_AS(nq::Optimizer{c}, nq::Error);
  CHECK(nq::parse_optimizer_kind("sgd") == nq::OptimizerKind::kSgd);
  CHECK_THROWS_AS(nq::parse_optimizer_kind("adam"), nq::Error);
}

}  // TEST_SUITE
