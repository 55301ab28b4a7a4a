#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "cvarnav/risk.hpp"
#include "cvarnav/rng.hpp"

using namespace cvarnav;

TEST_CASE("budget_update: direct evaluations") {
  REQUIRE(budget_update(10.0, 1.0, 0.99) == Catch::Approx((10.0 - 1.0) / 0.99).epsilon(1e-15));
  REQUIRE(budget_update(5.0, 0.0, 0.99) == Catch::Approx(5.0 / 0.99).epsilon(1e-15));
  REQUIRE_THROWS(budget_update(1.0, 0.0, 0.0));
  REQUIRE_THROWS(budget_update(1.0, 0.0, 1.0));
}

TEST_CASE("budget_update: stepwise unrolling matches the closed form") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const double gamma = 0.99;
    const double e0 = rng.uniform(0.0, 20.0);
    const int T = 1 + static_cast<int>(rng.below(40));
    std::vector<double> costs(T);
    for (auto& c : costs) c = rng.below(2) ? 1.0 : 0.0;

    double e = e0;
    for (double c : costs) e = budget_update(e, c, gamma);

    // e_T = e_0/gamma^T - sum_t c_t/gamma^(T-t), with t as 0-based step index
    double closed = e0 / std::pow(gamma, T);
    for (int t = 0; t < T; ++t) closed -= costs[t] / std::pow(gamma, T - t);
    REQUIRE(e == Catch::Approx(closed).epsilon(1e-10));
  }
}

TEST_CASE("noncrossing_quantiles: strictly increasing over random trunk logits") {
  Rng rng(7);
  const int M = 32;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> logits(M + 2);
    for (auto& z : logits) z = rng.normal() * 3.0;
    const QuantileHead h = noncrossing_quantiles(logits);
    REQUIRE(h.k > 0.0);
    for (int i = 1; i < M; ++i) REQUIRE(h.quantiles.q[i] > h.quantiles.q[i - 1]);
  }
}

TEST_CASE("noncrossing_quantiles: equal location logits give phi_i = i/M exactly") {
  const int M = 32;
  std::vector<double> logits(M + 2, 0.7);
  logits[M] = 0.0;
  logits[M + 1] = 0.0;
  const QuantileHead h = noncrossing_quantiles(logits);
  for (int i = 0; i < M; ++i)
    REQUIRE(h.phi[i] == static_cast<double>(i + 1) / M);  // M=32 keeps this exact in binary
}

TEST_CASE("noncrossing_quantiles: softplus tail collapses the spread toward d") {
  const int M = 32;
  std::vector<double> logits(M + 2, 0.0);
  logits[M] = -30.0;  // k = softplus(-30) ~ 9.4e-14
  logits[M + 1] = 2.5;
  const QuantileHead h = noncrossing_quantiles(logits);
  const double spread = h.quantiles.q.back() - h.quantiles.q.front();
  REQUIRE(spread >= 0.0);
  REQUIRE(spread < 1e-12 * std::abs(h.d) + 1e-9);
}

TEST_CASE("quantile_head_backward matches finite differences") {
  Rng rng(13);
  const int M = 8;
  std::vector<double> logits(M + 2);
  for (auto& z : logits) z = rng.uniform(-1.0, 1.0);
  std::vector<double> dLdq(M);
  for (auto& g : dLdq) g = rng.uniform(-1.0, 1.0);

  const QuantileHead h = noncrossing_quantiles(logits);
  std::vector<double> analytic;
  quantile_head_backward(h, dLdq, analytic);

  const double eps = 1e-7;
  for (int j = 0; j < M + 2; ++j) {
    auto value = [&](double delta) {
      std::vector<double> z = logits;
      z[j] += delta;
      const QuantileHead hh = noncrossing_quantiles(z);
      double L = 0.0;
      for (int i = 0; i < M; ++i) L += dLdq[i] * hh.quantiles.q[i];
      return L;
    };
    const double fd = (value(eps) - value(-eps)) / (2 * eps);
    REQUIRE(analytic[j] == Catch::Approx(fd).margin(1e-6));
  }
}

TEST_CASE("cvar_cost_value: direct evaluations and fallback") {
  QuantileSet qs;
  qs.q = {1, 2, 3, 4};
  REQUIRE(cvar_cost_value(qs, 2.5) == Catch::Approx(3.5));
  REQUIRE(cvar_cost_value(qs, 0.5) == Catch::Approx(2.5));  // mean of all
  REQUIRE(cvar_cost_value(qs, 99.0) == Catch::Approx(4.0)); // fallback to q_M
}

TEST_CASE("cvar_cost_value is nondecreasing in e for a fixed quantile set") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    QuantileSet qs;
    double acc = rng.uniform(-5, 5);
    for (int i = 0; i < 16; ++i) {
      acc += rng.uniform(0.0, 1.0);
      qs.q.push_back(acc);
    }
    double prev = -1e300;
    for (double e = qs.q.front() - 1.0; e <= qs.q.back() + 1.0; e += 0.05) {
      const double v = cvar_cost_value(qs, e);
      REQUIRE(v >= prev - 1e-12);
      prev = v;
    }
  }
}

TEST_CASE("huber_quantile_loss: all-zero deltas give zero loss") {
  QuantileSet qs;
  qs.q = {2.0, 2.0, 2.0};
  std::vector<double> targets = {2.0, 2.0, 2.0};
  REQUIRE(huber_quantile_loss(qs, targets, 1.0) == 0.0);
}

TEST_CASE("huber_quantile_loss: single-term hand evaluation at delta = kappa") {
  const double kappa = 1.0;
  QuantileSet one;
  one.q = {0.0};
  std::vector<double> t1 = {kappa};  // delta = kappa, tau_hat = 0.5
  // rho = |0.5 - 0| * (kappa^2/2) / kappa = 0.5 * kappa / 2
  REQUIRE(huber_quantile_loss(one, t1, kappa) == Catch::Approx(0.5 * (kappa * kappa / 2) / kappa));
}

TEST_CASE("huber term is convex in delta") {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const double tau = rng.uniform(0.01, 0.99);
    const double kappa = rng.uniform(0.1, 2.0);
    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
    const double mid = huber_quantile_term(0.5 * (a + b), tau, kappa);
    const double avg =
        0.5 * (huber_quantile_term(a, tau, kappa) + huber_quantile_term(b, tau, kappa));
    REQUIRE(mid <= avg + 1e-12);
  }
}

TEST_CASE("var_update: direct evaluation of the exceedance rule") {
  VarTracker t;
  t.u = 5.0;
  t.alpha = 0.9;
  t.beta_u = 1.0;
  std::vector<double> costs = {0, 0, 0, 0, 0, 0, 0, 6, 7, 8};
  const double p = var_update(t, costs);
  REQUIRE(p == Catch::Approx(0.3));
  REQUIRE(t.u == Catch::Approx(5.2));
  REQUIRE_THROWS(var_update(t, std::vector<double>{}));
}

TEST_CASE("var_update: exact exceedance at 1-alpha is a fixed point") {
  VarTracker t;
  t.u = 3.0;
  t.alpha = 0.9;
  t.beta_u = 0.5;
  std::vector<double> costs(10, 0.0);
  costs[9] = 7.0;  // exactly one of ten >= 3 -> p_hat = 0.1 = 1 - alpha
  var_update(t, costs);
  REQUIRE(t.u == 3.0);
}

TEST_CASE("var_update converges to the sort-based quantile on a stationary distribution") {
  Rng rng(19);
  VarTracker t;
  t.u = 0.0;
  t.alpha = 0.9;
  t.beta_u = 0.05;
  std::vector<double> all;
  std::vector<double> epoch;
  for (int k = 0; k < 1000; ++k) {  // 10^4 episodes in epochs of 10
    epoch.clear();
    for (int n = 0; n < 10; ++n) {
      const double c = 10.0 * rng.uniform();  // uniform costs on [0,10)
      epoch.push_back(c);
      all.push_back(c);
    }
    var_update(t, epoch);
  }
  const double oracle = empirical_quantile(all, 0.9);
  REQUIRE(std::abs(t.u - oracle) <= 0.5);
}

TEST_CASE("lambda_update: slack arithmetic and projection") {
  LagrangeMultiplier lm;
  lm.lambda = 1.0;
  lm.beta_lambda = 0.1;
  lm.threshold_b = 10.0;
  lm.lambda_max = 100.0;
  lambda_update(lm, 6.0, 5.0);  // slack b-u-C = -1 -> lambda += 0.1
  REQUIRE(lm.lambda == Catch::Approx(1.1));

  lm.lambda = 0.05;
  lambda_update(lm, 0.0, 0.0);  // slack 10 -> raw negative -> floor
  REQUIRE(lm.lambda == 0.0);

  lm.lambda = 99.95;
  lm.beta_lambda = 1.0;
  lambda_update(lm, 10.0, 10.0);  // slack -10 -> raw 109.95 -> ceiling
  REQUIRE(lm.lambda == 100.0);
}

TEST_CASE("empirical_quantile: order statistic at ceil(alpha*N)") {
  std::vector<double> c = {10, 1, 9, 2, 8, 3, 7, 4, 6, 5};
  REQUIRE(empirical_quantile(c, 0.9) == 9.0);
  REQUIRE(empirical_quantile(c, 0.05) == 1.0);
  std::vector<double> zeros(8, 0.0);
  REQUIRE(empirical_quantile(zeros, 0.9) == 0.0);
}

TEST_CASE("cvar_brute_force: worst-quarter example and degenerate sample") {
  std::vector<double> s = {0, 0, 0, 10};
  const VarCvar vc = cvar_brute_force(s, 0.75);
  REQUIRE(vc.var == 0.0);
  REQUIRE(vc.cvar == Catch::Approx(10.0).margin(1e-2));

  std::vector<double> eq(5, 3.25);
  for (double a : {0.1, 0.5, 0.9}) {
    const VarCvar e = cvar_brute_force(eq, a);
    REQUIRE(e.var == 3.25);
    REQUIRE(e.cvar == 3.25);
  }
}

TEST_CASE("cvar_brute_force: CVaR >= VaR and tail limit toward the sample max") {
  Rng rng(23);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(40));
    std::vector<double> s(n);
    for (auto& v : s) v = rng.uniform(-5, 15);
    const double alpha = rng.uniform(0.05, 0.95);
    const VarCvar vc = cvar_brute_force(s, alpha);
    REQUIRE(vc.cvar >= vc.var - 1e-9);
  }
  std::vector<double> s(100);
  for (auto& v : s) v = rng.uniform(0, 10);
  const double mx = *std::max_element(s.begin(), s.end());
  const VarCvar vc = cvar_brute_force(s, 0.999);
  REQUIRE(vc.cvar == Catch::Approx(mx).margin(1e-2 * 10));
}
