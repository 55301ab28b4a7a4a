#pragma once

// Risk machinery: cost-budget recursion, the noncrossing quantile head of the
// distributional cost critic, the tail-conditional cost value, the Huber
// quantile loss, the adaptive VaR tracker, the projected Lagrange multiplier
// and a brute-force CVaR oracle used by the test suites.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace cvarnav {

// e' = (e - c) / gamma
inline double budget_update(double e, double cost, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::runtime_error("budget_update: gamma must lie in (0,1)");
  return (e - cost) / gamma;
}

struct QuantileSet {
  std::vector<double> q;  // nondecreasing, strictly increasing when slope k > 0
  int size() const { return static_cast<int>(q.size()); }
};

inline double quantile_fraction(int m, int i) {  // tau_i = i/M, i in 1..M
  return static_cast<double>(i) / static_cast<double>(m);
}

inline double quantile_midpoint(int m, int i) {  // (tau_{i-1} + tau_i)/2, i in 1..M
  return (2.0 * i - 1.0) / (2.0 * m);
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// q_i = k * phi_i + d with k = softplus(z_k) > 0 and phi = cumulative softmax
// of the M location logits; monotone by construction.
struct QuantileHead {
  std::vector<double> softmax;  // softmax of the location logits
  std::vector<double> phi;      // cumulative sums, strictly increasing in (0,1]
  double k = 0.0;
  double d = 0.0;
  double z_k = 0.0;
  QuantileSet quantiles;
};

// logits layout: [z_phi(0..M-1), z_k, z_d]
inline QuantileHead noncrossing_quantiles(std::span<const double> logits) {
  if (logits.size() < 3) throw std::runtime_error("noncrossing_quantiles: need at least 3 logits");
  const int m = static_cast<int>(logits.size()) - 2;
  QuantileHead h;
  h.softmax.resize(m);
  h.phi.resize(m);
  double zmax = logits[0];
  for (int i = 1; i < m; ++i) zmax = std::max(zmax, logits[i]);
  double denom = 0.0;
  for (int i = 0; i < m; ++i) {
    h.softmax[i] = std::exp(logits[i] - zmax);
    denom += h.softmax[i];
  }
  double cum = 0.0;
  for (int i = 0; i < m; ++i) {
    h.softmax[i] /= denom;
    cum += h.softmax[i];
    h.phi[i] = cum;
  }
  h.z_k = logits[m];
  h.k = softplus(h.z_k);
  h.d = logits[m + 1];
  h.quantiles.q.resize(m);
  for (int i = 0; i < m; ++i) h.quantiles.q[i] = h.k * h.phi[i] + h.d;
  return h;
}

// dL/dq -> dL/dlogits, same layout as the forward pass.
inline void quantile_head_backward(const QuantileHead& h, std::span<const double> dLdq,
                                   std::vector<double>& dLdlogits) {
  const int m = static_cast<int>(h.softmax.size());
  if (static_cast<int>(dLdq.size()) != m)
    throw std::runtime_error("quantile_head_backward: gradient size mismatch");
  dLdlogits.assign(m + 2, 0.0);
  double dk = 0.0, dd = 0.0;
  std::vector<double> dphi(m);
  for (int i = 0; i < m; ++i) {
    dk += dLdq[i] * h.phi[i];
    dd += dLdq[i];
    dphi[i] = dLdq[i] * h.k;
  }
  // phi_i = sum_{j<=i} s_j  =>  dL/ds_j = sum_{i>=j} dphi_i
  std::vector<double> ds(m);
  double suffix = 0.0;
  for (int j = m - 1; j >= 0; --j) {
    suffix += dphi[j];
    ds[j] = suffix;
  }
  double dot = 0.0;
  for (int j = 0; j < m; ++j) dot += ds[j] * h.softmax[j];
  for (int j = 0; j < m; ++j) dLdlogits[j] = h.softmax[j] * (ds[j] - dot);
  // k = softplus(z_k): dk/dz_k = sigmoid(z_k)
  dLdlogits[m] = dk / (1.0 + std::exp(-h.z_k));
  dLdlogits[m + 1] = dd;
}

// Conditional mean of quantiles at or above the budget e. When no quantile
// reaches e the most pessimistic available estimate q_M is returned.
inline double cvar_cost_value(const QuantileSet& qs, double e) {
  if (qs.q.empty()) throw std::runtime_error("cvar_cost_value: empty quantile set");
  double sum = 0.0;
  int count = 0;
  for (double q : qs.q) {
    if (q >= e) {
      sum += q;
      ++count;
    }
  }
  if (count == 0) return qs.q.back();
  return sum / count;
}

// Subgradient of cvar_cost_value w.r.t. the quantile vector (the selection is
// treated as locally constant).
inline void cvar_cost_value_grad(const QuantileSet& qs, double e, std::vector<double>& dVdq) {
  const int m = qs.size();
  dVdq.assign(m, 0.0);
  int count = 0;
  for (double q : qs.q)
    if (q >= e) ++count;
  if (count == 0) {
    dVdq[m - 1] = 1.0;
    return;
  }
  for (int i = 0; i < m; ++i)
    if (qs.q[i] >= e) dVdq[i] = 1.0 / count;
}

// Huber-weighted pinball term: |tau - 1{delta<0}| * L_kappa(delta) / kappa.
inline double huber_quantile_term(double delta, double tau, double kappa) {
  const double ad = std::abs(delta);
  const double huber = ad <= kappa ? 0.5 * delta * delta : kappa * (ad - 0.5 * kappa);
  const double w = delta < 0.0 ? 1.0 - tau : tau;
  return w * huber / kappa;
}

inline double huber_quantile_term_ddelta(double delta, double tau, double kappa) {
  const double dh = std::abs(delta) <= kappa ? delta : kappa * (delta > 0.0 ? 1.0 : -1.0);
  const double w = delta < 0.0 ? 1.0 - tau : tau;
  return w * dh / kappa;
}

// (1/M^2) sum_ij rho^kappa_{tau_hat_i}(targets_j - predicted_i).
inline double huber_quantile_loss(const QuantileSet& predicted, std::span<const double> targets,
                                  double kappa) {
  if (kappa <= 0.0) throw std::runtime_error("huber_quantile_loss: kappa must be positive");
  const int m = predicted.size();
  if (m == 0 || targets.empty()) throw std::runtime_error("huber_quantile_loss: empty inputs");
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    const double tau = quantile_midpoint(m, i + 1);
    for (double t : targets) loss += huber_quantile_term(t - predicted.q[i], tau, kappa);
  }
  return loss / (static_cast<double>(m) * static_cast<double>(targets.size()));
}

// Gradient of the loss above w.r.t. the predicted quantiles.
inline void huber_quantile_loss_grad(const QuantileSet& predicted, std::span<const double> targets,
                                     double kappa, std::vector<double>& dLdq) {
  const int m = predicted.size();
  dLdq.assign(m, 0.0);
  const double scale = 1.0 / (static_cast<double>(m) * static_cast<double>(targets.size()));
  for (int i = 0; i < m; ++i) {
    const double tau = quantile_midpoint(m, i + 1);
    const double qi = predicted.q[i];
    double acc = 0.0;
    for (double t : targets) acc -= huber_quantile_term_ddelta(t - qi, tau, kappa);
    dLdq[i] = acc * scale;
  }
}

// Gradient-free VaR tracker driven by the empirical exceedance probability.
struct VarTracker {
  double u = 0.0;
  double alpha = 0.9;
  double beta_u = 0.05;
};

// u <- u + beta_u * (P^(C >= u) - (1 - alpha)); returns the exceedance.
inline double var_update(VarTracker& t, std::span<const double> episode_costs) {
  if (episode_costs.empty()) throw std::runtime_error("var_update: empty episode cost list");
  double exceed = 0.0;
  for (double c : episode_costs)
    if (c >= t.u) exceed += 1.0;
  const double p_hat = exceed / static_cast<double>(episode_costs.size());
  t.u += t.beta_u * (p_hat - (1.0 - t.alpha));
  return p_hat;
}

struct LagrangeMultiplier {
  double lambda = 0.0;
  double lambda_max = 100.0;
  double beta_lambda = 0.01;
  double threshold_b = 10.0;
};

// lambda <- Proj_[0,lambda_max](lambda - beta * (b - u - mean_cost))
inline void lambda_update(LagrangeMultiplier& lm, double u, double mean_episode_cost) {
  const double raw = lm.lambda - lm.beta_lambda * (lm.threshold_b - u - mean_episode_cost);
  lm.lambda = std::min(std::max(raw, 0.0), lm.lambda_max);
}

// Sorted-order statistic at 1-based index ceil(alpha * N).
inline double empirical_quantile(std::vector<double> values, double alpha) {
  if (values.empty()) throw std::runtime_error("empirical_quantile: empty sample");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto idx = static_cast<long long>(std::ceil(alpha * n));
  idx = std::max<long long>(1, std::min<long long>(idx, values.size()));
  return values[static_cast<size_t>(idx - 1)];
}

struct VarCvar {
  double var = 0.0;
  double cvar = 0.0;
};

// Test oracle: VaR from the empirical CDF, CVaR by minimizing
// u + E[(C-u)^+]/(1-alpha) over a dense grid spanning the sample range.
inline VarCvar cvar_brute_force(std::span<const double> samples, double alpha) {
  if (samples.empty()) throw std::runtime_error("cvar_brute_force: empty sample");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::runtime_error("cvar_brute_force: alpha in (0,1)");
  std::vector<double> sorted(samples.begin(), samples.end());
  VarCvar out;
  out.var = empirical_quantile(sorted, alpha);
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front(), hi = sorted.back();
  if (hi == lo) {
    out.cvar = lo;
    return out;
  }
  const int steps = 1000;  // grid step = range/1000 <= 1e-3 * range
  double best = std::numeric_limits<double>::infinity();
  for (int g = 0; g <= steps; ++g) {
    const double u = lo + (hi - lo) * static_cast<double>(g) / steps;
    double tail = 0.0;
    for (double c : sorted)
      if (c > u) tail += c - u;
    const double obj = u + tail / ((1.0 - alpha) * static_cast<double>(sorted.size()));
    best = std::min(best, obj);
  }
  out.cvar = best;
  return out;
}

}  // namespace cvarnav
