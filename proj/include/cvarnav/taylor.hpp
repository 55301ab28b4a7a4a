#pragma once

// Taylor-Model arithmetic specialized to total degree 2, and the layer-by-
// layer propagation that turns a policy network plus a bounded observation
// perturbation into guaranteed per-dimension action intervals.
//
// A model is p(z) + I with z in [-1,1]^n: a quadratic polynomial (constant,
// linear and packed upper-triangular quadratic coefficients) plus an interval
// remainder. Soundness contract: every remainder endpoint computation is
// widened outward by 4 ulp, and coefficient rounding in polynomial arithmetic
// is covered by a magnitude-proportional slack folded into the remainder.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvarnav/navsim.hpp"
#include "cvarnav/nn.hpp"

namespace cvarnav {

struct ReachabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double max_abs() const { return std::max(std::abs(lo), std::abs(hi)); }
  double width() const { return hi - lo; }
};

inline double ulp_of(double x) {
  const double a = std::abs(x);
  return std::nextafter(a, std::numeric_limits<double>::infinity()) - a;
}

// outward rounding: 4 ulp beyond each endpoint; exact zero endpoints stay
// exact (they arise only from arithmetic-free paths)
inline Interval widen_outward(Interval iv) {
  if (iv.lo != 0.0) iv.lo -= 4.0 * ulp_of(iv.lo);
  if (iv.hi != 0.0) iv.hi += 4.0 * ulp_of(iv.hi);
  return iv;
}

inline Interval interval_add(Interval a, Interval b) {
  if (a.lo == 0.0 && a.hi == 0.0) return b;
  if (b.lo == 0.0 && b.hi == 0.0) return a;
  return widen_outward({a.lo + b.lo, a.hi + b.hi});
}

inline Interval interval_scale(Interval a, double w) {
  if (w == 0.0 || (a.lo == 0.0 && a.hi == 0.0)) return {0.0, 0.0};
  Interval r = w >= 0.0 ? Interval{w * a.lo, w * a.hi} : Interval{w * a.hi, w * a.lo};
  return widen_outward(r);
}

inline Interval interval_sym(double radius) {
  if (radius == 0.0) return {0.0, 0.0};
  return widen_outward({-radius, radius});
}

constexpr double kCoeffSlack = 8.0 * std::numeric_limits<double>::epsilon();

inline size_t quad_size(int n) { return static_cast<size_t>(n) * (n + 1) / 2; }

// packed index for monomial z_i z_j with i <= j
inline size_t quad_index(int n, int i, int j) {
  return static_cast<size_t>(i) * n - static_cast<size_t>(i) * (i - 1) / 2 +
         static_cast<size_t>(j - i);
}

struct TaylorModel {
  int n = 0;
  double c0 = 0.0;
  std::vector<double> lin;   // size n
  std::vector<double> quad;  // packed upper triangle incl. diagonal, size n(n+1)/2
  Interval rem{0.0, 0.0};

  static TaylorModel constant(int n, double c) {
    TaylorModel tm;
    tm.n = n;
    tm.c0 = c;
    tm.lin.assign(n, 0.0);
    tm.quad.assign(quad_size(n), 0.0);
    return tm;
  }

  // c + scale * z_index
  static TaylorModel variable(int n, int index, double c, double scale) {
    TaylorModel tm = constant(n, c);
    tm.lin[index] = scale;
    return tm;
  }

  double sum_abs_lin() const {
    double s = 0.0;
    for (double v : lin) s += std::abs(v);
    return s;
  }
  double sum_abs_quad() const {
    double s = 0.0;
    for (double v : quad) s += std::abs(v);
    return s;
  }

  bool finite() const {
    if (!std::isfinite(c0) || !std::isfinite(rem.lo) || !std::isfinite(rem.hi)) return false;
    for (double v : lin)
      if (!std::isfinite(v)) return false;
    for (double v : quad)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// polynomial value at a concrete z (test/oracle helper; remainder excluded)
inline double tm_eval_poly(const TaylorModel& tm, std::span<const double> z) {
  if (static_cast<int>(z.size()) != tm.n) throw std::runtime_error("tm_eval_poly: z size mismatch");
  double acc = tm.c0;
  for (int i = 0; i < tm.n; ++i) acc += tm.lin[i] * z[i];
  size_t idx = 0;
  for (int i = 0; i < tm.n; ++i)
    for (int j = i; j < tm.n; ++j, ++idx) acc += tm.quad[idx] * z[i] * z[j];
  return acc;
}

// Enclosure of the polynomial part only: each monomial over [-1,1]^n is
// bounded by the coefficient magnitude.
inline Interval tm_poly_bounds(const TaylorModel& tm) {
  const double s = tm.sum_abs_lin() + tm.sum_abs_quad();
  const double slack = kCoeffSlack * (std::abs(tm.c0) + s);
  return widen_outward({tm.c0 - s - slack, tm.c0 + s + slack});
}

// Full enclosure: polynomial bounds plus the remainder, outward-rounded.
inline Interval tm_bounds(const TaylorModel& tm) {
  const Interval p = tm_poly_bounds(tm);
  return widen_outward({p.lo + tm.rem.lo, p.hi + tm.rem.hi});
}

using PerturbMask = std::vector<std::uint8_t>;

// Perturbed input: masked dimensions become s_i + eps*z_i over their own
// symbol, the rest stay constant. Remainders start at [0,0].
inline std::vector<TaylorModel> input_tm(std::span<const double> state, double eps,
                                         std::span<const std::uint8_t> perturb_mask) {
  if (eps < 0.0) throw std::runtime_error("input_tm: negative perturbation bound");
  if (state.size() != perturb_mask.size())
    throw std::runtime_error("input_tm: mask length does not match state length");
  int n = 0;
  for (auto m : perturb_mask) n += m ? 1 : 0;
  std::vector<TaylorModel> tms;
  tms.reserve(state.size());
  int sym = 0;
  for (size_t i = 0; i < state.size(); ++i) {
    if (perturb_mask[i]) {
      tms.push_back(TaylorModel::variable(n, sym++, state[i], eps));
    } else {
      tms.push_back(TaylorModel::constant(n, state[i]));
    }
  }
  return tms;
}

// out = sum_j W[., j] * tms[j] + b. Polynomial coefficients combine exactly up
// to float rounding (covered by slack); remainders combine by interval
// arithmetic, so a zero weight annihilates the corresponding remainder.
inline std::vector<TaylorModel> propagate_affine(const std::vector<TaylorModel>& tms,
                                                 std::span<const double> W,
                                                 std::span<const double> b, int out_width) {
  const int in_width = static_cast<int>(tms.size());
  if (in_width == 0) throw std::runtime_error("propagate_affine: empty input");
  if (static_cast<int>(W.size()) != out_width * in_width ||
      static_cast<int>(b.size()) != out_width)
    throw std::runtime_error("propagate_affine: weight dimensions do not match TM vector");
  const int n = tms.front().n;
  std::vector<TaylorModel> out;
  out.reserve(out_width);
  for (int r = 0; r < out_width; ++r) {
    TaylorModel acc = TaylorModel::constant(n, b[r]);
    Interval rem{0.0, 0.0};
    double mag = 0.0;
    for (int j = 0; j < in_width; ++j) {
      const double w = W[static_cast<size_t>(r) * in_width + j];
      if (w == 0.0) continue;  // zero weight contributes nothing, exactly
      const TaylorModel& x = tms[j];
      acc.c0 += w * x.c0;
      for (int i = 0; i < n; ++i) acc.lin[i] += w * x.lin[i];
      for (size_t i = 0; i < acc.quad.size(); ++i) acc.quad[i] += w * x.quad[i];
      rem = interval_add(rem, interval_scale(x.rem, w));
      mag += std::abs(w) * (std::abs(x.c0) + x.sum_abs_lin() + x.sum_abs_quad());
    }
    if (mag != 0.0) mag += std::abs(b[r]);
    acc.rem = interval_add(rem, interval_sym(kCoeffSlack * mag));
    out.push_back(std::move(acc));
  }
  return out;
}

namespace detail {

// Square of a remainder-free TM, truncated to total degree 2. Terms of degree
// 3 and 4 are folded into the remainder through the triangle inequality:
// |2*(l.z)(z'Qz)| <= 2*sum|l|*sum|Q| and |(z'Qz)^2| <= (sum|Q|)^2 on [-1,1]^n.
inline TaylorModel tm_square_truncated(const TaylorModel& x) {
  const int n = x.n;
  TaylorModel out = TaylorModel::constant(n, x.c0 * x.c0);
  const double c = x.c0;
  for (int i = 0; i < n; ++i) out.lin[i] = 2.0 * c * x.lin[i];
  size_t idx = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j, ++idx) {
      double v = 2.0 * c * x.quad[idx];
      v += (i == j) ? x.lin[i] * x.lin[i] : 2.0 * x.lin[i] * x.lin[j];
      out.quad[idx] = v;
    }
  }
  const double sl = x.sum_abs_lin();
  const double sq = x.sum_abs_quad();
  const double fold = 2.0 * sl * sq + sq * sq;
  const double mag = c * c + 2.0 * std::abs(c) * (sl + sq) + sl * sl + fold;
  out.rem = interval_add(interval_sym(fold), interval_sym(kCoeffSlack * mag));
  return out;
}

struct BernsteinQuad {
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  double err = 0.0;  // verified bound on max |tanh(t) - p(t)| over [a,b]
};

// Degree-2 Bernstein approximation of tanh over [a,b] with a rigorous error
// bound: dense sampling at 1001 points, inflated by the Lipschitz constant of
// the error function (<= 1 + max|p'|) times half the grid spacing.
inline BernsteinQuad bernstein2_tanh(double a, double b) {
  BernsteinQuad out;
  const double w = b - a;
  if (!(std::isfinite(a) && std::isfinite(b)) || w < 0.0)
    throw ReachabilityError("bernstein2_tanh: bad interval");
  if (w < 1e-12) {
    const double mid = 0.5 * (a + b);
    out.c0 = std::tanh(mid);
    out.err = 0.5 * w + 1e-15;  // tanh is 1-Lipschitz inside the sliver
    return out;
  }
  const double f0 = std::tanh(a);
  const double f1 = std::tanh(0.5 * (a + b));
  const double f2 = std::tanh(b);
  const double A = f0;
  const double B = 2.0 * (f1 - f0);
  const double C = f0 - 2.0 * f1 + f2;
  // p(t) = A + B*u + C*u^2 with u = (t-a)/w, expanded in t
  out.c2 = C / (w * w);
  out.c1 = B / w - 2.0 * C * a / (w * w);
  out.c0 = A - B * a / w + C * a * a / (w * w);

  const int grid = 1000;
  const double h = w / grid;
  double emax = 0.0;
  for (int g = 0; g <= grid; ++g) {
    const double t = a + h * static_cast<double>(g);
    const double p = out.c0 + t * (out.c1 + t * out.c2);
    emax = std::max(emax, std::abs(std::tanh(t) - p));
  }
  const double dp_a = std::abs(out.c1 + 2.0 * out.c2 * a);
  const double dp_b = std::abs(out.c1 + 2.0 * out.c2 * b);
  const double lip_err = 1.0 + std::max(dp_a, dp_b);
  const double tmax = std::max(std::abs(a), std::abs(b));
  const double eval_slack =
      32.0 * std::numeric_limits<double>::epsilon() *
      (1.0 + std::abs(out.c0) + std::abs(out.c1) * tmax + std::abs(out.c2) * tmax * tmax);
  out.err = emax + lip_err * 0.5 * h + eval_slack;
  return out;
}

}  // namespace detail

// Activation propagation. Identity passes through; tanh composes a degree-2
// Bernstein enclosure with the polynomial part and shifts the input remainder
// through the global Lipschitz bound of tanh (=1).
inline TaylorModel propagate_activation(const TaylorModel& tm, Activation act) {
  if (act == Activation::Identity) return tm;
  if (act != Activation::Tanh)
    throw ReachabilityError(std::string("propagate_activation: unsupported activation ") +
                            activation_name(act));
  TaylorModel poly = tm;
  poly.rem = {0.0, 0.0};
  const Interval range = tm_poly_bounds(poly);
  const auto bern = detail::bernstein2_tanh(range.lo, range.hi);

  TaylorModel out = detail::tm_square_truncated(poly);
  // out = c2*poly^2 + c1*poly + c0
  for (auto& v : out.quad) v *= bern.c2;
  for (int i = 0; i < out.n; ++i) out.lin[i] = bern.c2 * out.lin[i] + bern.c1 * poly.lin[i];
  for (size_t i = 0; i < out.quad.size(); ++i) out.quad[i] += bern.c1 * poly.quad[i];
  out.c0 = bern.c2 * out.c0 + bern.c1 * poly.c0 + bern.c0;
  out.rem = interval_scale(out.rem, bern.c2);

  const double mag = std::abs(out.c0) + out.sum_abs_lin() + out.sum_abs_quad();
  const double shift = tm.rem.max_abs();  // |tanh(x+r) - tanh(x)| <= |r|
  out.rem = interval_add(out.rem, interval_sym(bern.err + shift + kCoeffSlack * mag));
  if (!out.finite()) throw ReachabilityError("propagate_activation: non-finite model");
  return out;
}

inline std::vector<TaylorModel> propagate_network(const DenseNet& net,
                                                  std::vector<TaylorModel> tms) {
  if (static_cast<int>(tms.size()) != net.input_width())
    throw ReachabilityError("propagate_network: input width mismatch");
  for (const Layer& L : net.layers) {
    tms = propagate_affine(tms, L.W, L.b, L.out);
    for (auto& tm : tms) tm = propagate_activation(tm, L.act);
  }
  return tms;
}

struct ReachableActionBox {
  std::array<double, kActionDim> lo{};
  std::array<double, kActionDim> hi{};
  std::array<double, kActionDim> remainder_width{};

  double width(int dim) const { return hi[dim] - lo[dim]; }
  bool contains(const Action& a) const {
    for (int i = 0; i < kActionDim; ++i)
      if (a[i] < lo[i] || a[i] > hi[i]) return false;
    return true;
  }
};

// Guaranteed enclosure of every action the policy can emit for observations
// within eps of the given state. The budget dimension is left unperturbed;
// the caller fixes it to the converged VaR parameter. Bounds are intersected
// with the physical action box (the final rescaling layer already maps into
// it, so the true outputs always lie inside).
inline ReachableActionBox action_reachable_set(const DenseNet& policy,
                                               std::span<const double> state, double eps,
                                               const Action& action_lo, const Action& action_hi,
                                               std::span<const std::uint8_t> perturb_mask) {
  if (static_cast<int>(state.size()) != policy.input_width())
    throw ReachabilityError("action_reachable_set: state width mismatch");
  if (policy.output_width() != kActionDim)
    throw ReachabilityError("action_reachable_set: policy must emit 2 action dimensions");
  auto tms = propagate_network(policy, input_tm(state, eps, perturb_mask));
  ReachableActionBox box;
  for (int d = 0; d < kActionDim; ++d) {
    if (!tms[d].finite()) throw ReachabilityError("action_reachable_set: non-finite output model");
    const Interval iv = tm_bounds(tms[d]);
    if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi))
      throw ReachabilityError("action_reachable_set: non-finite bounds");
    box.lo[d] = std::max(iv.lo, action_lo[d]);
    box.hi[d] = std::min(iv.hi, action_hi[d]);
    if (box.lo[d] > box.hi[d])
      throw ReachabilityError("action_reachable_set: empty intersection with action box");
    box.remainder_width[d] = tms[d].rem.width();
  }
  return box;
}

// default mask for augmented policy inputs: observation perturbed, budget not
inline PerturbMask observation_perturb_mask() {
  PerturbMask mask(kAugDim, 1);
  mask[kAugDim - 1] = 0;
  return mask;
}

}  // namespace cvarnav
