#pragma once

// Test-only oracles, kept independent of the implementation paths they check:
// central finite differences over network parameters, parameter flattening,
// and a dense boundary-sampling clearance oracle.

#include <cmath>
#include <functional>
#include <vector>

#include "cvarnav/navsim.hpp"
#include "cvarnav/nn.hpp"

namespace oracles {

inline std::vector<double*> parameter_pointers(cvarnav::DenseNet& net) {
  std::vector<double*> ptrs;
  for (auto& layer : net.layers) {
    for (auto& w : layer.W) ptrs.push_back(&w);
    for (auto& b : layer.b) ptrs.push_back(&b);
  }
  return ptrs;
}

inline std::vector<double> flatten_gradients(const cvarnav::GradBuffer& g) {
  std::vector<double> out;
  for (size_t l = 0; l < g.dW.size(); ++l) {
    out.insert(out.end(), g.dW[l].begin(), g.dW[l].end());
    out.insert(out.end(), g.db[l].begin(), g.db[l].end());
  }
  return out;
}

// Central finite differences of a scalar loss over every parameter of `net`.
// The evaluator must not cache anything across calls.
inline std::vector<double> fd_gradient(cvarnav::DenseNet& net,
                                       const std::function<double()>& loss, double h = 1e-6) {
  auto ptrs = parameter_pointers(net);
  std::vector<double> grad(ptrs.size());
  for (size_t i = 0; i < ptrs.size(); ++i) {
    const double saved = *ptrs[i];
    const double step = h * std::max(1.0, std::abs(saved));
    *ptrs[i] = saved + step;
    const double up = loss();
    *ptrs[i] = saved - step;
    const double down = loss();
    *ptrs[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff2 = 0.0, ref2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    diff2 += d * d;
    ref2 += b[i] * b[i];
  }
  return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12);
}

// Clearance oracle: densely sample every obstacle boundary and the walls and
// take the minimum point distance.
inline double boundary_sampled_clearance(const cvarnav::RobotPose& pose,
                                         const cvarnav::ArenaMap& map, int samples = 4096) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& ob : map.obstacles) {
    for (int k = 0; k < samples; ++k) {
      const double a = 2.0 * 3.14159265358979323846 * k / samples;
      const double px = ob.x + ob.r * std::cos(a);
      const double py = ob.y + ob.r * std::sin(a);
      best = std::min(best, std::hypot(pose.x - px, pose.y - py));
    }
  }
  const double E = map.half_extent;
  for (int k = 0; k <= samples; ++k) {
    const double t = -E + 2.0 * E * k / samples;
    best = std::min(best, std::hypot(pose.x - E, pose.y - t));
    best = std::min(best, std::hypot(pose.x + E, pose.y - t));
    best = std::min(best, std::hypot(pose.x - t, pose.y - E));
    best = std::min(best, std::hypot(pose.x - t, pose.y + E));
  }
  return best;
}

}  // namespace oracles
