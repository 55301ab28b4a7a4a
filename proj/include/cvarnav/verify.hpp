#pragma once

// Per-state safety criterion: sample the extremal corners and midpoints of
// the reachable action box (9 combinations for the 2D action space), sweep
// each action over one control interval with sub-step kinematic integration,
// and demand clearance strictly above the collision threshold everywhere.

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "cvarnav/navsim.hpp"
#include "cvarnav/taylor.hpp"

namespace cvarnav {

// {lo, mid, hi} per dimension -> 9 (v, omega) pairs inside the box
inline std::array<Action, 9> extremal_actions(const ReachableActionBox& box) {
  std::array<Action, 9> out{};
  int idx = 0;
  for (int iv = 0; iv < 3; ++iv) {
    for (int iw = 0; iw < 3; ++iw) {
      const double v = iv == 0 ? box.lo[0] : (iv == 1 ? 0.5 * (box.lo[0] + box.hi[0]) : box.hi[0]);
      const double w = iw == 0 ? box.lo[1] : (iw == 1 ? 0.5 * (box.lo[1] + box.hi[1]) : box.hi[1]);
      out[idx++] = {v, w};
    }
  }
  return out;
}

// K poses, one after each sub-step of length dt/K
inline std::vector<RobotPose> swept_trajectory(const RobotPose& start, const Action& action,
                                               double dt, int substeps) {
  if (substeps < 1) throw std::runtime_error("swept_trajectory: need at least one sub-step");
  std::vector<RobotPose> poses;
  poses.reserve(substeps);
  RobotPose p = start;
  const double h = dt / substeps;
  for (int k = 0; k < substeps; ++k) {
    p = unicycle_step(p, action, h);
    poses.push_back(p);
  }
  return poses;
}

enum class VerdictStatus { Safe, Unsafe, Unverified };

inline const char* verdict_name(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::Safe: return "safe";
    case VerdictStatus::Unsafe: return "unsafe";
    case VerdictStatus::Unverified: return "unverified";
  }
  return "?";
}

struct SafetyVerdict {
  int state_index = 0;
  VerdictStatus status = VerdictStatus::Unverified;
  double min_clearance = 0.0;
  Action failing_action{0.0, 0.0};  // meaningful when unsafe
};

// Safe iff the clearance stays strictly above the threshold at the start pose
// and at every sub-step pose of every sampled action.
inline SafetyVerdict verify_state(const RobotPose& pose, const ReachableActionBox& box,
                                  const ArenaMap& map, double dt, int substeps,
                                  double clearance_threshold) {
  SafetyVerdict v;
  v.status = VerdictStatus::Safe;
  v.min_clearance = min_obstacle_distance(pose, map);
  if (!(v.min_clearance > clearance_threshold)) {
    v.status = VerdictStatus::Unsafe;
    v.failing_action = {0.0, 0.0};
  }
  for (const Action& a : extremal_actions(box)) {
    RobotPose p = pose;
    const double h = dt / substeps;
    for (int k = 0; k < substeps; ++k) {
      p = unicycle_step(p, a, h);
      const double d = min_obstacle_distance(p, map);
      if (d < v.min_clearance) v.min_clearance = d;
      if (!(d > clearance_threshold) && v.status == VerdictStatus::Safe) {
        v.status = VerdictStatus::Unsafe;
        v.failing_action = a;
      }
    }
  }
  return v;
}

// Fraction of verified-safe states. Unverified states stay in the
// denominator (conservative reporting) but never count as safe.
inline double safety_rate(std::span<const SafetyVerdict> verdicts) {
  if (verdicts.empty()) throw std::runtime_error("safety_rate: empty verdict list");
  double safe = 0.0;
  for (const auto& v : verdicts)
    if (v.status == VerdictStatus::Safe) safe += 1.0;
  return safe / static_cast<double>(verdicts.size());
}

}  // namespace cvarnav
