#pragma once

// Deterministic 2D navigation arena: differential-drive kinematics, a 180
// degree raycast lidar binned into 20 sectors, goal-relative observation,
// layered binary cost and episode termination. Everything is a pure function
// of (scenario config, scenario seed, action sequence).

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvarnav/rng.hpp"
#include "cvarnav/textio.hpp"

namespace cvarnav {

constexpr int kLidarBins = 20;
constexpr int kObsDim = 25;  // 20 lidar + goal distance + bearing (sin, cos) + previous action
constexpr int kActionDim = 2;
constexpr int kAugDim = kObsDim + 1;

using Observation = std::array<double, kObsDim>;
using Action = std::array<double, kActionDim>;  // (v, omega)

struct Obstacle {
  double x = 0, y = 0, r = 0;
};

struct RobotPose {
  double x = 0, y = 0, theta = 0;
};

struct Vec2 {
  double x = 0, y = 0;
};

struct EvalPair {
  RobotPose start;
  Vec2 goal;
};

inline double wrap_angle(double a) {
  // wrap to (-pi, pi]
  constexpr double pi = 3.14159265358979323846;
  a = std::fmod(a, 2.0 * pi);
  if (a <= -pi) a += 2.0 * pi;
  if (a > pi) a -= 2.0 * pi;
  return a;
}

struct ScenarioConfig {
  double half_extent = 5.0;
  double d_col = 0.4;
  double d_danger = 0.5;
  double dt = 0.1;
  double v_max = 1.0;
  double omega_max = 1.0;
  double goal_radius = 0.3;
  int max_steps = 300;
  double lidar_max_range = 10.0;
  std::vector<Obstacle> fixed_obstacles = {
      {2.5, 2.5, 0.5}, {2.5, -2.5, 0.5}, {-2.5, -2.5, 0.5}, {-2.5, 2.5, 0.5}};
  int random_obstacles = 4;
  double random_radius_min = 0.3;
  double random_radius_max = 0.6;
  // training episodes sample start/goal from the scenario seed inside this
  // box; the low separation floor mixes short discovery episodes with long
  // hauls, which is what lets goal-reaching bootstrap at all
  bool randomize_start_goal = true;
  double placement_margin = 1.0;       // keep sampled start/goal this far from walls
  double min_start_goal_dist = 1.0;
  RobotPose start = {-4.0, -4.0, 0.7853981633974483};
  Vec2 goal = {4.0, 4.0};
  // reward ledger. The motion terms keep stand-still/spin policies strictly
  // suboptimal (without them the actor collapses to v=0 under the early
  // collision penalties and never discovers the goal bonus), and the overall
  // scale keeps value targets within what a width-26 critic can fit quickly
  // at the fixed learning rate.
  double reward_goal = 10.0;
  double reward_collision = -10.0;
  double shaping_gain = 1.0;
  double step_penalty = 0.01;
  double motion_gain_v = 0.03;
  double motion_gain_omega = 0.015;
  std::vector<EvalPair> eval_pairs = default_eval_pairs();

  // Mixed difficulty: open lanes, medium hauls passing near the fixed
  // obstacles, and two crossings that force weaving straight through them.
  static std::vector<EvalPair> default_eval_pairs() {
    auto facing = [](double x0, double y0, double gx, double gy) {
      return RobotPose{x0, y0, std::atan2(gy - y0, gx - x0)};
    };
    return {
        {facing(-4, 0, 4, 0), {4, 0}},        {facing(0, -4, 0, 4), {0, 4}},
        {facing(-4, -1, 4, 1), {4, 1}},       {facing(-4, 4, 4, 4), {4, 4}},
        {facing(4, -4, -4, -4), {-4, -4}},    {facing(-4, -2, 0, 0), {0, 0}},
        {facing(0, 0, 4, 2), {4, 2}},         {facing(1.5, -4, 1.5, 4), {1.5, 4}},
        {facing(-4, -4, 4, 4), {4, 4}},       {facing(-4, 2.5, 4, 2.5), {4, 2.5}},
    };
  }

  double goal_dist_norm() const { return 2.0 * half_extent * std::sqrt(2.0); }

  void validate() const {
    if (half_extent <= 0 || dt <= 0 || v_max <= 0 || omega_max <= 0 || goal_radius <= 0)
      throw std::runtime_error("scenario: nonpositive geometry/limits");
    if (!(d_col < d_danger)) throw std::runtime_error("scenario: requires d_col < d_danger");
    if (max_steps <= 0) throw std::runtime_error("scenario: max_steps must be positive");
    if (random_obstacles < 0) throw std::runtime_error("scenario: negative obstacle count");
  }
};

inline std::string scenario_to_text(const ScenarioConfig& c) {
  std::ostringstream o;
  o << "half_extent = " << fmt_double(c.half_extent) << "\n";
  o << "d_col = " << fmt_double(c.d_col) << "\n";
  o << "d_danger = " << fmt_double(c.d_danger) << "\n";
  o << "dt = " << fmt_double(c.dt) << "\n";
  o << "v_max = " << fmt_double(c.v_max) << "\n";
  o << "omega_max = " << fmt_double(c.omega_max) << "\n";
  o << "goal_radius = " << fmt_double(c.goal_radius) << "\n";
  o << "max_steps = " << c.max_steps << "\n";
  o << "lidar_max_range = " << fmt_double(c.lidar_max_range) << "\n";
  for (const auto& ob : c.fixed_obstacles)
    o << "fixed_obstacle = " << fmt_double(ob.x) << " " << fmt_double(ob.y) << " "
      << fmt_double(ob.r) << "\n";
  o << "random_obstacles = " << c.random_obstacles << "\n";
  o << "random_radius_min = " << fmt_double(c.random_radius_min) << "\n";
  o << "random_radius_max = " << fmt_double(c.random_radius_max) << "\n";
  o << "randomize_start_goal = " << (c.randomize_start_goal ? 1 : 0) << "\n";
  o << "placement_margin = " << fmt_double(c.placement_margin) << "\n";
  o << "min_start_goal_dist = " << fmt_double(c.min_start_goal_dist) << "\n";
  o << "start = " << fmt_double(c.start.x) << " " << fmt_double(c.start.y) << " "
    << fmt_double(c.start.theta) << "\n";
  o << "goal = " << fmt_double(c.goal.x) << " " << fmt_double(c.goal.y) << "\n";
  o << "reward_goal = " << fmt_double(c.reward_goal) << "\n";
  o << "reward_collision = " << fmt_double(c.reward_collision) << "\n";
  o << "shaping_gain = " << fmt_double(c.shaping_gain) << "\n";
  o << "step_penalty = " << fmt_double(c.step_penalty) << "\n";
  o << "motion_gain_v = " << fmt_double(c.motion_gain_v) << "\n";
  o << "motion_gain_omega = " << fmt_double(c.motion_gain_omega) << "\n";
  for (const auto& p : c.eval_pairs)
    o << "eval_pair = " << fmt_double(p.start.x) << " " << fmt_double(p.start.y) << " "
      << fmt_double(p.start.theta) << " " << fmt_double(p.goal.x) << " " << fmt_double(p.goal.y)
      << "\n";
  return o.str();
}

inline ScenarioConfig scenario_from_text(const std::string& text, const std::string& origin) {
  ScenarioConfig c;
  c.fixed_obstacles.clear();
  c.eval_pairs.clear();
  bool saw_fixed = false, saw_pairs = false;
  for (const auto& [key, val] : parse_kv_text(text, origin)) {
    auto nums = split_ws(val);
    auto one = [&](double& slot) { slot = parse_double(val, key); };
    if (key == "half_extent") one(c.half_extent);
    else if (key == "d_col") one(c.d_col);
    else if (key == "d_danger") one(c.d_danger);
    else if (key == "dt") one(c.dt);
    else if (key == "v_max") one(c.v_max);
    else if (key == "omega_max") one(c.omega_max);
    else if (key == "goal_radius") one(c.goal_radius);
    else if (key == "max_steps") c.max_steps = static_cast<int>(parse_int(val, key));
    else if (key == "lidar_max_range") one(c.lidar_max_range);
    else if (key == "fixed_obstacle") {
      if (nums.size() != 3) throw std::runtime_error(origin + ": fixed_obstacle wants 'x y r'");
      c.fixed_obstacles.push_back(
          {parse_double(nums[0], key), parse_double(nums[1], key), parse_double(nums[2], key)});
      saw_fixed = true;
    } else if (key == "random_obstacles") c.random_obstacles = static_cast<int>(parse_int(val, key));
    else if (key == "random_radius_min") one(c.random_radius_min);
    else if (key == "random_radius_max") one(c.random_radius_max);
    else if (key == "randomize_start_goal") c.randomize_start_goal = parse_int(val, key) != 0;
    else if (key == "placement_margin") one(c.placement_margin);
    else if (key == "min_start_goal_dist") one(c.min_start_goal_dist);
    else if (key == "start") {
      if (nums.size() != 3) throw std::runtime_error(origin + ": start wants 'x y theta'");
      c.start = {parse_double(nums[0], key), parse_double(nums[1], key), parse_double(nums[2], key)};
    } else if (key == "goal") {
      if (nums.size() != 2) throw std::runtime_error(origin + ": goal wants 'x y'");
      c.goal = {parse_double(nums[0], key), parse_double(nums[1], key)};
    } else if (key == "reward_goal") one(c.reward_goal);
    else if (key == "reward_collision") one(c.reward_collision);
    else if (key == "shaping_gain") one(c.shaping_gain);
    else if (key == "step_penalty") one(c.step_penalty);
    else if (key == "motion_gain_v") one(c.motion_gain_v);
    else if (key == "motion_gain_omega") one(c.motion_gain_omega);
    else if (key == "eval_pair") {
      if (nums.size() != 5) throw std::runtime_error(origin + ": eval_pair wants 'x y theta gx gy'");
      EvalPair p;
      p.start = {parse_double(nums[0], key), parse_double(nums[1], key), parse_double(nums[2], key)};
      p.goal = {parse_double(nums[3], key), parse_double(nums[4], key)};
      c.eval_pairs.push_back(p);
      saw_pairs = true;
    } else {
      throw std::runtime_error(origin + ": unknown scenario key '" + key + "'");
    }
  }
  if (!saw_fixed) c.fixed_obstacles = ScenarioConfig{}.fixed_obstacles;
  if (!saw_pairs) c.eval_pairs = ScenarioConfig::default_eval_pairs();
  c.validate();
  return c;
}

struct ArenaMap {
  double half_extent = 5.0;
  std::vector<Obstacle> obstacles;
  Vec2 goal;
};

// Minimum clearance: obstacles as (center distance - radius), walls as
// perpendicular distance. Negative when penetrating.
inline double min_obstacle_distance(const RobotPose& pose, const ArenaMap& map) {
  double best = map.half_extent - std::abs(pose.x);
  best = std::min(best, map.half_extent - std::abs(pose.y));
  for (const Obstacle& ob : map.obstacles) {
    const double dx = pose.x - ob.x, dy = pose.y - ob.y;
    best = std::min(best, std::sqrt(dx * dx + dy * dy) - ob.r);
  }
  return best;
}

namespace detail {

inline double ray_circle(double ox, double oy, double dx, double dy, const Obstacle& ob) {
  // smallest t >= 0 with |o + t d - c| = r, direction unit-length
  const double mx = ox - ob.x, my = oy - ob.y;
  const double b = mx * dx + my * dy;
  const double c = mx * mx + my * my - ob.r * ob.r;
  const double disc = b * b - c;
  if (disc < 0.0) return -1.0;
  const double s = std::sqrt(disc);
  double t = -b - s;
  if (t < 0.0) t = -b + s;  // origin inside the circle
  return t >= 0.0 ? t : -1.0;
}

inline double ray_walls(double ox, double oy, double dx, double dy, double E) {
  double best = -1.0;
  auto consider = [&](double t) {
    if (t >= 0.0 && (best < 0.0 || t < best)) best = t;
  };
  if (dx > 1e-300 || dx < -1e-300) {
    consider((std::copysign(E, dx) - ox) / dx);
  }
  if (dy > 1e-300 || dy < -1e-300) {
    consider((std::copysign(E, dy) - oy) / dy);
  }
  return best;
}

}  // namespace detail

// 20 rays evenly spanning [-pi/2, +pi/2] about the heading; each range is the
// nearest ray-circle or ray-wall hit, clipped to the max range.
inline std::array<double, kLidarBins> lidar_scan(const RobotPose& pose, const ArenaMap& map,
                                                 double max_range) {
  constexpr double pi = 3.14159265358979323846;
  std::array<double, kLidarBins> out{};
  for (int k = 0; k < kLidarBins; ++k) {
    const double rel = -0.5 * pi + pi * static_cast<double>(k) / (kLidarBins - 1);
    const double ang = pose.theta + rel;
    const double dx = std::cos(ang), dy = std::sin(ang);
    double best = detail::ray_walls(pose.x, pose.y, dx, dy, map.half_extent);
    for (const Obstacle& ob : map.obstacles) {
      const double t = detail::ray_circle(pose.x, pose.y, dx, dy, ob);
      if (t >= 0.0 && (best < 0.0 || t < best)) best = t;
    }
    if (best < 0.0) best = max_range;  // outside the arena looking away; clip
    out[k] = std::min(best, max_range);
  }
  return out;
}

inline Observation make_observation(const RobotPose& pose, const ArenaMap& map,
                                    const Action& prev_action, const ScenarioConfig& cfg) {
  Observation obs{};
  const auto ranges = lidar_scan(pose, map, cfg.lidar_max_range);
  for (int k = 0; k < kLidarBins; ++k) {
    double r = ranges[k] / cfg.lidar_max_range;
    obs[k] = std::min(std::max(r, 0.0), 1.0);
  }
  const double gx = map.goal.x - pose.x, gy = map.goal.y - pose.y;
  const double gdist = std::sqrt(gx * gx + gy * gy);
  obs[20] = std::min(gdist / cfg.goal_dist_norm(), 1.0);
  const double bearing = wrap_angle(std::atan2(gy, gx) - pose.theta);
  obs[21] = std::sin(bearing);
  obs[22] = std::cos(bearing);
  obs[23] = prev_action[0] / cfg.v_max;
  obs[24] = prev_action[1] / cfg.omega_max;
  return obs;
}

enum class StepTag { Running, Collision, Goal, Timeout };

inline const char* step_tag_name(StepTag t) {
  switch (t) {
    case StepTag::Running: return "running";
    case StepTag::Collision: return "collision";
    case StepTag::Goal: return "goal";
    case StepTag::Timeout: return "timeout";
  }
  return "?";
}

struct StepOutcome {
  Observation obs{};
  double reward = 0.0;
  double cost = 0.0;
  StepTag tag = StepTag::Running;
};

inline RobotPose unicycle_step(const RobotPose& p, const Action& a, double dt) {
  RobotPose q;
  q.x = p.x + a[0] * std::cos(p.theta) * dt;
  q.y = p.y + a[0] * std::sin(p.theta) * dt;
  q.theta = wrap_angle(p.theta + a[1] * dt);
  return q;
}

struct StepEval {
  RobotPose pose;      // post-step pose
  double d_min = 0.0;  // clearance at the post-step pose
  double goal_dist = 0.0;
  double cost = 0.0;
  double reward = 0.0;
  StepTag tag = StepTag::Running;
};

// Core transition semantics, independent of episode bookkeeping: unicycle
// update, layered cost at the post-step pose, termination tags and the
// shaped reward. `step_index_after` is the 1-based step count including this
// step; the action must already satisfy the bounds.
inline StepEval eval_step(const RobotPose& pose, const Action& action, const ArenaMap& map,
                          const ScenarioConfig& cfg, double goal_dist_prev, int step_index_after) {
  StepEval ev;
  ev.pose = unicycle_step(pose, action, cfg.dt);
  ev.d_min = min_obstacle_distance(ev.pose, map);
  const double gx = map.goal.x - ev.pose.x, gy = map.goal.y - ev.pose.y;
  ev.goal_dist = std::sqrt(gx * gx + gy * gy);
  ev.cost = ev.d_min < cfg.d_danger ? 1.0 : 0.0;
  if (ev.d_min < cfg.d_col) ev.tag = StepTag::Collision;
  else if (ev.goal_dist < cfg.goal_radius) ev.tag = StepTag::Goal;
  else if (step_index_after >= cfg.max_steps) ev.tag = StepTag::Timeout;
  else ev.tag = StepTag::Running;
  ev.reward = cfg.shaping_gain * (goal_dist_prev - ev.goal_dist) - cfg.step_penalty +
              cfg.motion_gain_v * action[0] - cfg.motion_gain_omega * std::abs(action[1]);
  if (ev.tag == StepTag::Goal) ev.reward += cfg.reward_goal;
  if (ev.tag == StepTag::Collision) ev.reward += cfg.reward_collision;
  return ev;
}

class Environment {
 public:
  explicit Environment(ScenarioConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  // Scenario generation is a pure function of the seed: fixed obstacles from
  // config, random obstacles rejection-sampled until start/goal clearance
  // exceeds d_danger. Throws after 1000 failed placement attempts.
  Observation reset(std::uint64_t scenario_seed) {
    if (cfg_.randomize_start_goal) return reset_sampled(scenario_seed);
    return reset_to(scenario_seed, cfg_.start, cfg_.goal);
  }

  Observation reset_to(std::uint64_t scenario_seed, const RobotPose& start, const Vec2& goal) {
    Rng rng(splitmix64(scenario_seed));
    place(rng, start, goal);
    return begin_episode(start);
  }

  // Out-of-bounds actions are clipped and counted, never rejected mid-episode.
  StepOutcome step(const Action& raw_action) {
    Action a = raw_action;
    for (int i = 0; i < kActionDim; ++i) {
      const double lo = (i == 0) ? 0.0 : -cfg_.omega_max;
      const double hi = (i == 0) ? cfg_.v_max : cfg_.omega_max;
      if (a[i] < lo || a[i] > hi) {
        a[i] = std::min(std::max(a[i], lo), hi);
        ++clipped_actions_;
      }
    }
    ++step_count_;
    const StepEval ev = eval_step(pose_, a, map_, cfg_, goal_dist_prev_, step_count_);
    pose_ = ev.pose;
    prev_action_ = a;
    goal_dist_prev_ = ev.goal_dist;
    StepOutcome out;
    out.reward = ev.reward;
    out.cost = ev.cost;
    out.tag = ev.tag;
    out.obs = make_observation(pose_, map_, prev_action_, cfg_);
    return out;
  }

  const ScenarioConfig& config() const { return cfg_; }
  const ArenaMap& map() const { return map_; }
  const RobotPose& pose() const { return pose_; }
  int step_count() const { return step_count_; }
  long clipped_actions() const { return clipped_actions_; }

 private:
  Observation reset_sampled(std::uint64_t scenario_seed) {
    Rng rng(splitmix64(scenario_seed));
    const double lim = cfg_.half_extent - cfg_.placement_margin;
    RobotPose start;
    Vec2 goal;
    int attempts = 0;
    for (;;) {
      if (++attempts > 1000) throw std::runtime_error("scenario: start/goal sampling exhausted");
      start.x = rng.uniform(-lim, lim);
      start.y = rng.uniform(-lim, lim);
      goal.x = rng.uniform(-lim, lim);
      goal.y = rng.uniform(-lim, lim);
      const double d = std::hypot(goal.x - start.x, goal.y - start.y);
      if (d < cfg_.min_start_goal_dist) continue;
      if (!clear_of(cfg_.fixed_obstacles, start.x, start.y) ||
          !clear_of(cfg_.fixed_obstacles, goal.x, goal.y))
        continue;
      break;
    }
    start.theta = wrap_angle(std::atan2(goal.y - start.y, goal.x - start.x));
    place(rng, start, goal);
    return begin_episode(start);
  }

  bool clear_of(const std::vector<Obstacle>& obs, double x, double y) const {
    for (const Obstacle& ob : obs)
      if (std::hypot(x - ob.x, y - ob.y) - ob.r <= cfg_.d_danger) return false;
    return true;
  }

  void place(Rng& rng, const RobotPose& start, const Vec2& goal) {
    map_.half_extent = cfg_.half_extent;
    map_.goal = goal;
    map_.obstacles = cfg_.fixed_obstacles;
    if (!clear_of(map_.obstacles, start.x, start.y) || !clear_of(map_.obstacles, goal.x, goal.y))
      throw std::runtime_error("scenario: start/goal conflicts with fixed obstacles");
    for (int k = 0; k < cfg_.random_obstacles; ++k) {
      int attempts = 0;
      for (;;) {
        if (++attempts > 1000) throw std::runtime_error("scenario: obstacle sampling exhausted");
        Obstacle ob;
        ob.r = rng.uniform(cfg_.random_radius_min, cfg_.random_radius_max);
        const double lim = cfg_.half_extent - ob.r;
        ob.x = rng.uniform(-lim, lim);
        ob.y = rng.uniform(-lim, lim);
        const bool clear_start = std::hypot(start.x - ob.x, start.y - ob.y) - ob.r > cfg_.d_danger;
        const bool clear_goal = std::hypot(goal.x - ob.x, goal.y - ob.y) - ob.r > cfg_.d_danger;
        if (clear_start && clear_goal) {
          map_.obstacles.push_back(ob);
          break;
        }
      }
    }
    start_ = start;
  }

  Observation begin_episode(const RobotPose& start) {
    pose_ = start;
    prev_action_ = {0.0, 0.0};
    step_count_ = 0;
    const double gx = map_.goal.x - pose_.x, gy = map_.goal.y - pose_.y;
    goal_dist_prev_ = std::sqrt(gx * gx + gy * gy);
    return make_observation(pose_, map_, prev_action_, cfg_);
  }

  ScenarioConfig cfg_;
  ArenaMap map_;
  RobotPose pose_;
  RobotPose start_;
  Action prev_action_{0.0, 0.0};
  double goal_dist_prev_ = 0.0;
  int step_count_ = 0;
  long clipped_actions_ = 0;
};

}  // namespace cvarnav
