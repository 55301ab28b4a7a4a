#pragma once

// Run management: layered configuration, manifests, checkpoints, the
// train / evaluate / verify / report stages and their CSV emitters. All
// stages are pure functions of (config, master seed), so repeated runs on
// the same platform produce byte-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvarnav/navsim.hpp"
#include "cvarnav/nn.hpp"
#include "cvarnav/risk.hpp"
#include "cvarnav/taylor.hpp"
#include "cvarnav/textio.hpp"
#include "cvarnav/trainer.hpp"
#include "cvarnav/verify.hpp"

namespace cvarnav {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  TrainConfig train;
  std::string scenario_path;  // empty -> built-in defaults
  std::vector<std::uint64_t> seeds = {1};
  std::string out_dir;
  double epsilon = 0.01;
  int verify_substeps = 10;
  double safety_threshold = -1.0;  // negative -> scenario d_col
  int eval_repeats = 1;
};

// Shared by config files, command-line overrides, and manifest round trips.
// Unknown keys are rejected with the offending key named.
inline void apply_config_entry(RunConfig& rc, const std::string& key, const std::string& val) {
  auto d = [&] { return parse_double(val, key); };
  auto i = [&] { return static_cast<int>(parse_int(val, key)); };
  if (key == "mode") rc.train.mode = mode_from_name(val);
  else if (key == "epochs") rc.train.epochs = i();
  else if (key == "episodes_per_epoch") rc.train.episodes_per_epoch = i();
  else if (key == "updates_per_epoch") rc.train.updates_per_epoch = i();
  else if (key == "batch_size") rc.train.batch_size = i();
  else if (key == "gamma") rc.train.gamma = d();
  else if (key == "alpha") rc.train.alpha = d();
  else if (key == "budget") rc.train.cost_threshold = d();
  else if (key == "lr") rc.train.lr = d();
  else if (key == "explore_noise") rc.train.explore_noise = d();
  else if (key == "explore_noise_init") rc.train.explore_noise_init = d();
  else if (key == "explore_decay_fraction") rc.train.explore_decay_fraction = d();
  else if (key == "target_noise") rc.train.target_noise = d();
  else if (key == "target_noise_clip") rc.train.target_noise_clip = d();
  else if (key == "policy_delay") rc.train.policy_delay = i();
  else if (key == "polyak") rc.train.polyak_rho = d();
  else if (key == "warmup_episodes") rc.train.warmup_episodes = i();
  else if (key == "replay_capacity") rc.train.replay_capacity = i();
  else if (key == "quantiles") rc.train.num_quantiles = i();
  else if (key == "huber_kappa") rc.train.huber_kappa = d();
  else if (key == "beta_u") rc.train.beta_u = d();
  else if (key == "beta_lambda") rc.train.beta_lambda = d();
  else if (key == "lambda_init") rc.train.lambda_init = d();
  else if (key == "lambda_max") rc.train.lambda_max = d();
  else if (key == "budget_input_scale") rc.train.budget_input_scale = d();
  else if (key == "hidden_width") rc.train.hidden_width = i();
  else if (key == "scenario") rc.scenario_path = val;
  else if (key == "seeds") {
    rc.seeds.clear();
    for (const auto& tok : split_char(val, ',')) {
      const std::string t = trim(tok);
      if (!t.empty()) rc.seeds.push_back(parse_uint64(t, "seeds"));
    }
    if (rc.seeds.empty()) throw UsageError("config: seeds list is empty");
  } else if (key == "out") rc.out_dir = val;
  else if (key == "epsilon") rc.epsilon = d();
  else if (key == "verify_substeps") rc.verify_substeps = i();
  else if (key == "safety_threshold") rc.safety_threshold = d();
  else if (key == "eval_repeats") rc.eval_repeats = i();
  else throw UsageError("config: unknown key '" + key + "'");
}

inline void load_config_file(RunConfig& rc, const std::string& path) {
  for (const auto& [k, v] : parse_kv_file(path)) apply_config_entry(rc, k, v);
}

inline std::string manifest_text(const RunConfig& rc) {
  std::ostringstream o;
  o << "mode = " << mode_name(rc.train.mode) << "\n";
  o << "epochs = " << rc.train.epochs << "\n";
  o << "episodes_per_epoch = " << rc.train.episodes_per_epoch << "\n";
  o << "updates_per_epoch = " << rc.train.updates_per_epoch << "\n";
  o << "batch_size = " << rc.train.batch_size << "\n";
  o << "gamma = " << fmt_double(rc.train.gamma) << "\n";
  o << "alpha = " << fmt_double(rc.train.alpha) << "\n";
  o << "budget = " << fmt_double(rc.train.cost_threshold) << "\n";
  o << "lr = " << fmt_double(rc.train.lr) << "\n";
  o << "explore_noise = " << fmt_double(rc.train.explore_noise) << "\n";
  o << "explore_noise_init = " << fmt_double(rc.train.explore_noise_init) << "\n";
  o << "explore_decay_fraction = " << fmt_double(rc.train.explore_decay_fraction) << "\n";
  o << "target_noise = " << fmt_double(rc.train.target_noise) << "\n";
  o << "target_noise_clip = " << fmt_double(rc.train.target_noise_clip) << "\n";
  o << "policy_delay = " << rc.train.policy_delay << "\n";
  o << "polyak = " << fmt_double(rc.train.polyak_rho) << "\n";
  o << "warmup_episodes = " << rc.train.warmup_episodes << "\n";
  o << "replay_capacity = " << rc.train.replay_capacity << "\n";
  o << "quantiles = " << rc.train.num_quantiles << "\n";
  o << "huber_kappa = " << fmt_double(rc.train.huber_kappa) << "\n";
  o << "beta_u = " << fmt_double(rc.train.beta_u) << "\n";
  o << "beta_lambda = " << fmt_double(rc.train.beta_lambda) << "\n";
  o << "lambda_init = " << fmt_double(rc.train.lambda_init) << "\n";
  o << "lambda_max = " << fmt_double(rc.train.lambda_max) << "\n";
  o << "budget_input_scale = " << fmt_double(rc.train.budget_input_scale) << "\n";
  o << "hidden_width = " << rc.train.hidden_width << "\n";
  o << "scenario = " << rc.scenario_path << "\n";
  o << "seeds = ";
  for (size_t i = 0; i < rc.seeds.size(); ++i) o << (i ? "," : "") << rc.seeds[i];
  o << "\n";
  o << "out = " << rc.out_dir << "\n";
  o << "epsilon = " << fmt_double(rc.epsilon) << "\n";
  o << "verify_substeps = " << rc.verify_substeps << "\n";
  o << "safety_threshold = " << fmt_double(rc.safety_threshold) << "\n";
  o << "eval_repeats = " << rc.eval_repeats << "\n";
  return o.str();
}

inline std::string seed_dir(const std::string& run_dir, std::uint64_t seed) {
  return run_dir + "/seed" + std::to_string(seed);
}

inline ScenarioConfig load_run_scenario(const std::string& run_dir) {
  const std::string path = run_dir + "/scenario.cfg";
  return scenario_from_text(read_file(path), path);
}

inline RunConfig load_run_manifest(const std::string& run_dir) {
  RunConfig rc;
  const std::string path = run_dir + "/manifest.cfg";
  for (const auto& [k, v] : parse_kv_file(path)) apply_config_entry(rc, k, v);
  return rc;
}

inline void write_history_csv(const std::string& path, const std::vector<EpochStats>& hist) {
  std::ostringstream o;
  o << "epoch,mean_reward,mean_cost,success,collision,timeout,u,lambda,p_hat\n";
  for (const auto& h : hist)
    o << h.epoch << "," << fmt_double(h.mean_reward) << "," << fmt_double(h.mean_cost) << ","
      << h.success << "," << h.collision << "," << h.timeout << "," << fmt_double(h.u) << ","
      << fmt_double(h.lambda) << "," << fmt_double(h.p_hat) << "\n";
  write_file(path, o.str());
}

inline void write_checkpoint(const Trainer& t, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_net(t.policy_net(), dir + "/actor.net");
  save_net(t.critic1_, dir + "/critic1.net");
  save_net(t.critic2_, dir + "/critic2.net");
  save_net(t.cost_net_, dir + "/cost.net");
  std::ostringstream o;
  o << "u = " << fmt_double(t.tracker_.u) << "\n";
  o << "lambda = " << fmt_double(t.lm_.lambda) << "\n";
  o << "epoch = " << t.history_.size() << "\n";
  write_file(dir + "/tracker.txt", o.str());
  write_history_csv(dir + "/history.csv", t.history_);
}

struct TrackerState {
  double u = 0.0;
  double lambda = 0.0;
  int epoch = 0;
};

inline TrackerState load_tracker(const std::string& dir) {
  TrackerState ts;
  for (const auto& [k, v] : parse_kv_file(dir + "/tracker.txt")) {
    if (k == "u") ts.u = parse_double(v, k);
    else if (k == "lambda") ts.lambda = parse_double(v, k);
    else if (k == "epoch") ts.epoch = static_cast<int>(parse_int(v, k));
  }
  return ts;
}

// ---- train ----------------------------------------------------------------

inline std::string cmd_train(const RunConfig& rc_in) {
  RunConfig rc = rc_in;
  rc.train.validate();
  if (rc.out_dir.empty()) throw UsageError("train: no output directory (set --out or CVARNAV_OUT)");
  std::filesystem::create_directories(rc.out_dir);

  ScenarioConfig scen;
  if (!rc.scenario_path.empty())
    scen = scenario_from_text(read_file(rc.scenario_path), rc.scenario_path);
  write_file(rc.out_dir + "/scenario.cfg", scenario_to_text(scen));
  rc.scenario_path = rc.out_dir + "/scenario.cfg";
  write_file(rc.out_dir + "/manifest.cfg", manifest_text(rc));

  for (std::uint64_t seed : rc.seeds) {
    Trainer t(rc.train, scen, seed);
    try {
      t.train();
    } catch (const std::exception&) {
      write_checkpoint(t, seed_dir(rc.out_dir, seed));  // checkpointed abort
      throw;
    }
    write_checkpoint(t, seed_dir(rc.out_dir, seed));
  }
  return rc.out_dir;
}

// ---- evaluate ---------------------------------------------------------------

struct EvalSummary {
  int episodes = 0;
  int success = 0;
  int collision = 0;
  int timeout = 0;
  double mean_cost = 0.0;
  double mean_reward = 0.0;
};

inline EvalSummary evaluate_seed(const RunConfig& rc, const ScenarioConfig& scen,
                                 const std::string& dir, std::uint64_t seed) {
  const DenseNet policy = load_net(dir + "/actor.net");
  const TrackerState ts = load_tracker(dir);
  ScenarioConfig scen_eval = scen;
  scen_eval.randomize_start_goal = false;
  Environment env(scen_eval);

  std::ostringstream ev, tj;
  ev << "episode,pair,repeat,scenario_seed,outcome,steps,reward,cost\n";
  tj << "episode,step,x,y,theta,e";
  for (int i = 0; i < kObsDim; ++i) tj << ",obs" << i;
  tj << ",act_v,act_omega\n";

  EvalSummary sum;
  const int pairs = static_cast<int>(scen.eval_pairs.size());
  for (int p = 0; p < pairs; ++p) {
    for (int r = 0; r < rc.eval_repeats; ++r) {
      const int episode = p * rc.eval_repeats + r;
      const std::uint64_t ep_seed = mix_seed(seed, 0xEA100000ULL + episode);
      Observation obs = env.reset_to(ep_seed, scen.eval_pairs[p].start, scen.eval_pairs[p].goal);
      double e = ts.u;
      double reward = 0.0, cost = 0.0;
      int steps = 0;
      StepTag tag = StepTag::Running;
      for (int t = 0; t < scen.max_steps; ++t) {
        const AugInput in = augmented_input(obs, e, rc.train.budget_input_scale);
        const auto av = forward(policy, in);
        const Action a{av[0], av[1]};
        const RobotPose pose = env.pose();
        tj << episode << "," << t << "," << fmt_double(pose.x) << "," << fmt_double(pose.y) << ","
           << fmt_double(pose.theta) << "," << fmt_double(e);
        for (int i = 0; i < kObsDim; ++i) tj << "," << fmt_double(obs[i]);
        tj << "," << fmt_double(a[0]) << "," << fmt_double(a[1]) << "\n";

        const StepOutcome out = env.step(a);
        e = budget_update(e, out.cost, rc.train.gamma);
        reward += out.reward;
        cost += out.cost;
        steps += 1;
        obs = out.obs;
        tag = out.tag;
        if (tag != StepTag::Running) break;
      }
      ev << episode << "," << p << "," << r << "," << ep_seed << "," << step_tag_name(tag) << ","
         << steps << "," << fmt_double(reward) << "," << fmt_double(cost) << "\n";
      sum.episodes += 1;
      if (tag == StepTag::Goal) sum.success += 1;
      if (tag == StepTag::Collision) sum.collision += 1;
      if (tag == StepTag::Timeout) sum.timeout += 1;
      sum.mean_cost += cost;
      sum.mean_reward += reward;
    }
  }
  sum.mean_cost /= sum.episodes;
  sum.mean_reward /= sum.episodes;
  write_file(dir + "/eval.csv", ev.str());
  write_file(dir + "/traj.csv", tj.str());
  return sum;
}

inline std::vector<EvalSummary> cmd_evaluate(const std::string& run_dir) {
  const RunConfig rc = load_run_manifest(run_dir);
  const ScenarioConfig scen = load_run_scenario(run_dir);
  std::vector<EvalSummary> out;
  for (std::uint64_t seed : rc.seeds) {
    const std::string dir = seed_dir(run_dir, seed);
    if (!std::filesystem::exists(dir + "/actor.net"))
      throw std::runtime_error("evaluate: missing checkpoint " + dir + "/actor.net");
    out.push_back(evaluate_seed(rc, scen, dir, seed));
  }
  return out;
}

// ---- verify -----------------------------------------------------------------

struct VerifySummary {
  long states = 0;
  long unverified = 0;
  double safety_overall = 0.0;
  double safety_success = 0.0;    // over states of goal-reaching episodes
  double safety_collision = 0.0;  // over states of collision episodes
  double safety_overall_danger = 0.0;
  double mean_width_v = 0.0;
  double mean_width_omega = 0.0;
  double mean_rem_v = 0.0;
  double mean_rem_omega = 0.0;
  bool unverifiable = false;
};

inline void write_verify_summary(const std::string& path, const VerifySummary& s) {
  std::ostringstream o;
  o << "metric,value\n";
  o << "states," << s.states << "\n";
  o << "unverified," << s.unverified << "\n";
  o << "safety_overall," << fmt_double(s.safety_overall) << "\n";
  o << "safety_success," << fmt_double(s.safety_success) << "\n";
  o << "safety_collision," << fmt_double(s.safety_collision) << "\n";
  o << "safety_overall_danger," << fmt_double(s.safety_overall_danger) << "\n";
  o << "width_v," << fmt_double(s.mean_width_v) << "\n";
  o << "width_omega," << fmt_double(s.mean_width_omega) << "\n";
  o << "remainder_v," << fmt_double(s.mean_rem_v) << "\n";
  o << "remainder_omega," << fmt_double(s.mean_rem_omega) << "\n";
  write_file(path, o.str());
}

inline VerifySummary verify_seed(const RunConfig& rc, const ScenarioConfig& scen,
                                 const std::string& dir, double epsilon) {
  const DenseNet policy = load_net(dir + "/actor.net");
  const TrackerState ts = load_tracker(dir);
  const CsvTable eval = read_csv(dir + "/eval.csv");
  const CsvTable traj = read_csv(dir + "/traj.csv");
  const double threshold = rc.safety_threshold >= 0.0 ? rc.safety_threshold : scen.d_col;

  // episode -> (scenario seed, pair, outcome)
  struct EpInfo {
    std::uint64_t seed;
    int pair;
    std::string outcome;
  };
  std::map<int, EpInfo> episodes;
  {
    const int c_ep = eval.column("episode"), c_seed = eval.column("scenario_seed");
    const int c_pair = eval.column("pair"), c_out = eval.column("outcome");
    for (const auto& row : eval.rows)
      episodes[static_cast<int>(parse_int(row[c_ep], "episode"))] = {
          parse_uint64(row[c_seed], "scenario_seed"),
          static_cast<int>(parse_int(row[c_pair], "pair")), row[c_out]};
  }

  ScenarioConfig scen_eval = scen;
  scen_eval.randomize_start_goal = false;
  Environment env(scen_eval);
  const PerturbMask mask = observation_perturb_mask();
  const Action a_lo{0.0, -scen.omega_max};
  const Action a_hi{scen.v_max, scen.omega_max};

  std::ostringstream vf;
  vf << "episode,step,status,min_clearance,v_lo,v_hi,omega_lo,omega_hi,rem_v,rem_omega\n";

  VerifySummary s;
  long safe = 0, safe_danger = 0;
  long succ_states = 0, succ_safe = 0, coll_states = 0, coll_safe = 0;
  int cur_episode = -1;
  ArenaMap cur_map;

  const int c_ep = traj.column("episode"), c_step = traj.column("step");
  const int c_x = traj.column("x"), c_y = traj.column("y"), c_th = traj.column("theta");
  std::array<int, kObsDim> c_obs{};
  for (int i = 0; i < kObsDim; ++i) c_obs[i] = traj.column("obs" + std::to_string(i));

  for (const auto& row : traj.rows) {
    const int ep = static_cast<int>(parse_int(row[c_ep], "episode"));
    if (ep != cur_episode) {
      const EpInfo& info = episodes.at(ep);
      env.reset_to(info.seed, scen.eval_pairs[info.pair].start, scen.eval_pairs[info.pair].goal);
      cur_map = env.map();
      cur_episode = ep;
    }
    RobotPose pose{parse_double(row[c_x], "x"), parse_double(row[c_y], "y"),
                   parse_double(row[c_th], "theta")};
    std::array<double, kAugDim> state{};
    for (int i = 0; i < kObsDim; ++i) state[i] = parse_double(row[c_obs[i]], "obs");
    state[kAugDim - 1] = budget_feature(ts.u, rc.train.budget_input_scale);

    SafetyVerdict verdict;
    bool reach_ok = true;
    ReachableActionBox box;
    try {
      box = action_reachable_set(policy, state, epsilon, a_lo, a_hi, mask);
    } catch (const ReachabilityError&) {
      reach_ok = false;
    }
    if (reach_ok) {
      verdict = verify_state(pose, box, cur_map, scen.dt, rc.verify_substeps, threshold);
      const SafetyVerdict vd =
          verify_state(pose, box, cur_map, scen.dt, rc.verify_substeps, scen.d_danger);
      if (vd.status == VerdictStatus::Safe) safe_danger += 1;
      s.mean_width_v += box.width(0);
      s.mean_width_omega += box.width(1);
      s.mean_rem_v += box.remainder_width[0];
      s.mean_rem_omega += box.remainder_width[1];
    } else {
      verdict.status = VerdictStatus::Unverified;
      s.unverified += 1;
    }

    s.states += 1;
    const bool is_safe = verdict.status == VerdictStatus::Safe;
    if (is_safe) safe += 1;
    const std::string& outcome = episodes.at(ep).outcome;
    if (outcome == "goal") {
      succ_states += 1;
      if (is_safe) succ_safe += 1;
    } else if (outcome == "collision") {
      coll_states += 1;
      if (is_safe) coll_safe += 1;
    }

    vf << ep << "," << row[c_step] << "," << verdict_name(verdict.status) << ","
       << fmt_double(reach_ok ? verdict.min_clearance : 0.0) << ","
       << fmt_double(reach_ok ? box.lo[0] : 0.0) << "," << fmt_double(reach_ok ? box.hi[0] : 0.0)
       << "," << fmt_double(reach_ok ? box.lo[1] : 0.0) << ","
       << fmt_double(reach_ok ? box.hi[1] : 0.0) << ","
       << fmt_double(reach_ok ? box.remainder_width[0] : 0.0) << ","
       << fmt_double(reach_ok ? box.remainder_width[1] : 0.0) << "\n";
  }

  if (s.states == 0) throw std::runtime_error("verify: no recorded states in " + dir);
  const long reached = s.states - s.unverified;
  s.safety_overall = static_cast<double>(safe) / s.states;
  s.safety_overall_danger = static_cast<double>(safe_danger) / s.states;
  s.safety_success =
      succ_states > 0 ? static_cast<double>(succ_safe) / succ_states : std::nan("");
  s.safety_collision =
      coll_states > 0 ? static_cast<double>(coll_safe) / coll_states : std::nan("");
  if (reached > 0) {
    s.mean_width_v /= reached;
    s.mean_width_omega /= reached;
    s.mean_rem_v /= reached;
    s.mean_rem_omega /= reached;
  }
  s.unverifiable = s.unverified * 2 > s.states;
  write_file(dir + "/verify.csv", vf.str());
  write_verify_summary(dir + "/verify_summary.csv", s);
  return s;
}

inline std::vector<VerifySummary> cmd_verify(const std::string& run_dir,
                                             std::optional<double> epsilon_override = {}) {
  const RunConfig rc = load_run_manifest(run_dir);
  const ScenarioConfig scen = load_run_scenario(run_dir);
  const double eps = epsilon_override.value_or(rc.epsilon);
  if (eps < 0.0) throw UsageError("verify: epsilon must be nonnegative");
  std::vector<VerifySummary> out;
  for (std::uint64_t seed : rc.seeds) {
    const std::string dir = seed_dir(run_dir, seed);
    if (!std::filesystem::exists(dir + "/traj.csv"))
      throw std::runtime_error("verify: missing evaluation trajectories in " + dir);
    out.push_back(verify_seed(rc, scen, dir, eps));
  }
  return out;
}

// ---- report -----------------------------------------------------------------

struct RunMetrics {
  std::string label;
  std::map<std::string, double> values;  // metric -> value (one seed)
};

inline std::string run_label(const RunConfig& rc) {
  if (rc.train.mode == Mode::Cvar) return "cvar_a" + fmt_double(rc.train.alpha);
  return mode_name(rc.train.mode);
}

inline std::vector<RunMetrics> collect_run_metrics(const std::string& run_dir) {
  const RunConfig rc = load_run_manifest(run_dir);
  std::vector<RunMetrics> out;
  for (std::uint64_t seed : rc.seeds) {
    const std::string dir = seed_dir(run_dir, seed);
    RunMetrics m;
    m.label = run_label(rc);
    const CsvTable eval = read_csv(dir + "/eval.csv");
    const int c_out = eval.column("outcome"), c_cost = eval.column("cost");
    const int c_reward = eval.column("reward");
    double succ = 0, coll = 0, tout = 0, cost = 0, reward = 0;
    for (const auto& row : eval.rows) {
      if (row[c_out] == "goal") succ += 1;
      else if (row[c_out] == "collision") coll += 1;
      else tout += 1;
      cost += parse_double(row[c_cost], "cost");
      reward += parse_double(row[c_reward], "reward");
    }
    const double n = static_cast<double>(eval.rows.size());
    if (n == 0) throw std::runtime_error("report: empty eval.csv in " + dir);
    m.values["success_rate"] = succ / n;
    m.values["collision_rate"] = coll / n;
    m.values["timeout_rate"] = tout / n;
    m.values["avg_cost"] = cost / n;
    m.values["avg_reward"] = reward / n;
    const CsvTable vs = read_csv(dir + "/verify_summary.csv");
    const int c_metric = vs.column("metric"), c_value = vs.column("value");
    for (const auto& row : vs.rows) m.values[row[c_metric]] = parse_double(row[c_value], "value");
    out.push_back(std::move(m));
  }
  return out;
}

struct ReportResult {
  std::vector<std::string> labels;
  std::vector<std::string> metrics;
  // label -> metric -> (mean, std, n)
  std::map<std::string, std::map<std::string, std::array<double, 3>>> table;
};

inline ReportResult cmd_report(const std::vector<std::string>& run_dirs,
                               const std::string& out_dir) {
  if (run_dirs.empty()) throw UsageError("report: need at least one run directory");
  std::filesystem::create_directories(out_dir);

  std::vector<RunMetrics> all;
  for (const auto& rd : run_dirs)
    for (auto& m : collect_run_metrics(rd)) all.push_back(std::move(m));

  // metric sets must agree across runs
  std::vector<std::string> metrics;
  for (const auto& [k, v] : all.front().values) metrics.push_back(k);
  for (const auto& m : all) {
    std::vector<std::string> got;
    for (const auto& [k, v] : m.values) got.push_back(k);
    if (got != metrics) {
      std::string msg = "report: inconsistent metric columns; expected {";
      for (const auto& k : metrics) msg += k + " ";
      msg += "} got {";
      for (const auto& k : got) msg += k + " ";
      msg += "} for label " + m.label;
      throw std::runtime_error(msg);
    }
  }

  ReportResult res;
  res.metrics = metrics;
  for (const auto& m : all)
    if (std::find(res.labels.begin(), res.labels.end(), m.label) == res.labels.end())
      res.labels.push_back(m.label);

  for (const auto& label : res.labels) {
    for (const auto& metric : metrics) {
      double sum = 0.0, sum2 = 0.0;
      int n = 0;
      for (const auto& m : all) {
        if (m.label != label) continue;
        const double v = m.values.at(metric);
        if (std::isnan(v)) continue;  // empty stratum in one seed
        sum += v;
        sum2 += v * v;
        n += 1;
      }
      double mean = std::nan(""), sd = std::nan("");
      if (n > 0) {
        mean = sum / n;
        const double var = std::max(0.0, sum2 / n - mean * mean);
        sd = std::sqrt(var);
      }
      res.table[label][metric] = {mean, sd, static_cast<double>(n)};
    }
  }

  // comparison.csv
  {
    std::ostringstream o;
    o << "label,metric,mean,std,n\n";
    for (const auto& label : res.labels)
      for (const auto& metric : metrics) {
        const auto& t = res.table.at(label).at(metric);
        o << label << "," << metric << "," << fmt_double(t[0]) << "," << fmt_double(t[1]) << ","
          << static_cast<long long>(t[2]) << "\n";
      }
    write_file(out_dir + "/comparison.csv", o.str());
  }

  // aligned text table
  {
    size_t mw = 6;
    for (const auto& m : metrics) mw = std::max(mw, m.size());
    std::ostringstream o;
    o << std::string(mw, ' ');
    std::vector<size_t> cw;
    for (const auto& label : res.labels) {
      const size_t w = std::max<size_t>(label.size(), 18);
      cw.push_back(w);
      o << "  " << label << std::string(w - label.size(), ' ');
    }
    o << "\n";
    for (const auto& metric : metrics) {
      o << metric << std::string(mw - metric.size(), ' ');
      for (size_t li = 0; li < res.labels.size(); ++li) {
        const auto& t = res.table.at(res.labels[li]).at(metric);
        std::ostringstream cell;
        cell << fmt_double(t[0]) << " +/- " << fmt_double(t[1]);
        std::string c = cell.str();
        if (c.size() > cw[li]) c = c.substr(0, cw[li]);
        o << "  " << c << std::string(cw[li] - c.size(), ' ');
      }
      o << "\n";
    }
    write_file(out_dir + "/comparison.txt", o.str());
  }

  // per-epoch learning curves, aggregated per label over seeds
  {
    std::vector<std::string> hist_cols;
    std::map<std::string, std::vector<CsvTable>> hists;  // label -> one table per seed
    for (const auto& rd : run_dirs) {
      const RunConfig rc = load_run_manifest(rd);
      const std::string label = run_label(rc);
      for (std::uint64_t seed : rc.seeds) {
        CsvTable h = read_csv(seed_dir(rd, seed) + "/history.csv");
        if (hist_cols.empty()) hist_cols = h.header;
        else if (hist_cols != h.header)
          throw std::runtime_error("report: history columns differ in " + seed_dir(rd, seed));
        hists[label].push_back(std::move(h));
      }
    }
    std::ostringstream o;
    o << "label,epoch";
    for (size_t c = 1; c < hist_cols.size(); ++c)
      o << "," << hist_cols[c] << "_mean," << hist_cols[c] << "_std";
    o << "\n";
    for (const auto& label : res.labels) {
      const auto& tables = hists.at(label);
      size_t rows = tables.front().rows.size();
      for (const auto& t : tables) rows = std::min(rows, t.rows.size());
      for (size_t r = 0; r < rows; ++r) {
        o << label << "," << tables.front().rows[r][0];
        for (size_t c = 1; c < hist_cols.size(); ++c) {
          double sum = 0, sum2 = 0;
          for (const auto& t : tables) {
            const double v = parse_double(t.rows[r][c], hist_cols[c]);
            sum += v;
            sum2 += v * v;
          }
          const double n = static_cast<double>(tables.size());
          const double mean = sum / n;
          const double sd = std::sqrt(std::max(0.0, sum2 / n - mean * mean));
          o << "," << fmt_double(mean) << "," << fmt_double(sd);
        }
        o << "\n";
      }
    }
    write_file(out_dir + "/learning_curves.csv", o.str());
  }
  return res;
}

}  // namespace cvarnav
