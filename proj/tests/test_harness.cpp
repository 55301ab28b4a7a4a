#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "cvarnav/harness.hpp"

using namespace cvarnav;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

RunConfig tiny_run(const std::string& out) {
  RunConfig rc;
  rc.train.epochs = 1;
  rc.train.episodes_per_epoch = 2;
  rc.train.updates_per_epoch = 2;
  rc.train.batch_size = 8;
  rc.train.warmup_episodes = 2;
  rc.train.replay_capacity = 4000;
  rc.seeds = {5};
  rc.eval_repeats = 1;
  rc.out_dir = out;
  return rc;
}

std::string tiny_scenario_text() {
  ScenarioConfig sc;
  sc.max_steps = 12;
  sc.eval_pairs = {{{-4, -4, 0.7853981633974483}, {4, 4}},
                   {{4, 4, -2.356194490192345}, {-4, -4}}};
  return scenario_to_text(sc);
}

}  // namespace

TEST_CASE("config: unknown keys are rejected with the offending key") {
  RunConfig rc;
  REQUIRE_THROWS_AS(apply_config_entry(rc, "no_such_key", "1"), UsageError);
  try {
    apply_config_entry(rc, "lerning_rate", "0.1");
  } catch (const UsageError& e) {
    REQUIRE(std::string(e.what()).find("lerning_rate") != std::string::npos);
  }
}

TEST_CASE("config: file values load and explicit entries override") {
  TempDir tmp("cvarnav_cfg_test");
  write_file(tmp.str() + "/run.cfg", "mode = expectation\nalpha = 0.5\nepochs = 7\n");
  RunConfig rc;
  load_config_file(rc, tmp.str() + "/run.cfg");
  REQUIRE(rc.train.mode == Mode::Expectation);
  REQUIRE(rc.train.alpha == 0.5);
  REQUIRE(rc.train.epochs == 7);
  apply_config_entry(rc, "alpha", "0.9");
  REQUIRE(rc.train.alpha == 0.9);
}

TEST_CASE("manifest: text round trip is exact") {
  RunConfig rc = tiny_run("/tmp/somewhere");
  rc.train.mode = Mode::Cvar;
  rc.train.alpha = 0.9;
  rc.seeds = {1, 2, 3};
  const std::string m1 = manifest_text(rc);
  RunConfig back;
  for (const auto& [k, v] : parse_kv_text(m1, "manifest")) apply_config_entry(back, k, v);
  REQUIRE(manifest_text(back) == m1);
}

TEST_CASE("train/evaluate/verify produce schema-complete CSVs deterministically") {
  TempDir tmp("cvarnav_harness_e2e");
  const std::string scen_path = tmp.str() + "/scenario.cfg";
  write_file(scen_path, tiny_scenario_text());

  auto run_all = [&](const std::string& out) {
    RunConfig rc = tiny_run(out);
    rc.scenario_path = scen_path;
    cmd_train(rc);
    cmd_evaluate(out);
    cmd_verify(out);
  };
  run_all(tmp.str() + "/a");
  run_all(tmp.str() + "/b");

  for (const char* rel :
       {"/seed5/history.csv", "/seed5/eval.csv", "/seed5/traj.csv", "/seed5/verify.csv",
        "/seed5/verify_summary.csv", "/seed5/actor.net"}) {
    const std::string fa = read_file(tmp.str() + "/a" + rel);
    const std::string fb = read_file(tmp.str() + "/b" + rel);
    REQUIRE(fa == fb);
    REQUIRE(!fa.empty());
  }

  const CsvTable hist = read_csv(tmp.str() + "/a/seed5/history.csv");
  REQUIRE(hist.header ==
          std::vector<std::string>{"epoch", "mean_reward", "mean_cost", "success", "collision",
                                   "timeout", "u", "lambda", "p_hat"});
  REQUIRE(hist.rows.size() == 1);

  const CsvTable eval = read_csv(tmp.str() + "/a/seed5/eval.csv");
  REQUIRE(eval.rows.size() == 2);  // two pairs, one repeat
  int outcomes = 0;
  const int c_out = eval.column("outcome");
  for (const auto& row : eval.rows) {
    const std::string& o = row[c_out];
    REQUIRE((o == "goal" || o == "collision" || o == "timeout"));
    outcomes += 1;
  }
  REQUIRE(outcomes == 2);
}

TEST_CASE("train: unconstrained mode keeps the lambda column at zero") {
  TempDir tmp("cvarnav_unconstrained");
  RunConfig rc = tiny_run(tmp.str() + "/run");
  rc.train.mode = Mode::Unconstrained;
  cmd_train(rc);
  const CsvTable hist = read_csv(tmp.str() + "/run/seed5/history.csv");
  const int c_lambda = hist.column("lambda");
  for (const auto& row : hist.rows) REQUIRE(parse_double(row[c_lambda], "lambda") == 0.0);
}

TEST_CASE("evaluate: near-zero-velocity policy times out on every pair") {
  TempDir tmp("cvarnav_zero_policy");
  const std::string scen_path = tmp.str() + "/scenario.cfg";
  write_file(scen_path, tiny_scenario_text());
  RunConfig rc = tiny_run(tmp.str() + "/run");
  rc.scenario_path = scen_path;
  rc.train.updates_per_epoch = 0;
  cmd_train(rc);

  // overwrite the checkpoint with a pinned slow policy: v = tanh(-30) mapped to ~0
  DenseNet net = load_net(tmp.str() + "/run/seed5/actor.net");
  for (auto& w : net.layers[0].W) w = 0.0;
  for (auto& b : net.layers[0].b) b = 0.0;
  for (auto& w : net.layers[1].W) w = 0.0;
  net.layers[1].b = {-30.0, 0.0};
  save_net(net, tmp.str() + "/run/seed5/actor.net");

  const auto sums = cmd_evaluate(tmp.str() + "/run");
  REQUIRE(sums.size() == 1);
  REQUIRE(sums[0].timeout == sums[0].episodes);
  REQUIRE(sums[0].success + sums[0].collision + sums[0].timeout == sums[0].episodes);
}

TEST_CASE("verify: eps=0 matches the nominal-action sweep and larger eps never helps") {
  TempDir tmp("cvarnav_eps_sweep");
  const std::string scen_path = tmp.str() + "/scenario.cfg";
  write_file(scen_path, tiny_scenario_text());
  const std::string run = tmp.str() + "/run";
  RunConfig rc = tiny_run(run);
  rc.scenario_path = scen_path;
  rc.train.epochs = 3;
  rc.train.updates_per_epoch = 30;
  cmd_train(rc);
  cmd_evaluate(run);

  const auto at0 = cmd_verify(run, 0.0);

  // independent nominal-action oracle: sweep the policy's exact action
  const ScenarioConfig scen = load_run_scenario(run);
  const DenseNet policy = load_net(run + "/seed5/actor.net");
  const TrackerState ts = load_tracker(run + "/seed5");
  const CsvTable traj = read_csv(run + "/seed5/traj.csv");
  const CsvTable eval = read_csv(run + "/seed5/eval.csv");
  ScenarioConfig scen_eval = scen;
  scen_eval.randomize_start_goal = false;
  Environment env(scen_eval);
  long safe = 0;
  int cur_ep = -1;
  ArenaMap map;
  for (const auto& row : traj.rows) {
    const int ep = static_cast<int>(parse_int(row[traj.column("episode")], "episode"));
    if (ep != cur_ep) {
      const auto& erow = eval.rows[ep];
      env.reset_to(parse_uint64(erow[eval.column("scenario_seed")], "seed"),
                   scen.eval_pairs[parse_int(erow[eval.column("pair")], "pair")].start,
                   scen.eval_pairs[parse_int(erow[eval.column("pair")], "pair")].goal);
      map = env.map();
      cur_ep = ep;
    }
    std::array<double, kAugDim> state{};
    for (int i = 0; i < kObsDim; ++i)
      state[i] = parse_double(row[traj.column("obs" + std::to_string(i))], "obs");
    state[kAugDim - 1] = budget_feature(ts.u, rc.train.budget_input_scale);
    const auto av = forward(policy, state);
    ReachableActionBox point;
    point.lo = {av[0], av[1]};
    point.hi = point.lo;
    RobotPose pose{parse_double(row[traj.column("x")], "x"),
                   parse_double(row[traj.column("y")], "y"),
                   parse_double(row[traj.column("theta")], "theta")};
    const auto v = verify_state(pose, point, map, scen.dt, rc.verify_substeps, scen.d_col);
    if (v.status == VerdictStatus::Safe) ++safe;
  }
  REQUIRE(at0[0].safety_overall ==
          Catch::Approx(static_cast<double>(safe) / at0[0].states).margin(1e-12));

  const auto at_mid = cmd_verify(run, 0.01);
  const auto at_big = cmd_verify(run, 0.05);
  REQUIRE(at0[0].safety_overall >= at_mid[0].safety_overall);
  REQUIRE(at_mid[0].safety_overall >= at_big[0].safety_overall);
}

TEST_CASE("verify: reachability failure on most states flags the run unverifiable") {
  TempDir tmp("cvarnav_unverifiable");
  const std::string scen_path = tmp.str() + "/scenario.cfg";
  write_file(scen_path, tiny_scenario_text());
  RunConfig rc = tiny_run(tmp.str() + "/run");
  rc.scenario_path = scen_path;
  cmd_train(rc);
  cmd_evaluate(tmp.str() + "/run");

  // poison the checkpoint: non-finite weights make every propagation fail
  DenseNet net = load_net(tmp.str() + "/run/seed5/actor.net");
  net.layers[0].W[0] = std::numeric_limits<double>::infinity();
  save_net(net, tmp.str() + "/run/seed5/actor.net");

  const auto sums = cmd_verify(tmp.str() + "/run");
  REQUIRE(sums.size() == 1);
  REQUIRE(sums[0].unverified == sums[0].states);
  REQUIRE(sums[0].unverifiable);
  REQUIRE(sums[0].safety_overall == 0.0);  // unverified never counts as safe
}

TEST_CASE("report: aggregation matches hand-computed mean and population std") {
  TempDir tmp("cvarnav_report");
  const std::string run = tmp.str() + "/run";
  RunConfig rc = tiny_run(run);
  rc.seeds = {1, 2, 3};
  rc.scenario_path = run + "/scenario.cfg";
  fs::create_directories(run);
  write_file(run + "/scenario.cfg", tiny_scenario_text());
  write_file(run + "/manifest.cfg", manifest_text(rc));

  const double costs[3] = {1.0, 2.0, 4.0};
  for (int s = 0; s < 3; ++s) {
    const std::string dir = seed_dir(run, s + 1);
    fs::create_directories(dir);
    std::ostringstream ev;
    ev << "episode,pair,repeat,scenario_seed,outcome,steps,reward,cost\n";
    ev << "0,0,0,11,goal,10," << fmt_double(5.0) << "," << fmt_double(costs[s]) << "\n";
    write_file(dir + "/eval.csv", ev.str());
    write_file(dir + "/verify_summary.csv",
               "metric,value\nsafety_overall," + fmt_double(0.5 + 0.1 * s) + "\n");
    write_file(dir + "/history.csv",
               "epoch,mean_reward\n1," + fmt_double(10.0 * (s + 1)) + "\n");
  }

  const auto res = cmd_report({run}, tmp.str() + "/report");
  const auto& cell = res.table.at(res.labels.front()).at("avg_cost");
  const double mean = (1.0 + 2.0 + 4.0) / 3.0;
  const double var = ((1 - mean) * (1 - mean) + (2 - mean) * (2 - mean) + (4 - mean) * (4 - mean)) / 3.0;
  REQUIRE(cell[0] == Catch::Approx(mean).epsilon(1e-12));
  REQUIRE(cell[1] == Catch::Approx(std::sqrt(var)).epsilon(1e-12));
  REQUIRE(cell[2] == 3.0);

  const auto& safety = res.table.at(res.labels.front()).at("safety_overall");
  REQUIRE(safety[0] == Catch::Approx(0.6).epsilon(1e-12));

  // identical duplicate run directories: mean unchanged, still deterministic
  const auto res2 = cmd_report({run, run}, tmp.str() + "/report2");
  REQUIRE(res2.table.at(res2.labels.front()).at("avg_cost")[0] == Catch::Approx(mean));
  REQUIRE(read_file(tmp.str() + "/report/comparison.csv").find("label,metric,mean,std,n") == 0);
}

TEST_CASE("report: single run produces zero std columns") {
  TempDir tmp("cvarnav_report_single");
  const std::string run = tmp.str() + "/run";
  RunConfig rc = tiny_run(run);
  rc.seeds = {9};
  rc.scenario_path = run + "/scenario.cfg";
  fs::create_directories(seed_dir(run, 9));
  write_file(run + "/scenario.cfg", tiny_scenario_text());
  write_file(run + "/manifest.cfg", manifest_text(rc));
  write_file(seed_dir(run, 9) + "/eval.csv",
             "episode,pair,repeat,scenario_seed,outcome,steps,reward,cost\n"
             "0,0,0,11,goal,10,5,2\n");
  write_file(seed_dir(run, 9) + "/verify_summary.csv", "metric,value\nsafety_overall,0.75\n");
  write_file(seed_dir(run, 9) + "/history.csv", "epoch,mean_reward\n1,3\n");
  const auto res = cmd_report({run}, tmp.str() + "/report");
  for (const auto& metric : res.metrics) {
    const auto& cell = res.table.at(res.labels.front()).at(metric);
    REQUIRE(cell[1] == 0.0);
  }
}
