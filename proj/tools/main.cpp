// Command-line front end: train / evaluate / verify / report.
//
// Configuration is layered: built-in defaults, then --config file entries,
// then explicit flags. Exit codes: 0 success, 1 usage error, 2 runtime
// failure, 3 unverifiable run (reachability failed on >50% of states).

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cvarnav/harness.hpp"

using namespace cvarnav;

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> mode;
  std::optional<double> alpha, budget, epsilon, gamma, lr, safety_threshold;
  std::optional<int> epochs, episodes, updates, eval_repeats, verify_substeps;
  std::vector<std::uint64_t> seeds;
  std::string scenario, out;
};

void apply_flags(RunConfig& rc, const Flags& f) {
  if (!f.config.empty()) load_config_file(rc, f.config);
  if (f.mode) apply_config_entry(rc, "mode", *f.mode);
  if (f.alpha) rc.train.alpha = *f.alpha;
  if (f.budget) rc.train.cost_threshold = *f.budget;
  if (f.gamma) rc.train.gamma = *f.gamma;
  if (f.lr) rc.train.lr = *f.lr;
  if (f.epsilon) rc.epsilon = *f.epsilon;
  if (f.epochs) rc.train.epochs = *f.epochs;
  if (f.episodes) rc.train.episodes_per_epoch = *f.episodes;
  if (f.updates) rc.train.updates_per_epoch = *f.updates;
  if (f.eval_repeats) rc.eval_repeats = *f.eval_repeats;
  if (f.verify_substeps) rc.verify_substeps = *f.verify_substeps;
  if (f.safety_threshold) rc.safety_threshold = *f.safety_threshold;
  if (!f.seeds.empty()) rc.seeds = f.seeds;
  if (!f.scenario.empty()) rc.scenario_path = f.scenario;
  if (!f.out.empty()) rc.out_dir = f.out;
  if (rc.out_dir.empty()) {
    if (const char* root = std::getenv("CVARNAV_OUT")) rc.out_dir = std::string(root) + "/run";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CVaR-constrained navigation training with reachability-verified safety rates"};
  app.require_subcommand(1);

  Flags f;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", f.config, "config file (key=value); flags override");
    cmd->add_option("--out", f.out, "output directory (default $CVARNAV_OUT/run)");
  };

  auto* train = app.add_subcommand("train", "train one policy per seed");
  add_common(train);
  train->add_option("--mode", f.mode, "unconstrained | expectation | cvar");
  train->add_option("--alpha", f.alpha, "CVaR confidence level");
  train->add_option("--budget", f.budget, "episodic cost threshold b");
  train->add_option("--gamma", f.gamma, "discount factor");
  train->add_option("--lr", f.lr, "learning rate");
  train->add_option("--epochs", f.epochs, "training epochs");
  train->add_option("--episodes-per-epoch", f.episodes, "episodes collected per epoch");
  train->add_option("--updates-per-epoch", f.updates, "gradient updates per epoch");
  train->add_option("--seed", f.seeds, "master seed (repeatable)");
  train->add_option("--scenario", f.scenario, "scenario config file");

  std::string run_dir;
  auto* evaluate = app.add_subcommand("evaluate", "roll out the fixed start-goal pairs");
  evaluate->add_option("--run", run_dir, "run directory from train")->required();
  evaluate->add_option("--eval-repeats", f.eval_repeats,
                       "obstacle-layout repeats per start-goal pair");

  auto* verify = app.add_subcommand("verify", "reachability-verify recorded trajectories");
  verify->add_option("--run", run_dir, "run directory from train")->required();
  verify->add_option("--epsilon", f.epsilon, "observation perturbation bound");
  verify->add_option("--verify-substeps", f.verify_substeps, "sweep sub-steps per control interval");
  verify->add_option("--safety-threshold", f.safety_threshold,
                     "clearance threshold (default: scenario d_col)");

  std::vector<std::string> report_dirs;
  auto* report = app.add_subcommand("report", "aggregate runs into comparison tables");
  add_common(report);
  report->add_option("dirs", report_dirs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (train->parsed()) {
      RunConfig rc;
      apply_flags(rc, f);
      const std::string dir = cmd_train(rc);
      std::cout << "trained " << rc.seeds.size() << " seed(s) -> " << dir << "\n";
    } else if (evaluate->parsed()) {
      RunConfig overrides = load_run_manifest(run_dir);
      if (f.eval_repeats) {
        overrides.eval_repeats = *f.eval_repeats;
        write_file(run_dir + "/manifest.cfg", manifest_text(overrides));
      }
      const auto sums = cmd_evaluate(run_dir);
      for (size_t i = 0; i < sums.size(); ++i) {
        const auto& s = sums[i];
        std::cout << "seed[" << i << "]: episodes=" << s.episodes << " success=" << s.success
                  << " collision=" << s.collision << " timeout=" << s.timeout << "\n";
      }
    } else if (verify->parsed()) {
      if (f.verify_substeps || f.safety_threshold) {
        RunConfig overrides = load_run_manifest(run_dir);
        if (f.verify_substeps) overrides.verify_substeps = *f.verify_substeps;
        if (f.safety_threshold) overrides.safety_threshold = *f.safety_threshold;
        write_file(run_dir + "/manifest.cfg", manifest_text(overrides));
      }
      const auto sums = cmd_verify(run_dir, f.epsilon);
      bool unverifiable = false;
      for (size_t i = 0; i < sums.size(); ++i) {
        const auto& s = sums[i];
        std::cout << "seed[" << i << "]: states=" << s.states << " unverified=" << s.unverified
                  << " safety_overall=" << fmt_double(s.safety_overall) << "\n";
        unverifiable = unverifiable || s.unverifiable;
      }
      if (unverifiable) {
        std::cerr << "run unverifiable: reachability failed on more than half the states\n";
        return 3;
      }
    } else if (report->parsed()) {
      RunConfig rc;
      apply_flags(rc, f);
      if (rc.out_dir.empty()) throw UsageError("report: no output directory");
      const auto res = cmd_report(report_dirs, rc.out_dir);
      std::cout << read_file(rc.out_dir + "/comparison.txt");
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
