#pragma once

// CVaR-constrained off-policy training on a twin-critic backbone:
// warm-up VaR initialization, budget-augmented episode collection, replay,
// twin task-critic regression, distributional cost-critic regression with the
// noncrossing quantile head, delayed tail-penalized actor updates, and
// per-epoch VaR / Lagrange-multiplier updates.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvarnav/navsim.hpp"
#include "cvarnav/nn.hpp"
#include "cvarnav/risk.hpp"
#include "cvarnav/rng.hpp"

namespace cvarnav {

enum class Mode { Unconstrained, Expectation, Cvar };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Unconstrained: return "unconstrained";
    case Mode::Expectation: return "expectation";
    case Mode::Cvar: return "cvar";
  }
  return "?";
}

inline Mode mode_from_name(const std::string& s) {
  if (s == "unconstrained") return Mode::Unconstrained;
  if (s == "expectation") return Mode::Expectation;
  if (s == "cvar") return Mode::Cvar;
  throw std::runtime_error("unknown mode '" + s + "' (expected unconstrained|expectation|cvar)");
}

struct TrainConfig {
  Mode mode = Mode::Cvar;
  int epochs = 100;
  int episodes_per_epoch = 70;
  int updates_per_epoch = 700;
  int batch_size = 128;
  double gamma = 0.99;
  double alpha = 0.9;
  double cost_threshold = 10.0;  // b
  double lr = 1e-4;
  double explore_noise = 0.1;       // floor of the decayed schedule
  double explore_noise_init = 1.0;  // broad early coverage; decays linearly
  double explore_decay_fraction = 1.0;  // fraction of training episodes spent decaying
  double target_noise = 0.2;
  double target_noise_clip = 0.5;
  int policy_delay = 2;
  double polyak_rho = 0.995;
  int warmup_episodes = 70;
  int replay_capacity = 200000;
  int num_quantiles = 32;
  double huber_kappa = 1.0;
  double beta_u = 0.05;
  double beta_lambda = 0.01;
  double lambda_init = 0.0;
  double lambda_max = 0.5;
  double budget_input_scale = 50.0;
  int hidden_width = 26;

  void validate() const {
    if (epochs <= 0 || episodes_per_epoch <= 0 || updates_per_epoch < 0 || batch_size <= 0)
      throw std::runtime_error("train config: schedule fields must be positive");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::runtime_error("train config: gamma in (0,1)");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::runtime_error("train config: alpha in (0,1)");
    if (lr <= 0.0 || huber_kappa <= 0.0 || budget_input_scale <= 0.0)
      throw std::runtime_error("train config: rates/scales must be positive");
    if (explore_noise < 0.0 || explore_noise_init < explore_noise ||
        explore_decay_fraction <= 0.0 || explore_decay_fraction > 1.0)
      throw std::runtime_error("train config: bad exploration schedule");
    if (!(polyak_rho > 0.0 && polyak_rho < 1.0))
      throw std::runtime_error("train config: polyak coefficient in (0,1)");
    if (policy_delay <= 0 || warmup_episodes <= 0 || replay_capacity <= 0 || num_quantiles <= 0 ||
        hidden_width <= 0)
      throw std::runtime_error("train config: counts must be positive");
    if (lambda_init < 0.0 || lambda_max < lambda_init)
      throw std::runtime_error("train config: need 0 <= lambda_init <= lambda_max");
  }
};

// The raw budget follows the recursion exactly; the network input uses a
// clamped rescaling so late-episode budget growth cannot saturate the trunk.
inline double budget_feature(double e, double scale) {
  return std::clamp(e / scale, -1.0, 1.0);
}

using AugInput = std::array<double, kAugDim>;
using CriticInput = std::array<double, kAugDim + kActionDim>;

inline AugInput augmented_input(const Observation& obs, double e, double budget_scale) {
  AugInput in{};
  for (int i = 0; i < kObsDim; ++i) in[i] = obs[i];
  in[kObsDim] = budget_feature(e, budget_scale);
  return in;
}

inline CriticInput critic_input(const AugInput& aug, const Action& a) {
  CriticInput in{};
  for (int i = 0; i < kAugDim; ++i) in[i] = aug[i];
  in[kAugDim] = a[0];
  in[kAugDim + 1] = a[1];
  return in;
}

// tanh outputs -> physical action box; mirrors the affine layer appended to
// the saved policy file bit for bit.
struct ActionScaler {
  double half_v = 0.5;
  double omega_max = 1.0;

  Action apply(std::span<const double> t) const {
    return {half_v + half_v * t[0], omega_max * t[1]};
  }
  Action grad() const { return {half_v, omega_max}; }
};

// Policy file layout: actor core plus a fixed identity-activation rescaling
// layer, so a loaded net forward-evaluates straight to physical actions and
// reachability can treat the rescaling as one more affine stage.
inline DenseNet policy_file_net(const DenseNet& actor_core, const ActionScaler& sc) {
  DenseNet net = actor_core;
  Layer rescale;
  rescale.in = kActionDim;
  rescale.out = kActionDim;
  rescale.act = Activation::Identity;
  rescale.W = {sc.half_v, 0.0, 0.0, sc.omega_max};
  rescale.b = {sc.half_v, 0.0};
  net.layers.push_back(std::move(rescale));
  return net;
}

struct Transition {
  Observation obs{};
  double e = 0.0;
  Action action{};
  double reward = 0.0;
  double cost = 0.0;
  Observation next_obs{};
  double next_e = 0.0;
  StepTag tag = StepTag::Running;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::runtime_error("replay buffer: zero capacity");
    slots_.reserve(std::min<size_t>(capacity, 1 << 16));
  }

  void push(const Transition& t) {
    if (slots_.size() < capacity_) {
      slots_.push_back(t);
    } else {
      slots_[cursor_] = t;
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  size_t size() const { return slots_.size(); }
  const Transition& at(size_t i) const { return slots_[i]; }

  size_t sample_index(Rng& rng) const {
    if (slots_.empty()) throw std::runtime_error("replay buffer: sampling from empty buffer");
    return static_cast<size_t>(rng.below(slots_.size()));
  }

 private:
  size_t capacity_;
  size_t cursor_ = 0;
  std::vector<Transition> slots_;
};

struct EpisodeSummary {
  double reward = 0.0;
  double cost = 0.0;
  int steps = 0;
  StepTag tag = StepTag::Running;
};

struct EpochStats {
  int epoch = 0;
  double mean_reward = 0.0;
  double mean_cost = 0.0;
  int success = 0;
  int collision = 0;
  int timeout = 0;
  double u = 0.0;
  double lambda = 0.0;
  double p_hat = 0.0;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, ScenarioConfig scen, std::uint64_t master_seed)
      : cfg_(cfg),
        env_(scen),
        env_rng_(mix_seed(master_seed, 2)),
        explore_rng_(mix_seed(master_seed, 3)),
        sampler_rng_(mix_seed(master_seed, 4)),
        buffer_(cfg.replay_capacity) {
    cfg_.validate();
    scaler_.half_v = 0.5 * scen.v_max;
    scaler_.omega_max = scen.omega_max;

    Rng init_rng(mix_seed(master_seed, 1));
    const int h = cfg_.hidden_width;
    actor_.layers = {make_layer(kAugDim, h, Activation::Tanh, init_rng),
                     make_layer(h, kActionDim, Activation::Tanh, init_rng)};
    critic1_.layers = {make_layer(kAugDim + kActionDim, h, Activation::Tanh, init_rng),
                       make_layer(h, 1, Activation::Identity, init_rng)};
    critic2_.layers = {make_layer(kAugDim + kActionDim, h, Activation::Tanh, init_rng),
                       make_layer(h, 1, Activation::Identity, init_rng)};
    cost_net_.layers = {make_layer(kAugDim + kActionDim, h, Activation::Tanh, init_rng),
                        make_layer(h, cfg_.num_quantiles + 2, Activation::Identity, init_rng)};
    actor_target_ = actor_;
    critic1_target_ = critic1_;
    critic2_target_ = critic2_;
    cost_target_ = cost_net_;

    opt_actor_.init(actor_, cfg_.lr);
    opt_c1_.init(critic1_, cfg_.lr);
    opt_c2_.init(critic2_, cfg_.lr);
    opt_cost_.init(cost_net_, cfg_.lr);
    grads_actor_.init(actor_);
    grads_c1_.init(critic1_);
    grads_c2_.init(critic2_);
    grads_cost_.init(cost_net_);

    tracker_.alpha = cfg_.alpha;
    tracker_.beta_u = cfg_.beta_u;
    lm_.lambda = cfg_.mode == Mode::Unconstrained ? 0.0 : cfg_.lambda_init;
    lm_.lambda_max = cfg_.lambda_max;
    lm_.beta_lambda = cfg_.beta_lambda;
    lm_.threshold_b = cfg_.cost_threshold;
  }

  Action policy_action(const Observation& obs, double e) const {
    const AugInput in = augmented_input(obs, e, cfg_.budget_input_scale);
    const auto t = forward(actor_, in);
    return scaler_.apply(t);
  }

  // Linear decay from explore_noise_init to explore_noise over the first
  // explore_decay_fraction of all training episodes, then constant.
  double exploration_scale() const {
    const double horizon =
        cfg_.explore_decay_fraction * cfg_.epochs * cfg_.episodes_per_epoch;
    if (horizon <= 0.0 || episodes_collected_ >= horizon) return cfg_.explore_noise;
    const double t = static_cast<double>(episodes_collected_) / horizon;
    return cfg_.explore_noise_init + t * (cfg_.explore_noise - cfg_.explore_noise_init);
  }

  // Collect N episodes with the untrained policy, no parameter updates, and
  // initialize u to the empirical alpha-quantile of their undiscounted costs.
  double warmup_var_init() {
    std::vector<double> costs;
    costs.reserve(cfg_.warmup_episodes);
    for (int n = 0; n < cfg_.warmup_episodes; ++n)
      costs.push_back(collect_episode(0.0, cfg_.explore_noise_init, false).cost);
    tracker_.u = empirical_quantile(costs, cfg_.alpha);
    return tracker_.u;
  }

  EpisodeSummary collect_episode(double u, double noise_scale, bool store) {
    Observation obs = env_.reset(env_rng_.next_u64());
    double e = u;
    EpisodeSummary s;
    for (int t = 0; t < env_.config().max_steps; ++t) {
      Action a = policy_action(obs, e);
      a[0] = std::clamp(a[0] + noise_scale * explore_rng_.normal(), 0.0, env_.config().v_max);
      a[1] = std::clamp(a[1] + noise_scale * explore_rng_.normal(), -env_.config().omega_max,
                        env_.config().omega_max);
      const StepOutcome out = env_.step(a);
      const double e_next = budget_update(e, out.cost, cfg_.gamma);
      if (store)
        buffer_.push({obs, e, a, out.reward, out.cost, out.obs, e_next, out.tag});
      s.reward += out.reward;
      s.cost += out.cost;
      s.steps += 1;
      s.tag = out.tag;
      obs = out.obs;
      e = e_next;
      if (out.tag != StepTag::Running) break;
    }
    return s;
  }

  struct BatchTargets {
    std::vector<size_t> indices;
    std::vector<Action> smoothed_next;          // a~' per sample
    std::vector<double> y_r;                    // task-critic targets
    std::vector<std::vector<double>> cost_tgt;  // per sample, M values
  };

  // Collision and goal end the MDP; hitting the step limit only truncates
  // the episode, so those transitions keep their bootstrap.
  static bool is_terminal(StepTag tag) { return tag == StepTag::Collision || tag == StepTag::Goal; }

  // Smoothed target action and bootstrap targets for one sampled batch.
  // Terminal transitions drop both bootstrap terms.
  void td3_targets(BatchTargets& bt) {
    const size_t n = bt.indices.size();
    bt.smoothed_next.resize(n);
    bt.y_r.resize(n);
    bt.cost_tgt.resize(n);
    for (size_t b = 0; b < n; ++b) {
      const Transition& tr = buffer_.at(bt.indices[b]);
      const AugInput next_aug = augmented_input(tr.next_obs, tr.next_e, cfg_.budget_input_scale);
      forward_trace(actor_target_, next_aug, trace_a_);
      Action anext = scaler_.apply(trace_a_.acts.back());
      for (int i = 0; i < kActionDim; ++i) {
        const double noise = std::clamp(cfg_.target_noise * sampler_rng_.normal(),
                                        -cfg_.target_noise_clip, cfg_.target_noise_clip);
        anext[i] += noise;
      }
      anext[0] = std::clamp(anext[0], 0.0, env_.config().v_max);
      anext[1] = std::clamp(anext[1], -env_.config().omega_max, env_.config().omega_max);
      bt.smoothed_next[b] = anext;

      auto& tgt = bt.cost_tgt[b];
      tgt.assign(cfg_.num_quantiles, tr.cost);
      if (is_terminal(tr.tag)) {
        bt.y_r[b] = tr.reward;
        continue;
      }
      const CriticInput cin = critic_input(next_aug, anext);
      const double q1 = forward(critic1_target_, cin)[0];
      const double q2 = forward(critic2_target_, cin)[0];
      bt.y_r[b] = tr.reward + cfg_.gamma * std::min(q1, q2);
      const auto logits = forward(cost_target_, cin);
      const QuantileHead head = noncrossing_quantiles(logits);
      for (int j = 0; j < cfg_.num_quantiles; ++j)
        tgt[j] = tr.cost + cfg_.gamma * head.quantiles.q[j];
    }
  }

  struct UpdateLosses {
    double task_critic = 0.0;
    double cost_critic = 0.0;
    double actor = 0.0;
    bool actor_updated = false;
  };

  // Twin critics regress to y_R; the cost critic minimizes the Huber quantile
  // loss against the budget-consistent targets.
  void update_critics(const BatchTargets& bt, UpdateLosses& losses) {
    const size_t n = bt.indices.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    grads_c1_.zero();
    grads_c2_.zero();
    grads_cost_.zero();
    double loss_q = 0.0, loss_c = 0.0;
    std::array<double, 1> dq{};
    for (size_t b = 0; b < n; ++b) {
      const Transition& tr = buffer_.at(bt.indices[b]);
      const AugInput aug = augmented_input(tr.obs, tr.e, cfg_.budget_input_scale);
      const CriticInput cin = critic_input(aug, tr.action);

      forward_trace(critic1_, cin, trace_c_);
      double diff = trace_c_.acts.back()[0] - bt.y_r[b];
      loss_q += diff * diff * inv_n;
      dq[0] = 2.0 * diff * inv_n;
      backward(critic1_, trace_c_, dq, grads_c1_);

      forward_trace(critic2_, cin, trace_c_);
      diff = trace_c_.acts.back()[0] - bt.y_r[b];
      loss_q += diff * diff * inv_n;
      dq[0] = 2.0 * diff * inv_n;
      backward(critic2_, trace_c_, dq, grads_c2_);

      forward_trace(cost_net_, cin, trace_k_);
      const QuantileHead head = noncrossing_quantiles(trace_k_.acts.back());
      loss_c += huber_quantile_loss(head.quantiles, bt.cost_tgt[b], cfg_.huber_kappa) * inv_n;
      huber_quantile_loss_grad(head.quantiles, bt.cost_tgt[b], cfg_.huber_kappa, scratch_dq_);
      for (double& g : scratch_dq_) g *= inv_n;
      quantile_head_backward(head, scratch_dq_, scratch_dz_);
      backward(cost_net_, trace_k_, scratch_dz_, grads_cost_);
    }
    if (!std::isfinite(loss_q) || !std::isfinite(loss_c))
      throw std::runtime_error("update_critics: non-finite loss");
    grad_step(critic1_, grads_c1_, opt_c1_);
    grad_step(critic2_, grads_c2_, opt_c2_);
    grad_step(cost_net_, grads_cost_, opt_cost_);
    losses.task_critic = loss_q;
    losses.cost_critic = loss_c;
  }

  // L_pi = -E[Q_1(s, pi(s))] + lambda * E[V_C(s, pi(s))], with V_C evaluated
  // at each state's stored budget.
  double update_actor(const BatchTargets& bt) {
    const size_t n = bt.indices.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double lambda = lm_.lambda;
    grads_actor_.zero();
    double loss = 0.0;
    std::array<double, 1> one{1.0};
    std::array<double, kActionDim> dLdt{};
    for (size_t b = 0; b < n; ++b) {
      const Transition& tr = buffer_.at(bt.indices[b]);
      const AugInput aug = augmented_input(tr.obs, tr.e, cfg_.budget_input_scale);
      forward_trace(actor_, aug, trace_a_);
      const Action a = scaler_.apply(trace_a_.acts.back());
      const CriticInput cin = critic_input(aug, a);

      forward_trace(critic1_, cin, trace_c_);
      loss -= trace_c_.acts.back()[0] * inv_n;
      backward_input_only(critic1_, trace_c_, one, scratch_din_);
      double da0 = -scratch_din_[kAugDim];
      double da1 = -scratch_din_[kAugDim + 1];

      if (lambda != 0.0) {
        forward_trace(cost_net_, cin, trace_k_);
        const QuantileHead head = noncrossing_quantiles(trace_k_.acts.back());
        loss += lambda * cvar_cost_value(head.quantiles, tr.e) * inv_n;
        cvar_cost_value_grad(head.quantiles, tr.e, scratch_dq_);
        quantile_head_backward(head, scratch_dq_, scratch_dz_);
        backward_input_only(cost_net_, trace_k_, scratch_dz_, scratch_din2_);
        da0 += lambda * scratch_din2_[kAugDim];
        da1 += lambda * scratch_din2_[kAugDim + 1];
      }
      const Action g = scaler_.grad();
      dLdt[0] = da0 * g[0] * inv_n;
      dLdt[1] = da1 * g[1] * inv_n;
      backward(actor_, trace_a_, dLdt, grads_actor_);
    }
    if (!std::isfinite(loss)) throw std::runtime_error("update_actor: non-finite loss");
    grad_step(actor_, grads_actor_, opt_actor_);
    return loss;
  }

  UpdateLosses update_once() {
    if (buffer_.size() == 0) throw std::runtime_error("update_once: empty replay buffer");
    batch_.indices.resize(cfg_.batch_size);
    for (int b = 0; b < cfg_.batch_size; ++b)
      batch_.indices[b] = buffer_.sample_index(sampler_rng_);
    td3_targets(batch_);
    UpdateLosses losses;
    update_critics(batch_, losses);
    critic_updates_ += 1;
    if (critic_updates_ % cfg_.policy_delay == 0) {
      losses.actor = update_actor(batch_);
      losses.actor_updated = true;
      polyak_update(actor_target_, actor_, cfg_.polyak_rho);
      polyak_update(critic1_target_, critic1_, cfg_.polyak_rho);
      polyak_update(critic2_target_, critic2_, cfg_.polyak_rho);
      polyak_update(cost_target_, cost_net_, cfg_.polyak_rho);
      actor_updates_ += 1;
    }
    return losses;
  }

  void run_epoch(int epoch) {
    std::vector<double> costs;
    costs.reserve(cfg_.episodes_per_epoch);
    EpochStats st;
    st.epoch = epoch;
    for (int n = 0; n < cfg_.episodes_per_epoch; ++n) {
      const EpisodeSummary s = collect_episode(tracker_.u, exploration_scale(), true);
      episodes_collected_ += 1;
      costs.push_back(s.cost);
      st.mean_reward += s.reward;
      st.mean_cost += s.cost;
      if (s.tag == StepTag::Goal) st.success += 1;
      if (s.tag == StepTag::Collision) st.collision += 1;
      if (s.tag == StepTag::Timeout) st.timeout += 1;
    }
    st.mean_reward /= cfg_.episodes_per_epoch;
    st.mean_cost /= cfg_.episodes_per_epoch;

    for (int j = 0; j < cfg_.updates_per_epoch; ++j) update_once();

    const double u_pre = tracker_.u;
    st.p_hat = var_update(tracker_, costs);
    switch (cfg_.mode) {
      case Mode::Unconstrained:
        break;  // lambda frozen at 0
      case Mode::Expectation:
        lambda_update(lm_, 0.0, st.mean_cost);  // slack b - mean cost, no VaR term
        break;
      case Mode::Cvar:
        lambda_update(lm_, u_pre, st.mean_cost);
        break;
    }
    st.u = tracker_.u;
    st.lambda = lm_.lambda;
    history_.push_back(st);

    if (!all_parameters_finite(actor_) || !all_parameters_finite(critic1_) ||
        !all_parameters_finite(critic2_) || !all_parameters_finite(cost_net_))
      throw std::runtime_error("train: divergence, non-finite parameters after epoch " +
                               std::to_string(epoch));
  }

  void train() {
    warmup_var_init();
    for (int k = 1; k <= cfg_.epochs; ++k) run_epoch(k);
  }

  DenseNet policy_net() const { return policy_file_net(actor_, scaler_); }

  const TrainConfig& config() const { return cfg_; }
  Environment& env() { return env_; }
  const std::vector<EpochStats>& history() const { return history_; }
  const VarTracker& tracker() const { return tracker_; }
  const LagrangeMultiplier& multiplier() const { return lm_; }
  long critic_updates() const { return critic_updates_; }
  long actor_updates() const { return actor_updates_; }
  ReplayBuffer& buffer() { return buffer_; }

  // exposed for tests and checkpointing
  TrainConfig cfg_;
  Environment env_;
  Rng env_rng_, explore_rng_, sampler_rng_;
  ActionScaler scaler_;
  DenseNet actor_, critic1_, critic2_, cost_net_;
  DenseNet actor_target_, critic1_target_, critic2_target_, cost_target_;
  OptimizerState opt_actor_, opt_c1_, opt_c2_, opt_cost_;
  GradBuffer grads_actor_, grads_c1_, grads_c2_, grads_cost_;
  ReplayBuffer buffer_;
  VarTracker tracker_;
  LagrangeMultiplier lm_;
  std::vector<EpochStats> history_;
  long critic_updates_ = 0;
  long actor_updates_ = 0;
  long episodes_collected_ = 0;

 private:
  BatchTargets batch_;
  ForwardTrace trace_a_, trace_c_, trace_k_;
  std::vector<double> scratch_dq_, scratch_dz_, scratch_din_, scratch_din2_;
};

}  // namespace cvarnav
