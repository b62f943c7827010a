#pragma once

// PPO with a behavior-cloning term against a curriculum of rule-based
// teachers. Updates re-evaluate each decision from its stored recurrent
// state (single step, no backprop through time).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "guidedlight/detail/text.hpp"
#include "guidedlight/errors.hpp"
#include "guidedlight/mdp_env.hpp"
#include "guidedlight/policy_net.hpp"
#include "guidedlight/teachers.hpp"

namespace guidedlight {

struct CurriculumStage {
  TeacherKind teacher = TeacherKind::Linear;
  int first_episode = 0;
  friend bool operator==(const CurriculumStage&, const CurriculumStage&) = default;
};

using CurriculumSchedule = std::vector<CurriculumStage>;

// Stages start at equal fractions of the run: 300 episodes over three
// teachers switch at 100 and 200.
inline CurriculumSchedule equal_stages(int episodes, const std::vector<TeacherKind>& teachers) {
  if (teachers.empty()) throw ConfigError("curriculum needs at least one teacher");
  CurriculumSchedule s;
  const int n = static_cast<int>(teachers.size());
  for (int i = 0; i < n; ++i) s.push_back({teachers[static_cast<std::size_t>(i)], i * episodes / n});
  return s;
}

inline void validate_schedule(const CurriculumSchedule& schedule) {
  if (schedule.empty()) throw ConfigError("curriculum schedule is empty");
  if (schedule.front().first_episode != 0) throw ConfigError("curriculum schedule must start at episode 0");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& s = schedule[i];
    if (!curriculum_rank(s.teacher)) {
      throw ConfigError("teacher '" + std::string(teacher_name(s.teacher)) + "' cannot be a curriculum stage");
    }
    if (i == 0) continue;
    const auto& prev = schedule[i - 1];
    if (s.first_episode <= prev.first_episode) throw ConfigError("curriculum stage starts must strictly increase");
    if (*curriculum_rank(s.teacher) <= *curriculum_rank(prev.teacher)) {
      throw ConfigError("curriculum must go from easier to harder teachers");
    }
  }
}

inline TeacherKind curriculum_select(int episode, const CurriculumSchedule& schedule) {
  if (episode < 0) throw ContractViolation("curriculum_select: negative episode");
  validate_schedule(schedule);
  TeacherKind out = schedule.front().teacher;
  for (const auto& s : schedule) {
    if (s.first_episode <= episode) out = s.teacher;
  }
  return out;
}

struct TrainConfig {
  double learning_rate = 5e-4;
  double alpha = 1.0;  // actor
  double beta = 1.0;   // critic
  double kappa = 2.0;  // behavior cloning
  double gamma = 0.95;
  double lambda = 0.95;
  double clip_ratio = 0.2;
  int epochs = 4;
  int minibatch = 64;
  double max_grad_norm = 5.0;
  // The critic head predicts return * value_scale, keeping its regression
  // target near the per-step reward scale.
  double value_scale = 0.05;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int episodes = 300;
  CurriculumSchedule schedule = equal_stages(300, {TeacherKind::Linear, TeacherKind::Logistic, TeacherKind::ScatsLike});
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // episodes; 0 disables

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (alpha < 0.0 || beta < 0.0 || kappa < 0.0) throw ConfigError("alpha, beta and kappa must be >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) throw ConfigError("clip_ratio must lie in (0, 1)");
    if (epochs < 1 || minibatch < 1) throw ConfigError("epochs and minibatch must be >= 1");
    if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
    if (!(value_scale > 0.0)) throw ConfigError("value_scale must be positive");
    if (episodes < 1) throw ConfigError("episodes must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    validate_schedule(schedule);
    if (schedule.back().first_episode >= episodes) throw ConfigError("curriculum stage starts after the last episode");
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct StepRecord {
  Observation observation;
  ActionMask mask;
  ActionVector action{};
  PerPhase<double> log_prob{};
  double joint_log_prob = 0.0;
  double value = 0.0;  // critic estimate in return units
  double reward = 0.0;
  PerPhase<int> teacher_label{};
  nn::RecurrentState state;  // recurrent input for this decision
};

struct Trajectory {
  TeacherKind teacher = TeacherKind::Linear;
  std::vector<StepRecord> steps;

  double total_reward() const {
    double s = 0.0;
    for (const auto& r : steps) s += r.reward;
    return s;
  }
  double mean_reward() const { return steps.empty() ? 0.0 : total_reward() / double(steps.size()); }
};

// Labels for every phase: where the teacher would move from the current plan.
inline PerPhase<int> teacher_labels(const PhasePlan& target, const PhasePlan& current) {
  PerPhase<int> out{};
  for (std::size_t p = 0; p < kPhases; ++p) out[p] = teacher_label(target.durations[p], current.durations[p]);
  return out;
}

// Runs one episode from a fresh reset. The recurrent state starts at zero.
template <class Rng>
Trajectory collect_episode(TrafficEnv& env, const nn::PolicyNet& net, const Teacher& teacher, Rng& rng,
                           bool greedy = false, double value_scale = 1.0) {
  Trajectory traj;
  traj.teacher = teacher.kind();
  Observation obs = env.reset();
  auto state = nn::RecurrentState::zeros(net.config().hidden);
  auto& mutable_net = const_cast<nn::PolicyNet&>(net);  // attach() only registers leaves
  while (!env.done()) {
    StepRecord rec;
    rec.observation = obs;
    rec.mask = env.mask();
    rec.state = state;
    rec.teacher_label = teacher_labels(teacher.target(obs.flows()), env.plan());
    nn::Tape tape;
    auto g = mutable_net.attach(tape);
    auto out = net.forward(g, obs, state);
    auto lp = nn::policy_log_probs(out.logits, rec.mask);
    auto sample = nn::choose_action(lp, rng, greedy);
    rec.action = sample.action;
    rec.log_prob = sample.log_prob;
    rec.joint_log_prob = sample.joint_log_prob;
    rec.value = out.value.item() / value_scale;
    state.h.assign(out.h.values().begin(), out.h.values().end());
    state.c.assign(out.c.values().begin(), out.c.values().end());
    auto result = env.step(rec.action);
    rec.reward = result.reward;
    obs = result.observation;
    traj.steps.push_back(std::move(rec));
  }
  return traj;
}

struct Advantages {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// GAE with a zero bootstrap after the last step; returns = advantages + values.
inline Advantages gae_advantages(std::span<const double> rewards, std::span<const double> values, double gamma,
                                 double lambda) {
  if (rewards.empty()) throw ContractViolation("gae_advantages: empty trajectory");
  if (rewards.size() != values.size()) throw ContractViolation("gae_advantages: rewards and values differ in length");
  const std::size_t n = rewards.size();
  Advantages out{std::vector<double>(n), std::vector<double>(n)};
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_value = i + 1 < n ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + gamma * lambda * running;
    out.advantages[i] = running;
    out.returns[i] = running + values[i];
  }
  return out;
}

inline Advantages gae_advantages(const Trajectory& traj, double gamma, double lambda) {
  std::vector<double> r, v;
  for (const auto& s : traj.steps) {
    r.push_back(s.reward);
    v.push_back(s.value);
  }
  return gae_advantages(r, v, gamma, lambda);
}

// Shift to mean 0 and scale to unit population std (if the spread is non-zero).
inline void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / double(adv.size());
  double ss = 0.0;
  for (double a : adv) ss += (a - mean) * (a - mean);
  const double sd = std::sqrt(ss / double(adv.size()));
  for (double& a : adv) a = sd > 1e-12 ? (a - mean) / sd : a - mean;
}

struct BatchSample {
  const StepRecord* step = nullptr;
  double advantage = 0.0;
  double ret = 0.0;
};

struct LossGraph {
  nn::Var actor, critic, bc, total;
  int remapped_labels = 0;
};

// A teacher label whose action is masked becomes "keep".
inline int effective_label(const StepRecord& s, std::size_t phase, int* remapped) {
  const int label = s.teacher_label[phase];
  if (s.mask.permits(phase, label)) return label;
  if (remapped) ++*remapped;
  return kKeep;
}

// Builds all three loss terms on one tape. Terms whose weight is zero are
// left out of the total so that, e.g., kappa = 0 is exactly PPO.
inline LossGraph build_losses(const nn::PolicyNet& net, const nn::PolicyNet::Graph& g, std::span<const BatchSample> batch,
                              const TrainConfig& cfg) {
  if (batch.empty()) throw ContractViolation("loss on an empty batch");
  nn::Tape& tape = *g.tape;
  std::vector<nn::Var> surrogate, squared, cross_entropy;
  LossGraph out;
  for (const auto& b : batch) {
    const StepRecord& s = *b.step;
    auto fwd = net.forward(g, s.observation, s.state);
    auto lp = nn::policy_log_probs(fwd.logits, s.mask);
    std::vector<nn::Var> chosen, bc_terms;
    for (std::size_t p = 0; p < kPhases; ++p) {
      chosen.push_back(nn::element(lp[p], static_cast<std::size_t>(s.action[p])));
      bc_terms.push_back(nn::element(lp[p], static_cast<std::size_t>(effective_label(s, p, &out.remapped_labels))));
    }
    nn::Var joint = nn::sum(nn::concat(chosen));
    nn::Var ratio = nn::exp(nn::add_scalar(joint, -s.joint_log_prob));
    nn::Var unclipped = nn::scale(ratio, b.advantage);
    nn::Var clipped = nn::scale(nn::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio), b.advantage);
    surrogate.push_back(nn::minimum(unclipped, clipped));
    squared.push_back(nn::square(nn::add_scalar(fwd.value, -b.ret * cfg.value_scale)));
    cross_entropy.push_back(nn::scale(nn::sum(nn::concat(bc_terms)), -1.0 / kPhases));
  }
  out.actor = nn::scale(nn::mean(surrogate), -1.0);
  out.critic = nn::mean(squared);
  out.bc = nn::mean(cross_entropy);
  std::vector<nn::Var> weighted;
  if (cfg.alpha != 0.0) weighted.push_back(nn::scale(out.actor, cfg.alpha));
  if (cfg.beta != 0.0) weighted.push_back(nn::scale(out.critic, cfg.beta));
  if (cfg.kappa != 0.0) weighted.push_back(nn::scale(out.bc, cfg.kappa));
  out.total = weighted.empty() ? tape.scalar(0.0) : nn::sum(nn::concat(weighted));
  return out;
}

struct LossReport {
  double actor = 0.0;
  double critic = 0.0;
  double bc = 0.0;
  double total = 0.0;
  int remapped_labels = 0;
  double grad_norm = 0.0;  // before clipping
};

// Loss values without touching gradients or parameters.
inline LossReport evaluate_losses(const nn::PolicyNet& net, std::span<const BatchSample> batch, const TrainConfig& cfg) {
  nn::Tape tape;
  auto g = const_cast<nn::PolicyNet&>(net).attach(tape);
  auto l = build_losses(net, g, batch, cfg);
  return {l.actor.item(), l.critic.item(), l.bc.item(), l.total.item(), l.remapped_labels, 0.0};
}

inline double ppo_actor_loss(const nn::PolicyNet& net, std::span<const BatchSample> batch, const TrainConfig& cfg) {
  return evaluate_losses(net, batch, cfg).actor;
}

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(nn::PolicyNet& net) {
    auto params = net.parameters();
    if (m_.empty()) {
      for (auto& [name, t] : params) {
        m_.emplace_back(t->size(), 0.0);
        v_.emplace_back(t->size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i].second;
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = p.grad[j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
        p.value[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + epsilon_);
      }
    }
  }

  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

inline double gradient_norm(const nn::PolicyNet& net) {
  double ss = 0.0;
  for (const auto& [name, t] : net.parameters()) {
    for (double g : t->grad) ss += g * g;
  }
  return std::sqrt(ss);
}

// One optimizer step on alpha*actor + beta*critic + kappa*bc. A non-finite
// loss or gradient throws before any parameter is written.
inline LossReport update(nn::PolicyNet& net, Adam& optimizer, std::span<const BatchSample> batch, const TrainConfig& cfg) {
  net.zero_grad();
  nn::Tape tape;
  auto g = net.attach(tape);
  auto l = build_losses(net, g, batch, cfg);
  LossReport rep{l.actor.item(), l.critic.item(), l.bc.item(), l.total.item(), l.remapped_labels, 0.0};
  if (!std::isfinite(rep.total) || !std::isfinite(rep.actor) || !std::isfinite(rep.critic) || !std::isfinite(rep.bc)) {
    net.zero_grad();
    throw NumericError("non-finite loss (actor " + detail::format_double(rep.actor) + ", critic " +
                       detail::format_double(rep.critic) + ", bc " + detail::format_double(rep.bc) + ")");
  }
  tape.backward(l.total);
  rep.grad_norm = gradient_norm(net);
  if (!std::isfinite(rep.grad_norm)) {
    net.zero_grad();
    throw NumericError("non-finite gradient");
  }
  if (rep.grad_norm > cfg.max_grad_norm) {
    const double k = cfg.max_grad_norm / rep.grad_norm;
    for (auto& [name, t] : net.parameters()) {
      for (double& x : t->grad) x *= k;
    }
  }
  optimizer.step(net);
  return rep;
}

struct UpdateLog {
  int episode = 0;
  int update = 0;
  TeacherKind teacher = TeacherKind::Linear;
  LossReport loss;
  double mean_reward = 0.0;
};

inline void write_training_log_csv(std::ostream& out, const std::vector<UpdateLog>& rows) {
  out << "episode,update,teacher,L_actor,L_critic,L_BC,total,mean_reward,remapped_labels\n";
  for (const auto& r : rows) {
    out << r.episode << ',' << r.update << ',' << teacher_name(r.teacher) << ','
        << detail::format_double(r.loss.actor) << ',' << detail::format_double(r.loss.critic) << ','
        << detail::format_double(r.loss.bc) << ',' << detail::format_double(r.loss.total) << ','
        << detail::format_double(r.mean_reward) << ',' << r.loss.remapped_labels << '\n';
  }
}

// Advantage-annotated samples for one trajectory.
inline std::vector<BatchSample> make_samples(const Trajectory& traj, const TrainConfig& cfg) {
  auto adv = gae_advantages(traj, cfg.gamma, cfg.lambda);
  std::vector<double> norm = adv.advantages;
  normalize_advantages(norm);
  std::vector<BatchSample> out;
  for (std::size_t i = 0; i < traj.steps.size(); ++i) out.push_back({&traj.steps[i], norm[i], adv.returns[i]});
  return out;
}

// Several epochs of shuffled minibatch updates over one episode's data.
template <class Rng>
std::vector<LossReport> optimize_episode(nn::PolicyNet& net, Adam& optimizer, const Trajectory& traj,
                                         const TrainConfig& cfg, Rng& rng) {
  auto samples = make_samples(traj, cfg);
  std::vector<LossReport> reports;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(samples.begin(), samples.end(), rng);
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(cfg.minibatch)) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(cfg.minibatch), samples.size() - start);
      reports.push_back(update(net, optimizer, std::span<const BatchSample>(samples.data() + start, len), cfg));
    }
  }
  return reports;
}

struct EpisodeSummary {
  int episode = 0;
  TeacherKind teacher = TeacherKind::Linear;
  double mean_reward = 0.0;
  int decisions = 0;
  LossReport last_loss;
};

// Algorithm loop: per episode pick the stage teacher, roll out the current
// policy, then run PPO+BC epochs over that episode.
class Trainer {
 public:
  using EnvFactory = std::function<TrafficEnv(int episode)>;
  using EpisodeHook = std::function<void(const EpisodeSummary&, const nn::PolicyNet&)>;

  Trainer(nn::PolicyNet& net, TrainConfig cfg, TeacherConfig teachers, EnvFactory make_env)
      : net_(net),
        cfg_(std::move(cfg)),
        teachers_(std::move(teachers)),
        make_env_(std::move(make_env)),
        optimizer_(cfg_.learning_rate, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_epsilon),
        rng_(cfg_.seed) {
    cfg_.validate();
  }

  EpisodeSummary run_episode(int episode) {
    TrafficEnv env = make_env_(episode);
    const TeacherKind kind = curriculum_select(episode, cfg_.schedule);
    Teacher teacher(kind, teachers_, env.config().bounds, env.config().lost_time);
    Trajectory traj = collect_episode(env, net_, teacher, rng_, false, cfg_.value_scale);
    EpisodeSummary summary{episode, kind, traj.mean_reward(), static_cast<int>(traj.steps.size()), {}};
    if (traj.steps.empty()) return summary;
    for (const auto& rep : optimize_episode(net_, optimizer_, traj, cfg_, rng_)) {
      log_.push_back({episode, static_cast<int>(log_.size()), kind, rep, summary.mean_reward});
      summary.last_loss = rep;
    }
    return summary;
  }

  std::vector<EpisodeSummary> train(const EpisodeHook& hook = {}) {
    std::vector<EpisodeSummary> out;
    for (int e = 0; e < cfg_.episodes; ++e) {
      out.push_back(run_episode(e));
      if (hook) hook(out.back(), net_);
    }
    return out;
  }

  const std::vector<UpdateLog>& log() const { return log_; }
  const TrainConfig& config() const { return cfg_; }
  Adam& optimizer() { return optimizer_; }

 private:
  nn::PolicyNet& net_;
  TrainConfig cfg_;
  TeacherConfig teachers_;
  EnvFactory make_env_;
  Adam optimizer_;
  std::mt19937_64 rng_;
  std::vector<UpdateLog> log_;
};

}  // namespace guidedlight
