#pragma once

// The signal-timing MDP: flow-only observations, masked per-phase +5/-5/0 s
// actions applied at cycle boundaries, and the four-term reward.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "guidedlight/detail/text.hpp"
#include "guidedlight/errors.hpp"
#include "guidedlight/traffic_sim.hpp"

namespace guidedlight {

inline constexpr int kMovementFeatures = 3;  // flow, capacity, existence
inline constexpr int kPhaseFeatures = 3;     // previous duration, gr, gi
inline constexpr int kActionsPerPhase = 3;

struct Observation {
  PerMovement<std::array<double, kMovementFeatures>> movement{};
  PerPhase<std::array<double, kPhaseFeatures>> phase{};

  PerMovement<double> flows() const {
    PerMovement<double> f{};
    for (std::size_t m = 0; m < kMovements; ++m) f[m] = movement[m][0];
    return f;
  }
  double total_flow() const {
    double s = 0.0;
    for (const auto& row : movement) s += row[0];
    return s;
  }
  friend bool operator==(const Observation&, const Observation&) = default;
};

// Action encoding follows the behavior-cloning labels.
enum PhaseAction : int { kExtend = 0, kShorten = 1, kKeep = 2 };

using ActionVector = PerPhase<int>;

constexpr int action_delta(int action) {
  switch (action) {
    case kExtend: return kDurationStep;
    case kShorten: return -kDurationStep;
    case kKeep: return 0;
  }
  throw ContractViolation("action must be 0, 1 or 2");
}

struct ActionMask {
  PerPhase<std::array<bool, kActionsPerPhase>> allowed{};
  bool permits(std::size_t phase, int action) const { return allowed[phase][static_cast<std::size_t>(action)]; }
  friend bool operator==(const ActionMask&, const ActionMask&) = default;
};

// Per-phase masks computed independently: +5 is masked when that change alone
// would exceed max_green or max_cycle, -5 symmetrically; keep is never masked.
inline ActionMask mask_actions(const PhasePlan& plan, const PlanBounds& bounds) {
  validate_plan(plan, bounds);
  ActionMask mask;
  const int ct = plan.cycle_time();
  for (std::size_t p = 0; p < kPhases; ++p) {
    const int d = plan.durations[p];
    mask.allowed[p][kExtend] = d + kDurationStep <= bounds.max_green && ct + kDurationStep <= bounds.max_cycle;
    mask.allowed[p][kShorten] = d - kDurationStep >= bounds.min_green && ct - kDurationStep >= bounds.min_cycle;
    mask.allowed[p][kKeep] = true;
  }
  return mask;
}

// Applies deltas in cycle order; a delta that would take the running cycle
// time out of bounds is dropped.
inline PhasePlan apply_action(const PhasePlan& plan, const ActionVector& action, const PlanBounds& bounds) {
  const ActionMask mask = mask_actions(plan, bounds);
  for (std::size_t p = 0; p < kPhases; ++p) {
    if (action[p] < 0 || action[p] >= kActionsPerPhase) throw ContractViolation("action must be 0, 1 or 2");
    if (!mask.permits(p, action[p])) {
      throw ContractViolation("action for phase " + std::string(phase_name(kCycleOrder[p])) + " is masked");
    }
  }
  PhasePlan next = plan;
  int cycle = plan.cycle_time();
  for (std::size_t p = 0; p < kPhases; ++p) {
    const int delta = action_delta(action[p]);
    if (delta == 0) continue;
    if (cycle + delta > bounds.max_cycle || cycle + delta < bounds.min_cycle) continue;
    next.durations[p] += delta;
    cycle += delta;
  }
  return next;
}

struct RewardWeights {
  double throughput = 4e-2;
  double queue = -1e-3;
  double green_utilization = 1.0;
  double green_imbalance = -1.0;

  RewardWeights scaled(double k) const {
    return {throughput * k, queue * k, green_utilization * k, green_imbalance * k};
  }
  friend bool operator==(const RewardWeights&, const RewardWeights&) = default;
};

// How the end-of-cycle queue enters the reward: summed over movements or
// averaged over the movements that exist.
enum class QueueMeasure { Sum, Mean };

inline std::string_view queue_measure_name(QueueMeasure q) { return q == QueueMeasure::Sum ? "sum" : "mean"; }

inline QueueMeasure parse_queue_measure(std::string_view s) {
  if (s == "sum") return QueueMeasure::Sum;
  if (s == "mean") return QueueMeasure::Mean;
  throw ConfigError("queue measure must be 'sum' or 'mean', got '" + std::string(s) + "'");
}

struct RewardTerms {
  double v = 0.0;   // throughput, vehicles per minute over the cycle
  double l = 0.0;   // end-of-cycle queue, summed or averaged over movements
  double gr = 0.0;  // mean per-phase green utilization
  double gi = 0.0;  // population std of per-phase green utilization
  PerPhase<double> phase_gr{};
};

inline double weighted_sum(const RewardTerms& t, const RewardWeights& w) {
  return w.throughput * t.v + w.queue * t.l + w.green_utilization * t.gr + w.green_imbalance * t.gi;
}

// gr_p = v_p * 2.5 / duration_p, where v_p counts both movements of the phase.
inline RewardTerms reward_terms(const CycleStats& stats, QueueMeasure queue = QueueMeasure::Sum,
                                int movements = kMovements) {
  if (movements < 1) throw ContractViolation("reward_terms: need at least one movement");
  RewardTerms t;
  for (std::size_t p = 0; p < kPhases; ++p) {
    const int d = stats.plan.durations[p];
    if (d <= 0) throw ContractViolation("compute_reward: phase duration must be positive");
    t.phase_gr[p] = static_cast<double>(stats.phase_throughput[p]) * kHeadway / d;
  }
  // Pairwise sums keep the mean exact when all four values are equal.
  const auto& g = t.phase_gr;
  t.gr = ((g[0] + g[1]) + (g[2] + g[3])) / kPhases;
  double ss = 0.0;
  for (double x : g) ss += (x - t.gr) * (x - t.gr);
  t.gi = std::sqrt(ss / kPhases);
  t.v = static_cast<double>(stats.throughput()) * 60.0 / stats.cycle_time();
  t.l = static_cast<double>(stats.total_queue());
  if (queue == QueueMeasure::Mean) t.l /= movements;
  return t;
}

inline std::pair<double, RewardTerms> compute_reward(const CycleStats& stats, const RewardWeights& weights,
                                                     QueueMeasure queue = QueueMeasure::Sum,
                                                     int movements = kMovements) {
  RewardTerms t = reward_terms(stats, queue, movements);
  return {weighted_sum(t, weights), t};
}

struct EnvConfig {
  PlanBounds bounds{};
  int lost_time = 4;
  int window = 300;  // flow sampling window, s
  PerMovement<bool> present{true, true, true, true, true, true, true, true};
  PerMovement<double> capacity_vph{1440, 1440, 1440, 1440, 1440, 1440, 1440, 1440};
  PhasePlan initial_plan{{30, 20, 30, 20}, 4};
  RewardWeights weights{};
  QueueMeasure queue_measure = QueueMeasure::Sum;

  int present_count() const { return static_cast<int>(std::count(present.begin(), present.end(), true)); }

  void validate() const {
    bounds.validate();
    if (lost_time < 0) throw ConfigError("lost time must be >= 0");
    if (window <= 0) throw ConfigError("observation window must be positive");
    if (present_count() == 0) throw ConfigError("at least one movement must be present");
    PhasePlan p = initial_plan;
    p.lost_time_per_phase = lost_time;
    if (auto why = plan_violation(p, bounds); !why.empty()) throw ConfigError("initial plan: " + why);
  }
  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

// Flow window plus static geometry plus the previous cycle's plan/gr/gi.
// Queue lengths never enter the observation.
inline Observation build_observation(std::span<const ArrivalRecord> arrival_log, const EnvConfig& cfg,
                                     const PhasePlan& previous_plan, const std::optional<RewardTerms>& last_cycle) {
  Observation obs;
  const auto flow = measure_flow(arrival_log, cfg.window);
  for (std::size_t m = 0; m < kMovements; ++m) {
    if (!cfg.present[m]) continue;
    obs.movement[m] = {flow ? (*flow)[m] : 0.0, cfg.capacity_vph[m], 1.0};
  }
  for (std::size_t p = 0; p < kPhases; ++p) {
    obs.phase[p][0] = previous_plan.durations[p];
    obs.phase[p][1] = last_cycle ? last_cycle->phase_gr[p] : 0.0;
    obs.phase[p][2] = last_cycle ? last_cycle->gi : 0.0;
  }
  return obs;
}

struct TraceRow {
  int cycle_index = 0;
  PerPhase<int> durations{};
  int cycle_time = 0;
  double total_flow = 0.0;  // observed flow (veh/h) the decision was based on
  RewardTerms terms{};
  double reward = 0.0;
};

inline void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
  out << "cycle,dur_A,dur_D,dur_E,dur_H,cycle_time,total_flow,v,l,gr,gi,r\n";
  for (const auto& r : rows) {
    out << r.cycle_index;
    for (int d : r.durations) out << ',' << d;
    out << ',' << r.cycle_time << ',' << detail::format_double(r.total_flow) << ','
        << detail::format_double(r.terms.v) << ',' << detail::format_double(r.terms.l) << ','
        << detail::format_double(r.terms.gr) << ',' << detail::format_double(r.terms.gi) << ','
        << detail::format_double(r.reward) << '\n';
  }
}

struct StepResult {
  Observation observation;
  double reward = 0.0;
  RewardTerms terms;
  CycleStats stats;
  bool done = false;
};

// One environment per intersection. Decisions happen at cycle boundaries.
class TrafficEnv {
 public:
  TrafficEnv(EnvConfig config, FlowProfile profile, std::uint64_t seed)
      : config_(std::move(config)), profile_(std::move(profile)), seed_(seed) {
    config_.initial_plan.lost_time_per_phase = config_.lost_time;
    config_.validate();
    profile_.validate();
  }

  // Warm-up runs the initial plan until a full flow window has been observed.
  Observation reset() {
    plan_ = config_.initial_plan;
    state_ = IntersectionState::create(seed_, plan_, config_.bounds, config_.present);
    trace_.clear();
    last_terms_.reset();
    done_ = false;
    while (state_.clock < config_.window) {
      if (state_.clock + plan_.cycle_time() > profile_.duration()) {
        throw ConfigError("flow profile shorter than the observation warm-up");
      }
      last_terms_ = reward_terms(run_cycle(state_, plan_, profile_), config_.queue_measure, config_.present_count());
    }
    observation_ = build_observation(state_.arrival_log, config_, plan_, last_terms_);
    done_ = finished();
    started_ = true;
    return observation_;
  }

  ActionMask mask() const { return mask_actions(plan_, config_.bounds); }

  StepResult step(const ActionVector& action) {
    require_active();
    return advance(apply_action(plan_, action, config_.bounds));
  }

  // Installs a complete plan (rule-based controllers are not limited to +-5 s).
  StepResult step_plan(PhasePlan plan) {
    require_active();
    plan.lost_time_per_phase = config_.lost_time;
    validate_plan(plan, config_.bounds);
    return advance(plan);
  }

  bool done() const { return done_; }
  const PhasePlan& plan() const { return plan_; }
  const Observation& observation() const { return observation_; }
  const IntersectionState& state() const { return state_; }
  const EnvConfig& config() const { return config_; }
  const FlowProfile& profile() const { return profile_; }
  const std::vector<TraceRow>& trace() const { return trace_; }

 private:
  bool finished() const { return state_.clock + config_.bounds.max_cycle > profile_.duration(); }

  void require_active() const {
    if (!started_) throw ContractViolation("env_step before reset");
    if (done_) throw ContractViolation("env_step on a finished episode");
  }

  StepResult advance(const PhasePlan& next) {
    const double decision_flow = observation_.total_flow();
    plan_ = next;
    StepResult result;
    result.stats = run_cycle(state_, plan_, profile_);
    std::tie(result.reward, result.terms) = compute_reward(result.stats, config_.weights, config_.queue_measure,
                                                               config_.present_count());
    last_terms_ = result.terms;
    observation_ = build_observation(state_.arrival_log, config_, plan_, last_terms_);
    result.observation = observation_;
    done_ = finished();
    result.done = done_;
    trace_.push_back({static_cast<int>(trace_.size()), plan_.durations, plan_.cycle_time(), decision_flow,
                      result.terms, result.reward});
    return result;
  }

  EnvConfig config_;
  FlowProfile profile_;
  std::uint64_t seed_;
  IntersectionState state_{};
  PhasePlan plan_{};
  Observation observation_{};
  std::optional<RewardTerms> last_terms_;
  std::vector<TraceRow> trace_;
  bool done_ = true;
  bool started_ = false;
};

}  // namespace guidedlight
