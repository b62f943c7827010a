#pragma once

// Rule-based signal timing controllers. They serve as evaluation baselines and
// as behavior-cloning teachers; every teacher maps observed movement flows to
// a target PhasePlan.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>

#include "guidedlight/errors.hpp"
#include "guidedlight/traffic_sim.hpp"

namespace guidedlight {

enum class TeacherKind { FixedTime, Webster, Linear, Logistic, ScatsLike };

constexpr std::string_view teacher_name(TeacherKind kind) {
  switch (kind) {
    case TeacherKind::FixedTime: return "fixed";
    case TeacherKind::Webster: return "webster";
    case TeacherKind::Linear: return "linear";
    case TeacherKind::Logistic: return "logistic";
    case TeacherKind::ScatsLike: return "scats";
  }
  return "?";
}

inline TeacherKind parse_teacher(std::string_view name) {
  for (auto k : {TeacherKind::FixedTime, TeacherKind::Webster, TeacherKind::Linear, TeacherKind::Logistic,
                 TeacherKind::ScatsLike}) {
    if (teacher_name(k) == name) return k;
  }
  throw ConfigError("unknown teacher '" + std::string(name) + "'");
}

// Curriculum rank: Linear < Logistic < ScatsLike. Baselines have no rank.
constexpr std::optional<int> curriculum_rank(TeacherKind kind) {
  switch (kind) {
    case TeacherKind::Linear: return 0;
    case TeacherKind::Logistic: return 1;
    case TeacherKind::ScatsLike: return 2;
    default: return std::nullopt;
  }
}

// Nearest multiple of 5 s, halves rounded up. Monotone non-decreasing. The
// slack absorbs representation error so 87.4999999 from (1.5*6+5)/0.16 is a tie.
inline int quantize_to_step(double seconds) {
  return kDurationStep * static_cast<int>(std::floor(seconds / kDurationStep + 0.5 + 1e-9));
}

class SaturationError : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

// C = (1.5 L + 5) / (1 - Y).
inline double webster_cycle(double loss_time, double flow_ratio_sum) {
  if (!(loss_time > 0.0)) throw ContractViolation("webster_cycle: loss time must be positive");
  if (flow_ratio_sum < 0.0) throw ContractViolation("webster_cycle: flow ratio sum must be >= 0");
  if (flow_ratio_sum >= 1.0) throw SaturationError("webster_cycle: intersection oversaturated (Y >= 1)");
  return (1.5 * loss_time + 5.0) / (1.0 - flow_ratio_sum);
}

// Clamped to the cycle bounds; saturation maps to max_cycle.
inline double webster_cycle(double loss_time, double flow_ratio_sum, const PlanBounds& bounds) {
  try {
    return std::clamp(webster_cycle(loss_time, flow_ratio_sum), double(bounds.min_cycle), double(bounds.max_cycle));
  } catch (const SaturationError&) {
    return bounds.max_cycle;
  }
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LogisticConfig {
  double min_cycle = 60.0;
  double max_cycle = 180.0;
  double center_flow = 1728.0;  // I0, veh/h
  double width_flow = 432.0;    // theta, veh/h

  void validate() const {
    if (!(min_cycle < max_cycle)) throw ConfigError("logistic: need min_cycle < max_cycle");
    if (!(width_flow > 0.0)) throw ConfigError("logistic: width must be positive");
  }
};

// C(I) = Cmin + (Cmax - Cmin) * sigmoid((I - I0) / theta), unquantized.
inline double logistic_cycle(double total_flow, const LogisticConfig& cfg) {
  return cfg.min_cycle + (cfg.max_cycle - cfg.min_cycle) * logistic((total_flow - cfg.center_flow) / cfg.width_flow);
}

// Three-stage cycle-flow curve: stairs (min_ct, alt_min_1, alt_min_2) for
// non-peak flow, a steep ramp to stretch_ct while climbing, and a shallow ramp
// to max_ct through the peak.
struct ScatsConfig {
  int min_ct = 60;
  int alt_min_1 = 70;
  int alt_min_2 = 85;
  int stretch_ct = 150;
  int max_ct = 180;
  // veh/h: [0] -> alt_min_1, [1] -> alt_min_2, [2] climb start,
  // [3] peak start (reaches stretch_ct), [4] saturation (reaches max_ct).
  std::array<double, 5> breakpoints{720.0, 1296.0, 1728.0, 2448.0, 2880.0};

  static constexpr std::array<double, 5> kDefaultFractions{0.25, 0.45, 0.60, 0.85, 1.00};

  static ScatsConfig for_capacity(double capacity_vph) {
    ScatsConfig cfg;
    for (std::size_t i = 0; i < cfg.breakpoints.size(); ++i) cfg.breakpoints[i] = kDefaultFractions[i] * capacity_vph;
    return cfg;
  }

  void validate() const {
    if (!(min_ct < alt_min_1 && alt_min_1 < alt_min_2 && alt_min_2 < stretch_ct && stretch_ct < max_ct)) {
      throw ConfigError("scats: need min_ct < alt_min_1 < alt_min_2 < stretch_ct < max_ct");
    }
    if (!(breakpoints[0] > 0.0)) throw ConfigError("scats: breakpoints must be positive");
    for (std::size_t i = 1; i < breakpoints.size(); ++i) {
      if (!(breakpoints[i] > breakpoints[i - 1])) throw ConfigError("scats: breakpoints must be strictly increasing");
    }
  }
  friend bool operator==(const ScatsConfig&, const ScatsConfig&) = default;
};

// Unquantized curve value.
inline double scats_curve(double total_flow, const ScatsConfig& cfg) {
  const auto& b = cfg.breakpoints;
  if (total_flow < b[0]) return cfg.min_ct;
  if (total_flow < b[1]) return cfg.alt_min_1;
  if (total_flow < b[2]) return cfg.alt_min_2;
  if (total_flow < b[3]) return cfg.alt_min_2 + (cfg.stretch_ct - cfg.alt_min_2) * (total_flow - b[2]) / (b[3] - b[2]);
  if (total_flow < b[4]) return cfg.stretch_ct + (cfg.max_ct - cfg.stretch_ct) * (total_flow - b[3]) / (b[4] - b[3]);
  return cfg.max_ct;
}

inline int scats_cycle(double total_flow, const ScatsConfig& cfg) {
  return quantize_to_step(scats_curve(total_flow, cfg));
}

// Distributes the green time of a `cycle`-second target across the four
// phases in proportion to `weights`, flooring every phase at min_green and
// capping at max_green, then rounds to the 5 s grid by largest remainder.
inline PhasePlan split_cycle(double cycle, const PerPhase<double>& weights, int lost_time, const PlanBounds& bounds) {
  const int step = kDurationStep;
  const int lost_total = kPhases * lost_time;
  const int min_u = bounds.min_green / step;
  const int max_u = bounds.max_green / step;
  // Green budget in 5 s units, kept inside both cycle and green bounds.
  const int lo_u = std::max(kPhases * min_u, (bounds.min_cycle - lost_total + step - 1) / step);
  const int hi_u = std::min(kPhases * max_u, (bounds.max_cycle - lost_total) / step);
  if (lo_u > hi_u) throw ConfigError("bounds admit no valid plan for this lost time");
  const int total_u = std::clamp(quantize_to_step(std::clamp(cycle, double(bounds.min_cycle), double(bounds.max_cycle)) -
                                                  lost_total) / step,
                                 lo_u, hi_u);

  PerPhase<double> w = weights;
  double wsum = 0.0;
  for (double& x : w) {
    x = std::max(0.0, x);
    wsum += x;
  }
  if (!(wsum > 0.0)) w.fill(1.0);

  // Water-filling: x_p = clamp(lambda * w_p, min_u, max_u) with sum = total_u.
  auto allocate = [&](double lambda) {
    PerPhase<double> x{};
    for (std::size_t p = 0; p < kPhases; ++p) x[p] = std::clamp(lambda * w[p], double(min_u), double(max_u));
    return x;
  };
  auto total_of = [](const PerPhase<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0); };
  double lo = 0.0, hi = 1.0;
  while (total_of(allocate(hi)) < total_u && hi < 1e300) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (total_of(allocate(mid)) < total_u ? lo : hi) = mid;
  }
  PerPhase<double> share = allocate(hi);

  PerPhase<int> units{};
  int assigned = 0;
  for (std::size_t p = 0; p < kPhases; ++p) {
    units[p] = std::clamp(static_cast<int>(std::floor(share[p] + 1e-9)), min_u, max_u);
    assigned += units[p];
  }
  while (assigned < total_u) {
    std::size_t best = kPhases;
    double best_rem = -1.0;
    for (std::size_t p = 0; p < kPhases; ++p) {
      if (units[p] >= max_u) continue;
      const double rem = share[p] - units[p];
      if (rem > best_rem + 1e-12) {
        best_rem = rem;
        best = p;
      }
    }
    ++units[best];
    ++assigned;
  }
  while (assigned > total_u) {
    std::size_t best = kPhases;
    double best_rem = 1e300;
    for (std::size_t p = 0; p < kPhases; ++p) {
      if (units[p] <= min_u) continue;
      const double rem = share[p] - units[p];
      if (rem < best_rem - 1e-12) {
        best_rem = rem;
        best = p;
      }
    }
    --units[best];
    --assigned;
  }

  PhasePlan plan;
  plan.lost_time_per_phase = lost_time;
  for (std::size_t p = 0; p < kPhases; ++p) plan.durations[p] = units[p] * step;
  return plan;
}

// Sum of each phase's two movement flows.
inline PerPhase<double> phase_flows(const PerMovement<double>& movement_flows) {
  PerPhase<double> out{};
  for (std::size_t p = 0; p < kPhases; ++p) {
    for (int m : kPhaseMovements[p]) out[p] += movement_flows[static_cast<std::size_t>(m - 1)];
  }
  return out;
}

inline PerPhase<double> critical_flows(const PerMovement<double>& movement_flows) {
  PerPhase<double> out{};
  for (std::size_t p = 0; p < kPhases; ++p) {
    const auto& mv = kPhaseMovements[p];
    out[p] = std::max(movement_flows[static_cast<std::size_t>(mv[0] - 1)],
                      movement_flows[static_cast<std::size_t>(mv[1] - 1)]);
  }
  return out;
}

// Per-phase durations 0.35 * v (v in vehicles per 5-minute window), quantized
// and clamped to the green bounds, before any cycle-bound correction.
inline PerPhase<int> linear_durations(const PerPhase<double>& flow_per_5min, const PlanBounds& bounds,
                                      double coefficient = 0.35) {
  PerPhase<int> d{};
  for (std::size_t p = 0; p < kPhases; ++p) {
    if (flow_per_5min[p] < 0.0) throw ContractViolation("linear_plan: flows must be >= 0");
    d[p] = std::clamp(quantize_to_step(coefficient * flow_per_5min[p]), bounds.min_green, bounds.max_green);
  }
  return d;
}

inline PhasePlan linear_plan(const PerPhase<double>& flow_per_5min, const PlanBounds& bounds, int lost_time,
                             double coefficient = 0.35) {
  PhasePlan plan;
  plan.lost_time_per_phase = lost_time;
  plan.durations = linear_durations(flow_per_5min, bounds, coefficient);
  const int ct = plan.cycle_time();
  if (ct >= bounds.min_cycle && ct <= bounds.max_cycle) return plan;
  // Proportional rescale into the cycle bounds, then back onto the 5 s grid.
  PerPhase<double> w{};
  for (std::size_t p = 0; p < kPhases; ++p) w[p] = plan.durations[p];
  return split_cycle(std::clamp(ct, bounds.min_cycle, bounds.max_cycle), w, lost_time, bounds);
}

// Label: 0 = +5 s, 1 = -5 s, 2 = keep.
inline int teacher_label(int target, int previous) {
  if (target - kDurationStep >= previous) return 0;
  if (target + kDurationStep <= previous) return 1;
  return 2;
}

struct TeacherConfig {
  PhasePlan fixed_plan{{30, 20, 30, 20}, 4};
  double linear_coefficient = 0.35;
  double capacity_vph = 2880.0;                 // reference intersection capacity
  double logistic_center_fraction = 0.60;       // I0 / capacity
  double logistic_width_fraction = 0.15;        // theta / capacity
  ScatsConfig scats = ScatsConfig::for_capacity(2880.0);

  LogisticConfig logistic_for(const PlanBounds& bounds) const {
    LogisticConfig cfg;
    cfg.min_cycle = bounds.min_cycle;
    cfg.max_cycle = bounds.max_cycle;
    cfg.center_flow = logistic_center_fraction * capacity_vph;
    cfg.width_flow = logistic_width_fraction * capacity_vph;
    return cfg;
  }
  friend bool operator==(const TeacherConfig&, const TeacherConfig&) = default;
};

// A configured teacher bound to the scenario's bounds and lost time.
class Teacher {
 public:
  Teacher(TeacherKind kind, TeacherConfig config, PlanBounds bounds, int lost_time)
      : kind_(kind), config_(std::move(config)), bounds_(bounds), lost_time_(lost_time) {
    bounds_.validate();
    config_.scats.validate();
    config_.logistic_for(bounds_).validate();
    if (kind_ == TeacherKind::FixedTime) {
      config_.fixed_plan.lost_time_per_phase = lost_time_;
      validate_plan(config_.fixed_plan, bounds_);
    }
  }

  TeacherKind kind() const { return kind_; }
  const TeacherConfig& config() const { return config_; }
  const PlanBounds& bounds() const { return bounds_; }

  // Target cycle length (unquantized for curve teachers) for a total flow.
  double cycle_for_total(double total_flow) const {
    switch (kind_) {
      case TeacherKind::ScatsLike: return scats_cycle(total_flow, config_.scats);
      case TeacherKind::Logistic: return quantize_to_step(logistic_cycle(total_flow, config_.logistic_for(bounds_)));
      default: throw ContractViolation("cycle_for_total only applies to curve teachers");
    }
  }

  PhasePlan target(const PerMovement<double>& movement_flows_vph) const {
    const auto pf = phase_flows(movement_flows_vph);
    const double total = std::accumulate(pf.begin(), pf.end(), 0.0);
    switch (kind_) {
      case TeacherKind::FixedTime: return config_.fixed_plan;
      case TeacherKind::Linear: {
        PerPhase<double> per_window{};
        for (std::size_t p = 0; p < kPhases; ++p) per_window[p] = pf[p] * 300.0 / 3600.0;
        return linear_plan(per_window, bounds_, lost_time_, config_.linear_coefficient);
      }
      case TeacherKind::Logistic:
      case TeacherKind::ScatsLike: return split_cycle(cycle_for_total(total), pf, lost_time_, bounds_);
      case TeacherKind::Webster: {
        const auto crit = critical_flows(movement_flows_vph);
        double y = 0.0;
        for (double c : crit) y += c / kSaturationFlow;
        const double cycle = webster_cycle(double(kPhases * lost_time_), y, bounds_);
        return split_cycle(cycle, crit, lost_time_, bounds_);
      }
    }
    throw ContractViolation("unknown teacher kind");
  }

 private:
  TeacherKind kind_;
  TeacherConfig config_;
  PlanBounds bounds_;
  int lost_time_;
};

}  // namespace guidedlight
