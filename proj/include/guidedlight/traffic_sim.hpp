#pragma once

// Queue-based microsimulator of a four-leg intersection under cyclic control.
//
// Time advances in whole seconds. Each second, arrivals are drawn per movement
// from an inhomogeneous Poisson process, then movements whose phase is green
// discharge at a fixed 2.5 s saturation headway. Right turns are free and not
// modelled; the eight signal-controlled movements are paired into phases
// A = {1,5}, D = {3,7}, E = {2,6}, H = {4,8} and served in the order A, D, E, H.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "guidedlight/detail/text.hpp"
#include "guidedlight/errors.hpp"

namespace guidedlight {

inline constexpr int kMovements = 8;
inline constexpr int kPhases = 4;
inline constexpr double kHeadway = 2.5;                      // s per vehicle
inline constexpr double kSaturationFlow = 3600.0 / kHeadway; // veh/h per movement
inline constexpr int kDurationStep = 5;                      // action grid, s

template <class T>
using PerMovement = std::array<T, kMovements>;
template <class T>
using PerPhase = std::array<T, kPhases>;

class MovementId {
 public:
  constexpr explicit MovementId(int index) : index_(index) {
    if (index < 1 || index > kMovements) throw ContractViolation("movement index must be in 1..8");
  }
  constexpr int index() const { return index_; }
  constexpr std::size_t slot() const { return static_cast<std::size_t>(index_ - 1); }
  friend constexpr bool operator==(MovementId, MovementId) = default;

 private:
  int index_;
};

enum class Phase : int { A = 0, D = 1, E = 2, H = 3 };

inline constexpr PerPhase<Phase> kCycleOrder{Phase::A, Phase::D, Phase::E, Phase::H};

// Movement numbers (1-based) served by each phase, in cycle order.
inline constexpr PerPhase<std::array<int, 2>> kPhaseMovements{{{1, 5}, {3, 7}, {2, 6}, {4, 8}}};

constexpr std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::A: return "A";
    case Phase::D: return "D";
    case Phase::E: return "E";
    case Phase::H: return "H";
  }
  return "?";
}

constexpr std::array<MovementId, 2> phase_movements(Phase p) {
  const auto& m = kPhaseMovements[static_cast<std::size_t>(p)];
  return {MovementId(m[0]), MovementId(m[1])};
}

// Phase index (0..3) serving a movement slot (0..7).
constexpr std::size_t phase_of_slot(std::size_t slot) {
  for (std::size_t p = 0; p < kPhases; ++p) {
    for (int m : kPhaseMovements[p]) {
      if (static_cast<std::size_t>(m - 1) == slot) return p;
    }
  }
  return kPhases;
}

struct PlanBounds {
  int min_green = 10;
  int max_green = 90;
  int min_cycle = 60;
  int max_cycle = 180;

  void validate() const {
    if (min_green <= 0 || min_green > max_green) throw ConfigError("bounds: need 0 < min_green <= max_green");
    if (min_green % kDurationStep != 0 || max_green % kDurationStep != 0) {
      throw ConfigError("bounds: green limits must be multiples of 5 s");
    }
    if (min_cycle <= 0 || min_cycle >= max_cycle) throw ConfigError("bounds: need 0 < min_cycle < max_cycle");
  }
  friend bool operator==(const PlanBounds&, const PlanBounds&) = default;
};

struct PhasePlan {
  PerPhase<int> durations{30, 30, 30, 30};  // green seconds, cycle order A, D, E, H
  int lost_time_per_phase = 4;              // yellow + all-red

  int cycle_time() const {
    int total = 4 * lost_time_per_phase;
    for (int d : durations) total += d;
    return total;
  }
  int duration(Phase p) const { return durations[static_cast<std::size_t>(p)]; }
  // Offset of the phase's green start within the cycle.
  int green_start(std::size_t phase) const {
    int t = 0;
    for (std::size_t q = 0; q < phase; ++q) t += durations[q] + lost_time_per_phase;
    return t;
  }
  friend bool operator==(const PhasePlan&, const PhasePlan&) = default;
};

// Empty string when the plan satisfies every invariant.
inline std::string plan_violation(const PhasePlan& plan, const PlanBounds& bounds) {
  if (plan.lost_time_per_phase < 0) return "negative lost time";
  for (std::size_t p = 0; p < kPhases; ++p) {
    const int d = plan.durations[p];
    const std::string name(phase_name(kCycleOrder[p]));
    if (d % kDurationStep != 0) return "phase " + name + " duration not a multiple of 5 s";
    if (d < bounds.min_green || d > bounds.max_green) return "phase " + name + " duration outside green bounds";
  }
  const int ct = plan.cycle_time();
  if (ct < bounds.min_cycle || ct > bounds.max_cycle) {
    return "cycle time " + std::to_string(ct) + " outside [" + std::to_string(bounds.min_cycle) + ", " +
           std::to_string(bounds.max_cycle) + "]";
  }
  return {};
}

inline bool is_valid_plan(const PhasePlan& plan, const PlanBounds& bounds) {
  return plan_violation(plan, bounds).empty();
}

inline void validate_plan(const PhasePlan& plan, const PlanBounds& bounds) {
  if (auto why = plan_violation(plan, bounds); !why.empty()) throw ContractViolation("invalid phase plan: " + why);
}

// Per-movement arrival rates (veh/h) on a fixed time grid.
struct FlowProfile {
  int bin_seconds = 300;
  std::vector<PerMovement<double>> rates;

  int duration() const { return bin_seconds * static_cast<int>(rates.size()); }

  double rate(std::size_t slot, int t) const {
    return rates[static_cast<std::size_t>(t / bin_seconds)][slot];
  }

  double total_rate(int t) const {
    double s = 0.0;
    for (double r : rates[static_cast<std::size_t>(t / bin_seconds)]) s += r;
    return s;
  }

  void validate() const {
    if (bin_seconds <= 0) throw ConfigError("flow profile: bin width must be positive");
    if (rates.empty()) throw ConfigError("flow profile: no bins");
    for (const auto& row : rates) {
      for (double r : row) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("flow profile: rates must be finite and >= 0");
      }
    }
  }

  // Format: "# bin_seconds=<n>" comment, header "m1,...,m8", one row per bin.
  void write_csv(std::ostream& out) const {
    out << "# bin_seconds=" << bin_seconds << '\n';
    out << "m1,m2,m3,m4,m5,m6,m7,m8\n";
    for (const auto& row : rates) out << detail::join_numbers(row) << '\n';
  }

  static FlowProfile read_csv(std::istream& in) {
    FlowProfile profile;
    profile.bin_seconds = 0;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
      auto view = detail::trim(line);
      if (view.empty()) continue;
      if (view.front() == '#') {
        constexpr std::string_view key = "bin_seconds=";
        if (auto pos = view.find(key); pos != std::string_view::npos) {
          profile.bin_seconds = static_cast<int>(detail::parse_double(view.substr(pos + key.size())));
        }
        continue;
      }
      if (!header_seen) {
        auto cols = detail::split(view, ',');
        if (cols.size() != kMovements || detail::trim(cols[0]) != "m1") {
          throw ConfigError("flow profile: expected header m1,...,m8");
        }
        header_seen = true;
        continue;
      }
      auto cols = detail::split(view, ',');
      if (cols.size() != kMovements) throw ConfigError("flow profile: each row needs 8 columns");
      PerMovement<double> row{};
      for (std::size_t m = 0; m < kMovements; ++m) row[m] = detail::parse_double(cols[m]);
      profile.rates.push_back(row);
    }
    if (profile.bin_seconds == 0) throw ConfigError("flow profile: missing '# bin_seconds=' line");
    profile.validate();
    return profile;
  }

  static FlowProfile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open flow profile: " + path);
    return read_csv(in);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write flow profile: " + path);
    write_csv(out);
  }

  friend bool operator==(const FlowProfile&, const FlowProfile&) = default;
};

using ArrivalRecord = PerMovement<std::uint16_t>;

struct IntersectionState {
  int clock = 0;
  PerMovement<long> queues{};
  PerMovement<long> cumulative_arrivals{};
  PerMovement<long> cumulative_departures{};
  PhasePlan active_plan{};
  PlanBounds bounds{};
  PerMovement<bool> present{true, true, true, true, true, true, true, true};
  std::mt19937_64 rng{0};

  // Second at which the active plan's current cycle began.
  int cycle_start = 0;
  // Vehicles discharged per movement since its phase's green began.
  PerMovement<long> departed_this_green{};
  // Arrivals per second; the only source for flow measurement.
  std::vector<ArrivalRecord> arrival_log;

  static IntersectionState create(std::uint64_t seed, const PhasePlan& plan, const PlanBounds& bounds = {},
                                  const PerMovement<bool>& present = {true, true, true, true, true, true, true, true}) {
    IntersectionState s;
    s.rng.seed(seed);
    s.active_plan = plan;
    s.bounds = bounds;
    s.present = present;
    return s;
  }
};

// Advances one second: arrivals, then discharge of the green phase, then counters.
inline void step_second(IntersectionState& state, const FlowProfile& profile) {
  if (state.clock >= profile.duration()) throw ContractViolation("step_second: flow profile exhausted");
  validate_plan(state.active_plan, state.bounds);

  const PhasePlan& plan = state.active_plan;
  const int cycle = plan.cycle_time();
  const int pos = (state.clock - state.cycle_start) % cycle;

  ArrivalRecord arrivals{};
  for (std::size_t m = 0; m < kMovements; ++m) {
    if (!state.present[m]) continue;
    const double mean = profile.rate(m, state.clock) / 3600.0;
    if (mean <= 0.0) continue;
    std::poisson_distribution<int> draw(mean);
    const int n = draw(state.rng);
    arrivals[m] = static_cast<std::uint16_t>(n);
    state.queues[m] += n;
    state.cumulative_arrivals[m] += n;
  }

  for (std::size_t p = 0; p < kPhases; ++p) {
    const int start = plan.green_start(p);
    const int green = plan.durations[p];
    if (pos < start || pos >= start + green) continue;
    const int elapsed = pos - start + 1;
    for (int movement : kPhaseMovements[p]) {
      const auto m = static_cast<std::size_t>(movement - 1);
      if (elapsed == 1) state.departed_this_green[m] = 0;
      const long slots = static_cast<long>(std::floor(elapsed / kHeadway));
      const long go = std::min(state.queues[m], slots - state.departed_this_green[m]);
      if (go > 0) {
        state.queues[m] -= go;
        state.cumulative_departures[m] += go;
        state.departed_this_green[m] += go;
      }
    }
  }

  state.arrival_log.push_back(arrivals);
  ++state.clock;
}

struct CycleStats {
  int start_clock = 0;
  PhasePlan plan{};
  PerPhase<long> phase_throughput{};
  PerMovement<long> movement_throughput{};
  PerMovement<long> arrivals{};
  PerMovement<long> end_queues{};

  int cycle_time() const { return plan.cycle_time(); }
  long throughput() const {
    long v = 0;
    for (long x : phase_throughput) v += x;
    return v;
  }
  long total_queue() const {
    long q = 0;
    for (long x : end_queues) q += x;
    return q;
  }
};

// Runs one full A -> D -> E -> H cycle of `plan` starting at the current clock.
inline CycleStats run_cycle(IntersectionState& state, const PhasePlan& plan, const FlowProfile& profile) {
  validate_plan(plan, state.bounds);
  if (state.clock + plan.cycle_time() > profile.duration()) {
    throw ContractViolation("run_cycle: not enough flow profile left for a full cycle");
  }
  state.active_plan = plan;
  state.cycle_start = state.clock;
  state.departed_this_green.fill(0);

  CycleStats stats;
  stats.start_clock = state.clock;
  stats.plan = plan;
  const auto arrivals_before = state.cumulative_arrivals;
  const auto departures_before = state.cumulative_departures;
  for (int t = 0; t < plan.cycle_time(); ++t) step_second(state, profile);

  for (std::size_t m = 0; m < kMovements; ++m) {
    stats.arrivals[m] = state.cumulative_arrivals[m] - arrivals_before[m];
    stats.movement_throughput[m] = state.cumulative_departures[m] - departures_before[m];
    stats.phase_throughput[phase_of_slot(m)] += stats.movement_throughput[m];
  }
  stats.end_queues = state.queues;
  return stats;
}

// Flow per movement (veh/h) over the trailing `window` seconds, or nullopt
// while the log is shorter than one window.
inline std::optional<PerMovement<double>> measure_flow(std::span<const ArrivalRecord> log, int window) {
  if (window <= 0) throw ContractViolation("measure_flow: window must be positive");
  if (log.size() < static_cast<std::size_t>(window)) return std::nullopt;
  PerMovement<long> counts{};
  for (std::size_t t = log.size() - static_cast<std::size_t>(window); t < log.size(); ++t) {
    for (std::size_t m = 0; m < kMovements; ++m) counts[m] += log[t][m];
  }
  PerMovement<double> flow{};
  for (std::size_t m = 0; m < kMovements; ++m) flow[m] = static_cast<double>(counts[m]) * 3600.0 / window;
  return flow;
}

}  // namespace guidedlight
