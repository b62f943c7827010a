#pragma once

#include <random>
#include <vector>

#include "guidedlight.hpp"

namespace gltest {

using namespace guidedlight;

inline FlowProfile constant_profile(const PerMovement<double>& vph, int seconds, int bin = 300) {
  FlowProfile p;
  p.bin_seconds = bin;
  p.rates.assign(static_cast<std::size_t>((seconds + bin - 1) / bin), vph);
  return p;
}

inline FlowProfile uniform_profile(double vph_each, int seconds, int bin = 300) {
  PerMovement<double> r;
  r.fill(vph_each);
  return constant_profile(r, seconds, bin);
}

inline FlowProfile random_profile(std::mt19937_64& rng, int seconds, double max_vph = 900.0, int bin = 300) {
  std::uniform_real_distribution<double> u(0.0, max_vph);
  FlowProfile p;
  p.bin_seconds = bin;
  for (int b = 0; b < (seconds + bin - 1) / bin; ++b) {
    PerMovement<double> row{};
    for (auto& x : row) x = u(rng);
    p.rates.push_back(row);
  }
  return p;
}

// Random plan on the 5 s grid inside the bounds.
inline PhasePlan random_plan(std::mt19937_64& rng, const PlanBounds& b = {}, int lost = 4) {
  std::uniform_int_distribution<int> d(b.min_green / 5, b.max_green / 5);
  for (;;) {
    PhasePlan p;
    p.lost_time_per_phase = lost;
    for (auto& x : p.durations) x = 5 * d(rng);
    if (is_valid_plan(p, b)) return p;
  }
}

inline nn::NetConfig small_net(std::uint64_t seed = 3) {
  nn::NetConfig c;
  c.feature_embed = 2;
  c.frap_dim = 4;
  c.context_embed = 2;
  c.hidden = 6;
  c.head_hidden = 5;
  c.seed = seed;
  return c;
}

inline Observation random_observation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> flow(0.0, 600.0), gr(0.0, 2.0), gi(0.0, 0.5);
  std::uniform_int_distribution<int> dur(2, 18);
  Observation o;
  for (auto& row : o.movement) row = {flow(rng), 1440.0, 1.0};
  for (auto& row : o.phase) row = {5.0 * dur(rng), gr(rng), gi(rng)};
  return o;
}

}  // namespace gltest
