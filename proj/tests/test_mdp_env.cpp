#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace guidedlight;
using gltest::uniform_profile;

namespace {

CycleStats stats_with(PerPhase<long> phase_v, PerPhase<int> durations, long queue_total = 0) {
  CycleStats s;
  s.plan = PhasePlan{durations, 4};
  s.phase_throughput = phase_v;
  s.end_queues[0] = queue_total;
  return s;
}

ActionVector decode(int code) {
  ActionVector a{};
  for (auto& x : a) {
    x = code % 3;
    code /= 3;
  }
  return a;
}

}  // namespace

TEST(BuildObservation, ZeroTrafficDefaultPlan) {
  EnvConfig cfg;
  TrafficEnv env(cfg, uniform_profile(0.0, 3600), 1);
  auto obs = env.reset();
  for (const auto& row : obs.movement) {
    EXPECT_EQ(row[0], 0.0);
    EXPECT_EQ(row[1], 1440.0);
    EXPECT_EQ(row[2], 1.0);
  }
  for (std::size_t p = 0; p < kPhases; ++p) {
    EXPECT_EQ(obs.phase[p][0], cfg.initial_plan.durations[p]);
    EXPECT_EQ(obs.phase[p][1], 0.0);
    EXPECT_EQ(obs.phase[p][2], 0.0);
  }
}

TEST(BuildObservation, FlowRowEqualsWindowArrivals) {
  PerMovement<double> r{};
  r[0] = 3000.0;
  EnvConfig cfg;
  TrafficEnv env(cfg, gltest::constant_profile(r, 3600), 4);
  auto obs = env.reset();
  const auto& log = env.state().arrival_log;
  long n = 0;
  for (std::size_t t = log.size() - 300; t < log.size(); ++t) n += log[t][0];
  EXPECT_DOUBLE_EQ(obs.movement[0][0], n * 3600.0 / 300.0);
  EXPECT_GT(n, 0);
}

TEST(BuildObservation, ThreeLegIntersectionZeroPadsMissingMovements) {
  EnvConfig cfg;
  cfg.present[3] = false;
  cfg.present[7] = false;
  TrafficEnv env(cfg, uniform_profile(400.0, 3600), 2);
  auto obs = env.reset();
  for (std::size_t m : {3u, 7u}) {
    EXPECT_EQ(obs.movement[m], (std::array<double, 3>{0.0, 0.0, 0.0}));
  }
  EXPECT_EQ(obs.movement[0][2], 1.0);
  EXPECT_EQ(env.state().cumulative_arrivals[3], 0);
}

TEST(BuildObservation, IndependentOfQueues) {
  // Same arrival log, different queues: identical observation.
  std::vector<ArrivalRecord> log(600);
  for (std::size_t t = 0; t < log.size(); t += 3) log[t][t % 8] = 1;
  EnvConfig cfg;
  RewardTerms terms;
  terms.phase_gr = {0.5, 0.6, 0.7, 0.8};
  terms.gi = 0.1;
  auto a = build_observation(log, cfg, cfg.initial_plan, terms);
  auto b = build_observation(log, cfg, cfg.initial_plan, terms);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.phase[2][1], 0.7);
  EXPECT_EQ(a.phase[1][2], 0.1);
}

TEST(MaskActions, Examples) {
  const PlanBounds b;
  PhasePlan full{{40, 40, 40, 40}, 5};  // 180 s
  auto m = mask_actions(full, b);
  for (std::size_t p = 0; p < kPhases; ++p) {
    EXPECT_FALSE(m.permits(p, kExtend));
    EXPECT_TRUE(m.permits(p, kShorten));
    EXPECT_TRUE(m.permits(p, kKeep));
  }
  PhasePlan low{{10, 30, 30, 30}, 4};  // 116 s
  m = mask_actions(low, b);
  EXPECT_FALSE(m.permits(0, kShorten));
  for (std::size_t p = 1; p < kPhases; ++p) EXPECT_TRUE(m.permits(p, kShorten));
  PhasePlan top{{90, 20, 20, 20}, 4};
  m = mask_actions(top, b);
  EXPECT_FALSE(m.permits(0, kExtend));
  EXPECT_TRUE(m.permits(1, kExtend));
}

TEST(MaskActions, OneStepBelowMaxAllJointActionsStayInBounds) {
  const PlanBounds b;
  PhasePlan p{{40, 40, 40, 35}, 5};  // 175 s
  ASSERT_EQ(p.cycle_time(), b.max_cycle - 5);
  auto m = mask_actions(p, b);
  for (std::size_t q = 0; q < kPhases; ++q) EXPECT_TRUE(m.permits(q, kExtend));
  for (int code = 0; code < 81; ++code) {
    auto next = apply_action(p, decode(code), b);
    EXPECT_TRUE(is_valid_plan(next, b)) << code;
  }
}

TEST(ApplyAction, Examples) {
  const PlanBounds b;
  PhasePlan mid{{30, 30, 30, 30}, 4};
  EXPECT_EQ(apply_action(mid, {kKeep, kKeep, kKeep, kKeep}, b), mid);
  EXPECT_EQ(apply_action(mid, {kExtend, kExtend, kExtend, kExtend}, b).cycle_time(), mid.cycle_time() + 20);
  PhasePlan edge{{40, 40, 35, 35}, 5};  // 170 = max - 10
  ASSERT_EQ(edge.cycle_time(), 170);
  auto out = apply_action(edge, {kExtend, kExtend, kExtend, kExtend}, b);
  EXPECT_EQ(out.durations, (PerPhase<int>{45, 45, 35, 35}));
}

TEST(ApplyAction, RejectsMaskedOrInvalidActions) {
  const PlanBounds b;
  PhasePlan full{{40, 40, 40, 40}, 5};
  EXPECT_THROW(apply_action(full, {kExtend, kKeep, kKeep, kKeep}, b), ContractViolation);
  EXPECT_THROW(apply_action(full, {3, kKeep, kKeep, kKeep}, b), ContractViolation);
}

TEST(ComputeReward, Examples) {
  auto s = stats_with({10, 10, 10, 10}, {50, 50, 50, 50});
  auto t = reward_terms(s);
  for (double g : t.phase_gr) EXPECT_DOUBLE_EQ(g, 0.5);
  EXPECT_DOUBLE_EQ(t.gr, 0.5);
  EXPECT_EQ(t.gi, 0.0);
  RewardTerms hand;
  hand.v = 100;
  hand.l = 20;
  hand.gr = 0.6;
  hand.gi = 0.1;
  EXPECT_NEAR(weighted_sum(hand, RewardWeights{}), 4.48, 1e-12);
}

TEST(ComputeReward, ThroughputIsVehiclesPerMinute) {
  auto s = stats_with({10, 5, 10, 5}, {30, 20, 30, 20});  // 116 s cycle
  auto t = reward_terms(s);
  EXPECT_DOUBLE_EQ(t.v, 30.0 * 60.0 / 116.0);
  EXPECT_DOUBLE_EQ(t.phase_gr[0], 10 * 2.5 / 30);
}

TEST(ComputeReward, LinearInWeights) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<long> v(0, 40), q(0, 300);
  for (int i = 0; i < 200; ++i) {
    auto s = stats_with({v(rng), v(rng), v(rng), v(rng)}, gltest::random_plan(rng).durations, q(rng));
    RewardWeights w{0.3, -0.02, 0.7, -1.5};
    EXPECT_EQ(compute_reward(s, w.scaled(2.0)).first, 2.0 * compute_reward(s, w).first);
  }
}

TEST(ComputeReward, QueueSumOrMean) {
  auto s = stats_with({10, 10, 10, 10}, {30, 20, 30, 20}, 120);
  EXPECT_EQ(reward_terms(s).l, reward_terms(s, QueueMeasure::Sum).l);
  EXPECT_DOUBLE_EQ(reward_terms(s, QueueMeasure::Sum).l, double(s.total_queue()));
  EXPECT_DOUBLE_EQ(reward_terms(s, QueueMeasure::Mean).l, double(s.total_queue()) / 8);
  EXPECT_DOUBLE_EQ(reward_terms(s, QueueMeasure::Mean, 6).l, double(s.total_queue()) / 6);
  EXPECT_EQ(parse_queue_measure("mean"), QueueMeasure::Mean);
  EXPECT_THROW(parse_queue_measure("median"), ConfigError);
}

TEST(EnvStep, MeanQueueAveragesOverPresentMovements) {
  std::mt19937_64 gen(4);
  const auto prof = gltest::random_profile(gen, 3600, 1200.0);
  EnvConfig sum_cfg;
  sum_cfg.present[7] = false;
  sum_cfg.present[3] = false;
  EnvConfig mean_cfg = sum_cfg;
  mean_cfg.queue_measure = QueueMeasure::Mean;
  TrafficEnv a(sum_cfg, prof, 9), b(mean_cfg, prof, 9);
  a.reset();
  b.reset();
  while (!a.done()) {
    const auto ra = a.step({kKeep, kKeep, kKeep, kKeep});
    const auto rb = b.step({kKeep, kKeep, kKeep, kKeep});
    EXPECT_DOUBLE_EQ(rb.terms.l, ra.terms.l / 6);
    EXPECT_EQ(rb.terms.v, ra.terms.v);
  }
}

TEST(EnvStep, DeterministicForFixedSeedAndPolicy) {
  auto run = [] {
    std::mt19937_64 gen(11);
    TrafficEnv env(EnvConfig{}, gltest::random_profile(gen, 5400), 77);
    env.reset();
    std::mt19937_64 pol(2);
    while (!env.done()) {
      auto m = env.mask();
      ActionVector a{};
      for (std::size_t p = 0; p < kPhases; ++p) {
        a[p] = int(pol() % 3);
        if (!m.permits(p, a[p])) a[p] = kKeep;
      }
      env.step(a);
    }
    return env;
  };
  auto a = run(), b = run();
  ASSERT_EQ(a.trace().size(), b.trace().size());
  for (std::size_t i = 0; i < a.trace().size(); ++i) {
    EXPECT_EQ(a.trace()[i].reward, b.trace()[i].reward);
    EXPECT_EQ(a.trace()[i].durations, b.trace()[i].durations);
  }
  EXPECT_EQ(a.state().arrival_log, b.state().arrival_log);
}

TEST(EnvStep, ZeroTrafficRewardsAreZero) {
  TrafficEnv env(EnvConfig{}, uniform_profile(0.0, 3600), 1);
  env.reset();
  while (!env.done()) EXPECT_EQ(env.step({kKeep, kKeep, kKeep, kKeep}).reward, 0.0);
}

TEST(EnvStep, MatchesMonolithicSimulationOfSamePlans) {
  std::mt19937_64 gen(21);
  EnvConfig cfg;
  auto prof = gltest::random_profile(gen, 3600);
  TrafficEnv env(cfg, prof, 5);
  env.reset();
  std::vector<PhasePlan> plans;
  for (int k = 0; k < 10 && !env.done(); ++k) {
    auto m = env.mask();
    ActionVector a{};
    for (std::size_t p = 0; p < kPhases; ++p) a[p] = m.permits(p, kExtend) ? kExtend : kKeep;
    env.step(a);
    plans.push_back(env.plan());
  }
  // Warm-up then the same plans, run cycle by cycle on a bare state.
  auto s = IntersectionState::create(5, cfg.initial_plan, cfg.bounds, cfg.present);
  while (s.clock < cfg.window) run_cycle(s, cfg.initial_plan, prof);
  for (const auto& p : plans) run_cycle(s, p, prof);
  EXPECT_EQ(s.queues, env.state().queues);
  EXPECT_EQ(s.cumulative_departures, env.state().cumulative_departures);
  EXPECT_EQ(s.clock, env.state().clock);
}

TEST(EnvStep, LifecycleErrors) {
  TrafficEnv env(EnvConfig{}, uniform_profile(100.0, 900), 1);
  EXPECT_THROW(env.step({kKeep, kKeep, kKeep, kKeep}), ContractViolation);
  env.reset();
  while (!env.done()) env.step({kKeep, kKeep, kKeep, kKeep});
  EXPECT_THROW(env.step({kKeep, kKeep, kKeep, kKeep}), ContractViolation);
  EXPECT_THROW(TrafficEnv(EnvConfig{}, uniform_profile(100.0, 200, 100), 1).reset(), ConfigError);
}

TEST(EnvProperties, CycleBoundsAndSmoothnessUnderRandomActions) {
  std::mt19937_64 gen(13);
  EnvConfig cfg;
  for (int ep = 0; ep < 30; ++ep) {
    TrafficEnv env(cfg, gltest::random_profile(gen, 7200), gen());
    env.reset();
    int prev = env.plan().cycle_time();
    while (!env.done()) {
      auto m = env.mask();
      ActionVector a{};
      for (std::size_t p = 0; p < kPhases; ++p) {
        do a[p] = int(gen() % 3);
        while (!m.permits(p, a[p]));
      }
      env.step(a);
      const int ct = env.plan().cycle_time();
      ASSERT_GE(ct, cfg.bounds.min_cycle);
      ASSERT_LE(ct, cfg.bounds.max_cycle);
      ASSERT_LE(std::abs(ct - prev), 20);
      prev = ct;
    }
  }
}

TEST(EnvConfigValidation, RejectsBadConfigs) {
  EnvConfig c;
  c.window = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = EnvConfig{};
  c.initial_plan = PhasePlan{{5, 30, 30, 30}, 4};
  EXPECT_THROW(c.validate(), ConfigError);
}
