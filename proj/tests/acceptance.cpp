// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance [--only 1,2,...]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "guidedlight.hpp"
#include "support.hpp"

using namespace guidedlight;

namespace {

// Pinned tolerances.
constexpr double kGradTol = 1e-4;
constexpr double kFdEps = 1e-5;
constexpr int kGradNets = 20;
constexpr std::size_t kGradEntriesPerTensor = 60;
constexpr int kFuzzEpisodes = 1000;
constexpr int kActionStreams = 10000;
constexpr int kMaxCycleChange = 20;
constexpr double kBcTarget = 0.05;
constexpr int kBcUpdates = 300;
constexpr int kBcSmoothing = 50;  // updates averaged at each end of a stage
constexpr double kRhoTarget = 0.9;
constexpr double kOrderingBand = 0.02;
constexpr int kMinSeeds = 5;
constexpr int kRewardCases = 1000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << x;
  return s.str();
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::size_t checked = 0;
  std::string where;
  for (int i = 0; i < kGradNets; ++i) {
    nn::NetConfig nc;
    nc.seed = rng();
    nn::PolicyNet net(nc);
    // scatter the parameters away from the initializer
    std::normal_distribution<double> n(0.0, 0.1);
    for (auto& [name, t] : net.parameters()) {
      for (auto& v : t->value) v += n(rng);
    }
    const auto probe = gltest::Probe::random(rng, nc.hidden);
    const auto r = gltest::grad_check(net, probe, kFdEps, kGradEntriesPerTensor, rng());
    checked += r.checked;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      where = r.worst;
    }
  }
  return {worst <= kGradTol, "max rel error " + fmt(worst) + " over " + std::to_string(checked) + " entries of " +
                                 std::to_string(kGradNets) + " nets (worst " + where + ")"};
}

struct EpisodeTape {
  std::vector<TraceRow> trace;
  std::vector<ArrivalRecord> arrivals;
  PerMovement<long> queues{};
};

bool same(const EpisodeTape& a, const EpisodeTape& b) {
  if (a.trace.size() != b.trace.size() || a.arrivals != b.arrivals || a.queues != b.queues) return false;
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    const auto& x = a.trace[i];
    const auto& y = b.trace[i];
    if (x.durations != y.durations || x.total_flow != y.total_flow || x.terms.v != y.terms.v ||
        x.terms.l != y.terms.l || x.terms.gr != y.terms.gr || x.terms.gi != y.terms.gi || x.reward != y.reward) {
      return false;
    }
  }
  return true;
}

Outcome conservation() {
  std::mt19937_64 gen(99);
  long violations = 0, checks = 0, mismatched = 0;
  for (int ep = 0; ep < kFuzzEpisodes; ++ep) {
    const int seconds = 1800 + 300 * int(gen() % 7);
    const auto profile = gltest::random_profile(gen, seconds, 1000.0);
    const auto seed = gen();
    const auto action_seed = gen();
    EnvConfig cfg;
    for (auto& p : cfg.present) p = gen() % 8 != 0;
    auto play = [&]() {
      TrafficEnv env(cfg, profile, seed);
      std::mt19937_64 act(action_seed);
      env.reset();
      while (!env.done()) {
        const auto m = env.mask();
        ActionVector a{};
        for (std::size_t p = 0; p < kPhases; ++p) {
          do a[p] = int(act() % 3);
          while (!m.permits(p, a[p]));
        }
        const auto r = env.step(a);
        const auto& s = env.state();
        for (std::size_t k = 0; k < kMovements; ++k) {
          ++checks;
          if (s.cumulative_arrivals[k] - s.cumulative_departures[k] != s.queues[k] || s.queues[k] < 0 ||
              r.stats.end_queues[k] != s.queues[k]) {
            ++violations;
          }
        }
        long logged = 0, counted = 0;
        for (const auto& row : s.arrival_log) for (auto x : row) logged += x;
        for (auto x : s.cumulative_arrivals) counted += x;
        ++checks;
        if (logged != counted || long(s.arrival_log.size()) != s.clock) ++violations;
      }
      return EpisodeTape{env.trace(), env.state().arrival_log, env.state().queues};
    };
    if (!same(play(), play())) ++mismatched;
  }
  return {violations == 0 && mismatched == 0,
          std::to_string(kFuzzEpisodes) + " episodes, " + std::to_string(checks) + " checks, " +
              std::to_string(violations) + " conservation violations, " + std::to_string(mismatched) +
              " non-identical repeats"};
}

Outcome action_contract() {
  std::mt19937_64 gen(31);
  const PlanBounds b;
  long steps = 0, bad_bounds = 0, bad_delta = 0, bad_order = 0;
  const bool order_ok = kCycleOrder == PerPhase<Phase>{Phase::A, Phase::D, Phase::E, Phase::H};
  for (int stream = 0; stream < kActionStreams; ++stream) {
    PhasePlan plan = gltest::random_plan(gen, b);
    const int len = 20 + int(gen() % 60);
    for (int i = 0; i < len; ++i) {
      const auto m = mask_actions(plan, b);
      ActionVector a{};
      for (std::size_t p = 0; p < kPhases; ++p) {
        do a[p] = int(gen() % 3);
        while (!m.permits(p, a[p]));
      }
      const PhasePlan next = apply_action(plan, a, b);
      ++steps;
      const int ct = next.cycle_time();
      if (ct < b.min_cycle || ct > b.max_cycle || !is_valid_plan(next, b)) ++bad_bounds;
      if (std::abs(ct - plan.cycle_time()) > kMaxCycleChange) ++bad_delta;
      // greens follow A, D, E, H back to back with the lost time between
      int expect = 0;
      for (std::size_t p = 0; p < kPhases; ++p) {
        if (next.green_start(p) != expect) {
          ++bad_order;
          break;
        }
        expect += next.durations[p] + next.lost_time_per_phase;
      }
      plan = next;
    }
  }
  return {order_ok && bad_bounds == 0 && bad_delta == 0 && bad_order == 0,
          std::to_string(kActionStreams) + " streams, " + std::to_string(steps) + " steps; out of bounds " +
              std::to_string(bad_bounds) + ", |dCT|>20 " + std::to_string(bad_delta) + ", order breaks " +
              std::to_string(bad_order)};
}

// Webster on the 5 s grid in integer arithmetic: Y = k/100.
int webster_oracle(int lost, int k, const PlanBounds& b) {
  if (k >= 100) return b.max_cycle;
  const long num = 150L * lost + 500, den = 100 - k;
  const long q = 5 * ((2 * num + 5 * den) / (10 * den));
  return static_cast<int>(std::clamp<long>(q, b.min_cycle, b.max_cycle));
}

Outcome teacher_oracles() {
  const PlanBounds b;
  long cases = 0, wrong = 0;
  for (int lost = 4; lost <= 40; ++lost) {
    for (int k = 0; k <= 105; ++k) {
      ++cases;
      if (quantize_to_step(webster_cycle(double(lost), k / 100.0, b)) != webster_oracle(lost, k, b)) ++wrong;
    }
  }
  for (int e = 10; e <= 90; e += 5) {
    for (int t = 10; t <= 90; t += 5) {
      ++cases;
      if (teacher_label(e, t) != (e > t ? kExtend : (e < t ? kShorten : kKeep))) ++wrong;
    }
  }
  std::ifstream in(GL_TEST_DATA "/scats_capacity2000.csv");
  if (!in) return {false, "scats table missing"};
  std::string line;
  std::getline(in, line);
  const auto cfg = ScatsConfig::for_capacity(2000.0);
  int rows = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    ++cases;
    ++rows;
    if (scats_cycle(std::stod(line.substr(0, comma)), cfg) != std::stoi(line.substr(comma + 1))) ++wrong;
  }
  return {wrong == 0 && rows == 201,
          std::to_string(cases) + " oracle cases (webster, label, scats " + std::to_string(rows) + " rows), " +
              std::to_string(wrong) + " mismatches"};
}

// ---------------------------------------------------------------------------
// behavior cloning

double bc_loss_on(const nn::PolicyNet& net, TrafficEnv env, const TeacherConfig& tc, const TrainConfig& cfg) {
  Teacher teacher(TeacherKind::ScatsLike, tc, env.config().bounds, env.config().lost_time);
  std::mt19937_64 rng(0);
  const auto traj = collect_episode(env, net, teacher, rng, true, cfg.value_scale);
  const auto samples = make_samples(traj, cfg);
  return evaluate_losses(net, samples, cfg).bc;
}

Outcome bc_efficacy() {
  const RunConfig run;
  const auto mat = materialize(run);
  const auto setup = training_setup(run, mat.train_profiles);

  // (a) pure BC against ScatsLike, held-out pattern and simulator seed
  TrainConfig pure = run.training;
  pure.alpha = 0.0;
  pure.beta = 0.0;
  pure.kappa = 1.0;
  pure.schedule = {{TeacherKind::ScatsLike, 0}};
  FlowSpec held_spec = run.scenario.train_flows;
  held_spec.seed = run.scenario.train_flows.seed + 1000;
  held_spec.count = 1;
  const FlowProfile held = generate_flow_patterns(held_spec).front();

  nn::NetConfig nc = run.network;
  nc.seed = pure.seed;
  nn::PolicyNet net(nc);
  Trainer trainer(net, pure, run.teachers, [&](int e) { return setup.make_env(e, pure.seed); });
  double best = bc_loss_on(net, TrafficEnv(run.scenario.env, held, 777), run.teachers, pure);
  const double initial = best;
  int best_at = 0;
  for (int e = 0; int(trainer.log().size()) < kBcUpdates; ++e) {
    trainer.run_episode(e);
    const double l = bc_loss_on(net, TrafficEnv(run.scenario.env, held, 777), run.teachers, pure);
    if (l < best) {
      best = l;
      best_at = int(trainer.log().size());
    }
  }
  const bool part_a = best <= kBcTarget;

  // (b) smoothed L_BC falls within each curriculum stage of the full run
  nn::NetConfig fc = run.network;
  fc.seed = run.training.seed;
  nn::PolicyNet full(fc);
  Trainer curriculum(full, run.training, run.teachers, [&](int e) { return setup.make_env(e, run.training.seed); });
  curriculum.train();
  std::map<int, std::vector<double>> per_stage;
  for (const auto& row : curriculum.log()) {
    int stage = 0;
    for (std::size_t s = 0; s < run.training.schedule.size(); ++s) {
      if (run.training.schedule[s].first_episode <= row.episode) stage = int(s);
    }
    per_stage[stage].push_back(row.loss.bc);
  }
  bool part_b = per_stage.size() == run.training.schedule.size();
  std::string stages;
  for (const auto& [s, xs] : per_stage) {
    const std::size_t w = std::min<std::size_t>(kBcSmoothing, xs.size() / 2);
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
      head += xs[i];
      tail += xs[xs.size() - 1 - i];
    }
    head /= double(w);
    tail /= double(w);
    part_b = part_b && tail < head;
    stages += " " + std::string(teacher_name(run.training.schedule[std::size_t(s)].teacher)) + " " + fmt(head, 3) +
              "->" + fmt(tail, 3);
  }
  return {part_a && part_b,
          std::string("(a) ") + (part_a ? "ok" : "MISSED") + ": held-out L_BC " + fmt(initial, 3) + " -> best " +
              fmt(best, 3) + " at update " + std::to_string(best_at) + " of " +
              std::to_string(trainer.log().size()) + " (target " + fmt(kBcTarget) + "); (b) " +
              (part_b ? "ok" : "MISSED") + ":" + stages};
}

// ---------------------------------------------------------------------------
// ablation-based criteria share one run

struct AblationData {
  std::vector<AblationRow> rows;
  EvalReport scats;
  std::vector<std::uint64_t> train_seeds;

  const AblationRow& row(const std::string& name) const {
    for (const auto& r : rows) {
      if (r.name == name) return r;
    }
    throw std::out_of_range(name);
  }
};

const AblationData& ablation_data() {
  static const AblationData data = [] {
    const RunConfig run;
    const auto mat = materialize(run);
    const auto setup = training_setup(run, mat.train_profiles);
    AblationData d;
    d.train_seeds = run.evaluation.train_seeds;
    d.rows = ablation_suite(standard_ablations(run.training), setup, d.train_seeds, mat.eval, run.evaluation.seeds);
    TeacherController scats(TeacherKind::ScatsLike, run.teachers);
    d.scats = evaluate(scats, mat.eval, run.evaluation.seeds);
    return d;
  }();
  return data;
}

std::string per_seed_rho(const AblationRow& r) {
  std::string s;
  for (const auto& rep : r.per_seed) s += (s.empty() ? "" : " ") + (rep.monotonicity ? fmt(*rep.monotonicity, 3) : "n/a");
  return s;
}

Outcome synchronization() {
  const auto& d = ablation_data();
  const auto& full = d.row("full");
  const auto& no_bc = d.row("w/o BC");
  const bool pass = full.monotonicity_mean >= kRhoTarget && no_bc.monotonicity_mean < full.monotonicity_mean;
  return {pass, "full rho " + fmt(full.monotonicity_mean, 3) + " [" + per_seed_rho(full) + "], kappa=0 rho " +
                    fmt(no_bc.monotonicity_mean, 3) + " [" + per_seed_rho(no_bc) + "] over " +
                    std::to_string(d.train_seeds.size()) + " training seeds"};
}

Outcome ordering() {
  const auto& d = ablation_data();
  const double full = d.row("full").mean.all;
  const double no_bc = d.row("w/o BC").mean.all;
  const double scats = d.scats.mean.all;
  auto within = [](double a, double b) { return a >= b - kOrderingBand * std::abs(b); };
  auto gap = [](double a, double b) { return fmt(100.0 * (a - b) / std::abs(b), 3) + "%"; };
  const bool seeds_ok = int(d.train_seeds.size()) >= kMinSeeds;
  const bool pass = seeds_ok && within(full, scats) && within(full, no_bc);
  return {pass, "All: full " + fmt(full, 6) + " +- " + fmt(d.row("full").stddev.all, 3) + ", scats " + fmt(scats, 6) +
                    " (gap " + gap(full, scats) + (full >= scats ? ", strict" : ", inside band") + "), kappa=0 " +
                    fmt(no_bc, 6) + " (gap " + gap(full, no_bc) + (full >= no_bc ? ", strict" : ", inside band") +
                    "); band " + fmt(100 * kOrderingBand) + "%, " + std::to_string(d.train_seeds.size()) + " seeds"};
}

Outcome ablation_direction() {
  const auto& d = ablation_data();
  const double worst_other = std::min({d.row("full").mean.all, d.row("w/o L").mean.all, d.row("w/o S").mean.all});
  const double no_bc = d.row("w/o BC").mean.all;
  std::string s;
  for (const auto& r : d.rows) s += (s.empty() ? "" : ", ") + r.name + " " + fmt(r.mean.all, 6);
  return {no_bc < worst_other, "All: " + s};
}

// ---------------------------------------------------------------------------

Outcome reward_identity() {
  std::mt19937_64 gen(17);
  const PlanBounds b;
  long bad = 0, bad_gi = 0;
  for (int i = 0; i < kRewardCases; ++i) {
    CycleStats s;
    s.plan = gltest::random_plan(gen, b);
    for (std::size_t p = 0; p < kPhases; ++p) s.phase_throughput[p] = long(gen() % 60);
    for (auto& q : s.end_queues) q = long(gen() % 200);
    const auto [r, t] = compute_reward(s, RewardWeights{});
    // independent recomputation of each term
    double sum_gr = 0.0;
    PerPhase<double> g{};
    for (std::size_t p = 0; p < kPhases; ++p) {
      g[p] = double(s.phase_throughput[p]) * 2.5 / double(s.plan.durations[p]);
      sum_gr += g[p];
    }
    const double gr = sum_gr / 4.0;
    double ss = 0.0;
    for (double x : g) ss += (x - gr) * (x - gr);
    long veh = 0, queue = 0;
    for (long x : s.phase_throughput) veh += x;
    for (long x : s.end_queues) queue += x;
    const double v = double(veh) * 60.0 / double(s.plan.cycle_time());
    const double expect = 0.04 * v - 0.001 * double(queue) + 1.0 * gr - 1.0 * std::sqrt(ss / 4.0);
    const bool terms_ok = t.v == v && t.l == double(queue) && std::abs(t.gr - gr) <= 1e-15 * std::max(1.0, gr) &&
                          std::abs(t.gi - std::sqrt(ss / 4.0)) <= 1e-12;
    const bool exact = r == 0.04 * t.v - 0.001 * t.l + 1.0 * t.gr - 1.0 * t.gi;
    if (!terms_ok || !exact || std::abs(r - expect) > 1e-12) ++bad;

    // equal utilization: n_p = u * d_p / 2.5 with d_p a multiple of 5
    CycleStats e = s;
    const long u2 = long(gen() % 5);  // utilization u2 / 2
    for (std::size_t p = 0; p < kPhases; ++p) e.phase_throughput[p] = u2 * e.plan.durations[p] / 5;
    if (reward_terms(e).gi != 0.0) ++bad_gi;
  }
  return {bad == 0 && bad_gi == 0, std::to_string(kRewardCases) + " random cycles: " + std::to_string(bad) +
                                        " identity failures, " + std::to_string(bad_gi) + " nonzero gi at equal gr"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, Outcome (*)()>> criteria{
      {"gradient correctness", gradients},
      {"simulator conservation and determinism", conservation},
      {"action-space contract", action_contract},
      {"teacher oracles", teacher_oracles},
      {"behavior cloning efficacy", bc_efficacy},
      {"cycle-flow synchronization", synchronization},
      {"All ordering vs scats and kappa=0", ordering},
      {"ablation direction", ablation_direction},
      {"reward arithmetic", reward_identity},
  };
  const std::set<int> pick(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!pick.empty() && !pick.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << " [" << fmt(secs, 3) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
