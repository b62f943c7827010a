#pragma once

// Frozen-controller evaluation: per-metric means over seeds, the weighted
// score, cycle-flow monotonicity, and ablation tables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "guidedlight/detail/text.hpp"
#include "guidedlight/errors.hpp"
#include "guidedlight/mdp_env.hpp"
#include "guidedlight/policy_net.hpp"
#include "guidedlight/teachers.hpp"
#include "guidedlight/trainer.hpp"

namespace guidedlight {

// Drives one environment through an episode, one cycle per call.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual void begin_episode(const TrafficEnv&) {}
  virtual StepResult act(TrafficEnv& env) = 0;
};

class TeacherController : public Controller {
 public:
  TeacherController(TeacherKind kind, TeacherConfig config) : kind_(kind), config_(std::move(config)) {}

  std::string name() const override { return std::string(teacher_name(kind_)); }
  void begin_episode(const TrafficEnv& env) override {
    teacher_.emplace(kind_, config_, env.config().bounds, env.config().lost_time);
  }
  StepResult act(TrafficEnv& env) override { return env.step_plan(teacher_->target(env.observation().flows())); }

 private:
  TeacherKind kind_;
  TeacherConfig config_;
  std::optional<Teacher> teacher_;
};

// Greedy (arg-max) actions from a frozen network.
class PolicyController : public Controller {
 public:
  PolicyController(const nn::PolicyNet& net, std::string name, bool greedy = true, std::uint64_t seed = 0)
      : net_(net), name_(std::move(name)), greedy_(greedy), rng_(seed) {}

  std::string name() const override { return name_; }
  void begin_episode(const TrafficEnv&) override { state_ = nn::RecurrentState::zeros(net_.config().hidden); }
  StepResult act(TrafficEnv& env) override {
    nn::Tape tape;
    auto g = const_cast<nn::PolicyNet&>(net_).attach(tape);  // leaves only; values are read, never written
    auto out = net_.forward(g, env.observation(), state_);
    auto lp = nn::policy_log_probs(out.logits, env.mask());
    auto sample = nn::choose_action(lp, rng_, greedy_);
    state_.h.assign(out.h.values().begin(), out.h.values().end());
    state_.c.assign(out.c.values().begin(), out.c.values().end());
    return env.step(sample.action);
  }

 private:
  const nn::PolicyNet& net_;
  std::string name_;
  bool greedy_;
  std::mt19937_64 rng_;
  nn::RecurrentState state_;
};

struct CyclePoint {
  double flow = 0.0;
  double cycle = 0.0;
};

namespace detail {

// Midranks (1-based) with ties sharing the average rank.
inline std::vector<double> midranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double rank = (double(i) + double(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace detail

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ContractViolation("spearman: need two equal-length series (n >= 2)");
  return detail::pearson(detail::midranks(a), detail::midranks(b));
}

// Points are sorted by flow and cut into `bins` equal-count groups; the
// statistic is the rank correlation between bin index and mean cycle per bin.
// A constant cycle gives 0. Returns nullopt when the flow has a single level
// or there are fewer points than bins.
inline std::optional<double> monotonicity_stat(std::vector<CyclePoint> points, int bins = 10) {
  if (bins < 2) throw ContractViolation("monotonicity_stat: need at least 2 bins");
  if (points.size() < static_cast<std::size_t>(bins)) return std::nullopt;
  std::stable_sort(points.begin(), points.end(), [](const CyclePoint& a, const CyclePoint& b) { return a.flow < b.flow; });
  if (points.front().flow == points.back().flow) return std::nullopt;
  const std::size_t n = points.size();
  std::vector<double> index, mean_cycle;
  for (int b = 0; b < bins; ++b) {
    const std::size_t lo = n * static_cast<std::size_t>(b) / static_cast<std::size_t>(bins);
    const std::size_t hi = n * static_cast<std::size_t>(b + 1) / static_cast<std::size_t>(bins);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += points[i].cycle;
    index.push_back(b);
    mean_cycle.push_back(s / double(hi - lo));
  }
  return spearman(index, mean_cycle);
}

struct MetricMeans {
  double v = 0.0;
  double l = 0.0;
  double gr = 0.0;
  double gi = 0.0;
  double all = 0.0;
};

inline double all_score(const MetricMeans& m, const RewardWeights& w) {
  return w.throughput * m.v + w.queue * m.l + w.green_utilization * m.gr + w.green_imbalance * m.gi;
}

struct EpisodeResult {
  std::uint64_t seed = 0;
  MetricMeans means;
  std::vector<TraceRow> trace;
};

struct EvalReport {
  std::string method;
  std::vector<EpisodeResult> episodes;
  MetricMeans mean;
  MetricMeans stddev;
  std::optional<double> monotonicity;  // over all episodes' cycles

  std::vector<CyclePoint> cycle_points() const {
    std::vector<CyclePoint> out;
    for (const auto& e : episodes) {
      for (const auto& r : e.trace) out.push_back({r.total_flow, double(r.cycle_time)});
    }
    return out;
  }
};

inline MetricMeans episode_means(const std::vector<TraceRow>& trace, const RewardWeights& w) {
  MetricMeans m;
  if (trace.empty()) return m;
  for (const auto& r : trace) {
    m.v += r.terms.v;
    m.l += r.terms.l;
    m.gr += r.terms.gr;
    m.gi += r.terms.gi;
  }
  const double n = double(trace.size());
  m.v /= n;
  m.l /= n;
  m.gr /= n;
  m.gi /= n;
  m.all = all_score(m, w);
  return m;
}

// Mean and population std of each metric across episodes; "all" in the mean
// row is recomputed from the metric means.
inline std::pair<MetricMeans, MetricMeans> aggregate(const std::vector<MetricMeans>& rows, const RewardWeights& w) {
  MetricMeans mean, sd;
  if (rows.empty()) return {mean, sd};
  const double n = double(rows.size());
  auto stat = [&](auto field) {
    double s = 0.0;
    for (const auto& r : rows) s += r.*field;
    const double mu = s / n;
    double ss = 0.0;
    for (const auto& r : rows) ss += (r.*field - mu) * (r.*field - mu);
    mean.*field = mu;
    sd.*field = std::sqrt(ss / n);
  };
  stat(&MetricMeans::v);
  stat(&MetricMeans::l);
  stat(&MetricMeans::gr);
  stat(&MetricMeans::gi);
  stat(&MetricMeans::all);
  mean.all = all_score(mean, w);
  return {mean, sd};
}

struct Scenario {
  EnvConfig env;
  FlowProfile profile;
};

inline EvalReport evaluate(Controller& controller, const Scenario& scenario, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("evaluate needs at least one seed");
  EvalReport rep;
  rep.method = controller.name();
  std::vector<MetricMeans> rows;
  for (auto seed : seeds) {
    TrafficEnv env(scenario.env, scenario.profile, seed);
    try {
      env.reset();
      controller.begin_episode(env);
      while (!env.done()) controller.act(env);
    } catch (const std::exception& e) {
      throw RuntimeError("evaluation of '" + rep.method + "' failed at seed " + std::to_string(seed) + ": " + e.what());
    }
    EpisodeResult ep{seed, episode_means(env.trace(), scenario.env.weights), env.trace()};
    rows.push_back(ep.means);
    rep.episodes.push_back(std::move(ep));
  }
  std::tie(rep.mean, rep.stddev) = aggregate(rows, scenario.env.weights);
  rep.monotonicity = monotonicity_stat(rep.cycle_points());
  return rep;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationConfig {
  std::string name;
  TrainConfig train;
};

// full, w/o BC (kappa = 0, same schedule), w/o L (advanced teacher only),
// w/o S (easy and medium teachers only).
inline std::vector<AblationConfig> standard_ablations(const TrainConfig& full) {
  std::vector<AblationConfig> out;
  out.push_back({"full", full});
  AblationConfig no_bc{"w/o BC", full};
  no_bc.train.kappa = 0.0;
  out.push_back(no_bc);
  AblationConfig no_l{"w/o L", full};
  no_l.train.schedule = {{TeacherKind::ScatsLike, 0}};
  out.push_back(no_l);
  AblationConfig no_s{"w/o S", full};
  no_s.train.schedule = equal_stages(full.episodes, {TeacherKind::Linear, TeacherKind::Logistic});
  out.push_back(no_s);
  return out;
}

struct AblationRow {
  std::string name;
  std::vector<EvalReport> per_seed;  // one per training seed
  MetricMeans mean;
  MetricMeans stddev;
  double monotonicity_mean = 0.0;  // over seeds where it is defined
};

struct TrainingSetup {
  nn::NetConfig net;
  TeacherConfig teachers;
  std::function<TrafficEnv(int episode, std::uint64_t seed)> make_env;
};

// Trains one network for a config and training seed.
inline nn::PolicyNet train_policy(const TrainingSetup& setup, TrainConfig cfg, std::uint64_t seed) {
  nn::NetConfig nc = setup.net;
  nc.seed = seed;
  nn::PolicyNet net(nc);
  cfg.seed = seed;
  Trainer trainer(net, cfg, setup.teachers, [&](int e) { return setup.make_env(e, seed); });
  trainer.train();
  return net;
}

inline std::vector<AblationRow> ablation_suite(const std::vector<AblationConfig>& configs, const TrainingSetup& setup,
                                               const std::vector<std::uint64_t>& train_seeds, const Scenario& eval,
                                               const std::vector<std::uint64_t>& eval_seeds) {
  if (train_seeds.empty()) throw ConfigError("ablation needs at least one training seed");
  std::vector<AblationRow> rows;
  for (const auto& c : configs) {
    c.train.validate();
    AblationRow row{c.name, {}, {}, {}, 0.0};
    std::vector<MetricMeans> means;
    int defined = 0;
    for (auto seed : train_seeds) {
      nn::PolicyNet net = train_policy(setup, c.train, seed);
      PolicyController ctl(net, c.name);
      row.per_seed.push_back(evaluate(ctl, eval, eval_seeds));
      means.push_back(row.per_seed.back().mean);
      if (auto m = row.per_seed.back().monotonicity) {
        row.monotonicity_mean += *m;
        ++defined;
      }
    }
    if (defined > 0) row.monotonicity_mean /= defined;
    std::tie(row.mean, row.stddev) = aggregate(means, eval.env.weights);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Output

inline void write_metrics_csv(std::ostream& out, const std::vector<std::pair<std::string, std::pair<MetricMeans, MetricMeans>>>& rows) {
  out << "method,v_mean,v_std,l_mean,l_std,gr_mean,gr_std,gi_mean,gi_std,all_mean,all_std\n";
  for (const auto& [name, ms] : rows) {
    const auto& [m, s] = ms;
    out << name;
    for (auto f : {&MetricMeans::v, &MetricMeans::l, &MetricMeans::gr, &MetricMeans::gi, &MetricMeans::all}) {
      out << ',' << detail::format_double(m.*f) << ',' << detail::format_double(s.*f);
    }
    out << '\n';
  }
}

inline void write_report_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
  std::vector<std::pair<std::string, std::pair<MetricMeans, MetricMeans>>> rows;
  for (const auto& r : reports) rows.push_back({r.method, {r.mean, r.stddev}});
  write_metrics_csv(out, rows);
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  std::vector<std::pair<std::string, std::pair<MetricMeans, MetricMeans>>> r;
  for (const auto& a : rows) r.push_back({a.name, {a.mean, a.stddev}});
  write_metrics_csv(out, r);
}

inline void write_cycle_points_csv(std::ostream& out, const EvalReport& report) {
  out << "seed,cycle,flow,cycle_time\n";
  for (const auto& e : report.episodes) {
    for (const auto& r : e.trace) {
      out << e.seed << ',' << r.cycle_index << ',' << detail::format_double(r.total_flow) << ',' << r.cycle_time << '\n';
    }
  }
}

inline nlohmann::json metrics_json(const MetricMeans& m) {
  return {{"v", m.v}, {"l", m.l}, {"gr", m.gr}, {"gi", m.gi}, {"all", m.all}};
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["mean"] = metrics_json(r.mean);
  j["std"] = metrics_json(r.stddev);
  j["monotonicity"] = r.monotonicity ? nlohmann::json(*r.monotonicity) : nlohmann::json(nullptr);
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : r.episodes) eps.push_back({{"seed", e.seed}, {"cycles", e.trace.size()}, {"metrics", metrics_json(e.means)}});
  j["episodes"] = eps;
  return j;
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& a : rows) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& r : a.per_seed) seeds.push_back(report_json(r));
    j.push_back({{"name", a.name},
                 {"mean", metrics_json(a.mean)},
                 {"std", metrics_json(a.stddev)},
                 {"monotonicity_mean", a.monotonicity_mean},
                 {"per_seed", seeds}});
  }
  return j;
}

}  // namespace guidedlight
