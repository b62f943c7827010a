#pragma once

// Run configuration (JSON), dotted-path overrides, synthetic flow patterns and
// the run manifest.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "guidedlight/detail/text.hpp"
#include "guidedlight/errors.hpp"
#include "guidedlight/eval_report.hpp"
#include "guidedlight/mdp_env.hpp"
#include "guidedlight/policy_net.hpp"
#include "guidedlight/teachers.hpp"
#include "guidedlight/trainer.hpp"

namespace guidedlight {

using json = nlohmann::json;

inline constexpr std::string_view kVersionTag = "guidedlight 0.1.0";

// Share of the total intersection flow per movement: through movements
// (1, 5, 2, 6) 0.17 each, left turns (3, 7, 4, 8) 0.08 each.
inline constexpr PerMovement<double> kDefaultMovementShare{0.17, 0.17, 0.08, 0.08, 0.17, 0.17, 0.08, 0.08};

enum class FlowShape { ThreeStage, Staircase, Diurnal };

inline std::string_view shape_name(FlowShape s) {
  switch (s) {
    case FlowShape::ThreeStage: return "three_stage";
    case FlowShape::Staircase: return "staircase";
    case FlowShape::Diurnal: return "diurnal";
  }
  return "?";
}

inline FlowShape parse_shape(std::string_view s) {
  for (auto k : {FlowShape::ThreeStage, FlowShape::Staircase, FlowShape::Diurnal}) {
    if (shape_name(k) == s) return k;
  }
  throw ConfigError("unknown flow shape '" + std::string(s) + "'");
}

// Either a profile file or a generated base shape plus perturbations.
struct FlowSpec {
  std::string file;  // when set, the generator fields are ignored
  FlowShape shape = FlowShape::ThreeStage;
  int duration = 7200;
  int bin_seconds = 300;
  double low_flow = 500.0;    // total veh/h
  double high_flow = 2600.0;  // total veh/h
  int steps = 6;              // staircase levels on the way up
  PerMovement<double> movement_share = kDefaultMovementShare;
  int count = 1;              // patterns
  double noise_sigma = 0.0;   // lognormal per-bin noise
  double time_warp = 0.0;     // peak-shift amplitude in (-1, 1)
  std::uint64_t seed = 1;

  void validate() const {
    if (!file.empty()) return;
    if (duration <= 0 || bin_seconds <= 0 || duration % bin_seconds != 0) {
      throw ConfigError("flow spec: duration must be a positive multiple of bin_seconds");
    }
    if (low_flow < 0.0 || high_flow < low_flow) throw ConfigError("flow spec: need 0 <= low_flow <= high_flow");
    if (steps < 1) throw ConfigError("flow spec: steps must be >= 1");
    for (double s : movement_share) {
      if (s < 0.0) throw ConfigError("flow spec: movement shares must be >= 0");
    }
    if (count < 1) throw ConfigError("flow spec: count must be >= 1");
    if (noise_sigma < 0.0) throw ConfigError("flow spec: noise_sigma must be >= 0");
    if (!(std::abs(time_warp) < 1.0)) throw ConfigError("flow spec: |time_warp| must be < 1");
  }
  friend bool operator==(const FlowSpec&, const FlowSpec&) = default;
};

// Total-flow level in [0, 1] at fraction u of the horizon.
inline double shape_level(FlowShape shape, double u, int steps) {
  switch (shape) {
    case FlowShape::ThreeStage: return u < 1.0 / 3.0 ? 0.0 : (u < 2.0 / 3.0 ? 0.5 : 1.0);
    case FlowShape::Staircase: {
      // steps levels up then back down: 0, 1/(s-1), ..., 1, ..., 0
      const int n = 2 * steps;
      const int k = std::min(n - 1, static_cast<int>(u * n));
      const int up = k < steps ? k : n - 1 - k;
      return steps == 1 ? 1.0 : double(up) / double(steps - 1);
    }
    case FlowShape::Diurnal: {
      auto bump = [](double x, double c, double w) { return std::exp(-0.5 * (x - c) * (x - c) / (w * w)); };
      return std::min(1.0, bump(u, 0.33, 0.08) + 0.85 * bump(u, 0.75, 0.09));
    }
  }
  return 0.0;
}

inline FlowProfile base_profile(const FlowSpec& spec) {
  spec.validate();
  if (!spec.file.empty()) return FlowProfile::load(spec.file);
  FlowProfile p;
  p.bin_seconds = spec.bin_seconds;
  const int bins = spec.duration / spec.bin_seconds;
  for (int b = 0; b < bins; ++b) {
    const double u = (b + 0.5) / bins;
    const double total = spec.low_flow + (spec.high_flow - spec.low_flow) * shape_level(spec.shape, u, spec.steps);
    PerMovement<double> row{};
    for (std::size_t m = 0; m < kMovements; ++m) row[m] = total * spec.movement_share[m];
    p.rates.push_back(row);
  }
  return p;
}

// Perturbed copies of a base profile: a smooth monotone time warp
// t -> t + a*T/pi*sin(pi*t/T) with a ~ U(-warp, warp) shifts the peaks, then
// each bin and movement is scaled by exp(sigma*z - sigma^2/2), mean 1.
inline std::vector<FlowProfile> generate_flow_patterns(const FlowProfile& base, int count, std::uint64_t seed,
                                                       double noise_sigma, double time_warp) {
  base.validate();
  if (base.rates.empty()) throw ConfigError("base flow profile is empty");
  if (count < 1) throw ConfigError("pattern count must be >= 1");
  if (noise_sigma < 0.0 || !(std::abs(time_warp) < 1.0)) throw ConfigError("invalid noise or warp");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const double horizon = base.duration();
  std::vector<FlowProfile> out;
  for (int c = 0; c < count; ++c) {
    const double a = time_warp == 0.0 ? 0.0 : std::uniform_real_distribution<double>(-time_warp, time_warp)(rng);
    FlowProfile p;
    p.bin_seconds = base.bin_seconds;
    for (std::size_t b = 0; b < base.rates.size(); ++b) {
      const double t = (double(b) + 0.5) * base.bin_seconds;
      const double warped = t + a * horizon / std::numbers::pi * std::sin(std::numbers::pi * t / horizon);
      const auto src = std::min(base.rates.size() - 1, static_cast<std::size_t>(std::max(0.0, warped) / base.bin_seconds));
      PerMovement<double> row = base.rates[src];
      if (noise_sigma > 0.0) {
        for (double& r : row) r = std::max(0.0, r * std::exp(noise_sigma * z(rng) - 0.5 * noise_sigma * noise_sigma));
      }
      p.rates.push_back(row);
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<FlowProfile> generate_flow_patterns(const FlowSpec& spec) {
  return generate_flow_patterns(base_profile(spec), spec.count, spec.seed, spec.noise_sigma, spec.time_warp);
}

struct ScenarioConfig {
  EnvConfig env;
  FlowSpec train_flows;
  FlowSpec eval_flows;

  ScenarioConfig() {
    train_flows.count = 140;
    train_flows.noise_sigma = 0.15;
    train_flows.time_warp = 0.15;
    train_flows.seed = 11;
    eval_flows.shape = FlowShape::Staircase;
    eval_flows.duration = 9000;
  }

  void validate() const {
    env.validate();
    train_flows.validate();
    eval_flows.validate();
    for (const auto* f : {&train_flows, &eval_flows}) {
      if (!f->file.empty() && !std::filesystem::exists(f->file)) throw ConfigError("flow file not found: " + f->file);
    }
  }
  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

struct EvalConfig {
  std::vector<std::uint64_t> seeds{101, 102, 103};
  std::vector<std::uint64_t> train_seeds{1, 2, 3, 4, 5};

  void validate() const {
    if (seeds.empty()) throw ConfigError("evaluation.seeds must not be empty");
    if (train_seeds.empty()) throw ConfigError("evaluation.train_seeds must not be empty");
  }
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct RunConfig {
  ScenarioConfig scenario;
  TeacherConfig teachers;
  nn::NetConfig network;
  TrainConfig training;
  EvalConfig evaluation;

  void validate() const {
    scenario.validate();
    Teacher(TeacherKind::ScatsLike, teachers, scenario.env.bounds, scenario.env.lost_time);
    network.validate();
    training.validate();
    evaluation.validate();
  }
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// ---------------------------------------------------------------------------
// JSON mapping. Every key is optional on input and falls back to the default;
// unknown keys are rejected so typos surface.

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline json to_json(const PlanBounds& b) {
  return {{"min_green", b.min_green}, {"max_green", b.max_green}, {"min_cycle", b.min_cycle}, {"max_cycle", b.max_cycle}};
}

inline PlanBounds bounds_from_json(const json& j) {
  detail::reject_unknown(j, {"min_green", "max_green", "min_cycle", "max_cycle"}, "bounds");
  PlanBounds b;
  detail::read(j, "min_green", b.min_green, "bounds");
  detail::read(j, "max_green", b.max_green, "bounds");
  detail::read(j, "min_cycle", b.min_cycle, "bounds");
  detail::read(j, "max_cycle", b.max_cycle, "bounds");
  return b;
}

inline json to_json(const RewardWeights& w) {
  return {{"throughput", w.throughput}, {"queue", w.queue}, {"green_utilization", w.green_utilization},
          {"green_imbalance", w.green_imbalance}};
}

inline RewardWeights weights_from_json(const json& j) {
  detail::reject_unknown(j, {"throughput", "queue", "green_utilization", "green_imbalance"}, "reward");
  RewardWeights w;
  detail::read(j, "throughput", w.throughput, "reward");
  detail::read(j, "queue", w.queue, "reward");
  detail::read(j, "green_utilization", w.green_utilization, "reward");
  detail::read(j, "green_imbalance", w.green_imbalance, "reward");
  return w;
}

inline json to_json(const FlowSpec& f) {
  return {{"file", f.file},
          {"shape", shape_name(f.shape)},
          {"duration", f.duration},
          {"bin_seconds", f.bin_seconds},
          {"low_flow", f.low_flow},
          {"high_flow", f.high_flow},
          {"steps", f.steps},
          {"movement_share", f.movement_share},
          {"count", f.count},
          {"noise_sigma", f.noise_sigma},
          {"time_warp", f.time_warp},
          {"seed", f.seed}};
}

inline FlowSpec flow_spec_from_json(const json& j, FlowSpec f, const std::string& where) {
  detail::reject_unknown(j,
                         {"file", "shape", "duration", "bin_seconds", "low_flow", "high_flow", "steps", "movement_share",
                          "count", "noise_sigma", "time_warp", "seed"},
                         where);
  detail::read(j, "file", f.file, where);
  if (j.contains("shape")) f.shape = parse_shape(j.at("shape").get<std::string>());
  detail::read(j, "duration", f.duration, where);
  detail::read(j, "bin_seconds", f.bin_seconds, where);
  detail::read(j, "low_flow", f.low_flow, where);
  detail::read(j, "high_flow", f.high_flow, where);
  detail::read(j, "steps", f.steps, where);
  detail::read(j, "movement_share", f.movement_share, where);
  detail::read(j, "count", f.count, where);
  detail::read(j, "noise_sigma", f.noise_sigma, where);
  detail::read(j, "time_warp", f.time_warp, where);
  detail::read(j, "seed", f.seed, where);
  return f;
}

inline json to_json(const ScenarioConfig& s) {
  return {{"present", s.env.present},
          {"capacity_vph", s.env.capacity_vph},
          {"bounds", to_json(s.env.bounds)},
          {"lost_time", s.env.lost_time},
          {"window", s.env.window},
          {"initial_plan", s.env.initial_plan.durations},
          {"reward", to_json(s.env.weights)},
          {"queue_measure", queue_measure_name(s.env.queue_measure)},
          {"train_flows", to_json(s.train_flows)},
          {"eval_flows", to_json(s.eval_flows)}};
}

inline ScenarioConfig scenario_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"present", "capacity_vph", "bounds", "lost_time", "window", "initial_plan", "reward",
                          "queue_measure", "train_flows", "eval_flows"},
                         "scenario");
  ScenarioConfig s;
  detail::read(j, "present", s.env.present, "scenario");
  detail::read(j, "capacity_vph", s.env.capacity_vph, "scenario");
  if (j.contains("bounds")) s.env.bounds = bounds_from_json(j.at("bounds"));
  detail::read(j, "lost_time", s.env.lost_time, "scenario");
  detail::read(j, "window", s.env.window, "scenario");
  detail::read(j, "initial_plan", s.env.initial_plan.durations, "scenario");
  s.env.initial_plan.lost_time_per_phase = s.env.lost_time;
  if (j.contains("reward")) s.env.weights = weights_from_json(j.at("reward"));
  if (j.contains("queue_measure")) {
    if (!j.at("queue_measure").is_string()) throw ConfigError("scenario.queue_measure: expected a string");
    s.env.queue_measure = parse_queue_measure(j.at("queue_measure").get<std::string>());
  }
  if (j.contains("train_flows")) s.train_flows = flow_spec_from_json(j.at("train_flows"), s.train_flows, "scenario.train_flows");
  if (j.contains("eval_flows")) s.eval_flows = flow_spec_from_json(j.at("eval_flows"), s.eval_flows, "scenario.eval_flows");
  for (std::size_t m = 0; m < kMovements; ++m) {
    if (!s.env.present[m]) s.env.capacity_vph[m] = 0.0;
  }
  return s;
}

inline json to_json(const TeacherConfig& t) {
  return {{"fixed_plan", t.fixed_plan.durations},
          {"linear_coefficient", t.linear_coefficient},
          {"capacity_vph", t.capacity_vph},
          {"logistic_center_fraction", t.logistic_center_fraction},
          {"logistic_width_fraction", t.logistic_width_fraction},
          {"scats",
           {{"min_ct", t.scats.min_ct},
            {"alt_min_1", t.scats.alt_min_1},
            {"alt_min_2", t.scats.alt_min_2},
            {"stretch_ct", t.scats.stretch_ct},
            {"max_ct", t.scats.max_ct},
            {"breakpoints", t.scats.breakpoints}}}};
}

// Scats breakpoints default to fractions of capacity_vph unless given.
inline TeacherConfig teachers_from_json(const json& j, int lost_time) {
  detail::reject_unknown(j,
                         {"fixed_plan", "linear_coefficient", "capacity_vph", "logistic_center_fraction",
                          "logistic_width_fraction", "scats"},
                         "teachers");
  TeacherConfig t;
  detail::read(j, "fixed_plan", t.fixed_plan.durations, "teachers");
  t.fixed_plan.lost_time_per_phase = lost_time;
  detail::read(j, "linear_coefficient", t.linear_coefficient, "teachers");
  detail::read(j, "capacity_vph", t.capacity_vph, "teachers");
  detail::read(j, "logistic_center_fraction", t.logistic_center_fraction, "teachers");
  detail::read(j, "logistic_width_fraction", t.logistic_width_fraction, "teachers");
  t.scats = ScatsConfig::for_capacity(t.capacity_vph);
  if (j.contains("scats")) {
    const json& s = j.at("scats");
    detail::reject_unknown(s, {"min_ct", "alt_min_1", "alt_min_2", "stretch_ct", "max_ct", "breakpoints"}, "teachers.scats");
    detail::read(s, "min_ct", t.scats.min_ct, "teachers.scats");
    detail::read(s, "alt_min_1", t.scats.alt_min_1, "teachers.scats");
    detail::read(s, "alt_min_2", t.scats.alt_min_2, "teachers.scats");
    detail::read(s, "stretch_ct", t.scats.stretch_ct, "teachers.scats");
    detail::read(s, "max_ct", t.scats.max_ct, "teachers.scats");
    detail::read(s, "breakpoints", t.scats.breakpoints, "teachers.scats");
  }
  return t;
}

inline json to_json(const nn::NetConfig& c) {
  return {{"feature_embed", c.feature_embed}, {"frap_dim", c.frap_dim},         {"context_embed", c.context_embed},
          {"hidden", c.hidden},               {"head_hidden", c.head_hidden},   {"seed", c.seed},
          {"flow_scale", c.flow_scale},       {"capacity_scale", c.capacity_scale}, {"duration_scale", c.duration_scale},
          {"gr_scale", c.gr_scale},           {"gi_scale", c.gi_scale}};
}

inline nn::NetConfig network_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"feature_embed", "frap_dim", "context_embed", "hidden", "head_hidden", "seed", "flow_scale",
                          "capacity_scale", "duration_scale", "gr_scale", "gi_scale"},
                         "network");
  nn::NetConfig c;
  detail::read(j, "feature_embed", c.feature_embed, "network");
  detail::read(j, "frap_dim", c.frap_dim, "network");
  detail::read(j, "context_embed", c.context_embed, "network");
  detail::read(j, "hidden", c.hidden, "network");
  detail::read(j, "head_hidden", c.head_hidden, "network");
  detail::read(j, "seed", c.seed, "network");
  detail::read(j, "flow_scale", c.flow_scale, "network");
  detail::read(j, "capacity_scale", c.capacity_scale, "network");
  detail::read(j, "duration_scale", c.duration_scale, "network");
  detail::read(j, "gr_scale", c.gr_scale, "network");
  detail::read(j, "gi_scale", c.gi_scale, "network");
  return c;
}

inline json to_json(const TrainConfig& t) {
  json stages = json::array();
  for (const auto& s : t.schedule) stages.push_back({{"teacher", teacher_name(s.teacher)}, {"first_episode", s.first_episode}});
  return {{"learning_rate", t.learning_rate}, {"alpha", t.alpha},
          {"beta", t.beta},                   {"kappa", t.kappa},
          {"gamma", t.gamma},                 {"lambda", t.lambda},
          {"clip_ratio", t.clip_ratio},       {"epochs", t.epochs},
          {"minibatch", t.minibatch},         {"max_grad_norm", t.max_grad_norm},
          {"value_scale", t.value_scale},
          {"adam_beta1", t.adam_beta1},       {"adam_beta2", t.adam_beta2},
          {"adam_epsilon", t.adam_epsilon},   {"episodes", t.episodes},
          {"seed", t.seed},                   {"checkpoint_every", t.checkpoint_every},
          {"curriculum", stages}};
}

// "curriculum" is either a list of {teacher, first_episode} stages or a list
// of teacher names split into equal stages over the episodes.
inline TrainConfig training_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"learning_rate", "alpha", "beta", "kappa", "gamma", "lambda", "clip_ratio", "epochs",
                          "minibatch", "max_grad_norm", "value_scale", "adam_beta1", "adam_beta2", "adam_epsilon", "episodes", "seed",
                          "checkpoint_every", "curriculum"},
                         "training");
  TrainConfig t;
  detail::read(j, "learning_rate", t.learning_rate, "training");
  detail::read(j, "alpha", t.alpha, "training");
  detail::read(j, "beta", t.beta, "training");
  detail::read(j, "kappa", t.kappa, "training");
  detail::read(j, "gamma", t.gamma, "training");
  detail::read(j, "lambda", t.lambda, "training");
  detail::read(j, "clip_ratio", t.clip_ratio, "training");
  detail::read(j, "epochs", t.epochs, "training");
  detail::read(j, "minibatch", t.minibatch, "training");
  detail::read(j, "max_grad_norm", t.max_grad_norm, "training");
  detail::read(j, "value_scale", t.value_scale, "training");
  detail::read(j, "adam_beta1", t.adam_beta1, "training");
  detail::read(j, "adam_beta2", t.adam_beta2, "training");
  detail::read(j, "adam_epsilon", t.adam_epsilon, "training");
  detail::read(j, "episodes", t.episodes, "training");
  detail::read(j, "seed", t.seed, "training");
  detail::read(j, "checkpoint_every", t.checkpoint_every, "training");
  t.schedule = equal_stages(t.episodes, {TeacherKind::Linear, TeacherKind::Logistic, TeacherKind::ScatsLike});
  if (j.contains("curriculum")) {
    const json& c = j.at("curriculum");
    if (!c.is_array() || c.empty()) throw ConfigError("training.curriculum: expected a non-empty list");
    if (c.front().is_string()) {
      std::vector<TeacherKind> kinds;
      for (const auto& k : c) kinds.push_back(parse_teacher(k.get<std::string>()));
      t.schedule = equal_stages(t.episodes, kinds);
    } else {
      t.schedule.clear();
      for (const auto& s : c) {
        detail::reject_unknown(s, {"teacher", "first_episode"}, "training.curriculum");
        if (!s.contains("teacher") || !s.contains("first_episode")) {
          throw ConfigError("training.curriculum: each stage needs teacher and first_episode");
        }
        t.schedule.push_back({parse_teacher(s.at("teacher").get<std::string>()), s.at("first_episode").get<int>()});
      }
    }
  }
  return t;
}

inline json to_json(const EvalConfig& e) { return {{"seeds", e.seeds}, {"train_seeds", e.train_seeds}}; }

inline EvalConfig evaluation_from_json(const json& j) {
  detail::reject_unknown(j, {"seeds", "train_seeds"}, "evaluation");
  EvalConfig e;
  detail::read(j, "seeds", e.seeds, "evaluation");
  detail::read(j, "train_seeds", e.train_seeds, "evaluation");
  return e;
}

inline json to_json(const RunConfig& c) {
  return {{"scenario", to_json(c.scenario)},
          {"teachers", to_json(c.teachers)},
          {"network", to_json(c.network)},
          {"training", to_json(c.training)},
          {"evaluation", to_json(c.evaluation)}};
}

inline RunConfig run_config_from_json(const json& j) {
  detail::reject_unknown(j, {"scenario", "teachers", "network", "training", "evaluation"}, "config");
  RunConfig c;
  if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
  c.teachers = teachers_from_json(j.value("teachers", json::object()), c.scenario.env.lost_time);
  if (j.contains("network")) c.network = network_from_json(j.at("network"));
  if (j.contains("training")) c.training = training_from_json(j.at("training"));
  if (j.contains("evaluation")) c.evaluation = evaluation_from_json(j.at("evaluation"));
  c.validate();
  return c;
}

// key=value with a dotted path; the value is parsed as JSON when it can be
// (numbers, booleans, arrays) and taken as a string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  const auto parts = detail::split(key, '.');
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string part(parts[i]);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (i + 1 == parts.size()) {
      (*node)[part] = value;
    } else {
      node = &(*node)[part];
      if (node->is_null()) *node = json::object();
    }
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
  return j;
}

inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  json j = path.empty() ? json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Scenario materialization

struct Materialized {
  std::vector<FlowProfile> train_profiles;
  Scenario eval;
};

inline Materialized materialize(const RunConfig& cfg) {
  Materialized m;
  if (cfg.scenario.train_flows.file.empty()) {
    m.train_profiles = generate_flow_patterns(cfg.scenario.train_flows);
  } else {
    m.train_profiles = {FlowProfile::load(cfg.scenario.train_flows.file)};
  }
  FlowSpec eval_spec = cfg.scenario.eval_flows;
  m.eval = {cfg.scenario.env, base_profile(eval_spec)};
  return m;
}

// Episode e trains on pattern e mod count with its own simulator seed.
inline std::uint64_t episode_seed(std::uint64_t run_seed, int episode) {
  std::seed_seq seq{static_cast<std::uint32_t>(run_seed), static_cast<std::uint32_t>(run_seed >> 32),
                    static_cast<std::uint32_t>(episode)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t(words[0]) << 32) | words[1];
}

inline TrainingSetup training_setup(const RunConfig& cfg, std::vector<FlowProfile> profiles) {
  if (profiles.empty()) throw ConfigError("no training flow profiles");
  auto shared = std::make_shared<std::vector<FlowProfile>>(std::move(profiles));
  EnvConfig env = cfg.scenario.env;
  TrainingSetup s;
  s.net = cfg.network;
  s.teachers = cfg.teachers;
  s.make_env = [shared, env](int episode, std::uint64_t seed) {
    const auto& p = (*shared)[static_cast<std::size_t>(episode) % shared->size()];
    return TrafficEnv(env, p, episode_seed(seed, episode));
  };
  return s;
}

// ---------------------------------------------------------------------------
// Manifest

struct RunManifest {
  std::string command;
  json config;
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  std::string version{kVersionTag};
  std::vector<std::string> artifacts;

  json to_json() const {
    return {{"command", command},   {"version", version},     {"config", config},
            {"overrides", overrides}, {"seeds", seeds},       {"artifacts", artifacts}};
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write manifest: " + path.string());
    out << to_json().dump(2) << '\n';
  }
};

}  // namespace guidedlight
