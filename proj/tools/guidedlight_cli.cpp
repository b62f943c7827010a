// guidedlight: train / eval / ablate / teachers / gen-flows

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "guidedlight.hpp"

namespace fs = std::filesystem;
using namespace guidedlight;

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
};

class Run {
 public:
  Run(const Globals& g, std::string command) : out_(g.out_dir) {
    overrides_ = g.overrides;
    if (g.seed) overrides_.push_back("training.seed=" + std::to_string(*g.seed));
    if (!g.config.empty() && !fs::exists(g.config)) throw ConfigError("config file not found: " + g.config);
    cfg_ = load_run_config(g.config, overrides_);
    fs::create_directories(out_);
    manifest_.command = std::move(command);
    manifest_.config = to_json(cfg_);
    manifest_.overrides = overrides_;
  }

  const RunConfig& config() const { return cfg_; }
  RunManifest& manifest() { return manifest_; }

  std::ofstream open(const std::string& name) {
    const fs::path p = out_ / name;
    fs::create_directories(p.parent_path());
    std::ofstream f(p);
    if (!f) throw RuntimeError("cannot write " + p.string());
    manifest_.artifacts.push_back(p.string());
    return f;
  }

  void finish() {
    std::ofstream snap = open("config.json");
    snap << to_json(cfg_).dump(2) << '\n';
    snap.close();
    const fs::path p = out_ / "manifest.json";
    manifest_.artifacts.push_back(p.string());
    manifest_.write(p);
  }

 private:
  fs::path out_;
  std::vector<std::string> overrides_;
  RunConfig cfg_;
  RunManifest manifest_;
};

void cmd_train(const Globals& g) {
  Run run(g, "train");
  const auto& cfg = run.config();
  auto mat = materialize(cfg);
  auto setup = training_setup(cfg, mat.train_profiles);
  nn::NetConfig nc = cfg.network;
  nc.seed = cfg.training.seed;
  nn::PolicyNet net(nc);
  Trainer trainer(net, cfg.training, setup.teachers,
                  [&](int e) { return setup.make_env(e, cfg.training.seed); });
  run.manifest().seeds = {cfg.training.seed};
  trainer.train([&](const EpisodeSummary& s, const nn::PolicyNet& n) {
    std::cerr << "episode " << s.episode << " teacher=" << teacher_name(s.teacher) << " reward=" << s.mean_reward
              << " L_BC=" << s.last_loss.bc << '\n';
    const int every = cfg.training.checkpoint_every;
    if (every > 0 && (s.episode + 1) % every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoints/episode_%05d.ckpt", s.episode + 1);
      auto f = run.open(name);
      nn::write_checkpoint(f, n);
    }
  });
  {
    auto f = run.open("policy.ckpt");
    nn::write_checkpoint(f, net);
  }
  {
    auto f = run.open("training_log.csv");
    write_training_log_csv(f, trainer.log());
  }
  run.finish();
}

void cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& teacher) {
  if (checkpoint.empty() == teacher.empty()) throw ConfigError("eval needs exactly one of --checkpoint or --teacher");
  Run run(g, "eval");
  const auto& cfg = run.config();
  auto mat = materialize(cfg);
  std::optional<nn::PolicyNet> net;
  std::unique_ptr<Controller> ctl;
  if (!checkpoint.empty()) {
    if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint);
    net = nn::load_checkpoint(checkpoint);
    ctl = std::make_unique<PolicyController>(*net, "guidedlight");
  } else {
    ctl = std::make_unique<TeacherController>(parse_teacher(teacher), cfg.teachers);
  }
  run.manifest().seeds = cfg.evaluation.seeds;
  auto report = evaluate(*ctl, mat.eval, cfg.evaluation.seeds);
  {
    auto f = run.open("report.csv");
    write_report_csv(f, {report});
  }
  {
    auto f = run.open("report.json");
    f << report_json(report).dump(2) << '\n';
  }
  {
    auto f = run.open("cycles.csv");
    write_cycle_points_csv(f, report);
  }
  std::cout << report.method << " All=" << report.mean.all << " rho="
            << (report.monotonicity ? std::to_string(*report.monotonicity) : std::string("n/a")) << '\n';
  run.finish();
}

void cmd_ablate(const Globals& g, const std::vector<std::string>& only) {
  Run run(g, "ablate");
  const auto& cfg = run.config();
  auto mat = materialize(cfg);
  auto setup = training_setup(cfg, mat.train_profiles);
  auto configs = standard_ablations(cfg.training);
  if (!only.empty()) {
    std::vector<AblationConfig> picked;
    for (const auto& name : only) {
      auto it = std::find_if(configs.begin(), configs.end(), [&](const AblationConfig& c) { return c.name == name; });
      if (it == configs.end()) throw ConfigError("unknown ablation '" + name + "'");
      picked.push_back(*it);
    }
    configs = picked;
  }
  run.manifest().seeds = cfg.evaluation.train_seeds;
  auto rows = ablation_suite(configs, setup, cfg.evaluation.train_seeds, mat.eval, cfg.evaluation.seeds);
  {
    auto f = run.open("ablation.csv");
    write_ablation_csv(f, rows);
  }
  {
    auto f = run.open("ablation.json");
    f << ablation_json(rows).dump(2) << '\n';
  }
  for (const auto& r : rows) std::cout << r.name << " All=" << r.mean.all << " rho=" << r.monotonicity_mean << '\n';
  run.finish();
}

// Cycle length against total flow for each teacher; flow split across
// movements by the training flow shares.
void cmd_teachers(const Globals& g, std::vector<std::string> names, double flow_max, double flow_step) {
  if (!(flow_step > 0.0) || flow_max < 0.0) throw ConfigError("need flow_step > 0 and flow_max >= 0");
  Run run(g, "teachers");
  const auto& cfg = run.config();
  if (names.empty()) names = {"fixed", "webster", "linear", "logistic", "scats"};
  std::vector<Teacher> teachers;
  for (const auto& n : names) {
    teachers.emplace_back(parse_teacher(n), cfg.teachers, cfg.scenario.env.bounds, cfg.scenario.env.lost_time);
  }
  auto f = run.open("teacher_sweep.csv");
  f << "flow";
  for (const auto& n : names) f << ',' << n << "_target," << n << "_plan";
  f << '\n';
  const auto& share = cfg.scenario.train_flows.movement_share;
  const long steps = static_cast<long>(std::floor(flow_max / flow_step + 1e-9));
  for (long i = 0; i <= steps; ++i) {
    const double flow = double(i) * flow_step;
    PerMovement<double> m{};
    for (std::size_t k = 0; k < kMovements; ++k) m[k] = flow * share[k];
    f << detail::format_double(flow);
    for (const auto& t : teachers) {
      const PhasePlan plan = t.target(m);
      const bool curve = t.kind() == TeacherKind::ScatsLike || t.kind() == TeacherKind::Logistic;
      f << ',' << (curve ? detail::format_double(t.cycle_for_total(flow)) : std::to_string(plan.cycle_time())) << ','
        << plan.cycle_time();
    }
    f << '\n';
  }
  f.close();
  run.finish();
}

void cmd_gen_flows(const Globals& g, const std::string& which) {
  Run run(g, "gen-flows");
  const auto& cfg = run.config();
  FlowSpec spec;
  if (which == "train") spec = cfg.scenario.train_flows;
  else if (which == "eval") spec = cfg.scenario.eval_flows;
  else throw ConfigError("--which must be train or eval");
  run.manifest().seeds = {spec.seed};
  auto patterns = generate_flow_patterns(spec);
  for (std::size_t i = 0; i < patterns.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "flows/%s_%04zu.csv", which.c_str(), i);
    auto f = run.open(name);
    patterns[i].write_csv(f);
  }
  std::cout << patterns.size() << " profiles written\n";
  run.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GuidedLight: cyclic signal control trained with PPO and teacher guidance"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--override", g.overrides, "dotted.key=value, repeatable");
  app.add_option("--out-dir", g.out_dir, "output directory");
  app.add_option("--seed", g.seed, "training seed");

  auto* train = app.add_subcommand("train", "train a policy");
  train->fallthrough();

  std::string checkpoint, teacher;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a teacher");
  eval->fallthrough();
  eval->add_option("--checkpoint", checkpoint);
  eval->add_option("--teacher", teacher);

  std::vector<std::string> only;
  auto* ablate = app.add_subcommand("ablate", "train and evaluate the ablation set");
  ablate->fallthrough();
  ablate->add_option("--only", only, "subset of: full, w/o BC, w/o L, w/o S");

  std::vector<std::string> names;
  double flow_max = 3000.0, flow_step = 10.0;
  auto* sweep = app.add_subcommand("teachers", "tabulate teacher cycle length against flow");
  sweep->fallthrough();
  sweep->add_option("--teacher", names);
  sweep->add_option("--flow-max", flow_max);
  sweep->add_option("--flow-step", flow_step);

  std::string which = "train";
  auto* gen = app.add_subcommand("gen-flows", "write generated flow profiles");
  gen->fallthrough();
  gen->add_option("--which", which, "train or eval");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) cmd_train(g);
    else if (*eval) cmd_eval(g, checkpoint, teacher);
    else if (*ablate) cmd_ablate(g, only);
    else if (*sweep) cmd_teachers(g, names, flow_max, flow_step);
    else if (*gen) cmd_gen_flows(g, which);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
