#pragma once

// Policy/value network: per-feature movement embeddings, the FRAP phase
// competition block, phase-context embeddings, an LSTM cell, four per-phase
// actor heads (3 logits each) and a critic head.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "guidedlight/autodiff.hpp"
#include "guidedlight/detail/text.hpp"
#include "guidedlight/errors.hpp"
#include "guidedlight/mdp_env.hpp"

namespace guidedlight::nn {

struct NetConfig {
  int feature_embed = 4;  // per-feature embedding width
  int frap_dim = 16;      // d_f, 1x1 conv output width
  int context_embed = 4;  // per phase-context feature
  int hidden = 64;        // LSTM state width
  int head_hidden = 64;
  std::uint64_t seed = 7;
  // Raw observation features are multiplied by these before embedding.
  double flow_scale = 1e-2;
  double capacity_scale = 1.0 / 1440.0;
  double duration_scale = 0.1;
  double gr_scale = 1.0;
  double gi_scale = 1.0;

  int movement_embed() const { return kMovementFeatures * feature_embed; }
  int phase_context() const { return kPhaseFeatures * context_embed; }
  int fused() const { return kPhases * (frap_dim + phase_context()); }

  void validate() const {
    if (feature_embed <= 0 || frap_dim <= 0 || context_embed <= 0 || hidden <= 0 || head_hidden <= 0) {
      throw ConfigError("network dimensions must be positive");
    }
  }
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct RecurrentState {
  std::vector<double> h;
  std::vector<double> c;

  static RecurrentState zeros(int hidden) {
    return {std::vector<double>(static_cast<std::size_t>(hidden), 0.0),
            std::vector<double>(static_cast<std::size_t>(hidden), 0.0)};
  }
  friend bool operator==(const RecurrentState&, const RecurrentState&) = default;
};

class PolicyNet {
 public:
  explicit PolicyNet(NetConfig config = {}) : config_(config) {
    config_.validate();
    const auto fe = static_cast<std::size_t>(config_.feature_embed);
    const auto ce = static_cast<std::size_t>(config_.context_embed);
    const auto fd = static_cast<std::size_t>(config_.frap_dim);
    const auto hd = static_cast<std::size_t>(config_.hidden);
    const auto hh = static_cast<std::size_t>(config_.head_hidden);
    const auto me = static_cast<std::size_t>(config_.movement_embed());
    for (int k = 0; k < kMovementFeatures; ++k) {
      movement_w_[k] = Tensor({fe, 1});
      movement_b_[k] = Tensor({fe});
    }
    conv_w_ = Tensor({fd, 2 * me});
    conv_b_ = Tensor({fd});
    omega_ = Tensor({kPhases, kPhases});
    for (int k = 0; k < kPhaseFeatures; ++k) {
      context_w_[k] = Tensor({ce, 1});
      context_b_[k] = Tensor({ce});
    }
    const auto fused = static_cast<std::size_t>(config_.fused());
    lstm_w_ = Tensor({4 * hd, fused + hd});
    lstm_b_ = Tensor({4 * hd});
    for (int p = 0; p < kPhases; ++p) {
      actor_w1_[p] = Tensor({hh, hd});
      actor_b1_[p] = Tensor({hh});
      actor_w2_[p] = Tensor({kActionsPerPhase, hh});
      actor_b2_[p] = Tensor({kActionsPerPhase});
    }
    critic_w1_ = Tensor({hh, hd});
    critic_b1_ = Tensor({hh});
    critic_w2_ = Tensor({1, hh});
    critic_b2_ = Tensor({1});
    initialize(config_.seed);
  }

  const NetConfig& config() const { return config_; }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, the
  // competition mask at 1 off the diagonal and 0.5 on it, and output layers
  // of the actor heads shrunk so the initial policy is near uniform.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Tensor& t, double gain = 1.0) {
      const double fan_in = t.shape.size() > 1 ? double(t.shape[1]) : 1.0;
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (double& v : t.value) v = gain * u(rng) / std::sqrt(fan_in);
    };
    for (auto& [name, t] : parameters()) {
      std::fill(t->value.begin(), t->value.end(), 0.0);
      t->zero_grad();
      if (t->shape.size() == 2 && t != &omega_) fill(*t);
    }
    for (int p = 0; p < kPhases; ++p) {
      for (double& v : actor_w2_[p].value) v *= 0.01;
    }
    for (std::size_t p = 0; p < kPhases; ++p) {
      for (std::size_t q = 0; q < kPhases; ++q) omega_.value[p * kPhases + q] = p == q ? 0.5 : 1.0;
    }
  }

  // Named parameter list in a fixed order (checkpoint order).
  std::vector<std::pair<std::string, Tensor*>> parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (int k = 0; k < kMovementFeatures; ++k) {
      out.emplace_back("movement_embed." + std::to_string(k) + ".weight", &movement_w_[k]);
      out.emplace_back("movement_embed." + std::to_string(k) + ".bias", &movement_b_[k]);
    }
    out.emplace_back("frap.conv.weight", &conv_w_);
    out.emplace_back("frap.conv.bias", &conv_b_);
    out.emplace_back("frap.omega", &omega_);
    for (int k = 0; k < kPhaseFeatures; ++k) {
      out.emplace_back("context_embed." + std::to_string(k) + ".weight", &context_w_[k]);
      out.emplace_back("context_embed." + std::to_string(k) + ".bias", &context_b_[k]);
    }
    out.emplace_back("lstm.weight", &lstm_w_);
    out.emplace_back("lstm.bias", &lstm_b_);
    for (std::size_t p = 0; p < kPhases; ++p) {
      const std::string prefix = "actor." + std::string(phase_name(kCycleOrder[p]));
      out.emplace_back(prefix + ".hidden.weight", &actor_w1_[p]);
      out.emplace_back(prefix + ".hidden.bias", &actor_b1_[p]);
      out.emplace_back(prefix + ".out.weight", &actor_w2_[p]);
      out.emplace_back(prefix + ".out.bias", &actor_b2_[p]);
    }
    out.emplace_back("critic.hidden.weight", &critic_w1_);
    out.emplace_back("critic.hidden.bias", &critic_b1_);
    out.emplace_back("critic.out.weight", &critic_w2_);
    out.emplace_back("critic.out.bias", &critic_b2_);
    return out;
  }

  std::vector<std::pair<std::string, const Tensor*>> parameters() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<PolicyNet*>(this)->parameters()) out.emplace_back(name, t);
    return out;
  }

  Tensor& parameter(const std::string& name) {
    for (auto& [n, t] : parameters()) {
      if (n == name) return *t;
    }
    throw ContractViolation("no parameter named " + name);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters()) n += t->size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : parameters()) t->zero_grad();
  }

  bool all_finite() const {
    for (const auto& [name, t] : parameters()) {
      if (!t->all_finite()) return false;
    }
    return true;
  }

  // FNV-1a over the raw bytes of every parameter value.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : parameters()) {
      for (double v : t->value) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int i = 0; i < 8; ++i) {
          h ^= (bits >> (8 * i)) & 0xffu;
          h *= 1099511628211ull;
        }
      }
    }
    return h;
  }

  // Parameter leaves registered on one tape; reuse for every sample on it.
  struct Graph {
    Tape* tape;
    std::array<Var, kMovementFeatures> movement_w, movement_b;
    Var conv_w, conv_b, omega;
    std::array<Var, kPhaseFeatures> context_w, context_b;
    Var lstm_w, lstm_b;
    PerPhase<Var> actor_w1, actor_b1, actor_w2, actor_b2;
    Var critic_w1, critic_b1, critic_w2, critic_b2;
  };

  Graph attach(Tape& tape) {
    Graph g;
    g.tape = &tape;
    for (int k = 0; k < kMovementFeatures; ++k) {
      g.movement_w[k] = tape.parameter(movement_w_[k]);
      g.movement_b[k] = tape.parameter(movement_b_[k]);
    }
    g.conv_w = tape.parameter(conv_w_);
    g.conv_b = tape.parameter(conv_b_);
    g.omega = tape.parameter(omega_);
    for (int k = 0; k < kPhaseFeatures; ++k) {
      g.context_w[k] = tape.parameter(context_w_[k]);
      g.context_b[k] = tape.parameter(context_b_[k]);
    }
    g.lstm_w = tape.parameter(lstm_w_);
    g.lstm_b = tape.parameter(lstm_b_);
    for (std::size_t p = 0; p < kPhases; ++p) {
      g.actor_w1[p] = tape.parameter(actor_w1_[p]);
      g.actor_b1[p] = tape.parameter(actor_b1_[p]);
      g.actor_w2[p] = tape.parameter(actor_w2_[p]);
      g.actor_b2[p] = tape.parameter(actor_b2_[p]);
    }
    g.critic_w1 = tape.parameter(critic_w1_);
    g.critic_b1 = tape.parameter(critic_b1_);
    g.critic_w2 = tape.parameter(critic_w2_);
    g.critic_b2 = tape.parameter(critic_b2_);
    return g;
  }

  // e_m = ||_k Sigmoid(MLP_k(s_{m,k})) for each of the 8 movements.
  PerMovement<Var> embed_movements(const Graph& g, const PerMovement<std::array<double, kMovementFeatures>>& s) const {
    const std::array<double, kMovementFeatures> scales{config_.flow_scale, config_.capacity_scale, 1.0};
    PerMovement<Var> out;
    for (std::size_t m = 0; m < kMovements; ++m) {
      std::array<Var, kMovementFeatures> parts;
      for (std::size_t k = 0; k < kMovementFeatures; ++k) {
        Var x = g.tape->scalar(s[m][k] * scales[k]);
        parts[k] = sigmoid(linear(g.movement_w[k], g.movement_b[k], x));
      }
      out[m] = concat(parts);
    }
    return out;
  }

  struct FrapOutput {
    PerPhase<Var> phase_embedding;           // sum of the phase's two movements
    PerPhase<PerPhase<Var>> pair;            // 4 x 4 x d_f masked pair tensor
    PerPhase<Var> rows;                      // row sums, 4 x d_f
  };

  FrapOutput frap_block(const Graph& g, const PerMovement<Var>& movements) const {
    FrapOutput out;
    for (std::size_t p = 0; p < kPhases; ++p) {
      const auto& mv = kPhaseMovements[p];
      out.phase_embedding[p] = add(movements[static_cast<std::size_t>(mv[0] - 1)],
                                   movements[static_cast<std::size_t>(mv[1] - 1)]);
    }
    for (std::size_t p = 0; p < kPhases; ++p) {
      Var row_sum;
      for (std::size_t q = 0; q < kPhases; ++q) {
        Var pair = concat({out.phase_embedding[p], out.phase_embedding[q]});
        Var conv = linear(g.conv_w, g.conv_b, pair);
        Var masked = scale_by(conv, element(g.omega, p * kPhases + q));
        out.pair[p][q] = masked;
        row_sum = q == 0 ? masked : add(row_sum, masked);
      }
      out.rows[p] = row_sum;
    }
    return out;
  }

  // p_c = ||_k MLP(s_hat_k) for each phase; each MLP is an affine projection.
  PerPhase<Var> embed_phase_context(const Graph& g, const PerPhase<std::array<double, kPhaseFeatures>>& s) const {
    const std::array<double, kPhaseFeatures> scales{config_.duration_scale, config_.gr_scale, config_.gi_scale};
    PerPhase<Var> out;
    for (std::size_t p = 0; p < kPhases; ++p) {
      std::array<Var, kPhaseFeatures> parts;
      for (std::size_t k = 0; k < kPhaseFeatures; ++k) {
        parts[k] = linear(g.context_w[k], g.context_b[k], g.tape->scalar(s[p][k] * scales[k]));
      }
      out[p] = concat(parts);
    }
    return out;
  }

  // p = ||(p_f, p_c), flattened phase by phase.
  static Var fuse(const PerPhase<Var>& flow_part, const PerPhase<Var>& context_part) {
    std::vector<Var> parts;
    for (std::size_t p = 0; p < kPhases; ++p) {
      parts.push_back(flow_part[p]);
      parts.push_back(context_part[p]);
    }
    return concat(parts);
  }

  struct Recurrent {
    Var h;
    Var c;
  };

  // Standard LSTM cell; gate order in the weight rows is input, forget,
  // candidate, output.
  Recurrent recurrent_step(const Graph& g, Var input, Var h_prev, Var c_prev) const {
    const auto hd = static_cast<std::size_t>(config_.hidden);
    Var z = linear(g.lstm_w, g.lstm_b, concat({input, h_prev}));
    Var i = sigmoid(slice(z, 0, hd));
    Var f = sigmoid(slice(z, hd, hd));
    Var cand = nn::tanh(slice(z, 2 * hd, hd));
    Var o = sigmoid(slice(z, 3 * hd, hd));
    Var c = add(mul(f, c_prev), mul(i, cand));
    Var h = mul(o, nn::tanh(c));
    return {h, c};
  }

  struct Heads {
    PerPhase<Var> logits;  // 3 each: +5, -5, keep
    Var value;
  };

  Heads heads(const Graph& g, Var h) const {
    Heads out;
    for (std::size_t p = 0; p < kPhases; ++p) {
      Var hidden = nn::tanh(linear(g.actor_w1[p], g.actor_b1[p], h));
      out.logits[p] = linear(g.actor_w2[p], g.actor_b2[p], hidden);
    }
    Var hidden = nn::tanh(linear(g.critic_w1, g.critic_b1, h));
    out.value = linear(g.critic_w2, g.critic_b2, hidden);
    return out;
  }

  struct Output {
    PerPhase<Var> logits;
    Var value;
    Var h;
    Var c;
  };

  Output forward(const Graph& g, const Observation& obs, const RecurrentState& state) const {
    if (state.h.size() != static_cast<std::size_t>(config_.hidden) ||
        state.c.size() != static_cast<std::size_t>(config_.hidden)) {
      throw ContractViolation("recurrent state width does not match the network");
    }
    auto movements = embed_movements(g, obs.movement);
    auto frap = frap_block(g, movements);
    auto context = embed_phase_context(g, obs.phase);
    Var fused = fuse(frap.rows, context);
    auto rec = recurrent_step(g, fused, g.tape->constant(state.h), g.tape->constant(state.c));
    auto hd = heads(g, rec.h);
    return {hd.logits, hd.value, rec.h, rec.c};
  }

  friend bool operator==(const PolicyNet& a, const PolicyNet& b) {
    if (!(a.config_ == b.config_)) return false;
    auto pa = a.parameters();
    auto pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (pa[i].second->shape != pb[i].second->shape || pa[i].second->value != pb[i].second->value) return false;
    }
    return true;
  }

 private:
  NetConfig config_;
  std::array<Tensor, kMovementFeatures> movement_w_, movement_b_;
  Tensor conv_w_, conv_b_, omega_;
  std::array<Tensor, kPhaseFeatures> context_w_, context_b_;
  Tensor lstm_w_, lstm_b_;
  PerPhase<Tensor> actor_w1_, actor_b1_, actor_w2_, actor_b2_;
  Tensor critic_w1_, critic_b1_, critic_w2_, critic_b2_;
};

// Per-phase masked log-probabilities.
inline PerPhase<Var> policy_log_probs(const PerPhase<Var>& logits, const ActionMask& mask) {
  PerPhase<Var> out;
  for (std::size_t p = 0; p < kPhases; ++p) {
    out[p] = masked_log_softmax(logits[p], mask.allowed[p]);
  }
  return out;
}

struct ActionSample {
  ActionVector action{};
  PerPhase<double> log_prob{};
  double joint_log_prob = 0.0;
};

// Samples each phase independently; or takes the arg-max when greedy.
template <class Rng>
ActionSample choose_action(const PerPhase<Var>& log_probs, Rng& rng, bool greedy) {
  ActionSample s;
  for (std::size_t p = 0; p < kPhases; ++p) {
    auto lp = log_probs[p].values();
    int chosen = 0;
    if (greedy) {
      for (int a = 1; a < kActionsPerPhase; ++a) {
        if (lp[static_cast<std::size_t>(a)] > lp[static_cast<std::size_t>(chosen)]) chosen = a;
      }
    } else {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double r = u(rng);
      double acc = 0.0;
      chosen = kActionsPerPhase - 1;
      for (int a = 0; a < kActionsPerPhase; ++a) {
        const double pr = std::exp(lp[static_cast<std::size_t>(a)]);
        acc += pr;
        if (pr > 0.0 && r < acc) {
          chosen = a;
          break;
        }
      }
      if (std::exp(lp[static_cast<std::size_t>(chosen)]) == 0.0) chosen = kKeep;
    }
    s.action[p] = chosen;
    s.log_prob[p] = lp[static_cast<std::size_t>(chosen)];
    s.joint_log_prob += s.log_prob[p];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint format (text, one token stream):
//   guidedlight-checkpoint 1
//   config <key>=<value> ...
//   parameters <count>
//   then per parameter: <name> <rank> <dim>... followed by its values,
//   row-major, in shortest round-trip decimal form.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "guidedlight-checkpoint";

inline void write_checkpoint(std::ostream& out, const PolicyNet& net) {
  const auto& c = net.config();
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "config feature_embed=" << c.feature_embed << " frap_dim=" << c.frap_dim
      << " context_embed=" << c.context_embed << " hidden=" << c.hidden << " head_hidden=" << c.head_hidden
      << " seed=" << c.seed << " flow_scale=" << guidedlight::detail::format_double(c.flow_scale)
      << " capacity_scale=" << guidedlight::detail::format_double(c.capacity_scale)
      << " duration_scale=" << guidedlight::detail::format_double(c.duration_scale)
      << " gr_scale=" << guidedlight::detail::format_double(c.gr_scale) << " gi_scale=" << guidedlight::detail::format_double(c.gi_scale)
      << '\n';
  const auto params = net.parameters();
  out << "parameters " << params.size() << '\n';
  for (const auto& [name, t] : params) {
    out << name << ' ' << t->shape.size();
    for (auto d : t->shape) out << ' ' << d;
    out << '\n' << guidedlight::detail::join_numbers(t->value, ' ') << '\n';
  }
}

inline PolicyNet read_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic) throw ConfigError("not a guidedlight checkpoint");
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  std::string tag;
  in >> tag;
  if (tag != "config") throw ConfigError("checkpoint: missing config line");
  std::string line;
  std::getline(in, line);
  NetConfig c;
  std::istringstream cfg(line);
  std::string kv;
  while (cfg >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("checkpoint: bad config entry " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    if (key == "feature_embed") c.feature_embed = std::stoi(val);
    else if (key == "frap_dim") c.frap_dim = std::stoi(val);
    else if (key == "context_embed") c.context_embed = std::stoi(val);
    else if (key == "hidden") c.hidden = std::stoi(val);
    else if (key == "head_hidden") c.head_hidden = std::stoi(val);
    else if (key == "seed") c.seed = std::stoull(val);
    else if (key == "flow_scale") c.flow_scale = guidedlight::detail::parse_double(val);
    else if (key == "capacity_scale") c.capacity_scale = guidedlight::detail::parse_double(val);
    else if (key == "duration_scale") c.duration_scale = guidedlight::detail::parse_double(val);
    else if (key == "gr_scale") c.gr_scale = guidedlight::detail::parse_double(val);
    else if (key == "gi_scale") c.gi_scale = guidedlight::detail::parse_double(val);
    else throw ConfigError("checkpoint: unknown config key " + key);
  }
  PolicyNet net(c);
  std::size_t count = 0;
  in >> tag >> count;
  auto params = net.parameters();
  if (tag != "parameters" || count != params.size()) throw ConfigError("checkpoint: parameter count mismatch");
  for (auto& [name, t] : params) {
    std::string got;
    std::size_t rank = 0;
    in >> got >> rank;
    if (got != name) throw ConfigError("checkpoint: expected parameter " + name + ", found " + got);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) in >> d;
    if (shape != t->shape) throw ConfigError("checkpoint: shape mismatch for " + name);
    for (double& v : t->value) {
      std::string tok;
      in >> tok;
      v = guidedlight::detail::parse_double(tok);
    }
  }
  if (!in) throw ConfigError("checkpoint: truncated file");
  return net;
}

inline void save_checkpoint(const std::string& path, const PolicyNet& net) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write checkpoint " + path);
  write_checkpoint(out, net);
}

inline PolicyNet load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace guidedlight::nn
