#pragma once

// Minimal tape-based reverse-mode differentiation over dense double vectors.
//
// Every op records its output on a Tape together with a closure that pushes
// the output gradient back to its inputs. Parameters are registered as leaves
// that alias a Tensor, so their gradients accumulate directly into
// Tensor::grad. A Tape is single-use: build a graph, call backward() once.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "guidedlight/errors.hpp"

namespace guidedlight::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0) : shape(std::move(dims)) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    value.assign(n, fill);
    grad.assign(n, 0.0);
  }

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
  bool all_finite() const {
    auto finite = [](double x) { return std::isfinite(x); };
    return std::all_of(value.begin(), value.end(), finite) && std::all_of(grad.begin(), grad.end(), finite);
  }
};

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  std::size_t size() const;
  std::span<const double> values() const;
  double operator[](std::size_t i) const { return values()[i]; }
  double item() const;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(std::vector<double> values) { return push(std::move(values), nullptr); }
  Var constant(std::initializer_list<double> values) { return push(std::vector<double>(values), nullptr); }
  Var scalar(double v) { return push({v}, nullptr); }

  // Leaf aliasing `p`: reads p.value, accumulates into p.grad.
  Var parameter(Tensor& p) {
    Node n;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var push(std::vector<double> values, Backward backward) {
    Node n;
    n.grad.assign(values.size(), 0.0);
    n.value = std::move(values);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  std::span<const double> value(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.param) return n.param->value;
    return n.value;
  }

  std::span<double> grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.param) return n.param->grad;
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  void backward(Var loss) {
    if (nodes_.empty()) throw ContractViolation("backward: no forward pass recorded");
    if (loss.tape != this || loss.id >= nodes_.size()) throw ContractViolation("backward: loss is not on this tape");
    if (consumed_) throw ContractViolation("backward: tape already consumed");
    if (value(loss.id).size() != 1) throw ContractViolation("backward: loss must be a scalar");
    consumed_ = true;
    grad(loss.id)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }
  }

 private:
  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    Tensor* param = nullptr;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

inline std::size_t Var::size() const { return tape->value(id).size(); }
inline std::span<const double> Var::values() const { return tape->value(id); }
inline double Var::item() const {
  auto v = values();
  if (v.size() != 1) throw ContractViolation("item() on a non-scalar");
  return v[0];
}

namespace detail {
inline void same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw ContractViolation("vars from different tapes");
}
inline void same_size(Var a, Var b, const char* op) {
  same_tape(a, b);
  if (a.size() != b.size()) throw ContractViolation(std::string(op) + ": shape mismatch");
}
}  // namespace detail

inline Var add(Var a, Var b) {
  detail::same_size(a, b, "add");
  auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return a.tape->push(std::move(out), [a, b](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto gb = t.grad(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

inline Var sub(Var a, Var b) {
  detail::same_size(a, b, "sub");
  auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return a.tape->push(std::move(out), [a, b](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto gb = t.grad(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

inline Var mul(Var a, Var b) {
  detail::same_size(a, b, "mul");
  auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return a.tape->push(std::move(out), [a, b](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto x = t.value(a.id), y = t.value(b.id);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    auto gb = t.grad(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
  });
}

inline Var scale(Var a, double k) {
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * k;
  return a.tape->push(std::move(out), [a, k](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * k;
  });
}

inline Var add_scalar(Var a, double k) {
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + k;
  return a.tape->push(std::move(out), [a](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// Vector `a` times scalar var `s` (broadcast).
inline Var scale_by(Var a, Var s) {
  detail::same_tape(a, s);
  if (s.size() != 1) throw ContractViolation("scale_by: scale must be scalar");
  const double k = s.values()[0];
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * k;
  return a.tape->push(std::move(out), [a, s](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto x = t.value(a.id);
    const double k = t.value(s.id)[0];
    auto ga = t.grad(a.id);
    double gs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * k;
      gs += g[i] * x[i];
    }
    t.grad(s.id)[0] += gs;
  });
}

template <class F, class DF>
Var unary(Var a, F f, DF df_from_xy) {
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return a.tape->push(std::move(out), [a, df_from_xy](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto x = t.value(a.id);
    auto y = t.value(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df_from_xy(x[i], y[i]);
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}
inline Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}
inline Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
// Gradient is zero outside [lo, hi].
inline Var clamp(Var a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

// Elementwise minimum; ties send the gradient to `a`.
inline Var minimum(Var a, Var b) {
  detail::same_size(a, b, "minimum");
  auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(x[i], y[i]);
  return a.tape->push(std::move(out), [a, b](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto x = t.value(a.id), y = t.value(b.id);
    auto ga = t.grad(a.id);
    auto gb = t.grad(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) (x[i] <= y[i] ? ga[i] : gb[i]) += g[i];
  });
}

// y = W x + b with W stored row-major as [out, in].
inline Var linear(Var w, Var b, Var x) {
  detail::same_tape(w, x);
  detail::same_tape(b, x);
  const std::size_t out_dim = b.size();
  const std::size_t in_dim = x.size();
  if (w.size() != out_dim * in_dim) throw ContractViolation("linear: weight shape mismatch");
  auto W = w.values(), B = b.values(), X = x.values();
  std::vector<double> out(out_dim);
  for (std::size_t i = 0; i < out_dim; ++i) {
    const double* row = W.data() + i * in_dim;
    double acc = B[i];
    for (std::size_t j = 0; j < in_dim; ++j) acc += row[j] * X[j];
    out[i] = acc;
  }
  return x.tape->push(std::move(out), [w, b, x, out_dim, in_dim](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto W = t.value(w.id);
    auto X = t.value(x.id);
    auto gw = t.grad(w.id);
    auto gb = t.grad(b.id);
    auto gx = t.grad(x.id);
    for (std::size_t i = 0; i < out_dim; ++i) {
      const double gi = g[i];
      if (gi == 0.0) continue;
      gb[i] += gi;
      double* grow = gw.data() + i * in_dim;
      const double* row = W.data() + i * in_dim;
      for (std::size_t j = 0; j < in_dim; ++j) {
        grow[j] += gi * X[j];
        gx[j] += gi * row[j];
      }
    }
  });
}

inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat: nothing to concatenate");
  std::vector<double> out;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p);
    auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), [inputs](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    std::size_t offset = 0;
    for (const Var& p : inputs) {
      auto gp = t.grad(p.id);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      offset += gp.size();
    }
  });
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice(Var a, std::size_t offset, std::size_t length) {
  auto x = a.values();
  if (offset + length > x.size()) throw ContractViolation("slice: out of range");
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(offset),
                          x.begin() + static_cast<std::ptrdiff_t>(offset + length));
  return a.tape->push(std::move(out), [a, offset](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
  });
}

inline Var element(Var a, std::size_t i) { return slice(a, i, 1); }

inline Var sum(Var a) {
  auto x = a.values();
  const double s = std::accumulate(x.begin(), x.end(), 0.0);
  return a.tape->push({s}, [a](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    auto ga = t.grad(a.id);
    for (double& v : ga) v += g;
  });
}

inline Var mean(std::span<const Var> scalars) {
  return scale(sum(concat(scalars)), 1.0 / static_cast<double>(scalars.size()));
}

inline constexpr double kMaskedLogit = -1e9;

// log softmax(a + m) where m is 0 for allowed entries and -1e9 otherwise.
inline Var masked_log_softmax(Var a, std::span<const bool> allowed) {
  auto x = a.values();
  if (allowed.size() != x.size()) throw ContractViolation("masked_log_softmax: mask size mismatch");
  std::vector<double> z(x.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) {
    z[i] = x[i] + (allowed[i] ? 0.0 : kMaskedLogit);
    mx = std::max(mx, z[i]);
  }
  double se = 0.0;
  for (double v : z) se += std::exp(v - mx);
  const double lse = mx + std::log(se);
  for (double& v : z) v -= lse;
  return a.tape->push(std::move(z), [a](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto y = t.value(self);
    double gsum = 0.0;
    for (double v : g) gsum += v;
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] - std::exp(y[i]) * gsum;
  });
}

}  // namespace guidedlight::nn
