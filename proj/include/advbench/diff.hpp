#pragma once

// Reverse-mode differentiation over a flat, append-only recording.
//
// A Var is either a constant (no tape) or a node of exactly one Tape. Every
// operation computes its value eagerly and appends one node holding the local
// partial derivative towards each non-constant operand, so the tape is
// topologically ordered by construction and backward() is a single reverse
// sweep. Operations on constants alone do not touch any tape, which lets the
// same model code run as a plain double evaluator (used by the finite
// difference oracle).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advbench/error.hpp"

namespace advbench::diff {

class Tape;

struct Var {
  double value = 0.0;
  std::int32_t id = -1;
  Tape* tape = nullptr;

  constexpr Var() = default;
  // Implicit so that literals mix freely with recorded values.
  constexpr Var(double v) : value(v) {}  // NOLINT(google-explicit-constructor)
  constexpr Var(double v, std::int32_t node, Tape* owner) : value(v), id(node), tape(owner) {}

  constexpr bool is_constant() const { return tape == nullptr; }
};

/// Adjoints of one backward pass; leaves not reached read as zero.
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape* owner, std::vector<double> adjoints)
      : owner_(owner), adjoints_(std::move(adjoints)) {}

  double operator[](const Var& v) const {
    if (v.is_constant()) return 0.0;
    if (v.tape != owner_) throw UsageError("gradient lookup for a value from another recording");
    auto idx = static_cast<std::size_t>(v.id);
    return idx < adjoints_.size() ? adjoints_[idx] : 0.0;
  }

  std::size_t size() const { return adjoints_.size(); }

 private:
  const Tape* owner_ = nullptr;
  std::vector<double> adjoints_;
};

enum class Op { add, sub, mul, div, neg, exp, log, pow, min, max, abs, clamp, sum, select };

class Tape {
 public:
  Tape() { offsets_.push_back(0); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// New leaf input.
  Var variable(double v) {
    leaves_.push_back(static_cast<std::int32_t>(values_.size()));
    return finish(v);
  }

  std::size_t size() const { return values_.size(); }
  std::size_t edge_count() const { return parents_.size(); }
  std::span<const std::int32_t> leaves() const { return leaves_; }

  void clear() {
    values_.clear();
    parents_.clear();
    partials_.clear();
    leaves_.clear();
    offsets_.assign(1, 0);
  }

  void reserve(std::size_t nodes, std::size_t edges) {
    values_.reserve(nodes);
    offsets_.reserve(nodes + 1);
    parents_.reserve(edges);
    partials_.reserve(edges);
  }

  // Node construction: edge() for each operand, then finish().
  void edge(const Var& operand, double partial) {
    if (operand.is_constant()) return;
    parents_.push_back(operand.id);
    partials_.push_back(partial);
  }

  Var finish(double value) {
    auto id = static_cast<std::int32_t>(values_.size());
    values_.push_back(value);
    offsets_.push_back(static_cast<std::uint32_t>(parents_.size()));
    return Var(value, id, this);
  }

  Gradients backward(const Var& root) const {
    if (root.tape != this) throw UsageError("backward root is not part of this recording");
    auto n = static_cast<std::size_t>(root.id) + 1;
    std::vector<double> adj(n, 0.0);
    adj[n - 1] = 1.0;
    for (std::size_t i = n; i-- > 0;) {
      double a = adj[i];
      if (a == 0.0) continue;
      for (std::uint32_t e = offsets_[i]; e < offsets_[i + 1]; ++e) {
        adj[static_cast<std::size_t>(parents_[e])] += partials_[e] * a;
      }
    }
    return Gradients(this, std::move(adj));
  }

 private:
  std::vector<double> values_;
  std::vector<std::uint32_t> offsets_;
  std::vector<std::int32_t> parents_;
  std::vector<double> partials_;
  std::vector<std::int32_t> leaves_;
};

namespace detail {

inline Tape* common_tape(const Var& a, const Var& b) {
  if (a.tape && b.tape && a.tape != b.tape) throw UsageError("operands belong to different recordings");
  return a.tape ? a.tape : b.tape;
}

inline Tape* common_tape(std::span<const Var> xs) {
  Tape* t = nullptr;
  for (const auto& x : xs) {
    if (!x.tape) continue;
    if (t && x.tape != t) throw UsageError("operands belong to different recordings");
    t = x.tape;
  }
  return t;
}

inline Var unary(const Var& a, double value, double partial) {
  if (!a.tape) return Var(value);
  a.tape->edge(a, partial);
  return a.tape->finish(value);
}

inline Var binary(const Var& a, const Var& b, double value, double da, double db) {
  Tape* t = common_tape(a, b);
  if (!t) return Var(value);
  t->edge(a, da);
  t->edge(b, db);
  return t->finish(value);
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::binary(a, b, a.value + b.value, 1.0, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return detail::binary(a, b, a.value - b.value, 1.0, -1.0); }
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(a, b, a.value * b.value, b.value, a.value);
}
inline Var operator/(const Var& a, const Var& b) {
  if (b.value == 0.0) throw NumericError("division by zero");
  double inv = 1.0 / b.value;
  return detail::binary(a, b, a.value * inv, inv, -a.value * inv * inv);
}
inline Var operator-(const Var& a) { return detail::unary(a, -a.value, -1.0); }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline Var exp(const Var& a) {
  double e = std::exp(a.value);
  return detail::unary(a, e, e);
}

inline Var log(const Var& a) {
  if (!(a.value > 0.0)) throw NumericError("log of non-positive value " + std::to_string(a.value));
  return detail::unary(a, std::log(a.value), 1.0 / a.value);
}

inline Var pow(const Var& a, double p) {
  if (a.value < 0.0 && p != std::floor(p)) throw NumericError("pow of negative base with fractional exponent");
  if (a.value == 0.0 && p < 1.0 && p != 0.0) throw NumericError("pow derivative undefined at zero");
  double v = std::pow(a.value, p);
  double d = p == 0.0 ? 0.0 : p * std::pow(a.value, p - 1.0);
  return detail::unary(a, v, d);
}

inline Var sqrt(const Var& a) { return pow(a, 0.5); }

/// Ties route the gradient to the first operand.
// NaN operands propagate rather than being discarded by the comparison.
inline Var max(const Var& a, const Var& b) {
  bool first = a.value >= b.value || std::isnan(a.value);
  return detail::binary(a, b, first ? a.value : b.value, first ? 1.0 : 0.0, first ? 0.0 : 1.0);
}

inline Var min(const Var& a, const Var& b) {
  bool first = a.value <= b.value || std::isnan(a.value);
  return detail::binary(a, b, first ? a.value : b.value, first ? 1.0 : 0.0, first ? 0.0 : 1.0);
}

/// |x| with subgradient 0 at the origin.
inline Var abs(const Var& a) {
  double s = a.value > 0.0 ? 1.0 : (a.value < 0.0 ? -1.0 : 0.0);
  return detail::unary(a, std::fabs(a.value), s);
}

/// Pass-through gradient on the closed interval, zero strictly outside.
inline Var clamp(const Var& a, double lo, double hi) {
  if (a.value < lo) return detail::unary(a, lo, 0.0);
  if (a.value > hi) return detail::unary(a, hi, 0.0);
  return detail::unary(a, a.value, 1.0);
}

inline Var relu(const Var& a) { return max(a, Var(0.0)); }

inline Var sigmoid(const Var& a) {
  double s = a.value >= 0.0 ? 1.0 / (1.0 + std::exp(-a.value)) : std::exp(a.value) / (1.0 + std::exp(a.value));
  return detail::unary(a, s, s * (1.0 - s));
}

/// Returns a when lhs > rhs, otherwise b; the gradient follows the chosen branch.
inline Var select_greater(const Var& lhs, const Var& rhs, const Var& a, const Var& b) {
  return lhs.value > rhs.value ? a : b;
}

inline Var sum(std::span<const Var> xs) {
  Tape* t = detail::common_tape(xs);
  double s = 0.0;
  for (const auto& x : xs) s += x.value;
  if (!t) return Var(s);
  for (const auto& x : xs) t->edge(x, 1.0);
  return t->finish(s);
}

/// Σ a_i·b_i + bias as a single node.
inline Var dot(std::span<const Var> a, std::span<const Var> b, const Var& bias = Var(0.0)) {
  if (a.size() != b.size()) throw UsageError("dot operands differ in length");
  Tape* t = detail::common_tape(a);
  Tape* tb = detail::common_tape(b);
  if (t && tb && t != tb) throw UsageError("operands belong to different recordings");
  if (!t) t = tb;
  if (bias.tape && t && bias.tape != t) throw UsageError("operands belong to different recordings");
  if (!t) t = bias.tape;
  double s = bias.value;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].value * b[i].value;
  if (!t) return Var(s);
  for (std::size_t i = 0; i < a.size(); ++i) {
    t->edge(a[i], b[i].value);
    t->edge(b[i], a[i].value);
  }
  t->edge(bias, 1.0);
  return t->finish(s);
}

/// Σ c_i·x_i + bias with constant coefficients.
inline Var weighted_sum(std::span<const Var> xs, std::span<const double> coeffs, double bias = 0.0) {
  if (xs.size() != coeffs.size()) throw UsageError("weighted_sum operands differ in length");
  Tape* t = detail::common_tape(xs);
  double s = bias;
  for (std::size_t i = 0; i < xs.size(); ++i) s += coeffs[i] * xs[i].value;
  if (!t) return Var(s);
  for (std::size_t i = 0; i < xs.size(); ++i) t->edge(xs[i], coeffs[i]);
  return t->finish(s);
}

/// Generic entry point mirroring the operation list of the engine.
/// Parameters: pow → {exponent}; clamp → {lo, hi}; select operands are (lhs, rhs, a, b).
inline Var record(Op kind, std::span<const Var> xs, std::span<const double> params = {}) {
  auto need = [&](std::size_t n) {
    if (xs.size() != n) throw UsageError("wrong operand count for operation");
  };
  auto need_params = [&](std::size_t n) {
    if (params.size() != n) throw UsageError("wrong parameter count for operation");
  };
  switch (kind) {
    case Op::add: need(2); return xs[0] + xs[1];
    case Op::sub: need(2); return xs[0] - xs[1];
    case Op::mul: need(2); return xs[0] * xs[1];
    case Op::div: need(2); return xs[0] / xs[1];
    case Op::neg: need(1); return -xs[0];
    case Op::exp: need(1); return exp(xs[0]);
    case Op::log: need(1); return log(xs[0]);
    case Op::pow: need(1); need_params(1); return pow(xs[0], params[0]);
    case Op::min: need(2); return min(xs[0], xs[1]);
    case Op::max: need(2); return max(xs[0], xs[1]);
    case Op::abs: need(1); return abs(xs[0]);
    case Op::clamp: need(1); need_params(2); return clamp(xs[0], params[0], params[1]);
    case Op::sum: return sum(xs);
    case Op::select: need(4); return select_greater(xs[0], xs[1], xs[2], xs[3]);
  }
  throw UsageError("unknown operation");
}

using ScalarFn = std::function<Var(std::span<const Var>)>;

/// Compares reverse-mode gradients against central differences.
/// Returns max over the checked coordinates of |analytic - numeric| / max(1, |analytic|).
/// An empty coordinate list checks every coordinate.
inline double finite_diff_check(const ScalarFn& f, std::span<const double> point, double h,
                                std::span<const std::size_t> coords = {}) {
  Tape tape;
  std::vector<Var> xs;
  xs.reserve(point.size());
  for (double p : point) xs.push_back(tape.variable(p));
  Var root = f(xs);
  if (root.is_constant()) root = tape.finish(root.value);
  Gradients g = tape.backward(root);

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(point.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }

  std::vector<Var> probe(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i : coords) {
    if (i >= point.size()) throw UsageError("finite difference coordinate out of range");
    probe[i] = Var(point[i] + h);
    double up = f(probe).value;
    probe[i] = Var(point[i] - h);
    double down = f(probe).value;
    probe[i] = Var(point[i]);
    double numeric = (up - down) / (2.0 * h);
    double analytic = g[xs[i]];
    worst = std::max(worst, std::fabs(analytic - numeric) / std::max(1.0, std::fabs(analytic)));
  }
  return worst;
}

}  // namespace advbench::diff
