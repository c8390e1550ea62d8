#ifndef FLOWR_AUTODIFF_HPP
#define FLOWR_AUTODIFF_HPP

// Minimal reverse-mode automatic differentiation over scalars.
//
// A Var is a value plus an optional slot on a Tape. Vars without a slot are
// constants and never touch the tape, so mixing double-valued model state with
// a handful of trainable parameters stays cheap. Every node stores at most two
// parents with their local partial derivatives.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "flowr/core.hpp"

namespace flowr::ad {

class Tape {
 public:
  static constexpr std::uint32_t kNone = 0xffffffffu;

  std::uint32_t leaf() { return push(kNone, 0.0, kNone, 0.0); }

  std::uint32_t push(std::uint32_t a, double da, std::uint32_t b, double db) {
    nodes_.push_back({a, b, da, db});
    return static_cast<std::uint32_t>(nodes_.size() - 1);
  }

  std::size_t size() const { return nodes_.size(); }

  /// Adjoints of every node with respect to `output`.
  std::vector<double> adjoints(std::uint32_t output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[output] = 1.0;
    for (std::size_t i = output + 1; i-- > 0;) {
      const double g = adj[i];
      if (g == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.a != kNone) adj[n.a] += g * n.da;
      if (n.b != kNone) adj[n.b] += g * n.db;
    }
    return adj;
  }

 private:
  struct Node {
    std::uint32_t a, b;
    double da, db;
  };
  std::vector<Node> nodes_;
};

class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT(google-explicit-constructor): constants promote freely
  Var(double v, Tape* tape, std::uint32_t index) : value_(v), tape_(tape), index_(index) {}

  static Var variable(Tape& tape, double v) { return Var(v, &tape, tape.leaf()); }

  double value() const { return value_; }
  bool is_constant() const { return tape_ == nullptr; }
  Tape* tape() const { return tape_; }
  std::uint32_t index() const { return index_; }

 private:
  double value_ = 0.0;
  Tape* tape_ = nullptr;
  std::uint32_t index_ = Tape::kNone;
};

inline double value(const Var& x) { return x.value(); }

namespace detail {

inline Var unary(const Var& x, double v, double dx) {
  if (x.is_constant()) return Var(v);
  return Var(v, x.tape(), x.tape()->push(x.index(), dx, Tape::kNone, 0.0));
}

inline Var binary(const Var& x, const Var& y, double v, double dx, double dy) {
  if (x.is_constant() && y.is_constant()) return Var(v);
  if (x.is_constant()) return Var(v, y.tape(), y.tape()->push(y.index(), dy, Tape::kNone, 0.0));
  if (y.is_constant()) return Var(v, x.tape(), x.tape()->push(x.index(), dx, Tape::kNone, 0.0));
  assert(x.tape() == y.tape());
  return Var(v, x.tape(), x.tape()->push(x.index(), dx, y.index(), dy));
}

}  // namespace detail

inline Var operator+(const Var& x, const Var& y) {
  return detail::binary(x, y, x.value() + y.value(), 1.0, 1.0);
}
inline Var operator-(const Var& x, const Var& y) {
  return detail::binary(x, y, x.value() - y.value(), 1.0, -1.0);
}
inline Var operator*(const Var& x, const Var& y) {
  return detail::binary(x, y, x.value() * y.value(), y.value(), x.value());
}
inline Var operator/(const Var& x, const Var& y) {
  const double inv = 1.0 / y.value();
  const double v = x.value() * inv;
  return detail::binary(x, y, v, inv, -v * inv);
}
inline Var operator-(const Var& x) { return detail::unary(x, -x.value(), -1.0); }

inline Var operator+(const Var& x, double c) { return detail::unary(x, x.value() + c, 1.0); }
inline Var operator+(double c, const Var& x) { return detail::unary(x, c + x.value(), 1.0); }
inline Var operator-(const Var& x, double c) { return detail::unary(x, x.value() - c, 1.0); }
inline Var operator-(double c, const Var& x) { return detail::unary(x, c - x.value(), -1.0); }
inline Var operator*(const Var& x, double c) { return detail::unary(x, x.value() * c, c); }
inline Var operator*(double c, const Var& x) { return detail::unary(x, c * x.value(), c); }
inline Var operator/(const Var& x, double c) { return detail::unary(x, x.value() / c, 1.0 / c); }
inline Var operator/(double c, const Var& x) {
  const double v = c / x.value();
  return detail::unary(x, v, -v / x.value());
}

inline Var& operator+=(Var& x, const Var& y) { return x = x + y; }
inline Var& operator-=(Var& x, const Var& y) { return x = x - y; }
inline Var& operator*=(Var& x, const Var& y) { return x = x * y; }
inline Var& operator/=(Var& x, const Var& y) { return x = x / y; }

inline Var exp(const Var& x) {
  const double v = std::exp(x.value());
  return detail::unary(x, v, v);
}
inline Var log(const Var& x) { return detail::unary(x, std::log(x.value()), 1.0 / x.value()); }
inline Var sqrt(const Var& x) {
  const double v = std::sqrt(x.value());
  return detail::unary(x, v, 0.5 / v);
}
inline Var softplus(const Var& x) {
  return detail::unary(x, flowr::softplus(x.value()), flowr::sigmoid(x.value()));
}

/// Gradient of `output` with respect to `inputs` (which must be tape variables or constants).
inline Vector gradient(const Tape& tape, const Var& output, std::span<const Var> inputs) {
  Vector grad(inputs.size(), 0.0);
  if (output.is_constant()) return grad;
  const std::vector<double> adj = tape.adjoints(output.index());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].is_constant()) grad[i] = adj[inputs[i].index()];
  }
  return grad;
}

/// Registers every entry of `params` as a tape variable.
inline std::vector<Var> variables(Tape& tape, std::span<const double> params) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (double p : params) out.push_back(Var::variable(tape, p));
  return out;
}

struct ValueAndGradient {
  double value = 0.0;
  Vector gradient;
};

/// Evaluates f on tape variables built from `params` and differentiates the result.
/// `f` receives std::span<const Var> and returns Var.
template <class F>
ValueAndGradient value_and_gradient(F&& f, std::span<const double> params) {
  Tape tape;
  const std::vector<Var> vars = variables(tape, params);
  const Var out = f(std::span<const Var>(vars));
  return {out.value(), gradient(tape, out, vars)};
}

}  // namespace flowr::ad

#endif  // FLOWR_AUTODIFF_HPP
