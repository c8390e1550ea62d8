#ifndef FLOWR_CRP_HPP
#define FLOWR_CRP_HPP

// Two-parameter Chinese restaurant process prior over an unbounded class set.
//
// Predictive for the next label given counts k_1..k_N (k = sum):
//   p(n)     = max(k_n - a, 0) / (k + b)
//   p(novel) = (b + a * N+) / (k + b),   N+ = #{n : k_n > 0}
// Zero-count classes (large-context start) carry no mass and are excluded from
// N+, which keeps the vector normalised.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowr/core.hpp"

namespace flowr {

/// Discount `a` is a fixed hyperparameter; concentration b = -a + softplus(rho).
template <class T>
struct BasicCrpParams {
  double a = 0.5;
  T rho{0.0};

  T b() const { return softplus(rho) - a; }
};

using CrpParams = BasicCrpParams<double>;

inline bool operator==(const CrpParams& x, const CrpParams& y) {
  return x.a == y.a && x.rho == y.rho;
}

/// Per-class observation counts. Entry n belongs to label n+1.
struct ClassCounts {
  std::vector<std::uint64_t> counts;

  std::size_t num_classes() const { return counts.size(); }
  std::uint64_t total() const {
    std::uint64_t k = 0;
    for (auto c : counts) k += c;
    return k;
  }
  std::size_t num_occupied() const {
    std::size_t n = 0;
    for (auto c : counts) n += c > 0 ? 1 : 0;
    return n;
  }

  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

inline CrpParams make_crp_params(double a, double b) {
  if (!(a >= 0.0 && a < 1.0)) throw std::invalid_argument("CRP discount a must lie in [0, 1)");
  if (!(b > -a)) throw std::invalid_argument("CRP concentration b must exceed -a");
  return CrpParams{a, softplus_inverse(b + a)};
}

/// Log predictive probabilities, length N+1, last entry is the novel slot.
/// Zero-mass entries are exactly -inf constants.
template <class T>
std::vector<T> predictive_class_log_probs(const ClassCounts& c, const BasicCrpParams<T>& p) {
  using std::log;
  const double k = static_cast<double>(c.total());
  const T b = p.b();
  const T denom = b + k;
  if (!(value(denom) > 0.0)) {
    throw InvalidStateError("CRP predictive undefined: k + b = " + std::to_string(value(denom)));
  }
  const T log_denom = log(denom);
  std::vector<T> out;
  out.reserve(c.num_classes() + 1);
  for (auto kn : c.counts) {
    const double numer = std::max(static_cast<double>(kn) - p.a, 0.0);
    if (numer > 0.0) {
      out.push_back(std::log(numer) - log_denom);
    } else {
      out.push_back(T(kNegInf));
    }
  }
  const T novel_numer = b + p.a * static_cast<double>(c.num_occupied());
  if (value(novel_numer) > 0.0) {
    out.push_back(log(novel_numer) - log_denom);
  } else {
    out.push_back(T(kNegInf));
  }
  return out;
}

/// Predictive probabilities, length N+1 (last = novel), renormalised to sum to one.
inline Vector predictive_class_probs(const ClassCounts& c, const CrpParams& p) {
  const double k = static_cast<double>(c.total());
  const double b = p.b();
  if (!(k + b > 0.0)) {
    throw InvalidStateError("CRP predictive undefined: k + b = " + std::to_string(k + b));
  }
  Vector out;
  out.reserve(c.num_classes() + 1);
  double total = 0.0;
  for (auto kn : c.counts) {
    out.push_back(std::max(static_cast<double>(kn) - p.a, 0.0) / (k + b));
    total += out.back();
  }
  out.push_back(std::max(b + p.a * static_cast<double>(c.num_occupied()), 0.0) / (k + b));
  total += out.back();
  for (double& x : out) x /= total;
  return out;
}

/// Increments the count of existing label y.
inline ClassCounts observe(ClassCounts c, Label y) {
  if (y == 0 || y > c.num_classes()) {
    throw ProtocolError("observe: label " + std::to_string(y) + " is not an instantiated class (N = " +
                        std::to_string(c.num_classes()) + "); instantiate first");
  }
  ++c.counts[y - 1];
  return c;
}

/// Appends a new class with count one.
inline ClassCounts instantiate(ClassCounts c) {
  c.counts.push_back(1);
  return c;
}

/// Sum of log predictives of each arrival under the evolving counts (standard CRP
/// bookkeeping: a new class enters with count one).
inline double sequence_log_prob(std::span<const Label> labels, const CrpParams& p) {
  ClassCounts c;
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Label y = labels[i];
    const std::size_t n = c.num_classes();
    if (y == 0 || y > n + 1) {
      throw ProtocolError("sequence_log_prob: label " + std::to_string(y) + " at position " +
                          std::to_string(i) + " breaks arrival order (N = " + std::to_string(n) + ")");
    }
    const Vector probs = predictive_class_probs(c, p);
    total += std::log(probs[y - 1]);
    c = y == n + 1 ? instantiate(std::move(c)) : observe(std::move(c), y);
  }
  return total;
}

}  // namespace flowr

#endif  // FLOWR_CRP_HPP
