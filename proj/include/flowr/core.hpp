#ifndef FLOWR_CORE_HPP
#define FLOWR_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowr {

using Vector = std::vector<double>;

/// Class labels are 1-based. Index n of a per-class container holds label n+1.
using Label = std::uint32_t;

struct LabeledPoint {
  Label label = 0;
  Vector features;

  friend bool operator==(const LabeledPoint&, const LabeledPoint&) = default;
};

using LabeledSet = std::vector<LabeledPoint>;

/// Deployment setting: small context (all classes instantiated from the shared prior at
/// test time) or large context (pre-trained known-known classes persist).
enum class Setting : std::uint8_t { small_context = 0, large_context = 1 };

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Label arrived out of the dense 1..N+1 protocol.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimisation produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double value(double x) { return x; }

inline void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

/// Numerically stable log(1 + exp(x)).
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

/// log(sum(exp(xs))). Entries equal to -inf are skipped so they never reach the tape.
template <class T>
T log_sum_exp(std::span<const T> xs) {
  double max_value = kNegInf;
  for (const T& x : xs) max_value = std::max(max_value, value(x));
  if (max_value == kNegInf) return T(kNegInf);
  using std::exp;
  using std::log;
  T acc(0.0);
  for (const T& x : xs) {
    if (value(x) == kNegInf) continue;
    acc = acc + exp(x - max_value);
  }
  return log(acc) + max_value;
}

template <class T>
T log_sum_exp(const std::vector<T>& xs) {
  return log_sum_exp(std::span<const T>(xs));
}

/// exp(log_probs - lse), renormalised. Returns plain doubles.
template <class T>
Vector normalize_log_probs(const std::vector<T>& log_probs) {
  const double lse = value(log_sum_exp(log_probs));
  Vector out(log_probs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = value(log_probs[i]) == kNegInf ? 0.0 : std::exp(value(log_probs[i]) - lse);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "squared_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace flowr

#endif  // FLOWR_CORE_HPP
