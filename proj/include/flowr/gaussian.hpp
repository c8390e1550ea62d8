#ifndef FLOWR_GAUSSIAN_HPP
#define FLOWR_GAUSSIAN_HPP

// Conjugate inference for isotropic Gaussian class-conditional models with a
// shared Gaussian prior over class means.
//
// Beliefs are carried in natural parameters (q = mean / variance,
// lambda = 1 / variance) so that conditioning on an embedding is a pair of
// additions. Every routine is templated on the scalar so the same code runs on
// plain doubles and on autodiff variables.

#include <cmath>
#include <span>
#include <type_traits>
#include <vector>

#include "flowr/core.hpp"

namespace flowr {

template <class T>
struct BasicIsotropicGaussian {
  std::vector<T> mean;
  T variance{1.0};

  std::size_t dim() const { return mean.size(); }
};

template <class T>
struct BasicNaturalStats {
  std::vector<T> q;
  T lambda{1.0};

  std::size_t dim() const { return q.size(); }
};

using IsotropicGaussian = BasicIsotropicGaussian<double>;
using NaturalClassStats = BasicNaturalStats<double>;

struct NoiseModel {
  double noise_variance = 0.5;

  double precision() const { return 1.0 / noise_variance; }
};

/// The single Gaussian over class means used to instantiate every class and to score novelty.
template <class T>
struct BasicSharedPrior {
  BasicNaturalStats<T> stats;

  std::size_t dim() const { return stats.dim(); }
};

using SharedPrior = BasicSharedPrior<double>;

inline bool operator==(const NaturalClassStats& a, const NaturalClassStats& b) {
  return a.q == b.q && a.lambda == b.lambda;
}

inline bool operator==(const IsotropicGaussian& a, const IsotropicGaussian& b) {
  return a.mean == b.mean && a.variance == b.variance;
}

inline bool operator==(const SharedPrior& a, const SharedPrior& b) { return a.stats == b.stats; }

template <class T>
BasicNaturalStats<T> factor_to_natural(const BasicIsotropicGaussian<T>& g) {
  BasicNaturalStats<T> s;
  s.lambda = T(1.0) / g.variance;
  s.q.reserve(g.dim());
  for (const T& m : g.mean) s.q.push_back(m * s.lambda);
  return s;
}

template <class T>
BasicIsotropicGaussian<T> natural_to_moment(const BasicNaturalStats<T>& s) {
  BasicIsotropicGaussian<T> g;
  g.variance = T(1.0) / s.lambda;
  g.mean.reserve(s.dim());
  for (const T& q : s.q) g.mean.push_back(q / s.lambda);
  return g;
}

/// Folds one observation into the belief: q += z / noise, lambda += 1 / noise.
template <class T, class Z>
BasicNaturalStats<T> condition(BasicNaturalStats<T> s, const std::vector<Z>& z,
                               const NoiseModel& noise) {
  require_same_dim(s.dim(), z.size(), "condition");
  const double prec = noise.precision();
  for (std::size_t i = 0; i < z.size(); ++i) s.q[i] = s.q[i] + z[i] * prec;
  s.lambda = s.lambda + prec;
  return s;
}

/// Posterior after all of `points` at once. Independent of `condition`: sums first, scales once.
inline NaturalClassStats batch_posterior(const SharedPrior& prior, std::span<const Vector> points,
                                         const NoiseModel& noise) {
  NaturalClassStats s = prior.stats;
  if (points.empty()) return s;
  Vector sum(prior.dim(), 0.0);
  for (const Vector& z : points) {
    require_same_dim(prior.dim(), z.size(), "batch_posterior");
    for (std::size_t i = 0; i < z.size(); ++i) sum[i] += z[i];
  }
  const double k = static_cast<double>(points.size());
  for (std::size_t i = 0; i < sum.size(); ++i) s.q[i] += sum[i] / noise.noise_variance;
  s.lambda += k / noise.noise_variance;
  return s;
}

/// Predictive N(q / lambda, 1 / lambda + noise) for a new embedding from this class.
template <class T>
BasicIsotropicGaussian<T> posterior_predictive(const BasicNaturalStats<T>& s,
                                               const NoiseModel& noise) {
  BasicIsotropicGaussian<T> g = natural_to_moment(s);
  g.variance = g.variance + noise.noise_variance;
  return g;
}

/// log N(z; mean, variance * I), evaluated directly in log space.
template <class T, class Z>
std::common_type_t<T, Z> log_density(const BasicIsotropicGaussian<T>& g, const std::vector<Z>& z) {
  require_same_dim(g.dim(), z.size(), "log_density");
  using R = std::common_type_t<T, Z>;
  using std::log;
  R sq(0.0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const R diff = z[i] - g.mean[i];
    sq = sq + diff * diff;
  }
  const double d = static_cast<double>(z.size());
  return -0.5 * d * (kLog2Pi + log(g.variance)) - sq / (2.0 * g.variance);
}

inline bool is_valid(const NaturalClassStats& s) {
  return s.lambda > 0.0 && std::isfinite(s.lambda) && all_finite(s.q);
}

}  // namespace flowr

#endif  // FLOWR_GAUSSIAN_HPP
