#ifndef FLOWR_TESTS_SUPPORT_HPP
#define FLOWR_TESTS_SUPPORT_HPP

// Random generators and independent oracles shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "flowr/flowr.hpp"

namespace flowr::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Vector random_vector(Rng& rng, std::size_t d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(d);
  for (double& x : v) x = n(rng);
  return v;
}

inline SharedPrior random_prior(Rng& rng, std::size_t d) {
  return SharedPrior{NaturalClassStats{random_vector(rng, d), uniform(rng, 0.2, 3.0)}};
}

inline NoiseModel random_noise(Rng& rng) { return NoiseModel{uniform(rng, 0.1, 2.0)}; }

inline CrpParams random_crp(Rng& rng) { return make_crp_params(uniform(rng, 0.0, 0.9), uniform(rng, 0.05, 3.0)); }

/// Dense arrival sequence: each label is an existing class or the next new one.
inline std::vector<Label> random_arrivals(Rng& rng, std::size_t n, double p_new = 0.3) {
  std::vector<Label> out;
  Label classes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (classes == 0 || uniform(rng, 0.0, 1.0) < p_new) {
      out.push_back(++classes);
    } else {
      out.push_back(static_cast<Label>(uniform_int(rng, 1, classes)));
    }
  }
  return out;
}

inline LabeledSet random_labeled_stream(Rng& rng, std::size_t n, std::size_t d, double spread = 3.0) {
  const std::vector<Label> labels = random_arrivals(rng, n);
  std::vector<Vector> centres;
  LabeledSet out;
  for (Label y : labels) {
    if (y > centres.size()) centres.push_back(random_vector(rng, d, spread));
    Vector x = centres[y - 1];
    for (double& v : x) v += std::normal_distribution<double>(0.0, 0.7)(rng);
    out.push_back({y, x});
  }
  return out;
}

inline ModelState random_state(Rng& rng, std::size_t d, std::size_t n_points) {
  const LabeledSet support = random_labeled_stream(rng, n_points, d);
  return init_small_context(random_prior(rng, d), random_crp(rng), random_noise(rng), make_identity_encoder(d),
                            support);
}

// ---------------------------------------------------------------------------
// Oracles.

/// Scalar normal density, evaluated directly.
inline double normal_pdf(double x, double mean, double variance) {
  return std::exp(-(x - mean) * (x - mean) / (2.0 * variance)) / std::sqrt(2.0 * std::numbers::pi * variance);
}

inline double trapezoid(double (*f)(double, double, double), double mean, double variance, double lo, double hi,
                        std::size_t n) {
  const double h = (hi - lo) / static_cast<double>(n);
  double s = 0.5 * (f(lo, mean, variance) + f(hi, mean, variance));
  for (std::size_t i = 1; i < n; ++i) s += f(lo + h * static_cast<double>(i), mean, variance);
  return s * h;
}

/// Pair enumeration for AUROC.
inline double auroc_pairs(const ScoreSet& s) {
  double wins = 0.0;
  for (double p : s.positives) {
    for (double n : s.negatives) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / static_cast<double>(s.positives.size() * s.negatives.size());
}

/// H-measure by brute force: for each cost on a 10,001-point grid choose the best empirical
/// threshold, then integrate the Beta-weighted minimum loss with the trapezoid rule.
inline double h_measure_grid(const ScoreSet& s, double alpha = 2.0, double beta = 2.0) {
  Vector thresholds = s.positives;
  thresholds.insert(thresholds.end(), s.negatives.begin(), s.negatives.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());
  const double np = static_cast<double>(s.positives.size());
  const double nn = static_cast<double>(s.negatives.size());
  const double pi1 = np / (np + nn), pi0 = nn / (np + nn);
  std::vector<std::pair<double, double>> rates;  // (fpr, tpr)
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (double p : s.positives) tp += p >= t;
    for (double n : s.negatives) fp += n >= t;
    rates.emplace_back(fp / nn, tp / np);
  }
  const double norm = std::tgamma(alpha + beta) / (std::tgamma(alpha) * std::tgamma(beta));
  auto density = [&](double c) { return norm * std::pow(c, alpha - 1.0) * std::pow(1.0 - c, beta - 1.0); };
  const std::size_t grid = 10001;
  double loss = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < grid; ++i) {
    const double c = static_cast<double>(i) / static_cast<double>(grid - 1);
    const double w = (i == 0 || i + 1 == grid) ? 0.5 : 1.0;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [fpr, tpr] : rates) best = std::min(best, c * pi0 * fpr + (1.0 - c) * pi1 * (1.0 - tpr));
    loss += w * best * density(c);
    ref += w * std::min(c * pi0, (1.0 - c) * pi1) * density(c);
  }
  return 1.0 - loss / ref;
}

/// Leave-one-out NLL by literally rebuilding a fresh state for each held-out point.
inline double loo_nll_rebuild(const Encoder& enc, const SharedPrior& prior, const CrpParams& crp,
                              const NoiseModel& noise, NovelCountRule rule, const LabeledSet& support) {
  double total = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    // Remaining points, relabelled densely in order of first appearance.
    std::vector<Label> remap(support.size() + 2, 0);
    Label next = 1;
    LabeledSet rest;
    for (std::size_t j = 0; j < support.size(); ++j) {
      if (j == i) continue;
      Label& m = remap[support[j].label];
      if (m == 0) m = next++;
      rest.push_back({m, support[j].features});
    }
    ModelState st = init_small_context(prior, crp, noise, enc, rest, rule);
    const Label held = remap[support[i].label];
    const Label target = held == 0 ? static_cast<Label>(st.num_classes() + 1) : held;
    const PredictionRecord r = predict(st, support[i].features);
    total -= std::log(r.probs[target - 1]);
  }
  return total / static_cast<double>(support.size());
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace flowr::testing

#endif  // FLOWR_TESTS_SUPPORT_HPP
