#ifndef FLOWR_METRICS_HPP
#define FLOWR_METRICS_HPP

// Novelty-detection and classification metrics.
//
// Scores follow one convention everywhere: higher means more likely to be an
// unknown-unknown class. A query is flagged novel when score >= threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "flowr/core.hpp"

namespace flowr {

struct ScoreSet {
  Vector positives;  // true-novel queries
  Vector negatives;  // known-class queries
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // +inf for the (0, 0) endpoint
};

inline void require_two_classes(const ScoreSet& s, const char* what) {
  if (s.positives.empty() || s.negatives.empty()) {
    throw std::invalid_argument(std::string(what) + ": need at least one positive and one negative score");
  }
}

/// Empirical ROC over every distinct threshold, equal scores grouped into one step.
inline std::vector<RocPoint> roc_curve(const ScoreSet& s) {
  require_two_classes(s, "roc_curve");
  Vector pos = s.positives, neg = s.negatives;
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  Vector thresholds;
  thresholds.reserve(pos.size() + neg.size());
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(thresholds),
             std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());
  std::vector<RocPoint> out;
  out.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t ip = 0, in = 0;
  for (double t : thresholds) {
    while (ip < pos.size() && pos[ip] >= t) ++ip;
    while (in < neg.size() && neg[in] >= t) ++in;
    out.push_back({static_cast<double>(in) / nn, static_cast<double>(ip) / np, t});
  }
  return out;
}

/// Mann-Whitney statistic: P(pos > neg) + 0.5 P(pos == neg).
inline double auroc(const ScoreSet& s) {
  require_two_classes(s, "auroc");
  Vector neg = s.negatives;
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;
  for (double p : s.positives) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(lo, neg.end(), p);
    wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(s.positives.size()) * static_cast<double>(neg.size()));
}

namespace detail {

/// Upper-left concave hull of ROC points, from (0, 0) to (1, 1).
inline std::vector<RocPoint> roc_hull(std::vector<RocPoint> pts) {
  std::sort(pts.begin(), pts.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.fpr < b.fpr || (a.fpr == b.fpr && a.tpr < b.tpr);
  });
  std::vector<RocPoint> hull;
  for (const RocPoint& p : pts) {
    while (hull.size() >= 2) {
      const RocPoint& o = hull[hull.size() - 2];
      const RocPoint& a = hull.back();
      const double cross = (a.fpr - o.fpr) * (p.tpr - o.tpr) - (a.tpr - o.tpr) * (p.fpr - o.fpr);
      if (cross >= 0.0) {
        hull.pop_back();
      } else {
        break;
      }
    }
    hull.push_back(p);
  }
  return hull;
}

/// Integral over [lo, hi] of (intercept + slope * c) times the Beta(alpha, beta) density.
inline double beta_weighted_linear(double intercept, double slope, double lo, double hi,
                                   double alpha, double beta) {
  if (hi <= lo) return 0.0;
  using boost::math::ibeta;
  const double mass = ibeta(alpha, beta, hi) - ibeta(alpha, beta, lo);
  const double first_moment =
      alpha / (alpha + beta) * (ibeta(alpha + 1.0, beta, hi) - ibeta(alpha + 1.0, beta, lo));
  return intercept * mass + slope * first_moment;
}

}  // namespace detail

/// Hand's H-measure with cost c ~ Beta(alpha, beta).
///
/// Weighted loss at an ROC point is c*pi0*FPR + (1-c)*pi1*(1-TPR), with pi0/pi1 the
/// negative/positive proportions. Its minimum over thresholds lies on the ROC hull,
/// so the expected minimum loss is a sum of closed-form integrals between hull
/// breakpoints. H = 1 - L / L_ref, L_ref being the loss of the better trivial rule.
inline double h_measure(const ScoreSet& s, double alpha = 2.0, double beta = 2.0) {
  require_two_classes(s, "h_measure");
  const double np = static_cast<double>(s.positives.size());
  const double nn = static_cast<double>(s.negatives.size());
  const double pi1 = np / (np + nn);
  const double pi0 = nn / (np + nn);

  const std::vector<RocPoint> hull = detail::roc_hull(roc_curve(s));

  // breaks[i] separates hull[i] (optimal for higher c) from hull[i + 1].
  Vector breaks(hull.size() - 1);
  for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
    const double dt = pi1 * (hull[i + 1].tpr - hull[i].tpr);
    const double df = pi0 * (hull[i + 1].fpr - hull[i].fpr);
    breaks[i] = dt + df > 0.0 ? dt / (dt + df) : 1.0;
  }

  double loss = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const double hi = i == 0 ? 1.0 : breaks[i - 1];
    const double lo = i + 1 == hull.size() ? 0.0 : breaks[i];
    const double intercept = pi1 * (1.0 - hull[i].tpr);
    const double slope = pi0 * hull[i].fpr - intercept;
    loss += detail::beta_weighted_linear(intercept, slope, lo, hi, alpha, beta);
  }

  const double ref = detail::beta_weighted_linear(0.0, pi0, 0.0, pi1, alpha, beta) +
                     detail::beta_weighted_linear(pi1, -pi1, pi1, 1.0, alpha, beta);
  return 1.0 - loss / ref;
}

struct ThresholdResult {
  double threshold = 0.0;
  double achieved_tpr = 0.0;
};

/// Largest threshold whose positive hit rate (score >= threshold) reaches `target_tpr`.
inline ThresholdResult threshold_at_tpr(const Vector& positives, double target_tpr) {
  if (positives.empty()) throw std::invalid_argument("threshold_at_tpr: no positive scores");
  if (!(target_tpr > 0.0 && target_tpr <= 1.0)) {
    throw std::invalid_argument("threshold_at_tpr: target must lie in (0, 1]");
  }
  Vector pos = positives;
  std::sort(pos.begin(), pos.end(), std::greater<>());
  const double n = static_cast<double>(pos.size());
  auto need = static_cast<std::size_t>(std::ceil(target_tpr * n - 1e-9));
  need = std::clamp<std::size_t>(need, 1, pos.size());
  const double tau = pos[need - 1];
  const auto hits = static_cast<double>(
      std::count_if(pos.begin(), pos.end(), [tau](double p) { return p >= tau; }));
  return {tau, hits / n};
}

inline ThresholdResult threshold_at_tpr(const ScoreSet& s, double target_tpr) {
  return threshold_at_tpr(s.positives, target_tpr);
}

/// One scored query, method-agnostic.
struct ScoredQuery {
  std::uint32_t episode = 0;
  double novelty_score = 0.0;
  Label known_argmax = 0;  // 0 when no class is known yet
  Label true_label = 0;    // label under the dense protocol at prediction time
  bool true_novel = false;  // first encounter of an unknown-unknown class
  bool support_class = false;  // class known before the query phase
  bool incremental = false;    // class first seen during the query phase (including first encounter)

  friend bool operator==(const ScoredQuery&, const ScoredQuery&) = default;
};

using EpisodeRecords = std::vector<ScoredQuery>;

inline ScoreSet novelty_scores(const EpisodeRecords& records) {
  ScoreSet s;
  for (const ScoredQuery& r : records) {
    (r.true_novel ? s.positives : s.negatives).push_back(r.novelty_score);
  }
  return s;
}

struct AccuracySuite {
  std::optional<double> accuracy;
  std::optional<double> support_accuracy;
  /// Later points of classes that first appeared during the query phase.
  std::optional<double> incremental_accuracy;
  /// Same population plus each class's first (pre-label) encounter.
  std::optional<double> incremental_accuracy_with_first;
  std::optional<double> novel_detection_accuracy;
  std::optional<double> h_measure;
  std::optional<double> auroc;
  std::size_t n_queries = 0;
  std::size_t n_support = 0;
  std::size_t n_incremental = 0;
  std::size_t n_novel = 0;
};

/// Whether the thresholded decision on `r` is correct.
inline bool decision_correct(const ScoredQuery& r, double tau) {
  const bool flagged = r.novelty_score >= tau;
  if (r.true_novel) return flagged;
  return !flagged && r.known_argmax == r.true_label;
}

inline AccuracySuite accuracy_suite(const EpisodeRecords& records, double tau,
                                    double alpha = 2.0, double beta = 2.0) {
  AccuracySuite out;
  std::size_t all = 0, sup = 0, inc = 0, inc_first = 0, nov = 0;
  std::size_t n_inc_first = 0;
  for (const ScoredQuery& r : records) {
    const bool ok = decision_correct(r, tau);
    ++out.n_queries;
    all += ok;
    if (r.true_novel) {
      ++out.n_novel;
      nov += ok;
    }
    if (r.support_class) {
      ++out.n_support;
      sup += ok;
    }
    if (r.incremental) {
      ++n_inc_first;
      inc_first += ok;
      if (!r.true_novel) {
        ++out.n_incremental;
        inc += ok;
      }
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) -> std::optional<double> {
    if (b == 0) return std::nullopt;
    return static_cast<double>(a) / static_cast<double>(b);
  };
  out.accuracy = ratio(all, out.n_queries);
  out.support_accuracy = ratio(sup, out.n_support);
  out.incremental_accuracy = ratio(inc, out.n_incremental);
  out.incremental_accuracy_with_first = ratio(inc_first, n_inc_first);
  out.novel_detection_accuracy = ratio(nov, out.n_novel);
  const ScoreSet scores = novelty_scores(records);
  if (!scores.positives.empty() && !scores.negatives.empty()) {
    out.h_measure = h_measure(scores, alpha, beta);
    out.auroc = auroc(scores);
  }
  return out;
}

struct RankingFlip {
  bool found = false;
  std::size_t trials_used = 0;
  ScoreSet first;
  ScoreSet second;
  double auroc_first = 0.0, auroc_second = 0.0;
  double h_first = 0.0, h_second = 0.0;
};

/// Searches binormal score models whose ROC curves cross for a pair that AUROC and
/// the H-measure rank in opposite order.
inline RankingFlip ranking_flip_search(std::uint64_t seed, std::size_t trials,
                                       std::size_t n_positive = 60, std::size_t n_negative = 300) {
  if (trials == 0) throw std::invalid_argument("ranking_flip_search: trials must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> shift(0.0, 2.5);
  std::uniform_real_distribution<double> log_spread(std::log(0.25), std::log(4.0));
  std::normal_distribution<double> unit(0.0, 1.0);

  auto draw = [&](double mu, double sigma) {
    ScoreSet s;
    s.positives.resize(n_positive);
    s.negatives.resize(n_negative);
    for (double& x : s.positives) x = mu + sigma * unit(rng);
    for (double& x : s.negatives) x = unit(rng);
    return s;
  };

  RankingFlip out;
  for (std::size_t t = 0; t < trials; ++t) {
    out.trials_used = t + 1;
    const double mu_a = shift(rng), sigma_a = std::exp(log_spread(rng));
    const double mu_b = shift(rng), sigma_b = std::exp(log_spread(rng));
    ScoreSet a = draw(mu_a, sigma_a);
    ScoreSet b = draw(mu_b, sigma_b);
    const double au_a = auroc(a), au_b = auroc(b);
    const double h_a = h_measure(a), h_b = h_measure(b);
    const double d_au = au_a - au_b, d_h = h_a - h_b;
    if (d_au != 0.0 && d_h != 0.0 && (d_au > 0.0) != (d_h > 0.0)) {
      out.found = true;
      out.first = std::move(a);
      out.second = std::move(b);
      out.auroc_first = au_a;
      out.auroc_second = au_b;
      out.h_first = h_a;
      out.h_second = h_b;
      break;
    }
  }
  return out;
}

}  // namespace flowr

#endif  // FLOWR_METRICS_HPP
