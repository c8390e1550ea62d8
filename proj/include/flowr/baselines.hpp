#ifndef FLOWR_BASELINES_HPP
#define FLOWR_BASELINES_HPP

// Thresholded nearest-class-mean and prototypical-network baselines. Both keep
// running class means updated after every label, and both report the distance
// to the nearest prototype as the novelty score.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "flowr/core.hpp"

namespace flowr {

struct PrototypeState {
  std::vector<Vector> sums;
  std::vector<double> counts;  // real-valued so externally supplied means can carry any weight
  double threshold = std::numeric_limits<double>::infinity();

  std::size_t num_classes() const { return sums.size(); }

  Vector mean(std::size_t n) const {
    Vector m = sums[n];
    for (double& x : m) x /= counts[n];
    return m;
  }
};

/// Running-mean update; y = N+1 appends a class whose mean is z.
inline PrototypeState prototype_update(PrototypeState state, const Vector& z, Label y) {
  const std::size_t n = state.num_classes();
  if (y == 0 || y > n + 1) {
    throw ProtocolError("prototype_update: label " + std::to_string(y) + " with N = " + std::to_string(n));
  }
  if (y == n + 1) {
    state.sums.push_back(z);
    state.counts.push_back(1.0);
    return state;
  }
  Vector& s = state.sums[y - 1];
  require_same_dim(s.size(), z.size(), "prototype_update");
  for (std::size_t i = 0; i < z.size(); ++i) s[i] += z[i];
  state.counts[y - 1] += 1.0;
  return state;
}

struct ProtoNetPrediction {
  Vector probs;  // length N
  double novelty_score = std::numeric_limits<double>::infinity();
};

/// Softmax over negative squared distances; novelty score is the distance to the nearest prototype.
inline ProtoNetPrediction protonet_predict(const PrototypeState& state, const Vector& z) {
  ProtoNetPrediction out;
  if (state.num_classes() == 0) return out;
  Vector logits(state.num_classes());
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < state.num_classes(); ++n) {
    const double d2 = squared_distance(state.mean(n), z);
    logits[n] = -d2;
    best = std::min(best, d2);
  }
  out.probs = normalize_log_probs(logits);
  out.novelty_score = std::sqrt(best);
  return out;
}

struct NcmPrediction {
  Label nearest = 0;  // 0 when no class exists
  double novelty_score = std::numeric_limits<double>::infinity();
};

inline NcmPrediction ncm_predict(const PrototypeState& state, const Vector& z) {
  NcmPrediction out;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < state.num_classes(); ++n) {
    const double d2 = squared_distance(state.mean(n), z);
    if (d2 < best) {
      best = d2;
      out.nearest = static_cast<Label>(n + 1);
    }
  }
  if (out.nearest != 0) out.novelty_score = std::sqrt(best);
  return out;
}

}  // namespace flowr

#endif  // FLOWR_BASELINES_HPP
