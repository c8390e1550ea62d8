#ifndef FLOWR_MODEL_HPP
#define FLOWR_MODEL_HPP

// The open-world agent: per-class Gaussian beliefs, a shared prior that seeds
// every new class and scores novelty, and a CRP class prior with a novel slot.
//
// Labels follow the dense protocol: with N known classes the next label is in
// 1..N+1, and N+1 means "new class". Classes 1..n_kk are known-known (large
// context) and their statistics are never updated online.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flowr/autodiff.hpp"
#include "flowr/core.hpp"
#include "flowr/crp.hpp"
#include "flowr/encoder.hpp"
#include "flowr/gaussian.hpp"
#include "flowr/pretrain.hpp"

namespace flowr {

/// How a brand-new class enters the CRP counts.
enum class NovelCountRule : std::uint8_t {
  /// Append a count of one, then increment it with the observation (count 2).
  append_then_increment = 0,
  /// Append a count of one and stop (standard CRP bookkeeping).
  append_only = 1,
};

template <class T>
struct BasicModelState {
  BasicEncoder<T> encoder;
  std::vector<BasicNaturalStats<T>> class_stats;
  ClassCounts counts;
  BasicCrpParams<T> crp;
  BasicSharedPrior<T> prior;
  NoiseModel noise;
  std::size_t n_kk = 0;
  NovelCountRule count_rule = NovelCountRule::append_then_increment;

  std::size_t num_classes() const { return class_stats.size(); }
};

using ModelState = BasicModelState<double>;

inline bool operator==(const ModelState& a, const ModelState& b) {
  return a.encoder == b.encoder && a.class_stats == b.class_stats && a.counts == b.counts &&
         a.crp == b.crp && a.prior == b.prior && a.noise.noise_variance == b.noise.noise_variance &&
         a.n_kk == b.n_kk && a.count_rule == b.count_rule;
}

struct PredictionRecord {
  Vector probs;             // length N+1, last entry is the novel slot
  Label predicted = 0;      // argmax over all N+1 entries (N+1 = novel)
  Label known_argmax = 0;   // argmax over known classes, 0 when N = 0
  double novelty_score = 0.0;
  Label true_label = 0;     // filled by run_episode
  bool true_novel = false;
  std::size_t n_at_prediction = 0;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// Predictive densities and class prior of a fixed state, ready to score many embeddings.
template <class T>
class Scorer {
 public:
  explicit Scorer(const BasicModelState<T>& state)
      : novel_(posterior_predictive(state.prior.stats, state.noise)),
        log_prior_(predictive_class_log_probs(state.counts, state.crp)) {
    if (state.counts.num_classes() != state.num_classes()) {
      throw InvalidStateError("ModelState: counts and class statistics differ in length");
    }
    classes_.reserve(state.num_classes());
    for (const auto& s : state.class_stats) classes_.push_back(posterior_predictive(s, state.noise));
  }

  /// Normalised log posterior over N known classes plus the novel slot.
  template <class Z>
  std::vector<std::common_type_t<T, Z>> log_posterior(const std::vector<Z>& z) const {
    using R = std::common_type_t<T, Z>;
    std::vector<R> joint;
    joint.reserve(classes_.size() + 1);
    for (std::size_t n = 0; n <= classes_.size(); ++n) {
      if (value(log_prior_[n]) == kNegInf) {
        joint.push_back(R(kNegInf));
        continue;
      }
      const auto& g = n < classes_.size() ? classes_[n] : novel_;
      joint.push_back(log_density(g, z) + log_prior_[n]);
    }
    const R lse = log_sum_exp(joint);
    for (R& j : joint) {
      if (value(j) != kNegInf) j = j - lse;
    }
    return joint;
  }

 private:
  std::vector<BasicIsotropicGaussian<T>> classes_;
  BasicIsotropicGaussian<T> novel_;
  std::vector<T> log_prior_;
};

/// Applies the update rule on an already-encoded point, in place.
template <class T, class Z>
void update_embedded(BasicModelState<T>& state, const std::vector<Z>& z, Label y) {
  const std::size_t n = state.num_classes();
  if (y == 0 || y > n + 1) {
    throw ProtocolError("update: label " + std::to_string(y) + " with N = " + std::to_string(n) +
                        " (labels must be dense, at most N+1)");
  }
  if (y == n + 1) {
    state.counts = instantiate(std::move(state.counts));
    state.class_stats.push_back(state.prior.stats);
    if (state.count_rule == NovelCountRule::append_then_increment) {
      state.counts = observe(std::move(state.counts), y);
    }
  } else {
    state.counts = observe(std::move(state.counts), y);
  }
  if (y > state.n_kk) {
    state.class_stats[y - 1] = condition(std::move(state.class_stats[y - 1]), z, state.noise);
  }
}

inline PredictionRecord make_record(const Vector& probs) {
  PredictionRecord r;
  r.probs = probs;
  const std::size_t n = probs.size() - 1;
  r.n_at_prediction = n;
  r.novelty_score = probs.back();
  r.predicted = static_cast<Label>(std::max_element(probs.begin(), probs.end()) - probs.begin() + 1);
  if (n > 0) {
    r.known_argmax = static_cast<Label>(std::max_element(probs.begin(), probs.end() - 1) - probs.begin() + 1);
  }
  return r;
}

inline PredictionRecord predict_embedded(const ModelState& state, const Vector& z) {
  return make_record(normalize_log_probs(Scorer<double>(state).log_posterior(z)));
}

inline PredictionRecord predict(const ModelState& state, std::span<const double> x) {
  return predict_embedded(state, encode(state.encoder, x));
}

inline ModelState update(ModelState state, std::span<const double> x, Label y) {
  update_embedded(state, encode(state.encoder, x), y);
  return state;
}

inline ModelState init_small_context(const SharedPrior& prior, const CrpParams& crp, const NoiseModel& noise,
                                     const Encoder& encoder, std::span<const LabeledPoint> support,
                                     NovelCountRule rule = NovelCountRule::append_then_increment) {
  ModelState state;
  state.encoder = encoder;
  state.crp = crp;
  state.prior = prior;
  state.noise = noise;
  state.n_kk = 0;
  state.count_rule = rule;
  for (std::size_t i = 0; i < support.size(); ++i) {
    try {
      update_embedded(state, encode(encoder, support[i].features), support[i].label);
    } catch (const ProtocolError& e) {
      throw ProtocolError("support point " + std::to_string(i) + ": " + e.what());
    }
  }
  return state;
}

/// Known-known classes from learned statistics; their CRP counts start at `kk_count` (zero by default).
inline ModelState init_large_context(std::vector<NaturalClassStats> kk_stats, const SharedPrior& prior,
                                     const CrpParams& crp, const NoiseModel& noise, const Encoder& encoder,
                                     std::uint64_t kk_count = 0,
                                     NovelCountRule rule = NovelCountRule::append_then_increment) {
  ModelState state;
  state.encoder = encoder;
  state.crp = crp;
  state.prior = prior;
  state.noise = noise;
  state.count_rule = rule;
  state.n_kk = kk_stats.size();
  state.counts.counts.assign(kk_stats.size(), kk_count);
  state.class_stats = std::move(kk_stats);
  return state;
}

inline ModelState init_large_context(const ClassEmbeddings& pretrained, const SharedPrior& prior,
                                     const CrpParams& crp, const NoiseModel& noise, const Encoder& encoder,
                                     std::uint64_t kk_count = 0,
                                     NovelCountRule rule = NovelCountRule::append_then_increment) {
  validate(pretrained);
  std::vector<NaturalClassStats> stats;
  stats.reserve(pretrained.num_classes());
  for (std::size_t n = 0; n < pretrained.num_classes(); ++n) {
    stats.push_back(factor_to_natural(IsotropicGaussian{pretrained.means[n], pretrained.variances[n]}));
  }
  return init_large_context(std::move(stats), prior, crp, noise, encoder, kk_count, rule);
}

/// Predict-then-update over a labelled query stream. `state` ends in the post-stream state.
inline std::vector<PredictionRecord> run_episode(ModelState& state, std::span<const LabeledPoint> queries) {
  std::vector<PredictionRecord> records;
  records.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const Vector z = encode(state.encoder, queries[i].features);
    PredictionRecord r = predict_embedded(state, z);
    r.true_label = queries[i].label;
    r.true_novel = queries[i].label == state.num_classes() + 1;
    try {
      update_embedded(state, z, queries[i].label);
    } catch (const ProtocolError& e) {
      throw ProtocolError("query " + std::to_string(i) + ": " + e.what());
    }
    records.push_back(std::move(r));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Test-time fine-tuning of the affine output layer.

/// Leave-one-out support NLL: each support point is scored against the state built
/// from every other support point. A point whose class has no other member is
/// scored against the novel slot. Only the encoder carries scalar type T.
template <class T>
T loo_support_nll(const BasicEncoder<T>& encoder, const SharedPrior& prior, const CrpParams& crp,
                  const NoiseModel& noise, NovelCountRule rule, std::span<const LabeledPoint> support) {
  if (support.empty()) return T(0.0);
  std::vector<std::vector<T>> z;
  z.reserve(support.size());
  Label n_classes = 0;
  for (const LabeledPoint& p : support) {
    if (p.label == 0) throw ProtocolError("loo_support_nll: label 0 in support set");
    z.push_back(encode(encoder, p.features));
    n_classes = std::max(n_classes, p.label);
  }
  const std::size_t dim = z.front().size();
  std::vector<std::vector<T>> sums(n_classes, std::vector<T>(dim, T(0.0)));
  std::vector<std::uint64_t> members(n_classes, 0);
  for (std::size_t i = 0; i < support.size(); ++i) {
    auto& s = sums[support[i].label - 1];
    for (std::size_t j = 0; j < dim; ++j) s[j] = s[j] + z[i][j];
    ++members[support[i].label - 1];
  }
  const std::uint64_t extra = rule == NovelCountRule::append_then_increment ? 1 : 0;
  const double prec = noise.precision();

  BasicModelState<T> base;
  base.crp = BasicCrpParams<T>{crp.a, T(crp.rho)};
  base.prior.stats.q.assign(prior.stats.q.begin(), prior.stats.q.end());
  base.prior.stats.lambda = T(prior.stats.lambda);
  base.noise = noise;
  base.count_rule = rule;

  auto stats_from = [&](const std::vector<T>& sum, std::uint64_t k) {
    BasicNaturalStats<T> s = base.prior.stats;
    for (std::size_t j = 0; j < dim; ++j) s.q[j] = s.q[j] + sum[j] * prec;
    s.lambda = s.lambda + static_cast<double>(k) * prec;
    return s;
  };

  T total(0.0);
  for (std::size_t i = 0; i < support.size(); ++i) {
    const Label own = support[i].label;
    BasicModelState<T> st = base;
    std::size_t target = 0;
    for (Label c = 1; c <= n_classes; ++c) {
      std::uint64_t k = members[c - 1];
      std::vector<T> sum = sums[c - 1];
      if (c == own) {
        --k;
        for (std::size_t j = 0; j < dim; ++j) sum[j] = sum[j] - z[i][j];
      }
      if (k == 0) continue;
      if (c == own) target = st.class_stats.size();
      st.class_stats.push_back(stats_from(sum, k));
      st.counts.counts.push_back(k + extra);
    }
    if (members[own - 1] == 1) target = st.class_stats.size();
    const auto lp = Scorer<T>(st).log_posterior(z[i]);
    total = total - lp[target];
  }
  return total / static_cast<double>(support.size());
}

struct FineTuneOptions {
  std::size_t steps = 0;
  double step_size = 1e-2;
  bool backtracking = true;
  std::size_t max_halvings = 20;
};

struct FineTuneResult {
  ModelState state;
  Vector loss_trace;  // loss before the first step, then after each step
};

/// Gradient descent on the affine output layer against the leave-one-out support NLL.
/// An identity encoder is first replaced by an identity-initialised affine layer.
/// Class statistics are rebuilt from `support` after every step.
inline FineTuneResult fine_tune_output_layer(const ModelState& state, std::span<const LabeledPoint> support,
                                             const FineTuneOptions& opt) {
  FineTuneResult out{state, {}};
  if (opt.steps == 0) return out;
  Encoder enc = state.encoder.kind == EncoderKind::affine
                    ? state.encoder
                    : make_identity_affine_encoder(state.encoder.d_in, state.encoder.d_out);

  auto loss_at = [&](const Vector& flat) {
    std::size_t off = 0;
    const Encoder e = unpack_encoder(enc, std::span<const double>(flat), off);
    return loo_support_nll(e, state.prior, state.crp, state.noise, state.count_rule, support);
  };

  Vector flat;
  pack(enc, flat);
  double current = loss_at(flat);
  out.loss_trace.push_back(current);
  for (std::size_t step = 0; step < opt.steps; ++step) {
    const ad::ValueAndGradient vg = ad::value_and_gradient(
        [&](std::span<const ad::Var> p) {
          std::size_t off = 0;
          const auto e = unpack_encoder(enc, p, off);
          return loo_support_nll(e, state.prior, state.crp, state.noise, state.count_rule, support);
        },
        flat);
    if (!all_finite(vg.gradient)) throw DivergenceError("fine-tune: non-finite gradient");
    double eta = opt.step_size;
    Vector candidate(flat.size());
    double next = current;
    bool accepted = false;
    for (std::size_t h = 0; h <= (opt.backtracking ? opt.max_halvings : 0); ++h, eta *= 0.5) {
      for (std::size_t i = 0; i < flat.size(); ++i) candidate[i] = flat[i] - eta * vg.gradient[i];
      next = loss_at(candidate);
      if (!opt.backtracking || next <= current) {
        accepted = std::isfinite(next);
        break;
      }
    }
    if (accepted) {
      flat = candidate;
      current = next;
    }
    out.loss_trace.push_back(current);
  }
  std::size_t off = 0;
  const Encoder tuned = unpack_encoder(enc, std::span<const double>(flat), off);
  out.state = init_small_context(state.prior, state.crp, state.noise, tuned, support, state.count_rule);
  return out;
}

}  // namespace flowr

#endif  // FLOWR_MODEL_HPP
