#ifndef FLOWR_META_TRAIN_HPP
#define FLOWR_META_TRAIN_HPP

// Episodic meta-training of the encoder, the shared prior (q0, lambda0), the CRP
// concentration, and in the large-context setting the known-known class
// statistics. Loss per episode: L = L_NLL + lambda_w * L_adapt.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "flowr/autodiff.hpp"
#include "flowr/core.hpp"
#include "flowr/crp.hpp"
#include "flowr/dataset.hpp"
#include "flowr/encoder.hpp"
#include "flowr/episodes.hpp"
#include "flowr/gaussian.hpp"
#include "flowr/model.hpp"
#include "flowr/pretrain.hpp"

namespace flowr {

template <class T>
struct BasicMetaParams {
  BasicEncoder<T> encoder;
  BasicSharedPrior<T> prior;
  BasicCrpParams<T> crp;
  std::vector<BasicNaturalStats<T>> kk_stats;  // large context only
};

using MetaParams = BasicMetaParams<double>;

inline bool operator==(const MetaParams& a, const MetaParams& b) {
  return a.encoder == b.encoder && a.prior == b.prior && a.crp == b.crp && a.kk_stats == b.kk_stats;
}

/// Flat layout: encoder (affine only), q0, log lambda0, rho, then per known-known class q_n, log lambda_n.
inline Vector pack(const MetaParams& p) {
  Vector flat;
  pack(p.encoder, flat);
  flat.insert(flat.end(), p.prior.stats.q.begin(), p.prior.stats.q.end());
  flat.push_back(std::log(p.prior.stats.lambda));
  flat.push_back(p.crp.rho);
  for (const auto& s : p.kk_stats) {
    flat.insert(flat.end(), s.q.begin(), s.q.end());
    flat.push_back(std::log(s.lambda));
  }
  return flat;
}

template <class T>
BasicMetaParams<T> unpack(const MetaParams& shape, std::span<const T> flat) {
  using std::exp;
  if (flat.size() != pack(shape).size()) throw DimensionError("unpack: flat parameter length mismatch");
  BasicMetaParams<T> p;
  std::size_t off = 0;
  p.encoder = unpack_encoder(shape.encoder, flat, off);
  const std::size_t d = shape.prior.dim();
  p.prior.stats.q.assign(flat.begin() + off, flat.begin() + off + d);
  off += d;
  p.prior.stats.lambda = exp(flat[off++]);
  p.crp = BasicCrpParams<T>{shape.crp.a, flat[off++]};
  for (const auto& s : shape.kk_stats) {
    BasicNaturalStats<T> k;
    k.q.assign(flat.begin() + off, flat.begin() + off + s.dim());
    off += s.dim();
    k.lambda = exp(flat[off++]);
    p.kk_stats.push_back(std::move(k));
  }
  return p;
}

/// Prior mean ~ N(0, 0.01 I) (stored as q0 with lambda0 = 1), b near one.
/// Large context additionally factors the pre-trained class embeddings.
template <class Rng>
MetaParams init_meta_params(const Encoder& encoder, double a, Rng& rng,
                            const ClassEmbeddings* known_known = nullptr) {
  MetaParams p;
  p.encoder = encoder;
  std::normal_distribution<double> small(0.0, 0.1);
  p.prior.stats.q.resize(encoder.d_out);
  for (double& q : p.prior.stats.q) q = small(rng);
  p.prior.stats.lambda = 1.0;
  p.crp = CrpParams{a, softplus_inverse(1.0 + a) + small(rng)};
  if (known_known != nullptr) {
    validate(*known_known);
    require_same_dim(known_known->dim(), encoder.d_out, "init_meta_params");
    for (std::size_t n = 0; n < known_known->num_classes(); ++n) {
      p.kk_stats.push_back(factor_to_natural(IsotropicGaussian{known_known->means[n], known_known->variances[n]}));
    }
  }
  return p;
}

template <class T>
struct AdaptationLoss {
  T value{0.0};
  bool empty = true;  // no point besides the anchors: loss is zero
};

/// Instantiates each unknown-unknown class from the shared prior conditioned on its anchor
/// point, then scores every other pool point by Gaussian discriminant analysis with a
/// uniform prior over those classes. Mean NLL over non-anchor points.
template <class T>
AdaptationLoss<T> adaptation_loss(const BasicSharedPrior<T>& prior, const NoiseModel& noise,
                                  const BasicEncoder<T>& encoder, std::span<const LabeledPoint> pool,
                                  std::span<const std::size_t> anchors) {
  AdaptationLoss<T> out;
  const std::size_t m = anchors.size();
  if (m == 0) return out;
  std::vector<std::vector<T>> z;
  z.reserve(pool.size());
  for (const auto& p : pool) z.push_back(encode(encoder, p.features));
  std::vector<BasicIsotropicGaussian<T>> predictive;
  predictive.reserve(m);
  std::vector<bool> is_anchor(pool.size(), false);
  for (std::size_t c = 0; c < m; ++c) {
    if (pool[anchors[c]].label != c + 1) throw std::invalid_argument("adaptation_loss: anchor/class mismatch");
    is_anchor[anchors[c]] = true;
    predictive.push_back(posterior_predictive(condition(prior.stats, z[anchors[c]], noise), noise));
  }
  std::size_t n = 0;
  T total(0.0);
  std::vector<T> logits(m);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (is_anchor[i]) continue;
    for (std::size_t c = 0; c < m; ++c) logits[c] = log_density(predictive[c], z[i]);
    total = total - (logits[pool[i].label - 1] - log_sum_exp(logits));
    ++n;
  }
  if (n == 0) return out;
  out.value = total / static_cast<double>(n);
  out.empty = false;
  return out;
}

inline AdaptationLoss<double> adaptation_loss(const SharedPrior& prior, const NoiseModel& noise,
                                              const Encoder& encoder, const Episode& ep) {
  return adaptation_loss<double>(prior, noise, encoder, ep.adapt_pool, ep.adapt_anchors);
}

struct MetaLossOptions {
  Setting setting = Setting::small_context;
  double lambda_w = 0.1;
  NoiseModel noise;
  NovelCountRule count_rule = NovelCountRule::append_then_increment;
  /// Teacher-forced predict/update over the query stream instead of a frozen Phase-1 state.
  bool sequential = false;
  /// CRP count given to each known-known class while training; zero gives those classes no
  /// prior mass under a frozen state, so the NLL of their queries would be infinite.
  std::uint64_t lc_kk_count = 1;
};

template <class T>
struct MetaLossParts {
  T total{0.0};
  T nll{0.0};
  T adapt{0.0};
  bool adapt_empty = true;
};

/// Phase-1 state for an episode: support folded in (small context) or known-known statistics
/// installed (large context).
template <class T>
BasicModelState<T> initial_state(const BasicMetaParams<T>& params, const Episode& ep, const MetaLossOptions& opt) {
  BasicModelState<T> state;
  state.encoder = params.encoder;
  state.crp = params.crp;
  state.prior = params.prior;
  state.noise = opt.noise;
  state.count_rule = opt.count_rule;
  if (opt.setting == Setting::small_context) {
    for (const LabeledPoint& p : ep.support) update_embedded(state, encode(params.encoder, p.features), p.label);
  } else {
    if (params.kk_stats.size() != ep.num_known) {
      throw InvalidStateError("large-context episode expects " + std::to_string(ep.num_known) +
                              " known-known classes, parameters hold " + std::to_string(params.kk_stats.size()));
    }
    state.class_stats = params.kk_stats;
    state.n_kk = params.kk_stats.size();
    state.counts.counts.assign(state.n_kk, opt.lc_kk_count);
  }
  return state;
}

template <class T>
MetaLossParts<T> meta_loss(const BasicMetaParams<T>& params, const Episode& ep, const MetaLossOptions& opt) {
  if (ep.query.empty()) throw std::invalid_argument("meta_loss: episode has no queries");
  MetaLossParts<T> out;
  BasicModelState<T> state = initial_state(params, ep, opt);
  T nll(0.0);
  if (!opt.sequential) {
    const Scorer<T> scorer(state);
    for (const LabeledPoint& q : ep.query) {
      const auto lp = scorer.log_posterior(encode(params.encoder, q.features));
      nll = nll - lp[q.label - 1];
    }
  } else {
    const ProtocolStream stream = make_protocol_stream(ep);
    for (const LabeledPoint& q : stream.queries) {
      const std::vector<T> z = encode(params.encoder, q.features);
      const auto lp = Scorer<T>(state).log_posterior(z);
      nll = nll - lp[q.label - 1];
      update_embedded(state, z, q.label);
    }
  }
  out.nll = nll / static_cast<double>(ep.query.size());
  const AdaptationLoss<T> adapt =
      adaptation_loss<T>(params.prior, opt.noise, params.encoder, ep.adapt_pool, ep.adapt_anchors);
  out.adapt = adapt.value;
  out.adapt_empty = adapt.empty;
  out.total = out.nll + opt.lambda_w * out.adapt;
  return out;
}

inline MetaLossParts<double> meta_loss(const MetaParams& params, const Episode& ep, const MetaLossOptions& opt) {
  return meta_loss<double>(params, ep, opt);
}

/// Mean meta loss over a batch as a function of the flat parameter vector (double or ad::Var).
template <class T>
T batch_meta_loss(const MetaParams& shape, std::span<const T> flat, std::span<const Episode> batch,
                  const MetaLossOptions& opt) {
  const BasicMetaParams<T> p = unpack(shape, flat);
  T total(0.0);
  for (const Episode& ep : batch) total = total + meta_loss(p, ep, opt).total;
  return total / static_cast<double>(batch.size());
}

struct MetaStepResult {
  MetaParams params;
  double loss = 0.0;  // mean batch loss before the step
  double nll = 0.0;
  double adapt = 0.0;
};

/// One gradient step on the mean meta loss of `batch`.
inline MetaStepResult meta_step(const MetaParams& params, std::span<const Episode> batch, double step_size,
                                const MetaLossOptions& opt) {
  if (batch.empty()) throw std::invalid_argument("meta_step: empty batch");
  const Vector flat = pack(params);
  double nll = 0.0, adapt = 0.0;
  const ad::ValueAndGradient vg = ad::value_and_gradient(
      [&](std::span<const ad::Var> p) {
        const BasicMetaParams<ad::Var> mp = unpack(params, p);
        ad::Var total(0.0);
        for (const Episode& ep : batch) {
          const auto parts = meta_loss(mp, ep, opt);
          nll += parts.nll.value();
          adapt += parts.adapt.value();
          total = total + parts.total;
        }
        return total / static_cast<double>(batch.size());
      },
      flat);
  if (!std::isfinite(vg.value) || !all_finite(vg.gradient)) {
    throw DivergenceError("meta_step: non-finite loss or gradient (loss = " + std::to_string(vg.value) + ")");
  }
  MetaStepResult out;
  out.loss = vg.value;
  out.nll = nll / static_cast<double>(batch.size());
  out.adapt = adapt / static_cast<double>(batch.size());
  Vector next = flat;
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= step_size * vg.gradient[i];
  out.params = unpack(params, std::span<const double>(next));
  return out;
}

struct MetaTrainConfig {
  Setting setting = Setting::small_context;
  EpisodeConfig episode;
  std::size_t episodes = 1000;
  std::size_t batch_size = 1;
  double step_size = 1e-3;
  std::uint64_t seed = 0;
  MetaLossOptions loss;
};

struct MetaTrainRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double nll = 0.0;
  double adapt = 0.0;
};

struct MetaTrainResult {
  MetaParams params;
  std::vector<MetaTrainRecord> trace;
};

/// Samples `cfg.episodes` tasks in batches and applies meta_step to each batch.
inline MetaTrainResult meta_train(const EmbeddingDataset& ds, MetaParams params, const MetaTrainConfig& cfg,
                                  const std::function<void(const MetaTrainRecord&)>& progress = {}) {
  if (cfg.batch_size == 0) throw std::invalid_argument("meta_train: batch size must be positive");
  std::mt19937_64 rng(cfg.seed);
  MetaLossOptions opt = cfg.loss;
  opt.setting = cfg.setting;
  MetaTrainResult out;
  std::vector<Episode> batch;
  const std::size_t steps = cfg.episodes / cfg.batch_size;
  for (std::size_t step = 0; step < steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      batch.push_back(cfg.setting == Setting::small_context ? sample_sc_task(ds, cfg.episode, rng)
                                                            : sample_lc_task(ds, params.kk_stats.size(), cfg.episode, rng));
    }
    MetaStepResult r = meta_step(params, batch, cfg.step_size, opt);
    params = std::move(r.params);
    const MetaTrainRecord rec{step, r.loss, r.nll, r.adapt};
    out.trace.push_back(rec);
    if (progress) progress(rec);
  }
  out.params = std::move(params);
  return out;
}

// ---------------------------------------------------------------------------
// Gradient certification against central finite differences.

struct GradCheckOptions {
  double tolerance = 1e-4;
  double relative_step = 1e-4;      // h = relative_step * max(1, |p_i|)
  std::size_t max_coords = 200;     // larger problems check a random subset
  double denominator_floor = 1e-6;  // keeps components that are exactly zero from dividing by zero
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
  bool passed = true;
};

/// Compares `gradient(params)` to central differences of `value`. Relative error per
/// coordinate is |g - fd| / max(|g|, |fd|, floor).
template <class ValueFn, class GradFn>
GradCheckReport grad_check(ValueFn&& value_fn, GradFn&& gradient_fn, std::span<const double> params,
                           const GradCheckOptions& opt = {}) {
  const Vector g = gradient_fn(params);
  if (g.size() != params.size()) throw DimensionError("grad_check: gradient length mismatch");
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (coords.size() > opt.max_coords) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opt.max_coords);
    std::sort(coords.begin(), coords.end());
  }
  GradCheckReport rep;
  Vector x(params.begin(), params.end());
  for (std::size_t i : coords) {
    const double h = opt.relative_step * std::max(1.0, std::abs(params[i]));
    x[i] = params[i] + h;
    const double up = value_fn(std::span<const double>(x));
    x[i] = params[i] - h;
    const double down = value_fn(std::span<const double>(x));
    x[i] = params[i];
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(g[i]), std::abs(fd), opt.denominator_floor});
    const double err = std::abs(g[i] - fd) / denom;
    if (!(err <= rep.max_rel_error)) {
      rep.max_rel_error = err;
      rep.worst_coord = i;
    }
    ++rep.coords_checked;
  }
  rep.passed = rep.max_rel_error <= opt.tolerance;
  return rep;
}

/// grad_check for a loss written once as a generic callable over std::span<const T>.
template <class F>
GradCheckReport grad_check(F&& loss, std::span<const double> params, const GradCheckOptions& opt = {}) {
  return grad_check([&](std::span<const double> p) { return static_cast<double>(loss(p)); },
                    [&](std::span<const double> p) { return ad::value_and_gradient(loss, p).gradient; }, params,
                    opt);
}

}  // namespace flowr

#endif  // FLOWR_META_TRAIN_HPP
