#ifndef FLOWR_PRETRAIN_HPP
#define FLOWR_PRETRAIN_HPP

// Supervised-embedding pre-training: jointly learns an affine encoder and one
// isotropic Gaussian per training class, classifying by Gaussian discriminant
// analysis with a uniform class prior. Loss per mini-batch:
//   mean NLL + beta * sum_n tr(Sigma_n^-1) = mean NLL + beta * sum_n d / sigma_n^2
// Variances are optimised through their logarithm.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "flowr/autodiff.hpp"
#include "flowr/core.hpp"
#include "flowr/encoder.hpp"
#include "flowr/gaussian.hpp"

namespace flowr {

template <class T>
struct BasicClassEmbeddings {
  std::vector<std::vector<T>> means;
  std::vector<T> variances;

  std::size_t num_classes() const { return means.size(); }
  std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }
};

using ClassEmbeddings = BasicClassEmbeddings<double>;

inline bool operator==(const ClassEmbeddings& a, const ClassEmbeddings& b) {
  return a.means == b.means && a.variances == b.variances;
}

inline void validate(const ClassEmbeddings& emb) {
  if (emb.means.size() != emb.variances.size()) {
    throw std::invalid_argument("ClassEmbeddings: means and variances differ in length");
  }
  for (std::size_t n = 0; n < emb.means.size(); ++n) {
    require_same_dim(emb.dim(), emb.means[n].size(), "ClassEmbeddings");
    if (!(emb.variances[n] > 0.0) || !std::isfinite(emb.variances[n]) || !all_finite(emb.means[n])) {
      throw std::invalid_argument("ClassEmbeddings: class " + std::to_string(n + 1) +
                                  " has an invalid mean or variance");
    }
  }
}

template <class T, class Z>
std::vector<std::common_type_t<T, Z>> gda_log_probs(const BasicClassEmbeddings<T>& emb,
                                                    const std::vector<Z>& z) {
  using R = std::common_type_t<T, Z>;
  std::vector<R> logits;
  logits.reserve(emb.num_classes());
  for (std::size_t n = 0; n < emb.num_classes(); ++n) {
    logits.push_back(log_density(BasicIsotropicGaussian<T>{emb.means[n], emb.variances[n]}, z));
  }
  const R lse = log_sum_exp(logits);
  for (R& l : logits) l = l - lse;
  return logits;
}

/// Class posterior under Gaussian discriminant analysis with a uniform class prior.
inline Vector gda_predict(const ClassEmbeddings& emb, const Vector& z) {
  return normalize_log_probs(gda_log_probs(emb, z));
}

template <class T>
T pretrain_objective(const BasicEncoder<T>& encoder, const BasicClassEmbeddings<T>& emb,
                     std::span<const LabeledPoint> batch, double beta) {
  if (batch.empty()) throw std::invalid_argument("pretrain_loss: empty batch");
  T nll(0.0);
  for (const LabeledPoint& p : batch) {
    if (p.label == 0 || p.label > emb.num_classes()) {
      throw std::invalid_argument("pretrain_loss: label " + std::to_string(p.label) + " out of range");
    }
    const std::vector<T> z = encode(encoder, p.features);
    nll = nll - gda_log_probs(emb, z)[p.label - 1];
  }
  T loss = nll / static_cast<double>(batch.size());
  const double d = static_cast<double>(emb.dim());
  for (const T& v : emb.variances) loss = loss + beta * d / v;
  return loss;
}

inline double pretrain_loss(const Encoder& encoder, const ClassEmbeddings& emb,
                            std::span<const LabeledPoint> batch, double beta) {
  return pretrain_objective(encoder, emb, batch, beta);
}

/// Flat parameter vector: encoder (if affine), means, log-variances.
inline Vector pack_pretrain_params(const Encoder& encoder, const ClassEmbeddings& emb) {
  Vector flat;
  pack(encoder, flat);
  for (const Vector& m : emb.means) flat.insert(flat.end(), m.begin(), m.end());
  for (double v : emb.variances) flat.push_back(std::log(v));
  return flat;
}

template <class T>
std::pair<BasicEncoder<T>, BasicClassEmbeddings<T>> unpack_pretrain_params(
    const Encoder& encoder_shape, std::size_t num_classes, std::size_t dim, std::span<const T> flat) {
  using std::exp;
  std::size_t offset = 0;
  BasicEncoder<T> enc = unpack_encoder(encoder_shape, flat, offset);
  BasicClassEmbeddings<T> emb;
  for (std::size_t n = 0; n < num_classes; ++n) {
    emb.means.emplace_back(flat.begin() + offset, flat.begin() + offset + dim);
    offset += dim;
  }
  for (std::size_t n = 0; n < num_classes; ++n) emb.variances.push_back(exp(flat[offset++]));
  return {std::move(enc), std::move(emb)};
}

/// Loss and its gradient with respect to `pack_pretrain_params` coordinates.
inline ad::ValueAndGradient pretrain_loss_gradient(const Encoder& encoder, const ClassEmbeddings& emb,
                                                   std::span<const LabeledPoint> batch, double beta) {
  const Vector flat = pack_pretrain_params(encoder, emb);
  return ad::value_and_gradient(
      [&](std::span<const ad::Var> p) {
        auto [e, m] = unpack_pretrain_params(encoder, emb.num_classes(), emb.dim(), p);
        return pretrain_objective(e, m, batch, beta);
      },
      flat);
}

enum class EncoderInit : std::uint8_t { random, identity };

struct PretrainConfig {
  std::size_t embed_dim = 64;
  double beta = 0.1;
  double step_size = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  EncoderInit encoder_init = EncoderInit::random;
};

struct PretrainResult {
  Encoder encoder;
  ClassEmbeddings embeddings;
  Vector loss_trace;  // one entry per mini-batch, before the step
};

/// Mini-batch SGD on pretrain_loss. Labels must be dense 1..N.
inline PretrainResult pretrain(std::span<const LabeledPoint> dataset, const PretrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("pretrain: empty dataset");
  if (cfg.batch_size == 0) throw std::invalid_argument("pretrain: batch size must be positive");
  Label n_classes = 0;
  for (const LabeledPoint& p : dataset) n_classes = std::max(n_classes, p.label);
  std::vector<bool> seen(n_classes, false);
  for (const LabeledPoint& p : dataset) {
    if (p.label == 0) throw std::invalid_argument("pretrain: label 0 is reserved");
    seen[p.label - 1] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw std::invalid_argument("pretrain: labels are not dense 1..N");
  }
  const std::size_t d_in = dataset.front().features.size();

  std::mt19937_64 rng(cfg.seed);
  Encoder encoder = cfg.encoder_init == EncoderInit::identity
                        ? make_identity_affine_encoder(d_in, cfg.embed_dim)
                        : make_random_affine_encoder(d_in, cfg.embed_dim, rng);
  ClassEmbeddings emb;
  std::normal_distribution<double> unit(0.0, 1.0);
  for (Label n = 0; n < n_classes; ++n) {
    Vector m(cfg.embed_dim);
    for (double& x : m) x = unit(rng);
    emb.means.push_back(std::move(m));
    emb.variances.push_back(1.0);
  }

  PretrainResult out;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  LabeledSet batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
      const ad::ValueAndGradient vg = pretrain_loss_gradient(encoder, emb, batch, cfg.beta);
      if (!std::isfinite(vg.value) || !all_finite(vg.gradient)) {
        throw DivergenceError("pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch starting " + std::to_string(start));
      }
      out.loss_trace.push_back(vg.value);
      Vector flat = pack_pretrain_params(encoder, emb);
      for (std::size_t i = 0; i < flat.size(); ++i) flat[i] -= cfg.step_size * vg.gradient[i];
      auto [e, m] = unpack_pretrain_params(encoder, emb.num_classes(), emb.dim(), std::span<const double>(flat));
      encoder = std::move(e);
      emb = std::move(m);
    }
  }
  out.encoder = std::move(encoder);
  out.embeddings = std::move(emb);
  return out;
}

}  // namespace flowr

#endif  // FLOWR_PRETRAIN_HPP
