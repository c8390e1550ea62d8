#ifndef FLOWR_VERIFICATION_HPP
#define FLOWR_VERIFICATION_HPP

// Gradient certification suite: analytic gradients of every trained loss against
// central finite differences on random small configurations.

#include <random>
#include <string>
#include <vector>

#include "flowr/dataset.hpp"
#include "flowr/episodes.hpp"
#include "flowr/meta_train.hpp"
#include "flowr/model.hpp"
#include "flowr/pretrain.hpp"

namespace flowr {

struct GradSuiteEntry {
  std::string name;
  std::size_t configs = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

namespace detail {

inline void record(GradSuiteEntry& e, const GradCheckReport& r, double tolerance) {
  ++e.configs;
  e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
  e.passed = e.passed && r.max_rel_error <= tolerance;
}

inline Vector gaussian_vector(std::mt19937_64& rng, std::size_t d, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  Vector v(d);
  for (double& x : v) x = n(rng);
  return v;
}

}  // namespace detail

inline GradSuiteEntry verify_pretrain_gradients(std::uint64_t seed, std::size_t configs, double tolerance = 1e-4) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 4), classes(2, 4);
  std::uniform_real_distribution<double> var(0.3, 2.0);
  GradSuiteEntry e{"pretrain_loss"};
  for (std::size_t t = 0; t < configs; ++t) {
    const std::size_t d_in = dim(rng), d = dim(rng), n = classes(rng);
    const Encoder enc = make_random_affine_encoder(d_in, d, rng);
    ClassEmbeddings emb;
    for (std::size_t i = 0; i < n; ++i) {
      emb.means.push_back(detail::gaussian_vector(rng, d, 1.0));
      emb.variances.push_back(var(rng));
    }
    LabeledSet batch;
    std::uniform_int_distribution<Label> label(1, static_cast<Label>(n));
    for (int i = 0; i < 12; ++i) batch.push_back({label(rng), detail::gaussian_vector(rng, d_in, 2.0)});
    const Vector flat = pack_pretrain_params(enc, emb);
    GradCheckOptions opt;
    opt.tolerance = tolerance;
    const auto r = grad_check(
        [&](std::span<const double> p) {
          auto [en, m] = unpack_pretrain_params(enc, n, d, p);
          return pretrain_loss(en, m, batch, 0.1);
        },
        [&](std::span<const double> p) {
          auto [en, m] = unpack_pretrain_params(enc, n, d, p);
          return pretrain_loss_gradient(en, m, batch, 0.1).gradient;
        },
        flat, opt);
    detail::record(e, r, tolerance);
  }
  return e;
}

/// Alternates the frozen and sequential variants of the meta loss across configurations.
inline GradSuiteEntry verify_meta_gradients(Setting setting, std::uint64_t seed, std::size_t configs,
                                            double tolerance = 1e-4) {
  std::mt19937_64 rng(seed);
  const bool lc = setting == Setting::large_context;
  GradSuiteEntry e{lc ? "meta_loss_lc" : "meta_loss_sc"};
  for (std::size_t t = 0; t < configs; ++t) {
    SyntheticWorldConfig w;
    w.n_classes = 10;
    w.dim = 3;
    w.points_per_class = 12;
    w.prior_variance = 9.0;
    w.seed = rng();
    const EmbeddingDataset ds = generate_synthetic_world(w);
    ClassEmbeddings kk;
    if (lc) {
      const auto by_class = index_by_class(ds);
      for (std::size_t n = 0; n < 4; ++n) {
        kk.means.push_back(ds.records[by_class[n].front()].features);
        kk.variances.push_back(0.5);
      }
    }
    const MetaParams p = init_meta_params(make_random_affine_encoder(3, 3, rng), 0.5, rng, lc ? &kk : nullptr);
    const std::vector<Episode> batch{lc ? sample_lc_task(ds, kk.num_classes(), EpisodeConfig{0, 1, 1, 2, 3}, rng)
                                        : sample_sc_task(ds, EpisodeConfig{3, 1, 3, 2, 3}, rng)};
    MetaLossOptions lo;
    lo.setting = setting;
    lo.sequential = t % 2 == 1;
    const Vector flat = pack(p);
    GradCheckOptions opt;
    opt.tolerance = tolerance;
    const auto r = grad_check([&](auto x) { return batch_meta_loss(p, x, batch, lo); }, std::span<const double>(flat),
                              opt);
    detail::record(e, r, tolerance);
  }
  return e;
}

inline GradSuiteEntry verify_fine_tune_gradients(std::uint64_t seed, std::size_t configs, double tolerance = 1e-4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GradSuiteEntry e{"fine_tune_loss"};
  for (std::size_t t = 0; t < configs; ++t) {
    const std::size_t d = 2;
    LabeledSet support;
    std::vector<Vector> centres;
    for (int i = 0; i < 8; ++i) {
      Label y = 0;
      if (centres.empty() || u(rng) < 0.35) {
        centres.push_back(detail::gaussian_vector(rng, d, 2.0));
        y = static_cast<Label>(centres.size());
      } else {
        y = static_cast<Label>(1 + rng() % centres.size());
      }
      Vector x = centres[y - 1];
      for (double& v : x) v += 0.7 * detail::gaussian_vector(rng, 1, 1.0)[0];
      support.push_back({y, x});
    }
    const SharedPrior prior{NaturalClassStats{detail::gaussian_vector(rng, d, 1.0), 0.2 + 2.8 * u(rng)}};
    const CrpParams crp = make_crp_params(0.9 * u(rng), 0.05 + 2.95 * u(rng));
    const NoiseModel noise{0.1 + 1.9 * u(rng)};
    const Encoder shape = make_random_affine_encoder(d, d, rng);
    Vector flat;
    pack(shape, flat);
    GradCheckOptions opt;
    opt.tolerance = tolerance;
    const auto r = grad_check(
        [&](auto p) {
          std::size_t off = 0;
          const auto enc = unpack_encoder(shape, p, off);
          return loo_support_nll(enc, prior, crp, noise, NovelCountRule::append_then_increment, support);
        },
        std::span<const double>(flat), opt);
    detail::record(e, r, tolerance);
  }
  return e;
}

inline std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, std::size_t configs,
                                                      double tolerance = 1e-4) {
  return {verify_pretrain_gradients(seed, configs, tolerance),
          verify_meta_gradients(Setting::small_context, seed + 1, configs, tolerance),
          verify_meta_gradients(Setting::large_context, seed + 2, configs, tolerance),
          verify_fine_tune_gradients(seed + 3, configs, tolerance)};
}

}  // namespace flowr

#endif  // FLOWR_VERIFICATION_HPP
