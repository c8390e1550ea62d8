#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "flowr/meta_train.hpp"
#include "support.hpp"

namespace flowr {
namespace {

using testing::Rng;

EmbeddingDataset world(std::uint32_t classes, std::uint32_t dim = 3, std::uint32_t points = 12, std::uint64_t seed = 1) {
  SyntheticWorldConfig cfg;
  cfg.n_classes = classes;
  cfg.dim = dim;
  cfg.points_per_class = points;
  cfg.prior_variance = 9.0;
  cfg.seed = seed;
  return generate_synthetic_world(cfg);
}

EpisodeConfig small_episode() { return EpisodeConfig{3, 1, 3, 2, 3}; }

TEST(SampleScTask, CountExample) {
  const EmbeddingDataset ds = world(3);
  Rng rng(1);
  const Episode ep = sample_sc_task(ds, EpisodeConfig{2, 1, 1, 1, 1}, rng);
  EXPECT_EQ(ep.support.size(), 2u);
  EXPECT_EQ(ep.query.size(), 3u);
  EXPECT_EQ(std::count_if(ep.query.begin(), ep.query.end(), [](const LabeledPoint& p) { return p.label == 3; }), 1);
  EXPECT_EQ(ep.num_known, 2u);
}

TEST(SampleScTask, SeedDeterminism) {
  const EmbeddingDataset ds = world(8);
  Rng a(42), b(42);
  const Episode x = sample_sc_task(ds, small_episode(), a);
  const Episode y = sample_sc_task(ds, small_episode(), b);
  EXPECT_EQ(x.support, y.support);
  EXPECT_EQ(x.query, y.query);
  EXPECT_EQ(x.adapt_anchors, y.adapt_anchors);
}

TEST(SampleScTask, InvariantsOverManyEpisodes) {
  const EmbeddingDataset ds = world(8);
  Rng rng(7);
  for (int t = 0; t < 1000; ++t) {
    const Episode ep = sample_sc_task(ds, small_episode(), rng);
    const std::set<std::size_t> s(ep.support_indices.begin(), ep.support_indices.end());
    for (std::size_t q : ep.query_indices) ASSERT_EQ(s.count(q), 0u);
    // Support labels dense by first appearance.
    Label seen = 0;
    for (const auto& p : ep.support) {
      ASSERT_LE(p.label, seen + 1);
      seen = std::max(seen, p.label);
    }
    ASSERT_EQ(seen, 3u);
    // Shots within range.
    std::vector<std::size_t> shots(3, 0);
    for (const auto& p : ep.support) ++shots[p.label - 1];
    for (std::size_t k : shots) ASSERT_TRUE(k >= 1 && k <= 3);
    // Query classes: support sources plus disjoint novel sources, novel labelled N+1.
    std::set<Label> support_src, novel_src;
    for (std::size_t i : ep.support_indices) support_src.insert(ds.records[i].label);
    for (std::size_t i = 0; i < ep.query.size(); ++i) {
      if (ep.query[i].label == 4) {
        novel_src.insert(ep.query_source[i]);
      } else {
        ASSERT_EQ(support_src.count(ep.query_source[i]), 1u);
      }
    }
    for (Label l : novel_src) ASSERT_EQ(support_src.count(l), 0u);
    ASSERT_EQ(novel_src.size(), 2u);
    ASSERT_EQ(ep.adapt_pool.size(), 6u);
    ASSERT_EQ(ep.adapt_anchors.size(), 2u);
  }
}

TEST(SampleScTask, InsufficientData) {
  Rng rng(1);
  EXPECT_THROW(sample_sc_task(world(4), small_episode(), rng), InsufficientDataError);
  EXPECT_THROW(sample_sc_task(world(8, 3, 4), small_episode(), rng), InsufficientDataError);
}

TEST(SampleLcTask, Invariants) {
  const EmbeddingDataset ds = world(9);
  Rng rng(3);
  const EpisodeConfig cfg{0, 1, 1, 2, 3};
  for (int t = 0; t < 200; ++t) {
    const Episode ep = sample_lc_task(ds, 5, cfg, rng);
    ASSERT_TRUE(ep.support.empty());
    for (std::size_t i = 0; i < ep.query.size(); ++i) {
      ASSERT_GE(ep.query[i].label, 1u);
      ASSERT_LE(ep.query[i].label, 6u);
      if (ep.query[i].label == 6) {
        ASSERT_GT(ep.query_source[i], 5u);
      } else {
        ASSERT_EQ(ep.query_source[i], ep.query[i].label);
      }
    }
    ASSERT_EQ(ep.query.size(), 5u * 3 + 2u * 3);
  }
}

TEST(ProtocolStream, AssignsNextLabelOnFirstEncounter) {
  const EmbeddingDataset ds = world(8);
  Rng rng(5);
  const Episode ep = sample_sc_task(ds, small_episode(), rng);
  const ProtocolStream s = make_protocol_stream(ep);
  Label n = 3;
  std::map<Label, Label> seen;
  for (std::size_t i = 0; i < s.queries.size(); ++i) {
    if (ep.query[i].label != 4) {
      EXPECT_EQ(s.queries[i].label, ep.query[i].label);
      EXPECT_TRUE(s.known_before[i]);
      continue;
    }
    const bool first = seen.emplace(ep.query_source[i], n + 1).second;
    if (first) ++n;
    EXPECT_EQ(s.first_encounter[i], first);
    EXPECT_EQ(s.queries[i].label, seen[ep.query_source[i]]);
  }
}

TEST(AdaptationLoss, SingleClassIsZero) {
  const LabeledSet pool{{1, {0.0}}, {1, {1.0}}, {1, {3.0}}};
  const std::vector<std::size_t> anchors{0};
  const auto r = adaptation_loss<double>(SharedPrior{{{0.0}, 1.0}}, NoiseModel{0.5}, make_identity_encoder(1), pool, anchors);
  EXPECT_NEAR(r.value, 0.0, 1e-15);
  EXPECT_FALSE(r.empty);
}

TEST(AdaptationLoss, SymmetricQueryIsLog2) {
  const LabeledSet pool{{1, {-1.5}}, {2, {1.5}}, {1, {0.0}}};
  const std::vector<std::size_t> anchors{0, 1};
  const auto r = adaptation_loss<double>(SharedPrior{{{0.0}, 1.0}}, NoiseModel{0.5}, make_identity_encoder(1), pool, anchors);
  EXPECT_NEAR(r.value, std::log(2.0), 1e-14);
}

TEST(AdaptationLoss, ScalarOracle) {
  // Anchors at -2 and 2 with prior N(0, 1), noise 0.5: predictive means -4/3 and 4/3, variance 5/6.
  const LabeledSet pool{{1, {-2.0}}, {2, {2.0}}, {2, {2.0}}};
  const std::vector<std::size_t> anchors{0, 1};
  const auto r = adaptation_loss<double>(SharedPrior{{{0.0}, 1.0}}, NoiseModel{0.5}, make_identity_encoder(1), pool, anchors);
  const double own = testing::normal_pdf(2.0, 4.0 / 3.0, 5.0 / 6.0);
  const double other = testing::normal_pdf(2.0, -4.0 / 3.0, 5.0 / 6.0);
  EXPECT_NEAR(r.value, -std::log(own / (own + other)), 1e-12);
}

TEST(AdaptationLoss, EmptyPoolFlagged) {
  const LabeledSet pool{{1, {0.0}}, {2, {1.0}}};
  const std::vector<std::size_t> anchors{0, 1};
  const auto r = adaptation_loss<double>(SharedPrior{{{0.0}, 1.0}}, NoiseModel{0.5}, make_identity_encoder(1), pool, anchors);
  EXPECT_TRUE(r.empty);
  EXPECT_EQ(r.value, 0.0);
}

MetaParams params_for(const Encoder& enc, Rng& rng, const ClassEmbeddings* kk = nullptr) {
  return init_meta_params(enc, 0.5, rng, kk);
}

ClassEmbeddings kk_embeddings(const EmbeddingDataset& ds, std::size_t n_kk) {
  ClassEmbeddings emb;
  const auto by = index_by_class(ds);
  for (std::size_t n = 0; n < n_kk; ++n) {
    Vector m(ds.dim, 0.0);
    for (std::size_t i : by[n]) {
      for (std::size_t j = 0; j < ds.dim; ++j) m[j] += ds.records[i].features[j] / by[n].size();
    }
    emb.means.push_back(m);
    emb.variances.push_back(0.5);
  }
  return emb;
}

TEST(MetaLoss, FiniteOnRandomEpisodes) {
  const EmbeddingDataset ds = world(10);
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const MetaParams p = params_for(make_random_affine_encoder(3, 3, rng), rng);
    const Episode ep = sample_sc_task(ds, small_episode(), rng);
    const auto parts = meta_loss(p, ep, MetaLossOptions{});
    EXPECT_TRUE(std::isfinite(parts.total));
    EXPECT_GT(parts.nll, 0.0);
  }
}

TEST(MetaLoss, LinearInLambda) {
  const EmbeddingDataset ds = world(10);
  Rng rng(10);
  const MetaParams p = params_for(make_random_affine_encoder(3, 3, rng), rng);
  const Episode ep = sample_sc_task(ds, small_episode(), rng);
  MetaLossOptions opt;
  opt.lambda_w = 0.1;
  const auto a = meta_loss(p, ep, opt);
  opt.lambda_w = 0.2;
  const auto b = meta_loss(p, ep, opt);
  EXPECT_NEAR(b.total - a.total, 0.1 * a.adapt, 1e-12);
  opt.lambda_w = 0.0;
  EXPECT_NEAR(meta_loss(p, ep, opt).total, a.nll, 1e-12);
}

TEST(MetaLoss, InvariantToClassIndexPermutation) {
  const EmbeddingDataset ds = world(10);
  Rng rng(12);
  const MetaParams p = params_for(make_random_affine_encoder(3, 3, rng), rng);
  const Episode ep = sample_sc_task(ds, small_episode(), rng);
  // Swap labels 1 and 2 everywhere, reordering support so labels stay dense by first appearance.
  Episode sw = ep;
  auto swap_label = [](Label l) { return l == 1 ? 2u : (l == 2 ? 1u : l); };
  for (auto& s : sw.support) s.label = swap_label(s.label);
  for (auto& q : sw.query) q.label = swap_label(q.label);
  std::stable_sort(sw.support.begin(), sw.support.end(), [](const LabeledPoint& a, const LabeledPoint& b) {
    return a.label < b.label;
  });
  Episode sorted = ep;
  std::stable_sort(sorted.support.begin(), sorted.support.end(), [](const LabeledPoint& a, const LabeledPoint& b) {
    return a.label < b.label;
  });
  const MetaLossOptions opt;
  EXPECT_NEAR(meta_loss(p, sw, opt).total, meta_loss(p, sorted, opt).total, 1e-10);
}

TEST(MetaLoss, LargeContextNeedsMatchingKnownKnown) {
  const EmbeddingDataset ds = world(9);
  Rng rng(13);
  const ClassEmbeddings kk = kk_embeddings(ds, 5);
  const MetaParams p = params_for(make_identity_affine_encoder(3, 3), rng, &kk);
  const Episode ep = sample_lc_task(ds, 5, EpisodeConfig{0, 1, 1, 2, 3}, rng);
  MetaLossOptions opt;
  opt.setting = Setting::large_context;
  EXPECT_TRUE(std::isfinite(meta_loss(p, ep, opt).total));
  const Episode other = sample_lc_task(ds, 4, EpisodeConfig{0, 1, 1, 2, 3}, rng);
  EXPECT_THROW(meta_loss(p, other, opt), InvalidStateError);
}

TEST(MetaLoss, GradientMatchesFiniteDifferences) {
  const EmbeddingDataset ds = world(10);
  const ClassEmbeddings kk = kk_embeddings(ds, 5);
  Rng rng(14);
  for (Setting setting : {Setting::small_context, Setting::large_context}) {
    for (bool sequential : {false, true}) {
      for (int t = 0; t < 3; ++t) {
        const MetaParams p =
            params_for(make_random_affine_encoder(3, 3, rng), rng, setting == Setting::large_context ? &kk : nullptr);
        const std::vector<Episode> batch{setting == Setting::small_context
                                             ? sample_sc_task(ds, small_episode(), rng)
                                             : sample_lc_task(ds, 5, EpisodeConfig{0, 1, 1, 2, 3}, rng)};
        MetaLossOptions opt;
        opt.setting = setting;
        opt.sequential = sequential;
        const Vector flat = pack(p);
        const auto rep = grad_check([&](auto x) { return batch_meta_loss(p, x, batch, opt); }, std::span<const double>(flat));
        EXPECT_LE(rep.max_rel_error, 1e-4) << "setting " << int(setting) << " sequential " << sequential;
      }
    }
  }
}

TEST(MetaStep, ZeroStepLeavesParams) {
  const EmbeddingDataset ds = world(10);
  Rng rng(15);
  const MetaParams p = params_for(make_random_affine_encoder(3, 3, rng), rng);
  const std::vector<Episode> batch{sample_sc_task(ds, small_episode(), rng)};
  EXPECT_EQ(meta_step(p, batch, 0.0, MetaLossOptions{}).params, p);
}

TEST(MetaStep, KeepsBAboveMinusA) {
  const EmbeddingDataset ds = world(10);
  Rng rng(16);
  MetaParams p = params_for(make_random_affine_encoder(3, 3, rng), rng);
  for (int i = 0; i < 20; ++i) {
    const std::vector<Episode> batch{sample_sc_task(ds, small_episode(), rng)};
    p = meta_step(p, batch, 0.5, MetaLossOptions{}).params;
    EXPECT_GT(p.crp.b(), -p.crp.a);
    EXPECT_GT(p.prior.stats.lambda, 0.0);
  }
}

TEST(MetaTrain, ReducesLossAndIsReproducible) {
  const EmbeddingDataset ds = world(12, 3, 15);
  Rng rng(17);
  const MetaParams p0 = params_for(make_identity_affine_encoder(3, 3), rng);
  MetaTrainConfig cfg;
  cfg.episode = small_episode();
  cfg.episodes = 200;
  cfg.step_size = 0.02;
  cfg.seed = 4;
  const MetaTrainResult a = meta_train(ds, p0, cfg);
  ASSERT_EQ(a.trace.size(), 200u);
  double head = 0, tail = 0;
  for (int i = 0; i < 20; ++i) {
    head += a.trace[i].loss;
    tail += a.trace[180 + i].loss;
  }
  EXPECT_LT(tail, head);
  const MetaTrainResult b = meta_train(ds, p0, cfg);
  EXPECT_EQ(a.params, b.params);
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].loss, b.trace[i].loss);
}

TEST(MetaParamsPacking, RoundTrip) {
  const EmbeddingDataset ds = world(6);
  const ClassEmbeddings kk = kk_embeddings(ds, 3);
  Rng rng(18);
  const MetaParams p = params_for(make_random_affine_encoder(3, 3, rng), rng, &kk);
  const Vector flat = pack(p);
  const MetaParams q = unpack(p, std::span<const double>(flat));
  EXPECT_EQ(q.encoder, p.encoder);
  EXPECT_EQ(q.crp, p.crp);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(q.prior.stats.q[i], p.prior.stats.q[i], 0.0);
  EXPECT_NEAR(q.prior.stats.lambda, p.prior.stats.lambda, 1e-15);
  ASSERT_EQ(q.kk_stats.size(), 3u);
}

}  // namespace
}  // namespace flowr
