#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "flowr/pretrain.hpp"
#include "support.hpp"

namespace flowr {
namespace {

using testing::Rng;

TEST(Encoder, IdentityPassesThrough) {
  const Vector x{1.0, 2.0, 3.0};
  EXPECT_EQ(encode(make_identity_encoder(3), x), x);
}

TEST(Encoder, AffineMatchesMatrixProduct) {
  const Encoder e = make_affine_encoder(2, 3, {1, 2, 3, 4, 5, 6}, {0.5, -0.5, 1.0});
  EXPECT_EQ(encode(e, Vector{1.0, -1.0}), (Vector{-0.5, -1.5, 0.0}));
}

TEST(Encoder, RejectsBadShapes) {
  EXPECT_THROW(make_affine_encoder(2, 2, {1, 2, 3}, {0, 0}), DimensionError);
  EXPECT_THROW(make_affine_encoder(1, 1, {std::nan("")}, {0}), std::invalid_argument);
  EXPECT_THROW(encode(make_identity_encoder(2), Vector{1.0}), DimensionError);
}

TEST(Encoder, PackUnpackRoundTrip) {
  Rng rng(1);
  const Encoder e = make_random_affine_encoder(4, 3, rng);
  Vector flat;
  pack(e, flat);
  EXPECT_EQ(flat.size(), e.num_params());
  std::size_t off = 0;
  EXPECT_EQ(unpack_encoder(e, std::span<const double>(flat), off), e);
  EXPECT_EQ(off, flat.size());
}

TEST(GdaPredict, SingleClass) {
  EXPECT_EQ(gda_predict(ClassEmbeddings{{{0.0}}, {1.0}}, Vector{4.0}), Vector{1.0});
}

TEST(GdaPredict, Symmetric) {
  const Vector p = gda_predict(ClassEmbeddings{{{0.0}, {2.0}}, {1.0, 1.0}}, Vector{1.0});
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
}

TEST(GdaPredict, UnequalVariancesMatchScalarOracle) {
  const Vector p = gda_predict(ClassEmbeddings{{{0.0}, {2.0}}, {1.0, 0.25}}, Vector{1.0});
  const double a = testing::normal_pdf(1, 0, 1), b = testing::normal_pdf(1, 2, 0.25);
  EXPECT_NEAR(p[0], a / (a + b), 1e-14);
  EXPECT_NEAR(p[1], b / (a + b), 1e-14);
  // Proportional to exp(-0.5)/1 versus exp(-2)/0.5.
  EXPECT_NEAR(p[0] / p[1], std::exp(-0.5) / (std::exp(-2.0) / 0.5), 1e-12);
}

TEST(GdaPredict, SumsToOne) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = testing::uniform_int(rng, 1, 12), d = testing::uniform_int(rng, 1, 6);
    ClassEmbeddings emb;
    for (std::size_t i = 0; i < n; ++i) {
      emb.means.push_back(testing::random_vector(rng, d, 3.0));
      emb.variances.push_back(testing::uniform(rng, 0.05, 4.0));
    }
    const Vector p = gda_predict(emb, testing::random_vector(rng, d, 3.0));
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(PretrainLoss, SingleClassNoRegulariser) {
  const LabeledSet batch{{1, {3.0}}, {1, {-7.0}}};
  EXPECT_NEAR(pretrain_loss(make_identity_encoder(1), ClassEmbeddings{{{0.0}}, {1.0}}, batch, 0.0), 0.0, 1e-15);
}

TEST(PretrainLoss, EquidistantPointIsLog2) {
  const LabeledSet batch{{1, {1.0}}};
  EXPECT_NEAR(pretrain_loss(make_identity_encoder(1), ClassEmbeddings{{{0.0}, {2.0}}, {1.0, 1.0}}, batch, 0.0),
              std::log(2.0), 1e-15);
}

TEST(PretrainLoss, RegulariserArithmetic) {
  const ClassEmbeddings emb{{{0.0, 0.0}, {5.0, 5.0}}, {0.5, 0.5}};
  const LabeledSet batch{{1, {0.1, 0.2}}, {2, {4.0, 5.5}}};
  const double with = pretrain_loss(make_identity_encoder(2), emb, batch, 0.1);
  const double without = pretrain_loss(make_identity_encoder(2), emb, batch, 0.0);
  EXPECT_NEAR(with - without, 0.1 * (2 / 0.5 + 2 / 0.5), 1e-12);
  EXPECT_NEAR(with - without, 0.8, 1e-12);
}

TEST(PretrainLoss, RegulariserPositiveAndDecreasingInVariance) {
  const LabeledSet batch{{1, {0.0}}};
  double prev = std::numeric_limits<double>::infinity();
  for (double v : {0.1, 0.5, 1.0, 3.0, 10.0}) {
    const ClassEmbeddings emb{{{0.0}}, {v}};
    const double reg = pretrain_loss(make_identity_encoder(1), emb, batch, 1.0) -
                       pretrain_loss(make_identity_encoder(1), emb, batch, 0.0);
    EXPECT_GT(reg, 0.0);
    EXPECT_LT(reg, prev);
    prev = reg;
  }
}

TEST(PretrainLoss, RejectsBadInput) {
  const ClassEmbeddings emb{{{0.0}}, {1.0}};
  EXPECT_THROW(pretrain_loss(make_identity_encoder(1), emb, {}, 0.1), std::invalid_argument);
  const LabeledSet bad{{2, {0.0}}};
  EXPECT_THROW(pretrain_loss(make_identity_encoder(1), emb, bad, 0.1), std::invalid_argument);
}

TEST(PretrainLoss, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    const std::size_t d_in = testing::uniform_int(rng, 1, 4), d = testing::uniform_int(rng, 1, 3);
    const std::size_t n = testing::uniform_int(rng, 2, 4);
    const Encoder enc = make_random_affine_encoder(d_in, d, rng);
    ClassEmbeddings emb;
    for (std::size_t i = 0; i < n; ++i) {
      emb.means.push_back(testing::random_vector(rng, d));
      emb.variances.push_back(testing::uniform(rng, 0.3, 2.0));
    }
    LabeledSet batch;
    for (int i = 0; i < 12; ++i) {
      batch.push_back({static_cast<Label>(testing::uniform_int(rng, 1, n)), testing::random_vector(rng, d_in, 2.0)});
    }
    const Vector flat = pack_pretrain_params(enc, emb);
    const auto rep = grad_check([&](std::span<const double> p) {
                                  auto [e, m] = unpack_pretrain_params(enc, n, d, p);
                                  return pretrain_loss(e, m, batch, 0.1);
                                },
                                [&](std::span<const double> p) {
                                  auto [e, m] = unpack_pretrain_params(enc, n, d, p);
                                  return pretrain_loss_gradient(e, m, batch, 0.1).gradient;
                                },
                                flat);
    EXPECT_LE(rep.max_rel_error, 1e-4) << "trial " << t;
  }
}

LabeledSet two_clusters(Rng& rng, std::size_t per_class) {
  // Unit noise, centres 10 apart.
  LabeledSet out;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (Label c = 1; c <= 2; ++c) {
      Vector x = testing::random_vector(rng, 2);
      x[0] += c == 1 ? -5.0 : 5.0;
      out.push_back({c, x});
    }
  }
  return out;
}

PretrainConfig small_config() {
  PretrainConfig cfg;
  cfg.embed_dim = 2;
  cfg.step_size = 0.05;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  cfg.seed = 3;
  return cfg;
}

TEST(Pretrain, SeparatesTwoClusters) {
  Rng rng(5);
  const LabeledSet data = two_clusters(rng, 100);
  const PretrainResult r = pretrain(data, small_config());
  std::size_t correct = 0;
  for (const auto& p : data) {
    const Vector probs = gda_predict(r.embeddings, encode(r.encoder, p.features));
    correct += static_cast<Label>(std::max_element(probs.begin(), probs.end()) - probs.begin() + 1) == p.label;
  }
  EXPECT_GE(static_cast<double>(correct) / data.size(), 0.99);
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
}

TEST(Pretrain, LargeBetaGrowsVariances) {
  Rng rng(6);
  const LabeledSet data = two_clusters(rng, 50);
  PretrainConfig cfg = small_config();
  cfg.step_size = 0.01;
  cfg.beta = 0.0;
  const PretrainResult free = pretrain(data, cfg);
  cfg.beta = 100.0;
  const PretrainResult heavy = pretrain(data, cfg);
  for (std::size_t n = 0; n < 2; ++n) EXPECT_GT(heavy.embeddings.variances[n], free.embeddings.variances[n]);
}

TEST(Pretrain, SeedReproducesLossTrace) {
  Rng rng(8);
  const LabeledSet data = two_clusters(rng, 30);
  const PretrainResult a = pretrain(data, small_config());
  const PretrainResult b = pretrain(data, small_config());
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_EQ(a.encoder, b.encoder);
  EXPECT_EQ(a.embeddings, b.embeddings);
}

TEST(Pretrain, DivergenceAborts) {
  Rng rng(9);
  const LabeledSet data = two_clusters(rng, 20);
  PretrainConfig cfg = small_config();
  cfg.step_size = 1e6;
  EXPECT_THROW(pretrain(data, cfg), DivergenceError);
}

TEST(Pretrain, RejectsNonDenseLabels) {
  const LabeledSet data{{1, {0.0}}, {3, {1.0}}};
  EXPECT_THROW(pretrain(data, small_config()), std::invalid_argument);
}

}  // namespace
}  // namespace flowr
