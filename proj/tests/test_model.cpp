#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace amda;

namespace {

ModelParams small_model(std::uint64_t seed, std::size_t layers = 3, Pooling pooling = Pooling::mean) {
  ModelShape s;
  s.vocab_size = 12;
  s.dim = 5;
  s.layers = layers;
  s.classes = 3;
  s.pooling = pooling;
  return init_params(s, seed);
}

}  // namespace

TEST(Loss, CrossEntropyAnalyticValues) {
  for (std::size_t k : {2u, 3u, 7u}) {
    Prediction uniform{std::vector<double>(k, 1.0 / static_cast<double>(k))};
    for (std::size_t y = 0; y < k; ++y) EXPECT_NEAR(ce_loss(uniform, y), std::log(static_cast<double>(k)), 1e-9);
  }
  EXPECT_NEAR(ce_loss(Prediction{{0.1, 0.9}}, 0), 2.302585, 1e-6);
  EXPECT_NEAR(ce_loss(Prediction{{0.4, 0.6}}, 1), 0.510826, 1e-6);
  EXPECT_NEAR(ce_loss(Prediction{{1.0, 0.0}}, 1), -std::log(1e-12), 1e-9);  // clamped, finite
}

TEST(Loss, KlAnalyticValues) {
  Prediction p{{0.2, 0.3, 0.5}};
  EXPECT_NEAR(kl_loss(p, p.probs), 0.0, 1e-12);
  // KL([.5,.5] || [.25,.75]) = 0.5 ln 2 + 0.5 ln(2/3)
  EXPECT_NEAR(kl_loss(Prediction{{0.25, 0.75}}, std::vector<double>{0.5, 0.5}), 0.5 * std::log(4.0 / 3.0), 1e-12);
  // A one-hot soft label reduces to cross-entropy.
  EXPECT_NEAR(kl_loss(p, one_hot(2, 3)), ce_loss(p, 2), 1e-15);
  EXPECT_THROW(kl_loss(p, std::vector<double>{0.5, 0.6, 0.0}), InputError);
  EXPECT_THROW(kl_loss(p, std::vector<double>{0.5, 0.5}), InputError);
}

TEST(Loss, ReportIsAdditive) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    LossReport r;
    for (int i = 0; i < 20; ++i) {
      if (rng() & 1) r.add_ce(u(rng));
      else r.add_kl(u(rng));
    }
    EXPECT_NEAR(r.total, r.ce_term + r.kl_term, 1e-9);
  }
}

TEST(Model, ZeroHeadGivesUniformOutput) {
  auto p = small_model(1);
  std::fill(p.head.data.begin(), p.head.data.end(), 0.0);
  auto pred = predict(p, std::vector<std::size_t>{2, 3, 4});
  for (double v : pred.probs) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Model, OutputsAreDistributions) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto p = small_model(seed);
    auto pred = predict(p, std::vector<std::size_t>{1, 5, 9, 11});
    double sum = 0;
    for (double v : pred.probs) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Model, ResumingFromAnyLayerIsBitExact) {
  for (auto pooling : {Pooling::mean, Pooling::first}) {
    auto p = small_model(3, 4, pooling);
    std::vector<std::size_t> ids{2, 7, 7, 1, 10};
    auto full = forward(p, ids);
    for (std::size_t l = 0; l <= p.layer_count(); ++l) {
      EXPECT_EQ(forward_from_layer(p, full.hidden.layers[l], l), full.prediction) << "layer " << l;
    }
  }
}

TEST(Model, InitIsDeterministicAndPadIsZero) {
  auto a = small_model(9), b = small_model(9), c = small_model(10);
  EXPECT_EQ(test::flatten(a), test::flatten(b));
  EXPECT_NE(test::flatten(a), test::flatten(c));
  for (double v : a.embedding.row(Vocabulary::kPad)) EXPECT_EQ(v, 0.0);
  a.validate();
}

TEST(Model, RejectsBadInput) {
  auto p = small_model(1);
  EXPECT_THROW(predict(p, std::vector<std::size_t>{}), InputError);
  EXPECT_THROW(predict(p, std::vector<std::size_t>{99}), InputError);
  ModelShape one_layer;
  one_layer.vocab_size = 4;
  one_layer.layers = 1;
  EXPECT_THROW(init_params(one_layer, 1), ConfigError);
}

TEST(Model, ValidateCatchesNonFiniteParameters) {
  auto p = small_model(1);
  p.layers[0].weight.data[3] = std::nan("");
  EXPECT_THROW(p.validate(), Error);
}

TEST(Vocabulary, BuiltFromTrainAndLexiconSorted) {
  auto train = test::dataset({{"b a", 0}, {"c", 1}});
  SynonymLexicon lex;
  lex.add("a", {"z", "y"});
  auto v = build_vocabulary(train, lex);
  EXPECT_EQ(v.words(), (std::vector<std::string>{"<pad>", "<unk>", "a", "b", "c", "y", "z"}));
}
