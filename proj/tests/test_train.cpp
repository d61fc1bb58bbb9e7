#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "support.hpp"

using namespace amda;

namespace {

ModelParams model(std::uint64_t seed, std::size_t vocab, std::size_t dim, std::size_t layers, std::size_t classes,
                  Pooling pooling) {
  ModelShape s;
  s.vocab_size = vocab;
  s.dim = dim;
  s.layers = layers;
  s.classes = classes;
  s.pooling = pooling;
  auto p = init_params(s, seed);
  // Non-zero biases so their gradients are exercised away from the init point.
  Rng rng(seed + 100);
  for (auto& l : p.layers)
    for (auto& b : l.bias) b = 0.1 * (static_cast<double>(uniform_index(rng, 21)) - 10.0) / 10.0;
  return p;
}

std::vector<std::span<double>> tensors(ModelParams& p) {
  std::vector<std::span<double>> out;
  ModelParams::for_each_tensor(p, [&](std::span<double> t) { out.push_back(t); });
  return out;
}

Batch mixed_batch(const ModelParams& p, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t v = p.vocab_size(), k = p.class_count();
  auto random_example = [&](std::size_t id) {
    EncodedExample e;
    e.id = id;
    const std::size_t len = 1 + uniform_index(rng, 5);
    for (std::size_t t = 0; t < len; ++t) e.ids.push_back(1 + uniform_index(rng, v - 1));
    e.label = uniform_index(rng, k);
    return e;
  };
  Batch b;
  for (std::size_t i = 0; i < 3; ++i) b.plain.push_back(random_example(i));
  std::size_t id = 10;
  for (auto mode : {MixMode::tmix, MixMode::smix}) {
    for (std::size_t l = 1; l <= p.layer_count(); ++l) {
      auto ei = random_example(id++), ej = random_example(id++);
      b.virtuals.push_back(mix_pair(p, ei, ej, mode, sample_lambda(1.0, rng), l));
    }
  }
  return b;
}

}  // namespace

struct GradCase {
  std::uint64_t seed;
  std::size_t vocab, dim, layers, classes;
  Pooling pooling;
};

class GradientCheck : public ::testing::TestWithParam<GradCase> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
  const auto c = GetParam();
  auto p = model(c.seed, c.vocab, c.dim, c.layers, c.classes, c.pooling);
  ASSERT_LE(p.parameter_count(), 10000u);
  const auto batch = mixed_batch(p, c.seed);
  auto analytic = backward(p, batch);
  EXPECT_NEAR(analytic.loss.total, evaluate_loss(p, batch).total, 1e-12);
  auto grads = test::flatten(analytic.gradients);

  const double h = 1e-5;
  double worst = 0.0;
  std::size_t idx = 0;
  for (auto t : tensors(p)) {
    for (auto& w : t) {
      const double saved = w;
      w = saved + h;
      const double up = evaluate_loss(p, batch).total;
      w = saved - h;
      const double down = evaluate_loss(p, batch).total;
      w = saved;
      const double fd = (up - down) / (2 * h);
      const double g = grads[idx++];
      const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  EXPECT_LT(worst, 1e-4);
  double largest = 0.0;
  for (double g : grads) largest = std::max(largest, std::abs(g));
  EXPECT_GT(largest, 1e-2);
  RecordProperty("worst_relative_error", std::to_string(worst));
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradientCheck,
                         ::testing::Values(GradCase{1, 10, 4, 3, 3, Pooling::mean},
                                           GradCase{2, 20, 8, 2, 2, Pooling::mean},
                                           GradCase{3, 12, 5, 4, 4, Pooling::first}));

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  auto p = model(4, 10, 4, 2, 2, Pooling::mean);
  const auto before = test::flatten(p);
  train_step(p, mixed_batch(p, 4), 0.0);
  EXPECT_EQ(test::flatten(p), before);
}

TEST(Train, DuplicatedBatchDoublesGradientExactly) {
  auto p = model(5, 10, 4, 2, 2, Pooling::mean);
  auto b = mixed_batch(p, 5);
  Batch twice = b;
  twice.plain.insert(twice.plain.end(), b.plain.begin(), b.plain.end());
  twice.virtuals.insert(twice.virtuals.end(), b.virtuals.begin(), b.virtuals.end());
  Batch single_plain{{b.plain[0]}, {}}, double_plain{{b.plain[0], b.plain[0]}, {}};
  auto g1 = test::flatten(backward(p, single_plain).gradients);
  auto g2 = test::flatten(backward(p, double_plain).gradients);
  for (std::size_t i = 0; i < g1.size(); ++i) ASSERT_EQ(g2[i], 2.0 * g1[i]);
  auto r1 = backward(p, b), r2 = backward(p, twice);
  auto a = test::flatten(r1.gradients), d = test::flatten(r2.gradients);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(d[i], 2.0 * a[i], 1e-12 * (1.0 + std::abs(a[i])));
  EXPECT_NEAR(r2.loss.total, 2.0 * r1.loss.total, 1e-12);
}

TEST(Train, OneStepReducesLossOnTwoPoints) {
  auto p = model(6, 6, 4, 2, 2, Pooling::mean);
  Batch b{{{0, {2, 3}, 0}, {1, {4, 5}, 1}}, {}};
  const double before = evaluate_loss(p, b).total;
  train_step(p, b, 0.05);
  EXPECT_LT(evaluate_loss(p, b).total, before);
}

TEST(Train, NonFiniteLossRaisesWithLastGoodParameters) {
  auto p = model(7, 6, 4, 2, 2, Pooling::mean);
  p.head.data[0] = std::numeric_limits<double>::infinity();
  std::vector<EncodedExample> data{{0, {2, 3}, 0}, {1, {4, 5}, 1}};
  TrainingConfig cfg;
  cfg.epochs = 1;
  try {
    train_model(p, data, cfg, MixupConfig{});
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    ASSERT_NE(e.last_good(), nullptr);
    EXPECT_EQ(test::flatten(*e.last_good()).size(), test::flatten(p).size());
  }
}

TEST(Train, SameSeedSameParameters) {
  auto data = std::vector<EncodedExample>{{0, {2, 3}, 0}, {1, {4, 5}, 1}, {2, {2, 5}, 0}, {3, {3, 4}, 1}};
  TrainingConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  MixupConfig mix;
  mix.pairs_per_epoch = 5;
  auto init = model(8, 6, 4, 2, 2, Pooling::mean);
  EXPECT_EQ(test::flatten(train_model(init, data, cfg, mix)), test::flatten(train_model(init, data, cfg, mix)));
  cfg.seed = 2;
  EXPECT_NE(test::flatten(train_model(init, data, cfg, mix)), test::flatten(train_model(init, data, {}, mix)));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Classifier c;
  c.vocab = Vocabulary::from_words({"<pad>", "<unk>", "a", "b", "c", "d"});
  c.params = model(9, 6, 4, 3, 2, Pooling::first);
  c.seed = 77;
  c.config_hash = "abc123";
  auto dir = test::scratch_dir("ckpt");
  save_checkpoint(c, (dir / "m.ckpt").string());
  auto back = load_checkpoint((dir / "m.ckpt").string());
  EXPECT_EQ(test::flatten(back.params), test::flatten(c.params));
  EXPECT_EQ(back.params.pooling, Pooling::first);
  EXPECT_EQ(back.vocab.words(), c.vocab.words());
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(back.config_hash, "abc123");
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(c));
  EXPECT_EQ(checkpoint_hash(back), checkpoint_hash(c));
}

TEST(Checkpoint, RejectsCorruptFiles) {
  Classifier c;
  c.vocab = Vocabulary::from_words({"<pad>", "<unk>", "a"});
  c.params = model(10, 3, 2, 2, 2, Pooling::mean);
  const auto bytes = serialize_checkpoint(c);
  auto version = bytes;
  version[8] = 2;
  EXPECT_THROW(deserialize_checkpoint(version), CheckpointError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), CheckpointError);
  try {
    deserialize_checkpoint(version);
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}
