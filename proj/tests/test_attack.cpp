#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace amda;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

AttackConfig unfiltered(AttackerKind kind, double max_mod = 1.0) {
  AttackConfig c;
  c.kind = kind;
  c.sim_threshold = -1.0;
  c.max_modify_fraction = max_mod;
  return c;
}

SynonymLexicon lexicon(const std::vector<std::pair<std::string, std::vector<std::string>>>& entries) {
  SynonymLexicon lex;
  for (const auto& [w, c] : entries) lex.add(w, c);
  return lex;
}

void expect_sound(VictimHandle& victim, const AttackRecord& r, const SynonymLexicon& lex, const EmbeddingTable& emb,
                  const AttackConfig& cfg) {
  if (!r.genuine_success()) return;
  EXPECT_NE(victim.query(r.adversarial).argmax(), r.label);
  EXPECT_LE(r.subs.size(), cfg.max_substitutions(r.original.size()));
  std::set<std::size_t> positions;
  for (const auto& s : r.subs) {
    EXPECT_TRUE(positions.insert(s.position).second);
    EXPECT_EQ(r.original[s.position], s.old_word);
    EXPECT_EQ(r.adversarial[s.position], s.new_word);
    auto c = candidates(lex, emb, s.old_word, cfg.sim_threshold, cfg.top_k).words;
    EXPECT_NE(std::find(c.begin(), c.end(), s.new_word), c.end());
  }
  for (std::size_t i = 0; i < r.original.size(); ++i) {
    if (!positions.count(i)) EXPECT_EQ(r.original[i], r.adversarial[i]);
  }
  EXPECT_DOUBLE_EQ(r.mod_rate, static_cast<double>(r.subs.size()) / static_cast<double>(r.original.size()));
}

}  // namespace

TEST(Attack, MaxSubstitutionsUsesCeiling) {
  AttackConfig c;
  c.max_modify_fraction = 0.3;
  EXPECT_EQ(c.max_substitutions(10), 3u);
  EXPECT_EQ(c.max_substitutions(11), 4u);
  EXPECT_EQ(c.max_substitutions(1), 1u);
  c.max_modify_fraction = 0.5;
  EXPECT_EQ(c.max_substitutions(5), 3u);
  c.max_modify_fraction = 0.01;
  EXPECT_EQ(c.max_substitutions(3), 1u);
}

TEST(Attack, ConstantVictimCannotBeFooled) {
  auto lex = lexicon({{"good", {"fine", "nice"}}, {"movie", {"film"}}});
  EmbeddingTable emb;
  auto ex = test::example(0, "a good movie", 0);
  for (auto kind : {AttackerKind::pwws, AttackerKind::textfooler, AttackerKind::brute}) {
    auto victim = test::constant_victim({0.7, 0.3});
    auto r = run_attack(victim, ex, lex, emb, unfiltered(kind));
    EXPECT_FALSE(r.success) << to_string(kind);
    EXPECT_TRUE(r.subs.empty());
    EXPECT_EQ(r.adversarial, r.original);
    EXPECT_EQ(r.queries, victim.queries());
  }
}

TEST(Attack, MisclassifiedInputSucceedsWithoutSubstitutions) {
  auto lex = lexicon({{"good", {"fine"}}});
  EmbeddingTable emb;
  for (auto kind : {AttackerKind::pwws, AttackerKind::textfooler, AttackerKind::brute}) {
    auto victim = test::constant_victim({0.7, 0.3});
    auto r = run_attack(victim, test::example(0, "good", 1), lex, emb, unfiltered(kind));
    EXPECT_TRUE(r.success);
    EXPECT_TRUE(r.pre_misclassified);
    EXPECT_FALSE(r.genuine_success());
    EXPECT_EQ(r.queries, 1u);
  }
}

TEST(Attack, SaliencyOfLinearVictim) {
  auto victim = test::linear_victim({{"good", 2.0}, {"great", 1.0}});
  auto ex = test::example(0, "the good great movie", 1);
  const double base = sigmoid(3.0);
  EXPECT_NEAR(word_saliency(victim, ex, 0), 0.0, 1e-15);
  EXPECT_NEAR(word_saliency(victim, ex, 1), base - sigmoid(1.0), 1e-12);
  EXPECT_NEAR(word_saliency(victim, ex, 2), base - sigmoid(2.0), 1e-12);
  EXPECT_EQ(victim.queries(), 6u);
  EXPECT_THROW(word_saliency(victim, ex, 9), InputError);
}

TEST(Attack, SingleWordFlipHasFullModificationRate) {
  auto lex = lexicon({{"good", {"fine", "bad"}}});
  EmbeddingTable emb;
  auto ex = test::example(0, "good", 1);
  for (auto kind : {AttackerKind::pwws, AttackerKind::textfooler, AttackerKind::brute}) {
    auto victim = test::linear_victim({{"good", 2.0}, {"fine", 1.0}, {"bad", -3.0}});
    auto r = run_attack(victim, ex, lex, emb, unfiltered(kind));
    ASSERT_TRUE(r.genuine_success()) << to_string(kind);
    EXPECT_EQ(r.adversarial, (Tokens{"bad"}));
    EXPECT_DOUBLE_EQ(r.mod_rate, 1.0);
    expect_sound(victim, r, lex, emb, unfiltered(kind));
  }
}

TEST(Attack, PwwsPrefersSalientPositionWithLargestDrop) {
  // Both positions can flip alone; "good" is more salient, so PWWS takes it.
  auto lex = lexicon({{"good", {"awful"}}, {"nice", {"poor"}}});
  EmbeddingTable emb;
  auto victim = test::linear_victim({{"good", 2.0}, {"nice", 0.5}, {"awful", -4.0}, {"poor", -4.0}});
  auto r = pwws_attack(victim, test::example(0, "nice good", 1), lex, emb, unfiltered(AttackerKind::pwws));
  ASSERT_TRUE(r.genuine_success());
  ASSERT_EQ(r.subs.size(), 1u);
  EXPECT_EQ(r.subs[0].position, 1u);
}

TEST(Attack, BruteForceEnumeratesEveryCombination) {
  auto lex = lexicon({{"a", {"x"}}, {"b", {"y"}}});
  EmbeddingTable emb;
  auto ex = test::example(0, "a b", 1);
  auto cfg = unfiltered(AttackerKind::brute);
  EXPECT_EQ(search_space_size(ex.tokens, lex, emb, cfg), 4.0);
  auto victim = test::linear_victim({{"a", 1.0}, {"b", 1.0}, {"x", 0.4}, {"y", 0.4}});
  auto r = brute_force_attack(victim, ex, lex, emb, cfg);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.queries, 4u);  // original, {x}, {y}, {x, y}
}

TEST(Attack, BruteForceFindsMinimalFlip) {
  auto lex = lexicon({{"a", {"a1", "a2"}}, {"b", {"b1"}}, {"c", {"c1"}}});
  EmbeddingTable emb;
  // Needs a2 alone, or b1 + c1; the single substitution must win.
  auto victim = test::linear_victim({{"a", 1.0}, {"b", 1.0}, {"c", 1.0}, {"a2", -4.0}, {"b1", -1.5}, {"c1", -1.5}});
  auto r = brute_force_attack(victim, test::example(0, "b c a", 1), lex, emb, unfiltered(AttackerKind::brute));
  ASSERT_TRUE(r.success);
  ASSERT_EQ(r.subs.size(), 1u);
  EXPECT_EQ(r.subs[0], (Substitution{2, "a", "a2"}));
}

TEST(Attack, BruteForceRefusesHugeSpaces) {
  SynonymLexicon lex;
  Tokens words;
  for (int i = 0; i < 12; ++i) {
    auto w = "w" + std::to_string(i);
    lex.add(w, {w + "a", w + "b", w + "c"});
    words.push_back(w);
  }
  EmbeddingTable emb;
  auto cfg = unfiltered(AttackerKind::brute);
  auto victim = test::constant_victim({0.9, 0.1});
  EXPECT_GT(search_space_size(words, lex, emb, cfg), cfg.brute_cap);
  EXPECT_THROW(brute_force_attack(victim, Example{0, words, 0}, lex, emb, cfg), InputError);
  Dataset ds;
  ds.label_count = 2;
  ds.examples.push_back({0, words, 0});
  auto records = attack_dataset(victim, ds, lex, emb, cfg, 1);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_FALSE(records[0].error.empty());
  EXPECT_FALSE(records[0].success);
}

TEST(Attack, BudgetExhaustionStopsTheSearch) {
  auto lex = lexicon({{"a", {"a1", "a2", "a3"}}, {"b", {"b1", "b2"}}});
  EmbeddingTable emb;
  for (auto kind : {AttackerKind::pwws, AttackerKind::textfooler}) {
    auto cfg = unfiltered(kind);
    cfg.query_budget = 3;
    auto victim = test::linear_victim({{"a", 1.0}});
    auto r = run_attack(victim, test::example(0, "a b", 1), lex, emb, cfg);
    EXPECT_TRUE(r.budget_exhausted);
    EXPECT_FALSE(r.success);
    EXPECT_EQ(r.queries, 3u);
    EXPECT_EQ(victim.queries(), 3u);
  }
}

TEST(Attack, DatasetAttackAccountsQueriesAndIsThreadIndependent) {
  test::ToyData toy;
  Dataset small;
  small.label_count = 2;
  small.examples.assign(toy.test.examples.begin(), toy.test.examples.begin() + 30);
  std::map<std::string, double> w{{"good", 1.5}, {"great", 1.5}, {"excellent", 1.5}, {"bad", -1.5}, {"awful", -1.5}};
  AttackConfig cfg;
  auto v1 = test::linear_victim(w), v4 = test::linear_victim(w);
  auto a = attack_dataset(v1, small, toy.lexicon, toy.embeddings, cfg, 1);
  auto b = attack_dataset(v4, small, toy.lexicon, toy.embeddings, cfg, 4);
  ASSERT_EQ(a.size(), b.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, small.examples[i].id);
    EXPECT_EQ(to_json(a[i]), to_json(b[i]));
    total += a[i].queries;
  }
  EXPECT_EQ(v1.queries(), total);
  EXPECT_EQ(v4.queries(), total);
}

TEST(Attack, SummaryAveragesOnlyGenuineSuccesses) {
  AttackRecord flip;
  flip.success = true;
  flip.original = {"a", "b", "c", "d"};
  flip.subs = {{0, "a", "x"}};
  flip.mod_rate = 0.25;
  AttackRecord flip2 = flip;
  flip2.subs.push_back({1, "b", "y"});
  flip2.mod_rate = 0.5;
  AttackRecord pre;
  pre.success = true;
  pre.pre_misclassified = true;
  AttackRecord fail;
  fail.mod_rate = 0.0;
  AttackRecord err;
  err.error = "boom";
  auto s = summarize({flip, flip2, pre, fail, err});
  EXPECT_EQ(s.attacked, 5u);
  EXPECT_EQ(s.genuine_successes, 2u);
  EXPECT_EQ(s.successes, 3u);
  EXPECT_EQ(s.errors, 1u);
  EXPECT_DOUBLE_EQ(s.avg_mod_rate, 0.375);
}

TEST(Attack, JsonLinesCarryTheRecordFields) {
  AttackRecord r;
  r.id = 4;
  r.original = {"a", "good", "film"};
  r.adversarial = {"a", "bad", "film"};
  r.subs = {{1, "good", "bad"}};
  r.success = true;
  r.queries = 12;
  r.mod_rate = 1.0 / 3.0;
  auto j = to_json(r);
  std::set<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
  EXPECT_EQ(keys, (std::set<std::string>{"id", "orig_tokens", "adv_tokens", "subs", "success", "queries", "mod_rate"}));
  EXPECT_EQ(j["subs"], nlohmann::json::parse(R"([[1, "good", "bad"]])"));
  std::stringstream buf;
  write_attack_records(buf, {r});
  auto back = read_attack_records(buf);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].subs, r.subs);
  EXPECT_EQ(back[0].adversarial, r.adversarial);
  EXPECT_EQ(back[0].queries, 12u);
}

TEST(Attack, GreedySuccessImpliesOracleSuccessWithNoMoreSubstitutions) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.5);
  for (int trial = 0; trial < 50; ++trial) {
    SynonymLexicon lex;
    std::map<std::string, double> w;
    Tokens tokens;
    const int len = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < len; ++i) {
      auto word = "t" + std::to_string(i);
      tokens.push_back(word);
      w[word] = g(rng);
      std::vector<std::string> cands;
      for (int c = 0, n = static_cast<int>(rng() % 4); c < n; ++c) {
        cands.push_back(word + "c" + std::to_string(c));
        w[cands.back()] = g(rng);
      }
      lex.add(word, cands);
    }
    EmbeddingTable emb;
    auto victim = test::linear_victim(w);
    const std::size_t label = victim.query(tokens).argmax();
    Example ex{0, tokens, label};
    auto oracle = brute_force_attack(victim, ex, lex, emb, unfiltered(AttackerKind::brute, 0.5));
    for (auto kind : {AttackerKind::pwws, AttackerKind::textfooler}) {
      auto cfg = unfiltered(kind, 0.5);
      auto r = run_attack(victim, ex, lex, emb, cfg);
      expect_sound(victim, r, lex, emb, cfg);
      if (r.success) {
        ASSERT_TRUE(oracle.success);
        EXPECT_LE(oracle.subs.size(), r.subs.size());
      }
    }
  }
}
