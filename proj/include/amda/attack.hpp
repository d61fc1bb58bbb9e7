#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amda/corpus.hpp"
#include "amda/error.hpp"
#include "amda/hash.hpp"
#include "amda/model.hpp"
#include "amda/parallel.hpp"

namespace amda {

enum class AttackerKind { pwws, textfooler, brute };

inline std::string to_string(AttackerKind k) {
  switch (k) {
    case AttackerKind::pwws: return "pwws";
    case AttackerKind::textfooler: return "textfooler";
    case AttackerKind::brute: return "brute";
  }
  return "?";
}

inline AttackerKind parse_attacker(const std::string& s) {
  if (s == "pwws") return AttackerKind::pwws;
  if (s == "textfooler") return AttackerKind::textfooler;
  if (s == "brute") return AttackerKind::brute;
  throw ConfigError("unknown attacker '" + s + "' (pwws, textfooler, brute)");
}

/// Prediction-only access to a model plus a query counter. Copies share the
/// underlying model; fresh() hands a worker its own zeroed counter.
class VictimHandle {
 public:
  using PredictFn = std::function<Prediction(const Tokens&)>;

  explicit VictimHandle(PredictFn fn) : fn_(std::make_shared<const PredictFn>(std::move(fn))) {}

  Prediction query(const Tokens& tokens) {
    ++queries_;
    return (*fn_)(tokens);
  }

  std::size_t queries() const { return queries_; }
  void add_queries(std::size_t n) { queries_ += n; }
  VictimHandle fresh() const {
    VictimHandle v = *this;
    v.queries_ = 0;
    return v;
  }

 private:
  std::shared_ptr<const PredictFn> fn_;
  std::size_t queries_ = 0;
};

/// Victim over a classifier. The classifier must outlive the handle.
inline VictimHandle make_victim(const Classifier& model) {
  return VictimHandle([&model](const Tokens& tokens) { return model.predict(tokens); });
}

struct AttackConfig {
  AttackerKind kind = AttackerKind::pwws;
  double sim_threshold = 0.5;
  std::size_t top_k = 8;
  double max_modify_fraction = 0.5;
  std::size_t query_budget = 5000;
  /// Largest search space the brute-force oracle will enumerate.
  double brute_cap = 1e6;

  void validate() const {
    if (query_budget == 0) throw ConfigError("attack.query_budget must be > 0");
    if (top_k == 0) throw ConfigError("attack.top_k must be > 0");
    if (!(max_modify_fraction > 0.0 && max_modify_fraction <= 1.0)) {
      throw ConfigError("attack.max_modify_fraction must be in (0, 1]");
    }
    if (!(sim_threshold >= -1.0 && sim_threshold <= 1.0)) throw ConfigError("attack.sim_threshold must be in [-1, 1]");
  }

  std::string canonical() const {
    std::ostringstream s;
    s << std::setprecision(17) << "kind=" << to_string(kind) << ";sim=" << sim_threshold << ";top_k=" << top_k
      << ";max_mod=" << max_modify_fraction << ";budget=" << query_budget << ";cap=" << brute_cap;
    return s.str();
  }
  std::string hash() const { return fnv1a_hex(canonical()); }

  /// ceil(fraction * T), at least 1 (with slack for 0.3 * 10 = 3.0000000000000004).
  std::size_t max_substitutions(std::size_t length) const {
    auto n = static_cast<std::size_t>(std::ceil(max_modify_fraction * static_cast<double>(length) - 1e-9));
    return std::max<std::size_t>(1, n);
  }
};

struct Substitution {
  std::size_t position = 0;
  std::string old_word;
  std::string new_word;

  bool operator==(const Substitution&) const = default;
};

struct AttackRecord {
  std::size_t id = 0;
  std::size_t label = 0;
  Tokens original;
  Tokens adversarial;
  std::vector<Substitution> subs;
  bool success = false;
  /// The victim already misclassified the input; success with 0 substitutions.
  bool pre_misclassified = false;
  bool budget_exhausted = false;
  std::size_t queries = 0;
  double mod_rate = 0.0;
  std::string error;

  /// Successful and required at least one substitution.
  bool genuine_success() const { return success && !subs.empty(); }
};

inline double modification_rate(const AttackRecord& r) {
  if (r.original.empty()) return 0.0;
  return static_cast<double>(r.subs.size()) / static_cast<double>(r.original.size());
}

namespace detail {

struct BudgetExhausted {};

// Counts queries against the budget and mirrors them onto the victim handle.
class BudgetedVictim {
 public:
  BudgetedVictim(VictimHandle& victim, std::size_t budget) : victim_(victim), budget_(budget) {}

  Prediction query(const Tokens& tokens) {
    if (used_ >= budget_) throw BudgetExhausted{};
    ++used_;
    return victim_.query(tokens);
  }
  std::size_t used() const { return used_; }

 private:
  VictimHandle& victim_;
  std::size_t budget_;
  std::size_t used_ = 0;
};

inline AttackRecord start_record(const Example& ex) {
  AttackRecord r;
  r.id = ex.id;
  r.label = ex.label;
  r.original = ex.tokens;
  r.adversarial = ex.tokens;
  return r;
}

// A failed attack reports the untouched input.
inline AttackRecord& finish(AttackRecord& r, std::size_t queries) {
  if (!r.success) {
    r.adversarial = r.original;
    r.subs.clear();
  }
  std::sort(r.subs.begin(), r.subs.end(), [](const auto& a, const auto& b) { return a.position < b.position; });
  r.queries = queries;
  r.mod_rate = modification_rate(r);
  return r;
}

inline Tokens with_word(Tokens tokens, std::size_t pos, const std::string& word) {
  tokens[pos] = word;
  return tokens;
}

inline Tokens without_word(const Tokens& tokens, std::size_t pos) {
  if (tokens.size() == 1) return {std::string(Vocabulary::kUnkWord)};
  Tokens out;
  out.reserve(tokens.size() - 1);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (i != pos) out.push_back(tokens[i]);
  return out;
}

inline std::vector<double> softmax_of(const std::vector<double>& v) {
  if (v.empty()) return {};
  return softmax(v);
}

}  // namespace detail

/// P(gold | x) - P(gold | x with `position` replaced by UNK). Two queries.
inline double word_saliency(VictimHandle& victim, const Example& example, std::size_t position) {
  if (position >= example.tokens.size()) throw InputError("saliency position out of range");
  const double base = victim.query(example.tokens)[example.label];
  const double probed =
      victim.query(detail::with_word(example.tokens, position, std::string(Vocabulary::kUnkWord)))[example.label];
  return base - probed;
}

/// Probability-weighted word saliency: per position take the candidate with the
/// largest gold-probability drop, rank positions by drop x softmax(saliency),
/// then substitute in that order until the prediction flips.
inline AttackRecord pwws_attack(VictimHandle& victim, const Example& example, const SynonymLexicon& lexicon,
                                const EmbeddingTable& embeddings, const AttackConfig& config) {
  config.validate();
  auto rec = detail::start_record(example);
  detail::BudgetedVictim q(victim, config.query_budget);
  const auto& x = example.tokens;
  const std::size_t gold = example.label;
  try {
    auto p0 = q.query(x);
    if (p0.argmax() != gold) {
      rec.success = true;
      rec.pre_misclassified = true;
      return detail::finish(rec, q.used());
    }
    const double base = p0[gold];
    std::vector<double> saliency(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      saliency[i] = base - q.query(detail::with_word(x, i, std::string(Vocabulary::kUnkWord)))[gold];
    }
    struct Choice {
      std::size_t position;
      std::string word;
      double drop;
    };
    std::vector<Choice> choices;
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto cands = candidates(lexicon, embeddings, x[i], config.sim_threshold, config.top_k);
      std::optional<Choice> best;
      for (const auto& c : cands.words) {
        double drop = base - q.query(detail::with_word(x, i, c))[gold];
        if (!best || drop > best->drop) best = Choice{i, c, drop};
      }
      if (best) choices.push_back(*best);
    }
    const auto weights = detail::softmax_of(saliency);
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t c = 0; c < choices.size(); ++c) {
      order.emplace_back(choices[c].drop * weights[choices[c].position], c);
    }
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    const std::size_t limit = config.max_substitutions(x.size());
    for (const auto& [score, c] : order) {
      if (rec.subs.size() >= limit) break;
      const auto& ch = choices[c];
      rec.adversarial[ch.position] = ch.word;
      rec.subs.push_back({ch.position, x[ch.position], ch.word});
      if (q.query(rec.adversarial).argmax() != gold) {
        rec.success = true;
        break;
      }
    }
  } catch (const detail::BudgetExhausted&) {
    rec.budget_exhausted = true;
    rec.success = false;
  }
  return detail::finish(rec, q.used());
}

/// Deletion-importance greedy search: visit positions by gold-probability drop
/// when the word is removed; at each commit a flipping candidate if one exists,
/// otherwise the candidate that lowers the gold probability the most.
inline AttackRecord textfooler_attack(VictimHandle& victim, const Example& example, const SynonymLexicon& lexicon,
                                      const EmbeddingTable& embeddings, const AttackConfig& config) {
  config.validate();
  auto rec = detail::start_record(example);
  detail::BudgetedVictim q(victim, config.query_budget);
  const auto& x = example.tokens;
  const std::size_t gold = example.label;
  try {
    auto p0 = q.query(x);
    if (p0.argmax() != gold) {
      rec.success = true;
      rec.pre_misclassified = true;
      return detail::finish(rec, q.used());
    }
    double current = p0[gold];
    std::vector<std::pair<double, std::size_t>> importance;
    for (std::size_t i = 0; i < x.size(); ++i) {
      importance.emplace_back(current - q.query(detail::without_word(x, i))[gold], i);
    }
    std::stable_sort(importance.begin(), importance.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    const std::size_t limit = config.max_substitutions(x.size());
    for (const auto& [imp, pos] : importance) {
      if (rec.subs.size() >= limit) break;
      auto cands = candidates(lexicon, embeddings, x[pos], config.sim_threshold, config.top_k);
      std::optional<std::string> best;
      double best_p = current;
      bool flipped = false;
      for (const auto& c : cands.words) {
        auto pred = q.query(detail::with_word(rec.adversarial, pos, c));
        if (pred.argmax() != gold) {
          best = c;
          flipped = true;
          break;
        }
        if (pred[gold] < best_p) {
          best = c;
          best_p = pred[gold];
        }
      }
      if (!best) continue;
      rec.adversarial[pos] = *best;
      rec.subs.push_back({pos, x[pos], *best});
      current = best_p;
      if (flipped) {
        rec.success = true;
        break;
      }
    }
  } catch (const detail::BudgetExhausted&) {
    rec.budget_exhausted = true;
    rec.success = false;
  }
  return detail::finish(rec, q.used());
}

/// Product over positions of (1 + candidate count).
inline double search_space_size(const Tokens& tokens, const SynonymLexicon& lexicon, const EmbeddingTable& embeddings,
                                const AttackConfig& config) {
  double size = 1.0;
  for (const auto& w : tokens) {
    size *= 1.0 + static_cast<double>(
                      candidates(lexicon, embeddings, w, config.sim_threshold, config.top_k).words.size());
  }
  return size;
}

/// Exhaustive oracle. Enumerates substitution sets by increasing size, position
/// subsets in lexicographic order, candidates in lexicon order, and returns the
/// first flip (hence one of minimal size). Ignores the query budget; refuses
/// search spaces above config.brute_cap.
inline AttackRecord brute_force_attack(VictimHandle& victim, const Example& example, const SynonymLexicon& lexicon,
                                       const EmbeddingTable& embeddings, const AttackConfig& config) {
  config.validate();
  const auto& x = example.tokens;
  const std::size_t gold = example.label;
  const double space = search_space_size(x, lexicon, embeddings, config);
  if (space > config.brute_cap) {
    throw InputError("brute-force search space " + std::to_string(space) + " exceeds cap " +
                     std::to_string(config.brute_cap));
  }
  auto rec = detail::start_record(example);
  std::size_t used = 0;
  auto query = [&](const Tokens& t) {
    ++used;
    return victim.query(t);
  };
  if (query(x).argmax() != gold) {
    rec.success = true;
    rec.pre_misclassified = true;
    return detail::finish(rec, used);
  }
  std::vector<std::size_t> open;  // positions with at least one candidate
  std::vector<std::vector<std::string>> cands(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    cands[i] = candidates(lexicon, embeddings, x[i], config.sim_threshold, config.top_k).words;
    if (!cands[i].empty()) open.push_back(i);
  }
  const std::size_t limit = std::min(config.max_substitutions(x.size()), open.size());
  for (std::size_t k = 1; k <= limit; ++k) {
    std::vector<std::size_t> pick(k);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    for (;;) {
      std::vector<std::size_t> choice(k, 0);
      // Odometer over candidate indices, last position fastest.
      auto advance = [&] {
        for (std::size_t s = k; s-- > 0;) {
          if (++choice[s] < cands[open[pick[s]]].size()) return true;
          choice[s] = 0;
        }
        return false;
      };
      do {
        Tokens trial = x;
        for (std::size_t s = 0; s < k; ++s) trial[open[pick[s]]] = cands[open[pick[s]]][choice[s]];
        if (query(trial).argmax() != gold) {
          rec.adversarial = trial;
          for (std::size_t s = 0; s < k; ++s) {
            const auto pos = open[pick[s]];
            rec.subs.push_back({pos, x[pos], trial[pos]});
          }
          rec.success = true;
          return detail::finish(rec, used);
        }
      } while (advance());
      // Next k-subset of `open` in lexicographic order.
      std::size_t i = k;
      while (i > 0 && pick[i - 1] == open.size() - k + i - 1) --i;
      if (i == 0) break;
      ++pick[i - 1];
      for (std::size_t j = i; j < k; ++j) pick[j] = pick[j - 1] + 1;
    }
  }
  return detail::finish(rec, used);
}

inline AttackRecord run_attack(VictimHandle& victim, const Example& example, const SynonymLexicon& lexicon,
                               const EmbeddingTable& embeddings, const AttackConfig& config) {
  switch (config.kind) {
    case AttackerKind::pwws: return pwws_attack(victim, example, lexicon, embeddings, config);
    case AttackerKind::textfooler: return textfooler_attack(victim, example, lexicon, embeddings, config);
    case AttackerKind::brute: return brute_force_attack(victim, example, lexicon, embeddings, config);
  }
  throw ConfigError("unknown attacker");
}

/// Attacks every example. Workers own their query counters; the total is added
/// to `victim` afterwards. Records come back in dataset order. Per-example
/// failures become records with `error` set and never abort the batch.
inline std::vector<AttackRecord> attack_dataset(VictimHandle& victim, const Dataset& dataset,
                                                const SynonymLexicon& lexicon, const EmbeddingTable& embeddings,
                                                const AttackConfig& config, std::size_t threads = default_threads()) {
  config.validate();
  std::vector<AttackRecord> records(dataset.size());
  std::vector<std::size_t> used(dataset.size(), 0);
  parallel_for(dataset.size(), threads, [&](std::size_t i) {
    VictimHandle local = victim.fresh();
    const auto& ex = dataset.examples[i];
    try {
      records[i] = run_attack(local, ex, lexicon, embeddings, config);
    } catch (const std::exception& e) {
      records[i] = detail::start_record(ex);
      records[i].error = e.what();
    }
    records[i].queries = local.queries();
    used[i] = local.queries();
  });
  for (auto u : used) victim.add_queries(u);
  return records;
}

struct AttackSummary {
  std::size_t attacked = 0;
  std::size_t successes = 0;
  std::size_t genuine_successes = 0;
  std::size_t pre_misclassified = 0;
  std::size_t errors = 0;
  std::size_t queries = 0;
  /// Mean modification rate over successes that needed >= 1 substitution.
  double avg_mod_rate = 0.0;
};

inline AttackSummary summarize(const std::vector<AttackRecord>& records) {
  AttackSummary s;
  double rate_sum = 0.0;
  for (const auto& r : records) {
    ++s.attacked;
    s.queries += r.queries;
    if (!r.error.empty()) ++s.errors;
    if (r.success) ++s.successes;
    if (r.pre_misclassified) ++s.pre_misclassified;
    if (r.genuine_success()) {
      ++s.genuine_successes;
      rate_sum += r.mod_rate;
    }
  }
  s.avg_mod_rate = s.genuine_successes ? rate_sum / static_cast<double>(s.genuine_successes) : 0.0;
  return s;
}

inline nlohmann::json to_json(const AttackRecord& r) {
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& s : r.subs) subs.push_back({s.position, s.old_word, s.new_word});
  return {{"id", r.id},           {"orig_tokens", r.original}, {"adv_tokens", r.adversarial}, {"subs", subs},
          {"success", r.success}, {"queries", r.queries},      {"mod_rate", r.mod_rate}};
}

inline AttackRecord attack_record_from_json(const nlohmann::json& j) {
  AttackRecord r;
  try {
    r.id = j.at("id").get<std::size_t>();
    r.original = j.at("orig_tokens").get<Tokens>();
    r.adversarial = j.at("adv_tokens").get<Tokens>();
    for (const auto& s : j.at("subs")) {
      r.subs.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::string>(), s.at(2).get<std::string>()});
    }
    r.success = j.at("success").get<bool>();
    r.queries = j.at("queries").get<std::size_t>();
    r.mod_rate = j.at("mod_rate").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad attack record: ") + e.what());
  }
  r.pre_misclassified = r.success && r.subs.empty();
  return r;
}

inline void write_attack_records(std::ostream& out, const std::vector<AttackRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<AttackRecord> read_attack_records(std::istream& in) {
  std::vector<AttackRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    auto j = detail::parse_json_line(line, lineno);
    if (detail::is_meta(j)) continue;
    out.push_back(attack_record_from_json(j));
  }
  return out;
}

}  // namespace amda
