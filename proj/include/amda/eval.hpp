#pragma once

#include <cstddef>
#include <cstdio>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amda/attack.hpp"
#include "amda/checkpoint.hpp"
#include "amda/corpus.hpp"
#include "amda/model.hpp"
#include "amda/train.hpp"

namespace amda {

enum class EvalMode { sae, tae };

inline std::string to_string(EvalMode m) { return m == EvalMode::sae ? "SAE" : "TAE"; }

/// Percentage of examples whose argmax prediction equals the gold label.
inline double accuracy(const Classifier& model, const Dataset& data) {
  if (data.empty()) throw InputError("accuracy of an empty dataset is undefined");
  std::size_t right = 0;
  for (const auto& ex : data.examples) right += model.predict(ex.tokens).argmax() == ex.label;
  return 100.0 * static_cast<double>(right) / static_cast<double>(data.size());
}

/// Adversarial test set generated once against a victim. Entries whose attack
/// failed keep the original tokens.
struct FixedAdversarialSet {
  struct Entry {
    std::size_t id = 0;
    Tokens tokens;
    std::size_t label = 0;
    std::size_t substitutions = 0;

    bool operator==(const Entry&) const = default;
  };

  std::string victim_checkpoint;
  std::string attacker_config_hash;
  AttackerKind attacker = AttackerKind::pwws;
  std::vector<Entry> entries;

  bool operator==(const FixedAdversarialSet&) const = default;
};

struct RobustnessReport {
  std::string model;
  std::string checkpoint;
  double clean_accuracy = 0.0;
  double after_attack_accuracy = 0.0;
  /// Mean over successful attacks that needed at least one substitution.
  double avg_mod_rate = 0.0;
  AttackerKind attacker = AttackerKind::pwws;
  EvalMode mode = EvalMode::tae;
  std::size_t queries = 0;
  std::size_t examples = 0;
  std::size_t errors = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string attacker_config_hash;
};

/// Attacks every test example against the victim.
inline FixedAdversarialSet build_sae_set(const Classifier& victim, const Dataset& test, const SynonymLexicon& lexicon,
                                         const EmbeddingTable& embeddings, const AttackConfig& config,
                                         std::size_t threads = default_threads()) {
  auto handle = make_victim(victim);
  auto records = attack_dataset(handle, test, lexicon, embeddings, config, threads);
  FixedAdversarialSet set;
  set.victim_checkpoint = checkpoint_hash(victim);
  set.attacker_config_hash = config.hash();
  set.attacker = config.kind;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const bool keep = r.success && r.error.empty();
    set.entries.push_back({r.id, keep ? r.adversarial : r.original, test.examples[i].label, keep ? r.subs.size() : 0});
  }
  return set;
}

/// Accuracy on the stored adversarial sequences. An example counts as robust
/// only when the model is right on both the clean and stored versions. Issues
/// no attack queries.
inline RobustnessReport evaluate_sae(const Classifier& model, const FixedAdversarialSet& set, const Dataset& test) {
  if (set.entries.size() != test.size()) throw SchemaError("SAE set does not match the test set size");
  if (test.empty()) throw InputError("empty test set");
  RobustnessReport rep;
  rep.mode = EvalMode::sae;
  rep.attacker = set.attacker;
  rep.attacker_config_hash = set.attacker_config_hash;
  rep.checkpoint = checkpoint_hash(model);
  rep.seed = model.seed;
  rep.examples = test.size();
  std::size_t clean = 0, robust = 0, fooled = 0;
  double rate_sum = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& ex = test.examples[i];
    const auto& entry = set.entries[i];
    if (entry.id != ex.id || entry.label != ex.label) {
      throw SchemaError("SAE entry " + std::to_string(entry.id) + " does not match test example " +
                        std::to_string(ex.id));
    }
    const bool clean_ok = model.predict(ex.tokens).argmax() == ex.label;
    const bool adv_ok = model.predict(entry.tokens).argmax() == ex.label;
    clean += clean_ok;
    robust += clean_ok && adv_ok;
    if (clean_ok && !adv_ok && entry.substitutions > 0) {
      ++fooled;
      rate_sum += static_cast<double>(entry.substitutions) / static_cast<double>(ex.tokens.size());
    }
  }
  const double n = static_cast<double>(test.size());
  rep.clean_accuracy = 100.0 * static_cast<double>(clean) / n;
  rep.after_attack_accuracy = 100.0 * static_cast<double>(robust) / n;
  rep.avg_mod_rate = fooled ? rate_sum / static_cast<double>(fooled) : 0.0;
  return rep;
}

/// Attacks the evaluated model itself. Pre-existing errors and per-example
/// attack errors count as attacker wins.
inline RobustnessReport evaluate_tae(const Classifier& model, const Dataset& test, const SynonymLexicon& lexicon,
                                     const EmbeddingTable& embeddings, const AttackConfig& config,
                                     std::vector<AttackRecord>* records_out = nullptr,
                                     std::size_t threads = default_threads()) {
  if (test.empty()) throw InputError("empty test set");
  auto handle = make_victim(model);
  auto records = attack_dataset(handle, test, lexicon, embeddings, config, threads);
  RobustnessReport rep;
  rep.mode = EvalMode::tae;
  rep.attacker = config.kind;
  rep.attacker_config_hash = config.hash();
  rep.checkpoint = checkpoint_hash(model);
  rep.seed = model.seed;
  rep.examples = test.size();
  rep.queries = handle.queries();
  std::size_t robust = 0;
  for (const auto& r : records) {
    if (!r.error.empty()) ++rep.errors;
    robust += r.error.empty() && !r.success;
  }
  rep.clean_accuracy = accuracy(model, test);
  rep.after_attack_accuracy = 100.0 * static_cast<double>(robust) / static_cast<double>(test.size());
  rep.avg_mod_rate = summarize(records).avg_mod_rate;
  if (records_out) *records_out = std::move(records);
  return rep;
}

inline nlohmann::json to_json(const RobustnessReport& r) {
  return {{"model", r.model},
          {"checkpoint", r.checkpoint},
          {"clean_accuracy", r.clean_accuracy},
          {"after_attack_accuracy", r.after_attack_accuracy},
          {"avg_mod_rate", r.avg_mod_rate},
          {"attacker", to_string(r.attacker)},
          {"mode", to_string(r.mode)},
          {"queries", r.queries},
          {"examples", r.examples},
          {"errors", r.errors},
          {"seed", r.seed},
          {"config_hash", r.config_hash},
          {"attacker_config_hash", r.attacker_config_hash}};
}

inline RobustnessReport report_from_json(const nlohmann::json& j) {
  RobustnessReport r;
  try {
    r.model = j.at("model").get<std::string>();
    r.checkpoint = j.value("checkpoint", "");
    r.clean_accuracy = j.at("clean_accuracy").get<double>();
    r.after_attack_accuracy = j.at("after_attack_accuracy").get<double>();
    r.avg_mod_rate = j.at("avg_mod_rate").get<double>();
    r.attacker = parse_attacker(j.at("attacker").get<std::string>());
    r.mode = j.at("mode").get<std::string>() == "SAE" ? EvalMode::sae : EvalMode::tae;
    r.queries = j.value("queries", std::size_t{0});
    r.examples = j.value("examples", std::size_t{0});
    r.errors = j.value("errors", std::size_t{0});
    r.seed = j.value("seed", std::uint64_t{0});
    r.config_hash = j.value("config_hash", "");
    r.attacker_config_hash = j.value("attacker_config_hash", "");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad robustness report: ") + e.what());
  }
  return r;
}

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

/// `| model | mode | attacker | clean | after-attack (mod%) |`
inline std::string markdown_row(const RobustnessReport& r) {
  return "| " + r.model + " | " + to_string(r.mode) + " | " + to_string(r.attacker) + " | " + fmt2(r.clean_accuracy) +
         " | " + fmt2(r.after_attack_accuracy) + " (" + fmt2(100.0 * r.avg_mod_rate) + "%) |";
}

inline void write_sae_set(std::ostream& out, const FixedAdversarialSet& set) {
  nlohmann::json header{{"_meta",
                         {{"victim_checkpoint", set.victim_checkpoint},
                          {"attacker_config_hash", set.attacker_config_hash},
                          {"attacker", to_string(set.attacker)}}}};
  out << header.dump() << '\n';
  for (const auto& e : set.entries) {
    nlohmann::json j{{"id", e.id}, {"adv_tokens", e.tokens}, {"label", e.label}, {"subs", e.substitutions}};
    out << j.dump() << '\n';
  }
}

inline FixedAdversarialSet read_sae_set(std::istream& in) {
  FixedAdversarialSet set;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    auto j = detail::parse_json_line(line, lineno);
    try {
      if (detail::is_meta(j)) {
        const auto& m = j["_meta"];
        set.victim_checkpoint = m.at("victim_checkpoint").get<std::string>();
        set.attacker_config_hash = m.at("attacker_config_hash").get<std::string>();
        set.attacker = parse_attacker(m.at("attacker").get<std::string>());
        have_header = true;
        continue;
      }
      set.entries.push_back({j.at("id").get<std::size_t>(), j.at("adv_tokens").get<Tokens>(),
                             j.at("label").get<std::size_t>(), j.value("subs", std::size_t{0})});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad SAE record: ") + e.what(), lineno);
    }
  }
  if (!have_header) throw SchemaError("SAE set lacks its victim checkpoint header");
  return set;
}

/// Victim-vs-reseeded comparison: one row per seed, SAE and TAE per attacker.
struct SeedSensitivityRow {
  std::uint64_t seed = 0;
  bool victim = false;
  double clean_accuracy = 0.0;
  std::map<std::string, RobustnessReport> sae;  // by attacker name
  std::map<std::string, RobustnessReport> tae;
};

struct SeedSensitivityTable {
  std::vector<SeedSensitivityRow> rows;
  std::vector<std::string> attackers;

  std::string markdown() const {
    std::ostringstream s;
    s << "| model | seed | clean |";
    for (const auto& a : attackers) s << ' ' << a << "-d | " << a << "-s |";
    s << "\n|---|---|---|";
    for (std::size_t i = 0; i < attackers.size(); ++i) s << "---|---|";
    s << '\n';
    std::size_t reseed = 0;
    for (const auto& r : rows) {
      s << "| " << (r.victim ? std::string("victim") : "reseeded-" + std::to_string(++reseed)) << " | " << r.seed
        << " | " << fmt2(r.clean_accuracy) << " |";
      for (const auto& a : attackers) {
        s << ' ' << fmt2(r.tae.at(a).after_attack_accuracy) << " | " << fmt2(r.sae.at(a).after_attack_accuracy)
          << " |";
      }
      s << '\n';
    }
    return s.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json row{{"seed", r.seed}, {"victim", r.victim}, {"clean_accuracy", r.clean_accuracy}};
      for (const auto& a : attackers) {
        row["tae_" + a] = r.tae.at(a).after_attack_accuracy;
        row["sae_" + a] = r.sae.at(a).after_attack_accuracy;
      }
      rows_json.push_back(row);
    }
    return {{"attackers", attackers}, {"rows", rows_json}};
  }
};

/// Trains the victim with seeds[0], builds one SAE set per attacker, retrains
/// with each remaining seed and scores every model under SAE and TAE.
inline SeedSensitivityTable seed_sensitivity_experiment(const Dataset& train, const Dataset& test,
                                                        const SynonymLexicon& lexicon,
                                                        const EmbeddingTable& embeddings, const ModelShape& shape,
                                                        TrainingConfig training,
                                                        const std::vector<std::uint64_t>& seeds,
                                                        const std::vector<AttackConfig>& attackers,
                                                        std::size_t threads = default_threads()) {
  if (seeds.size() < 2) throw ConfigError("seed sensitivity needs at least two seeds");
  if (attackers.empty()) throw ConfigError("seed sensitivity needs at least one attacker");
  const auto vocab = build_vocabulary(train, lexicon);
  const auto data = encode(vocab, train);
  SeedSensitivityTable table;
  for (const auto& a : attackers) table.attackers.push_back(to_string(a.kind));

  std::vector<Classifier> models;
  for (auto seed : seeds) {
    training.seed = seed;
    models.push_back(train_classifier(vocab, data, shape, training, MixupConfig{}));
  }
  std::vector<FixedAdversarialSet> sae_sets;
  for (const auto& a : attackers) sae_sets.push_back(build_sae_set(models[0], test, lexicon, embeddings, a, threads));

  for (std::size_t m = 0; m < models.size(); ++m) {
    SeedSensitivityRow row;
    row.seed = seeds[m];
    row.victim = m == 0;
    row.clean_accuracy = accuracy(models[m], test);
    for (std::size_t a = 0; a < attackers.size(); ++a) {
      const auto name = to_string(attackers[a].kind);
      row.sae[name] = evaluate_sae(models[m], sae_sets[a], test);
      row.tae[name] = evaluate_tae(models[m], test, lexicon, embeddings, attackers[a], nullptr, threads);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace amda
