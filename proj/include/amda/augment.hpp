#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amda/attack.hpp"
#include "amda/corpus.hpp"
#include "amda/eval.hpp"
#include "amda/mixup.hpp"
#include "amda/model.hpp"
#include "amda/rng.hpp"
#include "amda/train.hpp"

namespace amda {

struct Provenance {
  bool adversarial = false;
  std::size_t parent = 0;
  AttackerKind attacker = AttackerKind::pwws;
  /// Training epoch whose model generated the entry (iterative schedule only).
  std::size_t epoch = 0;

  bool operator==(const Provenance&) const = default;
};

struct AugmentedEntry {
  Example example;
  Provenance provenance;

  bool operator==(const AugmentedEntry&) const = default;
};

/// D_ori followed by D_adv. Adversarial entries keep their parent's label;
/// duplicates across attackers are kept.
struct AugmentedDataset {
  std::vector<AugmentedEntry> entries;
  std::size_t label_count = 0;

  static AugmentedDataset from_original(const Dataset& ds) {
    AugmentedDataset a;
    a.label_count = ds.label_count;
    for (const auto& ex : ds.examples) a.entries.push_back({ex, {}});
    return a;
  }

  std::size_t size() const { return entries.size(); }
  std::size_t adversarial_count() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.provenance.adversarial; }));
  }
  std::size_t original_count() const { return size() - adversarial_count(); }

  void validate() const {
    std::map<std::size_t, std::size_t> originals;  // id -> label
    for (const auto& e : entries) {
      if (e.example.tokens.empty()) throw SchemaError("augmented entry without tokens");
      if (e.example.label >= label_count) throw SchemaError("augmented entry label out of range");
      if (!e.provenance.adversarial && !originals.emplace(e.example.id, e.example.label).second) {
        throw SchemaError("duplicate original id " + std::to_string(e.example.id));
      }
    }
    for (const auto& e : entries) {
      if (!e.provenance.adversarial) continue;
      auto it = originals.find(e.provenance.parent);
      if (it == originals.end()) {
        throw SchemaError("adversarial entry " + std::to_string(e.example.id) + " has no parent original");
      }
      if (it->second != e.example.label) {
        throw SchemaError("adversarial entry " + std::to_string(e.example.id) + " changes its parent's label");
      }
    }
  }

  std::vector<EncodedExample> encode(const Vocabulary& vocab) const {
    std::vector<EncodedExample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back({e.example.id, vocab.encode(e.example.tokens), e.example.label});
    return out;
  }
};

enum class AdaSchedule { one_shot, iterative };

struct ADAConfig {
  double ratio = 1.0;
  std::vector<AttackerKind> attackers{AttackerKind::pwws, AttackerKind::textfooler};
  AdaSchedule schedule = AdaSchedule::one_shot;

  void validate() const {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("ada.ratio must be in (0, 1]");
    if (attackers.empty()) throw ConfigError("ada.attackers must name at least one attacker");
  }

  /// ceil(ratio * n)
  std::size_t sample_count(std::size_t n) const {
    auto m = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
    return std::min(n, m);
  }
};

struct AdaSummary {
  std::size_t sampled = 0;
  std::size_t attacks = 0;
  std::size_t added = 0;
  std::size_t failed = 0;
  std::size_t pre_misclassified = 0;
  std::size_t errors = 0;
};

struct AdaResult {
  AugmentedDataset data;
  /// Attack records in attacker order, then sampled-example id order.
  std::vector<AttackRecord> records;
  AdaSummary summary;
};

namespace detail {

inline Dataset sample_originals(const Dataset& train, const ADAConfig& ada, Rng& rng) {
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);
  order.resize(ada.sample_count(train.size()));
  std::sort(order.begin(), order.end());
  Dataset picked;
  picked.label_count = train.label_count;
  picked.split = train.split;
  for (auto i : order) picked.examples.push_back(train.examples[i]);
  return picked;
}

// Appends successful flips (>= 1 substitution) to `out`.
inline void attack_and_collect(VictimHandle& victim, const Dataset& sampled, const SynonymLexicon& lexicon,
                               const EmbeddingTable& embeddings, AttackConfig attack, const ADAConfig& ada,
                               std::size_t epoch, std::size_t threads, AdaResult& out) {
  std::size_t next_id = 0;
  for (const auto& e : out.data.entries) next_id = std::max(next_id, e.example.id + 1);
  for (auto kind : ada.attackers) {
    attack.kind = kind;
    auto records = attack_dataset(victim, sampled, lexicon, embeddings, attack, threads);
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      ++out.summary.attacks;
      if (!r.error.empty()) {
        ++out.summary.errors;
      } else if (r.pre_misclassified) {
        ++out.summary.pre_misclassified;
      } else if (r.genuine_success()) {
        Example adv{next_id++, r.adversarial, sampled.examples[i].label};
        out.data.entries.push_back({std::move(adv), {true, r.id, kind, epoch}});
        ++out.summary.added;
      } else {
        ++out.summary.failed;
      }
    }
    out.records.insert(out.records.end(), records.begin(), records.end());
  }
}

}  // namespace detail

/// Attacks a ceil(ratio * n) sample of the training set and returns
/// D_ori plus every successful, label-preserving flip.
inline AdaResult generate_ada(VictimHandle& victim, const Dataset& train, const SynonymLexicon& lexicon,
                              const EmbeddingTable& embeddings, const AttackConfig& attack, const ADAConfig& ada,
                              std::uint64_t seed, std::size_t threads = default_threads()) {
  ada.validate();
  attack.validate();
  Rng rng(derive_seed(seed, seed_stream::ada_sample));
  AdaResult out;
  out.data = AugmentedDataset::from_original(train);
  auto sampled = detail::sample_originals(train, ada, rng);
  out.summary.sampled = sampled.size();
  detail::attack_and_collect(victim, sampled, lexicon, embeddings, attack, ada, 0, threads, out);
  return out;
}

/// CE over all of D_ADA plus KL over pairs_per_epoch virtual examples per
/// epoch, parents drawn uniformly from D_ADA.
inline Classifier train_amda(const AugmentedDataset& augmented, const Vocabulary& vocab, const ModelShape& shape,
                             const MixupConfig& mixup, const TrainingConfig& training,
                             const std::function<void(const EpochStats&)>& on_epoch = {}) {
  if (augmented.entries.empty()) throw InputError("augmented dataset is empty");
  augmented.validate();
  return train_classifier(vocab, augmented.encode(vocab), shape, training, mixup, on_epoch);
}

/// Baseline: original data, no virtual examples.
inline Classifier train_standard(const Dataset& train, const Vocabulary& vocab, const ModelShape& shape,
                                 const TrainingConfig& training) {
  return train_amda(AugmentedDataset::from_original(train), vocab, shape, MixupConfig{}, training);
}

struct IterativeAdaResult {
  Classifier model;
  /// D_ADA used in each epoch; provenance.epoch records the generating epoch.
  std::vector<AugmentedDataset> per_epoch;
  std::vector<AdaSummary> summaries;
};

/// Regenerates D_adv at the start of every epoch using the current parameters
/// as the victim, then trains one epoch on D_ori plus that D_adv.
inline IterativeAdaResult train_iterative_ada(const Dataset& train, const Vocabulary& vocab, ModelShape shape,
                                              const SynonymLexicon& lexicon, const EmbeddingTable& embeddings,
                                              const AttackConfig& attack, const ADAConfig& ada,
                                              const MixupConfig& mixup, const TrainingConfig& training,
                                              std::size_t threads = default_threads()) {
  ada.validate();
  attack.validate();
  training.validate();
  shape.vocab_size = vocab.size();
  Rng rng(derive_seed(training.seed, seed_stream::ada_sample));
  Trainer trainer(init_params(shape, training.seed), training, mixup);
  IterativeAdaResult result;
  for (std::size_t epoch = 0; epoch < training.epochs; ++epoch) {
    Classifier current{vocab, trainer.params(), training.seed, {}};
    auto victim = make_victim(current);
    AdaResult step;
    step.data = AugmentedDataset::from_original(train);
    auto sampled = detail::sample_originals(train, ada, rng);
    step.summary.sampled = sampled.size();
    detail::attack_and_collect(victim, sampled, lexicon, embeddings, attack, ada, epoch, threads, step);
    trainer.run_epoch(step.data.encode(vocab));
    result.per_epoch.push_back(std::move(step.data));
    result.summaries.push_back(step.summary);
  }
  result.model = Classifier{vocab, trainer.params(), training.seed, {}};
  return result;
}

enum class SweepAxis { ratio, alpha };

inline std::string to_string(SweepAxis a) { return a == SweepAxis::ratio ? "ratio" : "alpha"; }

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "ratio") return SweepAxis::ratio;
  if (s == "alpha") return SweepAxis::alpha;
  throw ConfigError("sweep.axis must be ratio or alpha, got '" + s + "'");
}

struct SweepRow {
  double value = 0.0;
  double clean_accuracy = 0.0;
  double after_attack_accuracy = 0.0;
  double avg_mod_rate = 0.0;
  std::size_t adversarial_added = 0;
  std::string error;
};

struct SweepReport {
  SweepAxis axis = SweepAxis::ratio;
  AttackerKind attacker = AttackerKind::pwws;
  std::vector<SweepRow> rows;

  std::string csv() const {
    std::ostringstream s;
    s << to_string(axis) << ",clean_accuracy,after_attack_accuracy,avg_mod_rate,adversarial_added,error\n";
    for (const auto& r : rows) {
      s << std::setprecision(17) << r.value << ',' << fmt2(r.clean_accuracy) << ',' << fmt2(r.after_attack_accuracy)
        << ',' << fmt2(100.0 * r.avg_mod_rate) << ',' << r.adversarial_added << ',' << r.error << '\n';
    }
    return s.str();
  }

  std::string markdown() const {
    std::ostringstream s;
    s << "| " << to_string(axis) << " | clean | after-attack (" << to_string(attacker) << ") | mod rate | D_adv |\n";
    s << "|---|---|---|---|---|\n";
    for (const auto& r : rows) {
      s << "| " << r.value << " | ";
      if (!r.error.empty()) {
        s << "error: " << r.error << " | | | |\n";
        continue;
      }
      s << fmt2(r.clean_accuracy) << " | " << fmt2(r.after_attack_accuracy) << " | " << fmt2(100.0 * r.avg_mod_rate)
        << "% | " << r.adversarial_added << " |\n";
    }
    return s.str();
  }
};

struct SweepInputs {
  const Dataset& train;
  const Dataset& test;
  const SynonymLexicon& lexicon;
  const EmbeddingTable& embeddings;
  ModelShape shape;
  TrainingConfig training;
  MixupConfig mixup;
  ADAConfig ada;
  /// Attacker used for both augmentation settings and TAE scoring.
  AttackConfig attack;
};

/// One AMDA model per value of the swept hyper-parameter, all else fixed, each
/// scored under TAE. The victim used for augmentation is trained once.
inline SweepReport sweep(const SweepInputs& in, SweepAxis axis, const std::vector<double>& values,
                         std::size_t threads = default_threads()) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  SweepReport report;
  report.axis = axis;
  report.attacker = in.attack.kind;
  const auto vocab = build_vocabulary(in.train, in.lexicon);
  const auto victim_model = train_standard(in.train, vocab, in.shape, in.training);
  for (double v : values) {
    SweepRow row;
    row.value = v;
    try {
      auto ada = in.ada;
      auto mixup = in.mixup;
      if (axis == SweepAxis::ratio) ada.ratio = v;
      else mixup.alpha = v;
      auto victim = make_victim(victim_model);
      auto gen = generate_ada(victim, in.train, in.lexicon, in.embeddings, in.attack, ada, in.training.seed, threads);
      row.adversarial_added = gen.summary.added;
      auto model = train_amda(gen.data, vocab, in.shape, mixup, in.training);
      auto rep = evaluate_tae(model, in.test, in.lexicon, in.embeddings, in.attack, nullptr, threads);
      row.clean_accuracy = rep.clean_accuracy;
      row.after_attack_accuracy = rep.after_attack_accuracy;
      row.avg_mod_rate = rep.avg_mod_rate;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline nlohmann::json to_json(const AugmentedEntry& e) {
  nlohmann::json prov;
  if (e.provenance.adversarial) {
    prov = {{"type", "adversarial"},
            {"parent", e.provenance.parent},
            {"attacker", to_string(e.provenance.attacker)},
            {"epoch", e.provenance.epoch}};
  } else {
    prov = {{"type", "original"}};
  }
  return {{"id", e.example.id}, {"text", join_tokens(e.example.tokens)}, {"label", e.example.label},
          {"provenance", prov}};
}

inline void write_augmented(std::ostream& out, const AugmentedDataset& a) {
  for (const auto& e : a.entries) out << to_json(e).dump() << '\n';
}

inline AugmentedDataset read_augmented(std::istream& in, std::optional<std::size_t> label_count = std::nullopt) {
  AugmentedDataset a;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    auto j = detail::parse_json_line(line, lineno);
    if (detail::is_meta(j)) continue;
    AugmentedEntry e;
    try {
      e.example.id = j.at("id").get<std::size_t>();
      e.example.tokens = tokenize(j.at("text").get<std::string>());
      e.example.label = j.at("label").get<std::size_t>();
      const auto& p = j.at("provenance");
      if (p.at("type").get<std::string>() == "adversarial") {
        e.provenance.adversarial = true;
        e.provenance.parent = p.at("parent").get<std::size_t>();
        e.provenance.attacker = parse_attacker(p.at("attacker").get<std::string>());
        e.provenance.epoch = p.value("epoch", std::size_t{0});
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("bad augmented record: ") + ex.what(), lineno);
    }
    max_label = std::max(max_label, e.example.label);
    a.entries.push_back(std::move(e));
  }
  a.label_count = label_count ? *label_count : (a.entries.empty() ? 0 : max_label + 1);
  return a;
}

}  // namespace amda
