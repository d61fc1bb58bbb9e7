#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amda/augment.hpp"
#include "amda/checkpoint.hpp"
#include "amda/config.hpp"
#include "amda/corpus.hpp"
#include "amda/error.hpp"
#include "amda/eval.hpp"
#include "amda/parallel.hpp"

namespace amda::cli {

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"train",    "attack",   "augment", "train-amda", "eval-sae",
                                              "eval-tae", "seed-exp", "sweep",   "report"};
  return names;
}

struct RunOptions {
  /// Checkpoint written by train / train-amda (empty: "model" / "amda").
  std::string name;
  /// Checkpoint attacked or evaluated (empty: "model").
  std::string model;
  /// Victim checkpoint for eval-sae and augment (empty: "model").
  std::string victim;
  std::size_t threads = default_threads();
};

/// Applies AMDA_OUTPUT_DIR and AMDA_THREADS.
inline void apply_environment(ExperimentConfig& config, RunOptions& options) {
  if (const char* dir = std::getenv("AMDA_OUTPUT_DIR"); dir && *dir) config.output_dir = dir;
  options.threads = default_threads();
}

namespace detail {

namespace fs = std::filesystem;

struct Context {
  const ExperimentConfig& config;
  const RunOptions& options;
  std::ostream& log;
  fs::path out;
  std::string hash;
  std::uint64_t seed;
};

inline nlohmann::json meta(const Context& ctx, const std::string& artifact) {
  return {{"_meta", {{"artifact", artifact}, {"config_hash", ctx.hash}, {"seed", ctx.seed}}}};
}

/// Writes through a temporary file so a crash never leaves a truncated artifact
/// under the final name.
inline void write_file(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
    if (!out) throw Error("failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::string with_footer(const Context& ctx, const std::string& markdown) {
  return markdown + "\n<!-- config_hash=" + ctx.hash + " seed=" + std::to_string(ctx.seed) + " -->\n";
}

inline std::string with_comment(const Context& ctx, const std::string& csv) {
  return "# config_hash=" + ctx.hash + " seed=" + std::to_string(ctx.seed) + "\n" + csv;
}

inline std::string pick(const std::string& value, const std::string& fallback) {
  return value.empty() ? fallback : value;
}

inline Dataset load_train(const ExperimentConfig& c) {
  auto ds = load_dataset(c.train_path, Split::train);
  ds.validate();
  return ds;
}

inline Dataset load_test(const ExperimentConfig& c, std::size_t label_count) {
  auto ds = load_dataset(c.test_path, Split::test, label_count);
  ds.validate();
  return ds;
}

inline Classifier load_model(const Context& ctx, const std::string& name) {
  auto path = ctx.out / (name + ".ckpt");
  if (!fs::exists(path)) throw InputError("checkpoint " + path.string() + " not found");
  return load_checkpoint(path.string());
}

inline void save_model(const Context& ctx, Classifier& model, const std::string& name,
                       const std::vector<EpochStats>& epochs) {
  model.config_hash = ctx.hash;
  save_checkpoint(model, (ctx.out / (name + ".ckpt")).string());
  nlohmann::json log = meta(ctx, "training log");
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"ce", e.loss.ce_term},
                    {"kl", e.loss.kl_term},
                    {"plain", e.plain_count},
                    {"virtual", e.virtual_count}});
  }
  log["model"] = name;
  log["checkpoint"] = checkpoint_hash(model);
  log["epochs"] = rows;
  write_file(ctx.out / ("train_" + name + ".json"), log.dump(2) + "\n");
}

inline std::function<void(const EpochStats&)> epoch_logger(const Context& ctx, std::vector<EpochStats>& epochs) {
  return [&ctx, &epochs](const EpochStats& e) {
    epochs.push_back(e);
    ctx.log << "epoch " << e.epoch << " ce " << e.loss.ce_term << " kl " << e.loss.kl_term << '\n';
  };
}

inline void cmd_train(const Context& ctx) {
  const auto& c = ctx.config;
  auto train = load_train(c);
  auto lexicon = load_lexicon(c.lexicon_path);
  auto vocab = build_vocabulary(train, lexicon);
  auto shape = c.shape;
  shape.classes = train.label_count;
  std::vector<EpochStats> epochs;
  auto model = train_classifier(vocab, encode(vocab, train), shape, c.training, MixupConfig{}, epoch_logger(ctx, epochs));
  save_model(ctx, model, pick(ctx.options.name, "model"), epochs);
}

inline void cmd_attack(const Context& ctx) {
  const auto& c = ctx.config;
  const auto name = pick(ctx.options.model, "model");
  auto model = load_model(ctx, name);
  auto test = load_test(c, model.params.class_count());
  auto lexicon = load_lexicon(c.lexicon_path);
  auto embeddings = load_embeddings(c.embeddings_path);
  auto victim = make_victim(model);
  auto records = attack_dataset(victim, test, lexicon, embeddings, c.attack, ctx.options.threads);
  const auto stem = "attack_" + name + "_" + to_string(c.attack.kind);
  std::ostringstream jsonl;
  jsonl << meta(ctx, "attack records").dump() << '\n';
  write_attack_records(jsonl, records);
  write_file(ctx.out / (stem + ".jsonl"), jsonl.str());
  auto s = summarize(records);
  nlohmann::json summary = meta(ctx, "attack summary");
  summary["model"] = name;
  summary["attacker"] = to_string(c.attack.kind);
  summary["attacker_config_hash"] = c.attack.hash();
  summary["attacked"] = s.attacked;
  summary["successes"] = s.successes;
  summary["genuine_successes"] = s.genuine_successes;
  summary["pre_misclassified"] = s.pre_misclassified;
  summary["errors"] = s.errors;
  summary["queries"] = s.queries;
  summary["avg_mod_rate"] = s.avg_mod_rate;
  write_file(ctx.out / (stem + "_summary.json"), summary.dump(2) + "\n");
  ctx.log << "attacked " << s.attacked << " successes " << s.genuine_successes << " queries " << s.queries << '\n';
}

inline nlohmann::json summary_json(const AdaSummary& s) {
  return {{"sampled", s.sampled},     {"attacks", s.attacks}, {"added", s.added},
          {"failed", s.failed},       {"pre_misclassified", s.pre_misclassified},
          {"errors", s.errors}};
}

inline void cmd_augment(const Context& ctx) {
  const auto& c = ctx.config;
  const auto victim_name = pick(ctx.options.victim, "model");
  auto model = load_model(ctx, victim_name);
  auto train = load_train(c);
  auto lexicon = load_lexicon(c.lexicon_path);
  auto embeddings = load_embeddings(c.embeddings_path);
  auto victim = make_victim(model);
  auto result = generate_ada(victim, train, lexicon, embeddings, c.attack, c.ada, ctx.seed, ctx.options.threads);
  std::ostringstream jsonl;
  auto header = meta(ctx, "augmented dataset");
  header["_meta"]["victim_checkpoint"] = checkpoint_hash(model);
  jsonl << header.dump() << '\n';
  write_augmented(jsonl, result.data);
  write_file(ctx.out / "augmented.jsonl", jsonl.str());
  std::ostringstream records;
  records << meta(ctx, "augmentation attack records").dump() << '\n';
  write_attack_records(records, result.records);
  write_file(ctx.out / "augment_records.jsonl", records.str());
  auto summary = meta(ctx, "augmentation summary");
  summary["victim"] = victim_name;
  summary["summary"] = summary_json(result.summary);
  write_file(ctx.out / "augment_summary.json", summary.dump(2) + "\n");
  ctx.log << "augmented: " << result.summary.added << " adversarial examples from " << result.summary.sampled
          << " sampled\n";
}

inline void cmd_train_amda(const Context& ctx) {
  const auto& c = ctx.config;
  const auto name = pick(ctx.options.name, "amda");
  auto train = load_train(c);
  auto lexicon = load_lexicon(c.lexicon_path);
  auto vocab = build_vocabulary(train, lexicon);
  auto shape = c.shape;
  shape.classes = train.label_count;
  std::vector<EpochStats> epochs;
  if (c.amda_use_adversarial && c.ada.schedule == AdaSchedule::iterative) {
    auto embeddings = load_embeddings(c.embeddings_path);
    auto result = train_iterative_ada(train, vocab, shape, lexicon, embeddings, c.attack, c.ada, c.mixup, c.training,
                                      ctx.options.threads);
    auto summary = meta(ctx, "iterative augmentation summary");
    nlohmann::json per_epoch = nlohmann::json::array();
    for (const auto& s : result.summaries) per_epoch.push_back(summary_json(s));
    summary["epochs"] = per_epoch;
    write_file(ctx.out / ("augment_" + name + "_iterative.json"), summary.dump(2) + "\n");
    save_model(ctx, result.model, name, epochs);
    return;
  }
  AugmentedDataset data;
  if (c.amda_use_adversarial) {
    auto path = ctx.out / "augmented.jsonl";
    if (!fs::exists(path)) throw InputError(path.string() + " not found; run augment first");
    std::ifstream in(path);
    data = read_augmented(in, train.label_count);
  } else {
    data = AugmentedDataset::from_original(train);
  }
  auto model = train_amda(data, vocab, shape, c.mixup, c.training, epoch_logger(ctx, epochs));
  save_model(ctx, model, name, epochs);
}

inline void write_report(const Context& ctx, RobustnessReport rep, const std::string& name) {
  rep.model = name;
  rep.config_hash = ctx.hash;
  rep.seed = ctx.seed;
  auto j = to_json(rep);
  const auto stem = "report_" + std::string(rep.mode == EvalMode::sae ? "sae" : "tae") + "_" + name + "_" +
                    to_string(rep.attacker);
  write_file(ctx.out / (stem + ".json"), j.dump(2) + "\n");
  ctx.log << markdown_row(rep) << '\n';
}

inline void cmd_eval_tae(const Context& ctx) {
  const auto& c = ctx.config;
  const auto name = pick(ctx.options.model, "model");
  auto model = load_model(ctx, name);
  auto test = load_test(c, model.params.class_count());
  auto lexicon = load_lexicon(c.lexicon_path);
  auto embeddings = load_embeddings(c.embeddings_path);
  std::vector<AttackRecord> records;
  auto rep = evaluate_tae(model, test, lexicon, embeddings, c.attack, &records, ctx.options.threads);
  std::ostringstream jsonl;
  jsonl << meta(ctx, "TAE attack records").dump() << '\n';
  write_attack_records(jsonl, records);
  write_file(ctx.out / ("tae_" + name + "_" + to_string(c.attack.kind) + ".jsonl"), jsonl.str());
  write_report(ctx, rep, name);
}

inline void cmd_eval_sae(const Context& ctx) {
  const auto& c = ctx.config;
  const auto name = pick(ctx.options.model, "model");
  const auto victim_name = pick(ctx.options.victim, "model");
  auto victim = load_model(ctx, victim_name);
  auto model = load_model(ctx, name);
  auto test = load_test(c, model.params.class_count());
  const auto set_path = ctx.out / ("sae_" + victim_name + "_" + to_string(c.attack.kind) + ".jsonl");
  FixedAdversarialSet set;
  bool reuse = false;
  if (fs::exists(set_path)) {
    std::ifstream in(set_path);
    set = read_sae_set(in);
    reuse = set.victim_checkpoint == checkpoint_hash(victim) && set.attacker_config_hash == c.attack.hash();
    if (!reuse) ctx.log << "stale SAE set " << set_path.string() << " (victim or attacker changed); rebuilding\n";
  }
  if (!reuse) {
    auto lexicon = load_lexicon(c.lexicon_path);
    auto embeddings = load_embeddings(c.embeddings_path);
    set = build_sae_set(victim, test, lexicon, embeddings, c.attack, ctx.options.threads);
    std::ostringstream jsonl;
    write_sae_set(jsonl, set);
    auto body = jsonl.str();
    const auto eol = body.find('\n');
    auto header = nlohmann::json::parse(body.substr(0, eol));
    header["_meta"].update(meta(ctx, "SAE set")["_meta"]);
    write_file(set_path, header.dump() + body.substr(eol));
  }
  write_report(ctx, evaluate_sae(model, set, test), name);
}

inline std::vector<std::uint64_t> seed_list(const ExperimentConfig& c) {
  if (!c.seed_exp_seeds.empty()) return c.seed_exp_seeds;
  const auto s = c.master_seed();
  return {s, s + 1, s + 2};
}

inline void cmd_seed_exp(const Context& ctx) {
  const auto& c = ctx.config;
  auto train = load_train(c);
  auto test = load_test(c, train.label_count);
  auto lexicon = load_lexicon(c.lexicon_path);
  auto embeddings = load_embeddings(c.embeddings_path);
  auto shape = c.shape;
  shape.classes = train.label_count;
  std::vector<AttackConfig> attackers;
  for (auto kind : {AttackerKind::pwws, AttackerKind::textfooler}) {
    auto a = c.attack;
    a.kind = kind;
    attackers.push_back(a);
  }
  auto table = seed_sensitivity_experiment(train, test, lexicon, embeddings, shape, c.training, seed_list(c), attackers,
                                           ctx.options.threads);
  auto j = table.to_json();
  j["_meta"] = meta(ctx, "seed sensitivity")["_meta"];
  write_file(ctx.out / "seed_exp.json", j.dump(2) + "\n");
  write_file(ctx.out / "seed_exp.md", with_footer(ctx, table.markdown()));
  ctx.log << table.markdown();
}

inline void cmd_sweep(const Context& ctx) {
  const auto& c = ctx.config;
  if (c.sweep_values.empty()) throw ConfigError("sweep.values: required for sweep");
  auto train = load_train(c);
  auto test = load_test(c, train.label_count);
  auto lexicon = load_lexicon(c.lexicon_path);
  auto embeddings = load_embeddings(c.embeddings_path);
  auto shape = c.shape;
  shape.classes = train.label_count;
  SweepInputs in{train, test, lexicon, embeddings, shape, c.training, c.mixup, c.ada, c.attack};
  auto report = sweep(in, c.sweep_axis, c.sweep_values, ctx.options.threads);
  const auto stem = "sweep_" + to_string(c.sweep_axis);
  write_file(ctx.out / (stem + ".csv"), with_comment(ctx, report.csv()));
  write_file(ctx.out / (stem + ".md"), with_footer(ctx, report.markdown()));
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"value", r.value},
                    {"clean_accuracy", r.clean_accuracy},
                    {"after_attack_accuracy", r.after_attack_accuracy},
                    {"avg_mod_rate", r.avg_mod_rate},
                    {"adversarial_added", r.adversarial_added},
                    {"error", r.error}});
  }
  auto j = meta(ctx, "sweep");
  j["axis"] = to_string(report.axis);
  j["attacker"] = to_string(report.attacker);
  j["rows"] = rows;
  write_file(ctx.out / (stem + ".json"), j.dump(2) + "\n");
  ctx.log << report.markdown();
}

inline std::vector<fs::path> matching(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto file = e.path().filename().string();
    if (e.is_regular_file() && file.rfind(prefix, 0) == 0 && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// One table per evaluation mode: rows are models, and each attacker gets a
/// clean column and an after-attack column with the modification rate.
inline std::string report_table(const std::vector<RobustnessReport>& reports) {
  std::ostringstream s;
  for (auto mode : {EvalMode::tae, EvalMode::sae}) {
    std::vector<std::string> models;
    std::set<std::string> attackers;
    std::map<std::pair<std::string, std::string>, const RobustnessReport*> cell;
    for (const auto& r : reports) {
      if (r.mode != mode) continue;
      if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
      attackers.insert(to_string(r.attacker));
      cell[{r.model, to_string(r.attacker)}] = &r;
    }
    if (models.empty()) continue;
    s << "## " << to_string(mode) << "\n\n| model |";
    for (const auto& a : attackers) s << ' ' << a << " clean | " << a << " adversarial (mod rate) |";
    s << "\n|---|";
    for (std::size_t i = 0; i < attackers.size(); ++i) s << "---|---|";
    s << '\n';
    for (const auto& m : models) {
      s << "| " << m << " |";
      for (const auto& a : attackers) {
        auto it = cell.find({m, a});
        if (it == cell.end()) {
          s << " - | - |";
          continue;
        }
        const auto& r = *it->second;
        s << ' ' << fmt2(r.clean_accuracy) << " | " << fmt2(r.after_attack_accuracy) << " ("
          << fmt2(100.0 * r.avg_mod_rate) << "%) |";
      }
      s << '\n';
    }
    s << '\n';
  }
  return s.str();
}

inline void cmd_report(const Context& ctx) {
  auto files = matching(ctx.out, "report_", ".json");
  auto sweeps = matching(ctx.out, "sweep_", ".json");
  if (files.empty() && sweeps.empty()) throw InputError("no reports found in " + ctx.out.string());
  std::vector<RobustnessReport> reports;
  for (const auto& f : files) reports.push_back(report_from_json(nlohmann::json::parse(read_file(f))));
  if (!reports.empty()) write_file(ctx.out / "report.md", with_footer(ctx, "# Robustness\n\n" + report_table(reports)));

  std::ostringstream curves;
  curves << "axis,value,attacker,clean_accuracy,after_attack_accuracy,avg_mod_rate,adversarial_added\n";
  for (const auto& f : sweeps) {
    auto j = nlohmann::json::parse(read_file(f));
    for (const auto& r : j.at("rows")) {
      if (!r.at("error").get<std::string>().empty()) continue;
      curves << j.at("axis").get<std::string>() << ',' << r.at("value").get<double>() << ','
             << j.at("attacker").get<std::string>() << ',' << fmt2(r.at("clean_accuracy").get<double>()) << ','
             << fmt2(r.at("after_attack_accuracy").get<double>()) << ','
             << fmt2(100.0 * r.at("avg_mod_rate").get<double>()) << ','
             << r.at("adversarial_added").get<std::size_t>() << '\n';
    }
  }
  write_file(ctx.out / "sweep_curves.csv", with_comment(ctx, curves.str()));
  ctx.log << report_table(reports);
}

}  // namespace detail

/// Runs one subcommand. Throws on failure after dropping a `<subcommand>.failed`
/// marker (with the error) into the output directory.
inline void run(const std::string& subcommand, const ExperimentConfig& config, const RunOptions& options = {},
                std::ostream& log = std::cout) {
  namespace fs = std::filesystem;
  const auto& names = subcommands();
  if (std::find(names.begin(), names.end(), subcommand) == names.end()) {
    throw ConfigError("unknown subcommand '" + subcommand + "'");
  }
  if (subcommand != "report") config.validate();
  detail::Context ctx{config, options, log, fs::path(config.output_dir), config.hash(), config.master_seed()};
  fs::create_directories(ctx.out);
  const auto marker = ctx.out / (subcommand + ".failed");
  fs::remove(marker);
  try {
    if (subcommand == "train") detail::cmd_train(ctx);
    else if (subcommand == "attack") detail::cmd_attack(ctx);
    else if (subcommand == "augment") detail::cmd_augment(ctx);
    else if (subcommand == "train-amda") detail::cmd_train_amda(ctx);
    else if (subcommand == "eval-sae") detail::cmd_eval_sae(ctx);
    else if (subcommand == "eval-tae") detail::cmd_eval_tae(ctx);
    else if (subcommand == "seed-exp") detail::cmd_seed_exp(ctx);
    else if (subcommand == "sweep") detail::cmd_sweep(ctx);
    else detail::cmd_report(ctx);
  } catch (const std::exception& e) {
    std::ofstream(marker) << subcommand << " failed: " << e.what() << '\n';
    throw;
  }
}

}  // namespace amda::cli
