#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "amda/attack.hpp"
#include "amda/augment.hpp"
#include "amda/error.hpp"
#include "amda/hash.hpp"
#include "amda/mixup.hpp"
#include "amda/model.hpp"
#include "amda/train.hpp"

namespace amda {

/// Every knob of an experiment. Loaded from a flat `key = value` file; command
/// line `key=value` overrides win.
struct ExperimentConfig {
  std::string train_path;
  std::string test_path;
  std::string dev_path;
  std::string lexicon_path;
  std::string embeddings_path;
  std::string output_dir = "out";

  ModelShape shape;
  TrainingConfig training;
  MixupConfig mixup;
  ADAConfig ada;
  AttackConfig attack;
  std::optional<std::uint64_t> seed;

  std::vector<std::uint64_t> seed_exp_seeds;
  SweepAxis sweep_axis = SweepAxis::ratio;
  std::vector<double> sweep_values;
  bool amda_use_adversarial = true;

  /// Keys in canonical order with their effective values (output_dir excluded,
  /// so artifacts do not depend on where they are written).
  std::vector<std::pair<std::string, std::string>> canonical() const;
  std::string hash() const {
    Fnv1a h;
    for (const auto& [k, v] : canonical()) h.update(k).update("=").update(v).update("\n");
    return h.hex();
  }
  std::uint64_t master_seed() const { return seed.value_or(0); }

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string join_list(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

inline std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  if constexpr (std::is_unsigned_v<T>) {
    if (!value.empty() && value[0] == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  in >> out;
  if (in.fail() || !in.eof()) throw ConfigError(key + ": expected a number, got '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

}  // namespace detail

inline std::vector<std::pair<std::string, std::string>> ExperimentConfig::canonical() const {
  using detail::num;
  std::vector<std::string> layers, attackers, seeds, values;
  for (auto l : mixup.layers) layers.push_back(std::to_string(l));
  for (auto a : ada.attackers) attackers.push_back(to_string(a));
  for (auto s : seed_exp_seeds) seeds.push_back(std::to_string(s));
  for (auto v : sweep_values) values.push_back(num(v));
  return {
      {"ada.attackers", detail::join_list(attackers)},
      {"ada.ratio", num(ada.ratio)},
      {"ada.schedule", ada.schedule == AdaSchedule::one_shot ? "one_shot" : "iterative"},
      {"amda.use_adversarial", amda_use_adversarial ? "true" : "false"},
      {"attack.kind", to_string(attack.kind)},
      {"attack.max_modify_fraction", num(attack.max_modify_fraction)},
      {"attack.query_budget", std::to_string(attack.query_budget)},
      {"attack.sim_threshold", num(attack.sim_threshold)},
      {"attack.top_k", std::to_string(attack.top_k)},
      {"data.dev", dev_path},
      {"data.embeddings", embeddings_path},
      {"data.lexicon", lexicon_path},
      {"data.test", test_path},
      {"data.train", train_path},
      {"mixup.alpha", num(mixup.alpha)},
      {"mixup.layers", detail::join_list(layers)},
      {"mixup.mode", to_string(mixup.mode)},
      {"mixup.pairs_per_epoch", std::to_string(mixup.pairs_per_epoch)},
      {"model.dim", std::to_string(shape.dim)},
      {"model.embedding_scale", num(shape.embedding_scale)},
      {"model.layers", std::to_string(shape.layers)},
      {"model.pooling", shape.pooling == Pooling::mean ? "mean" : "first"},
      {"seed", seed ? std::to_string(*seed) : ""},
      {"seed_exp.seeds", detail::join_list(seeds)},
      {"sweep.axis", to_string(sweep_axis)},
      {"sweep.values", detail::join_list(values)},
      {"train.batch_size", std::to_string(training.batch_size)},
      {"train.epochs", std::to_string(training.epochs)},
      {"train.lr", num(training.learning_rate)},
  };
}

/// Applies one `key = value` setting. Relative paths resolve against `base_dir`.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value,
                          const std::filesystem::path& base_dir = {}) {
  using detail::parse_number;
  auto path = [&](const std::string& v) {
    if (v.empty()) return v;
    std::filesystem::path p(v);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return p.lexically_normal().string();
  };
  if (key == "data.train") c.train_path = path(value);
  else if (key == "data.test") c.test_path = path(value);
  else if (key == "data.dev") c.dev_path = path(value);
  else if (key == "data.lexicon") c.lexicon_path = path(value);
  else if (key == "data.embeddings") c.embeddings_path = path(value);
  else if (key == "output_dir") c.output_dir = path(value);
  else if (key == "model.dim") c.shape.dim = parse_number<std::size_t>(key, value);
  else if (key == "model.layers") c.shape.layers = parse_number<std::size_t>(key, value);
  else if (key == "model.embedding_scale") c.shape.embedding_scale = parse_number<double>(key, value);
  else if (key == "model.pooling") {
    if (value == "mean") c.shape.pooling = Pooling::mean;
    else if (value == "first") c.shape.pooling = Pooling::first;
    else throw ConfigError(key + ": expected mean or first, got '" + value + "'");
  } else if (key == "train.epochs") c.training.epochs = parse_number<std::size_t>(key, value);
  else if (key == "train.batch_size") c.training.batch_size = parse_number<std::size_t>(key, value);
  else if (key == "train.lr") c.training.learning_rate = parse_number<double>(key, value);
  else if (key == "mixup.alpha") c.mixup.alpha = parse_number<double>(key, value);
  else if (key == "mixup.mode") {
    try {
      c.mixup.mode = parse_mix_mode(value);
    } catch (const ConfigError&) {
      throw ConfigError(key + ": expected tmix or smix, got '" + value + "'");
    }
  } else if (key == "mixup.layers") {
    c.mixup.layers.clear();
    for (const auto& v : detail::split_list(value)) c.mixup.layers.push_back(parse_number<std::size_t>(key, v));
  } else if (key == "mixup.pairs_per_epoch") c.mixup.pairs_per_epoch = parse_number<std::size_t>(key, value);
  else if (key == "ada.ratio") c.ada.ratio = parse_number<double>(key, value);
  else if (key == "ada.attackers") {
    c.ada.attackers.clear();
    for (const auto& v : detail::split_list(value)) {
      try {
        c.ada.attackers.push_back(parse_attacker(v));
      } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
      }
    }
  } else if (key == "ada.schedule") {
    if (value == "one_shot") c.ada.schedule = AdaSchedule::one_shot;
    else if (value == "iterative") c.ada.schedule = AdaSchedule::iterative;
    else throw ConfigError(key + ": expected one_shot or iterative, got '" + value + "'");
  } else if (key == "amda.use_adversarial") c.amda_use_adversarial = detail::parse_bool(key, value);
  else if (key == "attack.kind") {
    try {
      c.attack.kind = parse_attacker(value);
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  } else if (key == "attack.sim_threshold") c.attack.sim_threshold = parse_number<double>(key, value);
  else if (key == "attack.top_k") c.attack.top_k = parse_number<std::size_t>(key, value);
  else if (key == "attack.max_modify_fraction") c.attack.max_modify_fraction = parse_number<double>(key, value);
  else if (key == "attack.query_budget") c.attack.query_budget = parse_number<std::size_t>(key, value);
  else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
    c.training.seed = *c.seed;
  } else if (key == "seed_exp.seeds") {
    c.seed_exp_seeds.clear();
    for (const auto& v : detail::split_list(value)) c.seed_exp_seeds.push_back(parse_number<std::uint64_t>(key, v));
  } else if (key == "sweep.axis") {
    try {
      c.sweep_axis = parse_sweep_axis(value);
    } catch (const ConfigError&) {
      throw ConfigError(key + ": expected ratio or alpha, got '" + value + "'");
    }
  } else if (key == "sweep.values") {
    c.sweep_values.clear();
    for (const auto& v : detail::split_list(value)) c.sweep_values.push_back(parse_number<double>(key, v));
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

/// Parses `key = value` lines; `#` starts a comment.
inline void parse_config(ExperimentConfig& c, std::istream& in, const std::filesystem::path& base_dir = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    auto key = detail::trim(line.substr(0, eq));
    auto value = detail::trim(line.substr(eq + 1));
    try {
      apply_setting(c, key, value, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  ExperimentConfig c;
  parse_config(c, in, std::filesystem::path(path).parent_path());
  return c;
}

inline void ExperimentConfig::validate() const {
  if (!seed) throw ConfigError("seed: required");
  auto need = [](const std::string& key, const std::string& p) {
    if (p.empty()) throw ConfigError(key + ": required");
    if (!std::filesystem::exists(p)) throw ConfigError(key + ": file not found: " + p);
  };
  need("data.train", train_path);
  need("data.test", test_path);
  need("data.lexicon", lexicon_path);
  need("data.embeddings", embeddings_path);
  if (!dev_path.empty()) need("data.dev", dev_path);
  if (shape.dim == 0) throw ConfigError("model.dim: must be > 0");
  if (shape.layers < 2) throw ConfigError("model.layers: must be >= 2");
  if (!(shape.embedding_scale > 0.0)) throw ConfigError("model.embedding_scale: must be > 0");
  training.validate();
  mixup.validate(shape.layers);
  ada.validate();
  attack.validate();
}

}  // namespace amda
