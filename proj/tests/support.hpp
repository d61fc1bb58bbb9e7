#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "amda/amda.hpp"

namespace amda::test {

inline std::string data_path(const std::string& rel) { return std::string(AMDA_DATA_DIR) + "/" + rel; }
inline std::string fixture_path(const std::string& rel) { return std::string(AMDA_FIXTURE_DIR) + "/" + rel; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("amda_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Two-class victim whose class-1 logit is the sum of per-word weights and
/// class-0 logit is zero. Unknown words weigh 0.
inline VictimHandle linear_victim(std::map<std::string, double> weights) {
  return VictimHandle([w = std::move(weights)](const Tokens& tokens) {
    double z = 0.0;
    for (const auto& t : tokens) {
      auto it = w.find(t);
      if (it != w.end()) z += it->second;
    }
    Prediction p;
    const double e = std::exp(-std::abs(z));
    const double big = 1.0 / (1.0 + e), small = e / (1.0 + e);
    p.probs = z >= 0 ? std::vector<double>{small, big} : std::vector<double>{big, small};
    return p;
  });
}

inline VictimHandle constant_victim(std::vector<double> probs) {
  return VictimHandle([probs = std::move(probs)](const Tokens&) {
    Prediction p;
    p.probs = probs;
    return p;
  });
}

inline Example example(std::size_t id, const std::string& text, std::size_t label) {
  return Example{id, tokenize(text), label};
}

inline Dataset dataset(const std::vector<std::pair<std::string, std::size_t>>& rows, std::size_t label_count = 2) {
  Dataset ds;
  ds.label_count = label_count;
  for (std::size_t i = 0; i < rows.size(); ++i) ds.examples.push_back(example(i, rows[i].first, rows[i].second));
  return ds;
}

inline std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  ModelParams::for_each_tensor(p, [&](std::span<const double> t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

/// Toy corpus bundled with the repository.
struct ToyData {
  Dataset train = load_dataset(data_path("toy/train.jsonl"), Split::train);
  Dataset test = load_dataset(data_path("toy/test.jsonl"), Split::test, 2);
  SynonymLexicon lexicon = load_lexicon(data_path("toy/lexicon.jsonl"));
  EmbeddingTable embeddings = load_embeddings(data_path("toy/embeddings.txt"));
};

/// Hyper-parameters of the bundled toy experiment.
inline ModelShape toy_shape() {
  ModelShape s;
  s.dim = 16;
  s.layers = 2;
  s.classes = 2;
  s.embedding_scale = 0.5;
  return s;
}

inline TrainingConfig toy_training(std::uint64_t seed) {
  TrainingConfig t;
  t.epochs = 10;
  t.batch_size = 16;
  t.learning_rate = 0.02;
  t.seed = seed;
  return t;
}

}  // namespace amda::test
