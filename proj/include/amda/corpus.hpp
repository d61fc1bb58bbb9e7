#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "amda/error.hpp"

namespace amda {

using Tokens = std::vector<std::string>;

/// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation.
/// Tokens that are pure punctuation vanish.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    std::size_t b = 0, e = current.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(current[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(current[e - 1]))) --e;
    if (e > b) out.emplace_back(current.substr(b, e - b));
    current.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

inline std::string join_tokens(const Tokens& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

struct Example {
  std::size_t id = 0;
  Tokens tokens;
  std::size_t label = 0;

  bool operator==(const Example&) const = default;
};

enum class Split { train, dev, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

struct Dataset {
  std::vector<Example> examples;
  std::size_t label_count = 0;
  Split split = Split::train;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  /// Throws SchemaError if any invariant is broken.
  void validate() const {
    if (label_count < 2) {
      throw SchemaError("dataset label count must be >= 2 (got " + std::to_string(label_count) +
                        (examples.empty() ? ", empty dataset)" : ")"));
    }
    std::unordered_set<std::size_t> ids;
    for (const auto& ex : examples) {
      if (!ids.insert(ex.id).second) throw SchemaError("duplicate example id " + std::to_string(ex.id));
      if (ex.tokens.empty()) throw SchemaError("example " + std::to_string(ex.id) + " has no tokens");
      if (ex.label >= label_count) {
        throw SchemaError("example " + std::to_string(ex.id) + " label " + std::to_string(ex.label) +
                          " outside [0, " + std::to_string(label_count) + ")");
      }
    }
  }
};

namespace detail {

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  return out;
}

inline bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

inline nlohmann::json parse_json_line(const std::string& line, std::size_t lineno) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
  }
}

// Artifact files may start with a {"_meta": ...} record; readers skip it.
inline bool is_meta(const nlohmann::json& j) { return j.is_object() && j.contains("_meta"); }

}  // namespace detail

/// Parses a JSON-lines dataset of {"text", "label"} records. Ids follow record
/// order. When `label_count` is absent K is inferred as max label + 1; call
/// Dataset::validate() before use (an empty file leaves K unknown).
inline Dataset parse_dataset(std::istream& in, Split split = Split::train,
                             std::optional<std::size_t> label_count = std::nullopt) {
  Dataset ds;
  ds.split = split;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    auto j = detail::parse_json_line(line, lineno);
    if (detail::is_meta(j)) continue;
    if (!j.is_object() || !j.contains("text") || !j.contains("label") || !j["text"].is_string()) {
      throw ParseError("record needs string \"text\" and \"label\"", lineno);
    }
    const auto& lab = j["label"];
    if (!lab.is_number_integer() || lab.get<long long>() < 0) {
      throw SchemaError("line " + std::to_string(lineno) + ": label must be a non-negative integer");
    }
    auto label = static_cast<std::size_t>(lab.get<long long>());
    if (label_count && label >= *label_count) {
      throw SchemaError("line " + std::to_string(lineno) + ": unknown label " + std::to_string(label));
    }
    Example ex;
    ex.id = ds.examples.size();
    ex.tokens = tokenize(j["text"].get<std::string>());
    ex.label = label;
    if (ex.tokens.empty()) throw SchemaError("line " + std::to_string(lineno) + ": text has no tokens");
    max_label = std::max(max_label, label);
    ds.examples.push_back(std::move(ex));
  }
  if (label_count) {
    ds.label_count = *label_count;
  } else {
    ds.label_count = ds.examples.empty() ? 0 : max_label + 1;
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path, Split split = Split::train,
                            std::optional<std::size_t> label_count = std::nullopt) {
  auto in = detail::open_input(path);
  return parse_dataset(in, split, label_count);
}

inline void write_dataset(std::ostream& out, const Dataset& ds) {
  for (const auto& ex : ds.examples) {
    nlohmann::json j{{"text", join_tokens(ex.tokens)}, {"label", ex.label}};
    out << j.dump() << '\n';
  }
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  auto out = detail::open_output(path);
  write_dataset(out, ds);
}

/// Word/index map. Index 0 is PAD and 1 is UNK; every other word maps 1-1.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::string_view kPadWord = "<pad>";
  static constexpr std::string_view kUnkWord = "<unk>";

  Vocabulary() : words_{std::string(kPadWord), std::string(kUnkWord)} {
    index_.emplace(words_[0], kPad);
    index_.emplace(words_[1], kUnk);
  }

  /// Rebuilds from a full index->word list (as stored in checkpoints).
  static Vocabulary from_words(const std::vector<std::string>& words) {
    if (words.size() < 2 || words[0] != kPadWord || words[1] != kUnkWord) {
      throw SchemaError("vocabulary must start with <pad>, <unk>");
    }
    Vocabulary v;
    for (std::size_t i = 2; i < words.size(); ++i) {
      if (!v.index_.emplace(words[i], i).second) throw SchemaError("duplicate vocabulary word " + words[i]);
      v.words_.push_back(words[i]);
    }
    return v;
  }

  /// Adds a word if new; returns its index.
  std::size_t add(const std::string& word) {
    auto [it, inserted] = index_.emplace(word, words_.size());
    if (inserted) words_.push_back(word);
    return it->second;
  }

  std::size_t index(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  const std::string& word(std::size_t i) const { return words_.at(i); }
  const std::vector<std::string>& words() const { return words_; }
  std::size_t size() const { return words_.size(); }

  std::vector<std::size_t> encode(const Tokens& tokens) const {
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(index(t));
    return ids;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Word -> ordered replacement candidates. A word never lists itself and lists
/// are free of duplicates.
class SynonymLexicon {
 public:
  /// Appends candidates for `word`, dropping self-references and repeats.
  void add(const std::string& word, const std::vector<std::string>& cands) {
    auto& list = entries_[word];
    for (const auto& c : cands) {
      if (c == word) continue;
      if (std::find(list.begin(), list.end(), c) == list.end()) list.push_back(c);
    }
  }

  const std::vector<std::string>& lookup(const std::string& word) const {
    static const std::vector<std::string> kEmpty;
    auto it = entries_.find(word);
    return it == entries_.end() ? kEmpty : it->second;
  }

  bool contains(const std::string& word) const { return entries_.count(word) != 0; }
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

  /// Every word mentioned as a key or candidate, sorted.
  std::vector<std::string> all_words() const {
    std::set<std::string> s;
    for (const auto& [w, cs] : entries_) {
      s.insert(w);
      s.insert(cs.begin(), cs.end());
    }
    return {s.begin(), s.end()};
  }

  /// Non-fatal issues found while loading (e.g. merged duplicate entries).
  std::vector<std::string> warnings;

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

inline SynonymLexicon parse_lexicon(std::istream& in) {
  SynonymLexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    auto j = detail::parse_json_line(line, lineno);
    if (!j.is_object() || !j.contains("word") || !j["word"].is_string() || !j.contains("candidates") ||
        !j["candidates"].is_array()) {
      throw ParseError("lexicon record needs \"word\" and \"candidates\"", lineno);
    }
    auto word = j["word"].get<std::string>();
    std::vector<std::string> cands;
    for (const auto& c : j["candidates"]) {
      if (!c.is_string()) throw ParseError("candidate must be a string", lineno);
      cands.push_back(c.get<std::string>());
    }
    if (lex.contains(word)) {
      lex.warnings.push_back("line " + std::to_string(lineno) + ": duplicate entry for '" + word + "' merged");
    }
    lex.add(word, cands);
  }
  return lex;
}

inline SynonymLexicon load_lexicon(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_lexicon(in);
}

/// Word -> vector of a single shared dimension.
class EmbeddingTable {
 public:
  void add(const std::string& word, std::vector<double> vec) {
    if (vec.empty()) throw SchemaError("embedding for '" + word + "' is empty");
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_) {
      throw SchemaError("embedding for '" + word + "' has dimension " + std::to_string(vec.size()) +
                        ", expected " + std::to_string(dim_));
    }
    vectors_[word] = std::move(vec);
  }

  const std::vector<double>* find(const std::string& word) const {
    auto it = vectors_.find(word);
    return it == vectors_.end() ? nullptr : &it->second;
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

  /// Cosine similarity; nullopt if either word is missing or a vector is zero.
  std::optional<double> cosine(const std::string& a, const std::string& b) const {
    const auto* va = find(a);
    const auto* vb = find(b);
    if (!va || !vb) return std::nullopt;
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < dim_; ++i) {
      dot += (*va)[i] * (*vb)[i];
      na += (*va)[i] * (*va)[i];
      nb += (*vb)[i] * (*vb)[i];
    }
    if (na == 0 || nb == 0) return std::nullopt;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  }

 private:
  std::unordered_map<std::string, std::vector<double>> vectors_;
  std::size_t dim_ = 0;
};

inline EmbeddingTable parse_embeddings(std::istream& in) {
  EmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    std::vector<double> vec;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        vec.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("bad number '" + tok + "'", lineno);
      }
    }
    if (vec.empty()) throw ParseError("word '" + word + "' has no vector", lineno);
    if (table.dim() != 0 && vec.size() != table.dim()) {
      throw ParseError("dimension " + std::to_string(vec.size()) + " != " + std::to_string(table.dim()), lineno);
    }
    table.add(word, std::move(vec));
  }
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_embeddings(in);
}

struct CandidateList {
  std::vector<std::string> words;
  /// True when the query word had no embedding, so the list is unfiltered.
  bool unscored = false;
};

/// Lexicon candidates for `word` filtered by embedding cosine >= sim_threshold,
/// most similar first (lexicon order breaks ties), truncated to top_k.
/// sim_threshold <= -1 disables the filter and keeps lexicon order.
inline CandidateList candidates(const SynonymLexicon& lexicon, const EmbeddingTable& embeddings,
                                const std::string& word, double sim_threshold, std::size_t top_k) {
  if (top_k == 0) throw InputError("top_k must be >= 1");
  CandidateList out;
  const auto& entry = lexicon.lookup(word);
  auto truncate = [&](std::vector<std::string> v) {
    if (v.size() > top_k) v.resize(top_k);
    return v;
  };
  if (sim_threshold <= -1.0) {
    out.words = truncate(entry);
    return out;
  }
  if (!embeddings.find(word)) {
    out.words = truncate(entry);
    out.unscored = !entry.empty();
    return out;
  }
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < entry.size(); ++i) {
    auto sim = embeddings.cosine(word, entry[i]);
    if (sim && *sim >= sim_threshold) scored.emplace_back(*sim, i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [sim, i] : scored) {
    if (out.words.size() == top_k) break;
    out.words.push_back(entry[i]);
  }
  return out;
}

}  // namespace amda
