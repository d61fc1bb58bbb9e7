#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "amda/corpus.hpp"
#include "amda/error.hpp"
#include "amda/rng.hpp"

namespace amda {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

enum class Pooling : std::uint32_t { mean = 0, first = 1 };

struct DenseLayer {
  Matrix weight;  // out x in (d x d)
  std::vector<double> bias;

  bool operator==(const DenseLayer&) const = default;
};

/// Embedding -> L per-token dense+tanh layers -> pooling -> linear head.
struct ModelParams {
  Matrix embedding;  // |V| x d
  std::vector<DenseLayer> layers;
  Pooling pooling = Pooling::mean;
  Matrix head;  // d x K
  std::vector<double> head_bias;

  std::size_t vocab_size() const { return embedding.rows; }
  std::size_t dim() const { return embedding.cols; }
  std::size_t layer_count() const { return layers.size(); }
  std::size_t class_count() const { return head.cols; }

  std::size_t parameter_count() const {
    std::size_t n = embedding.data.size() + head.data.size() + head_bias.size();
    for (const auto& l : layers) n += l.weight.data.size() + l.bias.size();
    return n;
  }

  /// Same shape, all zeros (gradient accumulator).
  ModelParams zeros_like() const {
    ModelParams z = *this;
    for_each_tensor(z, [](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
    return z;
  }

  void validate() const {
    const auto d = dim();
    if (d == 0 || vocab_size() < 2) throw SchemaError("model needs d > 0 and at least PAD/UNK rows");
    if (layers.size() < 2) throw SchemaError("model needs at least 2 encoder layers");
    for (const auto& l : layers) {
      if (l.weight.rows != d || l.weight.cols != d || l.bias.size() != d) {
        throw SchemaError("encoder layer shape mismatch");
      }
    }
    if (head.rows != d || head_bias.size() != head.cols || head.cols < 2) {
      throw SchemaError("classifier head shape mismatch");
    }
    bool finite = true;
    for_each_tensor(*this, [&](std::span<const double> t) {
      for (double v : t) finite = finite && std::isfinite(v);
    });
    if (!finite) throw SchemaError("model has non-finite parameters");
  }

  /// Visits every parameter tensor in a fixed order.
  template <typename Self, typename Fn>
  static void for_each_tensor(Self& p, Fn&& fn) {
    fn(std::span(p.embedding.data));
    for (auto& l : p.layers) {
      fn(std::span(l.weight.data));
      fn(std::span(l.bias));
    }
    fn(std::span(p.head.data));
    fn(std::span(p.head_bias));
  }

  bool operator==(const ModelParams&) const = default;
};

struct ModelShape {
  std::size_t vocab_size = 0;
  std::size_t dim = 16;
  std::size_t layers = 2;
  std::size_t classes = 2;
  Pooling pooling = Pooling::mean;
  double embedding_scale = 0.5;
};

/// Gaussian embeddings (PAD row zero), Glorot-uniform dense weights, zero biases.
inline ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
  if (shape.vocab_size < 2 || shape.dim == 0 || shape.layers < 2 || shape.classes < 2) {
    throw ConfigError("invalid model shape");
  }
  Rng rng(derive_seed(seed, seed_stream::init));
  ModelParams p;
  p.pooling = shape.pooling;
  p.embedding = Matrix(shape.vocab_size, shape.dim);
  boost::random::normal_distribution<double> normal(0.0, shape.embedding_scale);
  for (std::size_t r = 1; r < shape.vocab_size; ++r) {
    for (auto& v : p.embedding.row(r)) v = normal(rng);
  }
  auto glorot = [&](Matrix& m, std::size_t fan_in, std::size_t fan_out) {
    double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    boost::random::uniform_real_distribution<double> u(-a, a);
    for (auto& v : m.data) v = u(rng);
  };
  for (std::size_t l = 0; l < shape.layers; ++l) {
    DenseLayer layer{Matrix(shape.dim, shape.dim), std::vector<double>(shape.dim, 0.0)};
    glorot(layer.weight, shape.dim, shape.dim);
    p.layers.push_back(std::move(layer));
  }
  p.head = Matrix(shape.dim, shape.classes);
  glorot(p.head, shape.dim, shape.classes);
  p.head_bias.assign(shape.classes, 0.0);
  return p;
}

/// Per-layer token representations; layers[0] is the embedded input.
struct HiddenStack {
  std::vector<Matrix> layers;

  std::size_t length() const { return layers.empty() ? 0 : layers.front().rows; }
};

struct Prediction {
  std::vector<double> probs;

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
  double operator[](std::size_t k) const { return probs[k]; }
  bool operator==(const Prediction&) const = default;
};

struct ForwardResult {
  HiddenStack hidden;
  Prediction prediction;
};

namespace detail {

inline std::vector<double> softmax(std::span<const double> logits) {
  double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - mx);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

// tanh(W h_t + b) for every row.
inline Matrix apply_layer(const DenseLayer& layer, const Matrix& in) {
  const std::size_t d = layer.weight.rows;
  Matrix out(in.rows, d);
  for (std::size_t t = 0; t < in.rows; ++t) {
    auto x = in.row(t);
    for (std::size_t o = 0; o < d; ++o) {
      double a = layer.bias[o];
      auto w = layer.weight.row(o);
      for (std::size_t i = 0; i < d; ++i) a += w[i] * x[i];
      out(t, o) = std::tanh(a);
    }
  }
  return out;
}

inline double weight_at(std::span<const double> weights, std::size_t t) {
  return weights.empty() ? 1.0 : weights[t];
}

}  // namespace detail

/// Pools a (T x d) representation. Row weights, when given, weight the mean
/// (padded rows of a mixed sequence carry only their share of the mixing mass).
inline std::vector<double> pool(const Matrix& h, Pooling pooling, std::span<const double> row_weights = {}) {
  std::vector<double> out(h.cols, 0.0);
  if (h.rows == 0) throw InputError("cannot pool an empty sequence");
  if (!row_weights.empty() && row_weights.size() != h.rows) throw InputError("row weight count mismatch");
  if (pooling == Pooling::first) {
    auto r = h.row(0);
    std::copy(r.begin(), r.end(), out.begin());
    return out;
  }
  double total = 0.0;
  for (std::size_t t = 0; t < h.rows; ++t) {
    double w = detail::weight_at(row_weights, t);
    total += w;
    auto r = h.row(t);
    for (std::size_t c = 0; c < h.cols; ++c) out[c] += w * r[c];
  }
  for (auto& v : out) v /= total;
  return out;
}

inline std::vector<double> head_logits(const ModelParams& params, std::span<const double> pooled) {
  const std::size_t k_count = params.class_count();
  std::vector<double> z(params.head_bias);
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    auto w = params.head.row(i);
    for (std::size_t k = 0; k < k_count; ++k) z[k] += pooled[i] * w[k];
  }
  return z;
}

/// softmax(head(v)) for an already pooled top-layer vector.
inline Prediction predict_pooled(const ModelParams& params, std::span<const double> pooled) {
  return Prediction{detail::softmax(head_logits(params, pooled))};
}

inline Matrix embed(const ModelParams& params, std::span<const std::size_t> token_ids) {
  if (token_ids.empty()) throw InputError("empty token sequence");
  Matrix h(token_ids.size(), params.dim());
  for (std::size_t t = 0; t < token_ids.size(); ++t) {
    if (token_ids[t] >= params.vocab_size()) {
      throw InputError("token id " + std::to_string(token_ids[t]) + " out of range");
    }
    auto src = params.embedding.row(token_ids[t]);
    std::copy(src.begin(), src.end(), h.row(t).begin());
  }
  return h;
}

/// Hidden states for layers 0..upto (inclusive).
inline HiddenStack forward_to_layer(const ModelParams& params, std::span<const std::size_t> token_ids,
                                    std::size_t upto) {
  if (upto > params.layer_count()) throw InputError("layer index out of range");
  HiddenStack stack;
  stack.layers.reserve(upto + 1);
  stack.layers.push_back(embed(params, token_ids));
  for (std::size_t l = 0; l < upto; ++l) stack.layers.push_back(detail::apply_layer(params.layers[l], stack.layers.back()));
  return stack;
}

/// Resumes the network above layer `layer` from a (T x d) representation.
inline Prediction forward_from_layer(const ModelParams& params, const Matrix& hidden, std::size_t layer,
                                     std::span<const double> row_weights = {}) {
  if (layer > params.layer_count()) throw InputError("layer index out of range");
  if (hidden.cols != params.dim()) throw InputError("hidden dimension mismatch");
  if (hidden.rows == 0) throw InputError("empty hidden sequence");
  if (layer == params.layer_count()) {
    return predict_pooled(params, pool(hidden, params.pooling, row_weights));
  }
  Matrix h = detail::apply_layer(params.layers[layer], hidden);
  for (std::size_t l = layer + 1; l < params.layer_count(); ++l) h = detail::apply_layer(params.layers[l], h);
  return predict_pooled(params, pool(h, params.pooling, row_weights));
}

inline ForwardResult forward(const ModelParams& params, std::span<const std::size_t> token_ids) {
  ForwardResult r;
  r.hidden = forward_to_layer(params, token_ids, params.layer_count());
  r.prediction = predict_pooled(params, pool(r.hidden.layers.back(), params.pooling));
  return r;
}

inline Prediction predict(const ModelParams& params, std::span<const std::size_t> token_ids) {
  return forward(params, token_ids).prediction;
}

inline constexpr double kProbFloor = 1e-12;

/// -log p[label], with p clamped at 1e-12.
inline double ce_loss(const Prediction& pred, std::size_t label) {
  if (label >= pred.probs.size()) throw InputError("label out of range");
  return -std::log(std::max(pred.probs[label], kProbFloor));
}

inline void check_simplex(std::span<const double> p, double tol = 1e-9) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw InputError("probability vector has a negative or NaN entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) throw InputError("probability vector does not sum to 1");
}

/// KL(soft_label || pred) with 0 log 0 = 0 and pred clamped at 1e-12.
inline double kl_loss(const Prediction& pred, std::span<const double> soft_label) {
  if (soft_label.size() != pred.probs.size()) throw InputError("soft label size mismatch");
  check_simplex(soft_label);
  double kl = 0.0;
  for (std::size_t k = 0; k < soft_label.size(); ++k) {
    const double s = soft_label[k];
    if (s == 0.0) continue;
    kl += s * (std::log(s) - std::log(std::max(pred.probs[k], kProbFloor)));
  }
  return kl;
}

struct LossReport {
  double total = 0.0;
  double ce_term = 0.0;
  double kl_term = 0.0;

  void add_ce(double v) {
    ce_term += v;
    total = ce_term + kl_term;
  }
  void add_kl(double v) {
    kl_term += v;
    total = ce_term + kl_term;
  }
};

inline std::vector<double> one_hot(std::size_t label, std::size_t classes) {
  if (label >= classes) throw InputError("label out of range");
  std::vector<double> y(classes, 0.0);
  y[label] = 1.0;
  return y;
}

/// A trained classifier together with the vocabulary its embedding rows index.
struct Classifier {
  Vocabulary vocab;
  ModelParams params;
  std::uint64_t seed = 0;
  std::string config_hash;

  Prediction predict(const Tokens& tokens) const {
    auto ids = vocab.encode(tokens);
    return amda::predict(params, ids);
  }
};

/// Vocabulary over the training tokens plus every lexicon word, sorted so that
/// every model trained on the same inputs shares embedding row layout.
inline Vocabulary build_vocabulary(const Dataset& train, const SynonymLexicon& lexicon) {
  std::set<std::string> words;
  for (const auto& ex : train.examples) words.insert(ex.tokens.begin(), ex.tokens.end());
  for (const auto& w : lexicon.all_words()) words.insert(w);
  Vocabulary vocab;
  for (const auto& w : words) {
    if (w != Vocabulary::kPadWord && w != Vocabulary::kUnkWord) vocab.add(w);
  }
  return vocab;
}

}  // namespace amda
