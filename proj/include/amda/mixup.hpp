#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <boost/random/beta_distribution.hpp>

#include "amda/error.hpp"
#include "amda/model.hpp"
#include "amda/rng.hpp"

namespace amda {

enum class MixMode { tmix, smix };

inline std::string to_string(MixMode m) { return m == MixMode::tmix ? "tmix" : "smix"; }

inline MixMode parse_mix_mode(const std::string& s) {
  if (s == "tmix") return MixMode::tmix;
  if (s == "smix") return MixMode::smix;
  throw ConfigError("mixup.mode must be tmix or smix, got '" + s + "'");
}

struct MixupConfig {
  double alpha = 1.0;
  MixMode mode = MixMode::tmix;
  std::vector<std::size_t> layers;  // empty: default_mix_layers(L)
  std::size_t pairs_per_epoch = 0;

  void validate(std::size_t layer_count) const {
    if (!(alpha > 0.0)) throw ConfigError("mixup.alpha must be > 0");
    for (auto l : layers) {
      if (l < 1 || l > layer_count) {
        throw ConfigError("mixup.layers entry " + std::to_string(l) + " outside [1, " +
                          std::to_string(layer_count) + "]");
      }
    }
  }
};

/// Middle and top encoder layers.
inline std::vector<std::size_t> default_mix_layers(std::size_t layer_count) {
  std::size_t mid = (layer_count + 1) / 2;
  if (mid == layer_count) return {layer_count};
  return {mid, layer_count};
}

/// Draws lambda ~ Beta(alpha, alpha).
inline double sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("Beta shape alpha must be > 0");
  boost::random::beta_distribution<double> beta(alpha, alpha);
  for (;;) {
    // Tiny alpha can underflow both gamma draws (0/0); redraw.
    double lam = beta(rng);
    if (std::isfinite(lam)) return std::clamp(lam, 0.0, 1.0);
  }
}

inline std::vector<double> mix_labels(std::span<const double> y_i, std::span<const double> y_j, double lambda) {
  if (y_i.size() != y_j.size()) throw InputError("label vectors differ in size");
  std::vector<double> y(y_i.size());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = lambda * y_i[k] + (1.0 - lambda) * y_j[k];
  return y;
}

/// Token-level interpolation. The shorter sequence is zero-padded to the longer.
inline Matrix tmix(const Matrix& hidden_i, const Matrix& hidden_j, double lambda) {
  if (hidden_i.cols != hidden_j.cols) throw InputError("tmix: hidden dimensions differ");
  const std::size_t rows = std::max(hidden_i.rows, hidden_j.rows);
  const std::size_t d = hidden_i.cols;
  Matrix out(rows, d);
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      double a = t < hidden_i.rows ? hidden_i(t, c) : 0.0;
      double b = t < hidden_j.rows ? hidden_j(t, c) : 0.0;
      out(t, c) = lambda * a + (1.0 - lambda) * b;
    }
  }
  return out;
}

/// Pooling weights of a token-mixed sequence: each row carries the mixing mass
/// of the parents that actually have a token there.
inline std::vector<double> tmix_row_weights(std::size_t len_i, std::size_t len_j, double lambda) {
  std::vector<double> w(std::max(len_i, len_j));
  for (std::size_t t = 0; t < w.size(); ++t) {
    w[t] = (t < len_i ? lambda : 0.0) + (t < len_j ? 1.0 - lambda : 0.0);
  }
  return w;
}

inline std::vector<double> smix(std::span<const double> pooled_i, std::span<const double> pooled_j, double lambda) {
  if (pooled_i.size() != pooled_j.size()) throw InputError("smix: vector dimensions differ");
  std::vector<double> out(pooled_i.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = lambda * pooled_i[c] + (1.0 - lambda) * pooled_j[c];
  return out;
}

/// An example as the trainer sees it: vocabulary ids plus gold label.
struct EncodedExample {
  std::size_t id = 0;
  std::vector<std::size_t> ids;
  std::size_t label = 0;
};

/// Interpolated sample. For TMix `mixed` is the (T x d) token matrix at
/// `layer`; for SMix it is a single row holding the mixed pooled vector, which
/// the layers above treat as a one-token sequence.
struct VirtualExample {
  MixMode mode = MixMode::tmix;
  Matrix mixed;
  std::vector<double> row_weights;
  std::vector<double> soft_label;
  double lambda = 1.0;
  std::size_t layer = 0;
  std::size_t parent_i = 0;
  std::size_t parent_j = 0;
  std::vector<std::size_t> tokens_i;
  std::vector<std::size_t> tokens_j;
  std::size_t label_i = 0;
  std::size_t label_j = 0;
};

/// Builds a virtual example for fixed (lambda, layer); no randomness.
inline VirtualExample mix_pair(const ModelParams& params, const EncodedExample& ex_i, const EncodedExample& ex_j,
                               MixMode mode, double lambda, std::size_t layer) {
  if (lambda < 0.0 || lambda > 1.0) throw InputError("lambda outside [0, 1]");
  VirtualExample v;
  v.mode = mode;
  v.lambda = lambda;
  v.layer = layer;
  v.parent_i = ex_i.id;
  v.parent_j = ex_j.id;
  v.tokens_i = ex_i.ids;
  v.tokens_j = ex_j.ids;
  v.label_i = ex_i.label;
  v.label_j = ex_j.label;
  const auto k = params.class_count();
  v.soft_label = mix_labels(one_hot(ex_i.label, k), one_hot(ex_j.label, k), lambda);

  auto hi = forward_to_layer(params, ex_i.ids, layer);
  auto hj = forward_to_layer(params, ex_j.ids, layer);
  const auto& top_i = hi.layers.back();
  const auto& top_j = hj.layers.back();
  if (mode == MixMode::tmix) {
    v.mixed = tmix(top_i, top_j, lambda);
    v.row_weights = tmix_row_weights(top_i.rows, top_j.rows, lambda);
  } else {
    auto mixed = smix(pool(top_i, params.pooling), pool(top_j, params.pooling), lambda);
    v.mixed = Matrix(1, mixed.size());
    std::copy(mixed.begin(), mixed.end(), v.mixed.data.begin());
    v.row_weights = {1.0};
  }
  return v;
}

/// Prediction of the model on a virtual example.
inline Prediction predict_virtual(const ModelParams& params, const VirtualExample& v) {
  return forward_from_layer(params, v.mixed, v.layer, v.row_weights);
}

/// Draws lambda then the mix layer, then interpolates the pair.
inline VirtualExample make_virtual_pair(const ModelParams& params, const EncodedExample& ex_i,
                                        const EncodedExample& ex_j, const MixupConfig& config, Rng& rng) {
  config.validate(params.layer_count());
  const auto layers = config.layers.empty() ? default_mix_layers(params.layer_count()) : config.layers;
  const double lambda = sample_lambda(config.alpha, rng);
  const std::size_t layer = layers[uniform_index(rng, layers.size())];
  return mix_pair(params, ex_i, ex_j, config.mode, lambda, layer);
}

}  // namespace amda
