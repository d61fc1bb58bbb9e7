#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "amda/error.hpp"
#include "amda/mixup.hpp"
#include "amda/model.hpp"
#include "amda/rng.hpp"

namespace amda {

using Gradients = ModelParams;

/// Non-finite loss during training. Holds the parameters from before the
/// offending step.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::shared_ptr<const ModelParams> last_good = nullptr)
      : Error(what), last_good_(std::move(last_good)) {}
  const std::shared_ptr<const ModelParams>& last_good() const { return last_good_; }

 private:
  std::shared_ptr<const ModelParams> last_good_;
};

/// Plain examples contribute CE, virtual examples contribute KL; the loss is
/// the plain sum over both.
struct Batch {
  std::vector<EncodedExample> plain;
  std::vector<VirtualExample> virtuals;

  bool empty() const { return plain.empty() && virtuals.empty(); }
};

struct BackwardResult {
  Gradients gradients;
  LossReport loss;
};

namespace detail {

// dL/dz for a softmax output against a target distribution.
inline std::vector<double> logit_grad(const Prediction& p, std::span<const double> target) {
  double mass = 0.0;
  for (double t : target) mass += t;
  std::vector<double> dz(p.probs.size());
  for (std::size_t k = 0; k < dz.size(); ++k) dz[k] = p.probs[k] * mass - target[k];
  return dz;
}

// Head and pooling backward. Returns dL/dpooled.
inline std::vector<double> backprop_head(const ModelParams& params, std::span<const double> pooled,
                                         std::span<const double> dz, Gradients& g) {
  const std::size_t d = params.dim();
  const std::size_t k_count = params.class_count();
  std::vector<double> dpooled(d, 0.0);
  for (std::size_t k = 0; k < k_count; ++k) g.head_bias[k] += dz[k];
  for (std::size_t i = 0; i < d; ++i) {
    auto w = params.head.row(i);
    auto gw = g.head.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      gw[k] += pooled[i] * dz[k];
      acc += w[k] * dz[k];
    }
    dpooled[i] = acc;
  }
  return dpooled;
}

inline Matrix backprop_pool(const Matrix& h, Pooling pooling, std::span<const double> row_weights,
                            std::span<const double> dpooled) {
  Matrix dh(h.rows, h.cols);
  if (pooling == Pooling::first) {
    std::copy(dpooled.begin(), dpooled.end(), dh.row(0).begin());
    return dh;
  }
  double total = 0.0;
  for (std::size_t t = 0; t < h.rows; ++t) total += weight_at(row_weights, t);
  for (std::size_t t = 0; t < h.rows; ++t) {
    const double s = weight_at(row_weights, t) / total;
    for (std::size_t c = 0; c < h.cols; ++c) dh(t, c) = s * dpooled[c];
  }
  return dh;
}

// One tanh layer backward given its input and output. Returns dL/dinput.
inline Matrix backprop_layer(const DenseLayer& layer, const Matrix& in, const Matrix& out, const Matrix& dout,
                             DenseLayer& g) {
  const std::size_t d = layer.weight.rows;
  Matrix din(in.rows, in.cols);
  std::vector<double> da(d);
  for (std::size_t t = 0; t < in.rows; ++t) {
    for (std::size_t o = 0; o < d; ++o) {
      const double h = out(t, o);
      da[o] = dout(t, o) * (1.0 - h * h);
    }
    auto x = in.row(t);
    auto dx = din.row(t);
    for (std::size_t o = 0; o < d; ++o) {
      if (da[o] == 0.0) continue;
      g.bias[o] += da[o];
      auto w = layer.weight.row(o);
      auto gw = g.weight.row(o);
      for (std::size_t i = 0; i < d; ++i) {
        gw[i] += da[o] * x[i];
        dx[i] += w[i] * da[o];
      }
    }
  }
  return din;
}

// states[s] is the output of params.layers[base + s - 1]; returns dL/dstates[0].
inline Matrix backprop_stack(const ModelParams& params, const std::vector<Matrix>& states, std::size_t base,
                             Matrix dtop, Gradients& g) {
  for (std::size_t s = states.size() - 1; s > 0; --s) {
    const std::size_t layer = base + s - 1;
    dtop = backprop_layer(params.layers[layer], states[s - 1], states[s], dtop, g.layers[layer]);
  }
  return dtop;
}

inline void scatter_embedding(std::span<const std::size_t> ids, const Matrix& d0, Gradients& g) {
  for (std::size_t t = 0; t < ids.size(); ++t) {
    auto dst = g.embedding.row(ids[t]);
    auto src = d0.row(t);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
  }
}

inline void check_finite(double loss, const char* what) {
  if (!std::isfinite(loss)) throw TrainingError(std::string("non-finite ") + what + " loss");
}

inline void backward_plain(const ModelParams& params, const EncodedExample& ex, Gradients& g, LossReport& loss) {
  auto stack = forward_to_layer(params, ex.ids, params.layer_count());
  auto pooled = pool(stack.layers.back(), params.pooling);
  auto pred = predict_pooled(params, pooled);
  const double ce = ce_loss(pred, ex.label);
  check_finite(ce, "cross-entropy");
  loss.add_ce(ce);
  auto target = one_hot(ex.label, params.class_count());
  auto dz = logit_grad(pred, target);
  auto dpooled = backprop_head(params, pooled, dz, g);
  auto dtop = backprop_pool(stack.layers.back(), params.pooling, {}, dpooled);
  auto d0 = backprop_stack(params, stack.layers, 0, std::move(dtop), g);
  scatter_embedding(ex.ids, d0, g);
}

// Recomputes the mixed representation from the current parameters so that
// gradients reach both parents.
inline void backward_virtual(const ModelParams& params, const VirtualExample& v, Gradients& g, LossReport& loss) {
  const std::size_t layer = v.layer;
  auto si = forward_to_layer(params, v.tokens_i, layer);
  auto sj = forward_to_layer(params, v.tokens_j, layer);
  const Matrix& top_i = si.layers.back();
  const Matrix& top_j = sj.layers.back();

  std::vector<Matrix> upper;
  std::vector<double> pooled_i, pooled_j;
  if (v.mode == MixMode::tmix) {
    upper.push_back(tmix(top_i, top_j, v.lambda));
  } else {
    pooled_i = pool(top_i, params.pooling);
    pooled_j = pool(top_j, params.pooling);
    auto m = smix(pooled_i, pooled_j, v.lambda);
    Matrix row(1, m.size());
    std::copy(m.begin(), m.end(), row.data.begin());
    upper.push_back(std::move(row));
  }
  for (std::size_t l = layer; l < params.layer_count(); ++l) {
    upper.push_back(apply_layer(params.layers[l], upper.back()));
  }
  auto pooled = pool(upper.back(), params.pooling, v.row_weights);
  auto pred = predict_pooled(params, pooled);
  const double kl = kl_loss(pred, v.soft_label);
  check_finite(kl, "KL");
  loss.add_kl(kl);

  auto dz = logit_grad(pred, v.soft_label);
  auto dpooled = backprop_head(params, pooled, dz, g);
  auto dtop = backprop_pool(upper.back(), params.pooling, v.row_weights, dpooled);
  Matrix dmixed = backprop_stack(params, upper, layer, std::move(dtop), g);

  Matrix di(top_i.rows, top_i.cols), dj(top_j.rows, top_j.cols);
  const double wi = v.lambda, wj = 1.0 - v.lambda;
  if (v.mode == MixMode::tmix) {
    for (std::size_t t = 0; t < di.rows; ++t)
      for (std::size_t c = 0; c < di.cols; ++c) di(t, c) = wi * dmixed(t, c);
    for (std::size_t t = 0; t < dj.rows; ++t)
      for (std::size_t c = 0; c < dj.cols; ++c) dj(t, c) = wj * dmixed(t, c);
  } else {
    std::vector<double> dpi(dmixed.cols), dpj(dmixed.cols);
    for (std::size_t c = 0; c < dmixed.cols; ++c) {
      dpi[c] = wi * dmixed(0, c);
      dpj[c] = wj * dmixed(0, c);
    }
    di = backprop_pool(top_i, params.pooling, {}, dpi);
    dj = backprop_pool(top_j, params.pooling, {}, dpj);
  }
  scatter_embedding(v.tokens_i, backprop_stack(params, si.layers, 0, std::move(di), g), g);
  scatter_embedding(v.tokens_j, backprop_stack(params, sj.layers, 0, std::move(dj), g), g);
}

}  // namespace detail

namespace detail {

inline void accumulate(Gradients& total, const Gradients& part) {
  std::vector<std::span<double>> dst;
  ModelParams::for_each_tensor(total, [&](std::span<double> t) { dst.push_back(t); });
  std::size_t i = 0;
  ModelParams::for_each_tensor(part, [&](std::span<const double> t) {
    for (std::size_t j = 0; j < t.size(); ++j) dst[i][j] += t[j];
    ++i;
  });
}

}  // namespace detail

/// Exact gradient of sum(CE over plain) + sum(KL over virtual).
/// Each item's gradient is formed separately and then summed in batch order,
/// so the reduction is reproducible bit for bit.
inline BackwardResult backward(const ModelParams& params, const Batch& batch) {
  BackwardResult r{params.zeros_like(), {}};
  Gradients part = params.zeros_like();
  auto reset = [&] {
    ModelParams::for_each_tensor(part, [](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
  };
  for (const auto& ex : batch.plain) {
    reset();
    detail::backward_plain(params, ex, part, r.loss);
    detail::accumulate(r.gradients, part);
  }
  for (const auto& v : batch.virtuals) {
    reset();
    detail::backward_virtual(params, v, part, r.loss);
    detail::accumulate(r.gradients, part);
  }
  return r;
}

/// Loss only (no gradient); used by finite-difference checks and reporting.
inline LossReport evaluate_loss(const ModelParams& params, const Batch& batch) {
  LossReport loss;
  for (const auto& ex : batch.plain) loss.add_ce(ce_loss(predict(params, ex.ids), ex.label));
  for (const auto& v : batch.virtuals) {
    auto fresh = mix_pair(params, EncodedExample{v.parent_i, v.tokens_i, v.label_i},
                          EncodedExample{v.parent_j, v.tokens_j, v.label_j}, v.mode, v.lambda, v.layer);
    loss.add_kl(kl_loss(predict_virtual(params, fresh), v.soft_label));
  }
  return loss;
}

struct TrainingConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs == 0) throw ConfigError("train.epochs must be > 0");
    if (batch_size == 0) throw ConfigError("train.batch_size must be > 0");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("train.lr must be finite and >= 0");
    }
  }
};

/// params -= lr * grad
inline void sgd_update(ModelParams& params, const Gradients& grads, double lr) {
  std::vector<std::span<double>> dst;
  std::vector<std::span<const double>> src;
  ModelParams::for_each_tensor(params, [&](std::span<double> t) { dst.push_back(t); });
  ModelParams::for_each_tensor(grads, [&](std::span<const double> t) { src.push_back(t); });
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i][j] -= lr * src[i][j];
  }
}

/// One SGD step on the batch; returns the pre-step loss.
inline LossReport train_step(ModelParams& params, const Batch& batch, double lr) {
  auto r = backward(params, batch);
  sgd_update(params, r.gradients, lr);
  return r.loss;
}

struct EpochStats {
  std::size_t epoch = 0;
  LossReport loss;
  std::size_t plain_count = 0;
  std::size_t virtual_count = 0;
};

/// Epoch-at-a-time SGD trainer. Each epoch is a CE pass over the shuffled data
/// followed by a KL pass over freshly drawn virtual pairs (when enabled).
class Trainer {
 public:
  Trainer(ModelParams init, TrainingConfig config, MixupConfig mixup)
      : params_(std::move(init)),
        config_(config),
        mixup_(std::move(mixup)),
        shuffle_rng_(derive_seed(config.seed, seed_stream::shuffle)),
        mixup_rng_(derive_seed(config.seed, seed_stream::mixup)) {
    config_.validate();
    mixup_.validate(params_.layer_count());
  }

  EpochStats run_epoch(const std::vector<EncodedExample>& data) {
    if (data.empty()) throw InputError("training data is empty");
    EpochStats stats;
    stats.epoch = epoch_++;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, shuffle_rng_);
    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
      Batch batch;
      for (std::size_t k = start; k < std::min(order.size(), start + config_.batch_size); ++k) {
        batch.plain.push_back(data[order[k]]);
      }
      step(batch, stats);
    }
    for (std::size_t start = 0; start < mixup_.pairs_per_epoch; start += config_.batch_size) {
      Batch batch;
      const std::size_t end = std::min(mixup_.pairs_per_epoch, start + config_.batch_size);
      for (std::size_t k = start; k < end; ++k) {
        const auto& a = data[uniform_index(mixup_rng_, data.size())];
        const auto& b = data[uniform_index(mixup_rng_, data.size())];
        batch.virtuals.push_back(make_virtual_pair(params_, a, b, mixup_, mixup_rng_));
      }
      step(batch, stats);
    }
    return stats;
  }

  const ModelParams& params() const { return params_; }
  ModelParams release() && { return std::move(params_); }
  std::size_t epochs_done() const { return epoch_; }

 private:
  void step(const Batch& batch, EpochStats& stats) {
    BackwardResult r;
    try {
      r = backward(params_, batch);
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch_ - 1),
                          std::make_shared<const ModelParams>(params_));
    }
    sgd_update(params_, r.gradients, config_.learning_rate);
    stats.loss.add_ce(r.loss.ce_term);
    stats.loss.add_kl(r.loss.kl_term);
    stats.plain_count += batch.plain.size();
    stats.virtual_count += batch.virtuals.size();
  }

  ModelParams params_;
  TrainingConfig config_;
  MixupConfig mixup_;
  Rng shuffle_rng_;
  Rng mixup_rng_;
  std::size_t epoch_ = 0;
};

/// Full training run over fixed data.
inline ModelParams train_model(ModelParams init, const std::vector<EncodedExample>& data,
                               const TrainingConfig& config, const MixupConfig& mixup,
                               const std::function<void(const EpochStats&)>& on_epoch = {}) {
  Trainer trainer(std::move(init), config, mixup);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    auto stats = trainer.run_epoch(data);
    if (on_epoch) on_epoch(stats);
  }
  return std::move(trainer).release();
}

inline std::vector<EncodedExample> encode(const Vocabulary& vocab, const Dataset& ds) {
  std::vector<EncodedExample> out;
  out.reserve(ds.size());
  for (const auto& ex : ds.examples) out.push_back({ex.id, vocab.encode(ex.tokens), ex.label});
  return out;
}

/// Fresh model of the given shape (seeded by config.seed) trained on `data`.
inline Classifier train_classifier(const Vocabulary& vocab, const std::vector<EncodedExample>& data,
                                   ModelShape shape, const TrainingConfig& config, const MixupConfig& mixup,
                                   const std::function<void(const EpochStats&)>& on_epoch = {}) {
  shape.vocab_size = vocab.size();
  Classifier c;
  c.vocab = vocab;
  c.seed = config.seed;
  c.params = train_model(init_params(shape, config.seed), data, config, mixup, on_epoch);
  return c;
}

}  // namespace amda
