// Copyright 2026  pvad-lab authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Speaker encoder: stacked BLSTMs followed by attentive pooling, giving an
// utterance-level embedding of size K = 2H. Pretrained as a speaker
// classifier and then frozen.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvad/features.hpp"
#include "pvad/nn/checkpoint.hpp"
#include "pvad/nn/layers.hpp"
#include "pvad/nn/optim.hpp"

namespace pvad {

using SpeakerEmbedding = Eigen::VectorXf;

/// Feature matrix in the models' frame-per-column layout.
template <typename S>
nn::Mat<S> ModelInput(const FeatureSequence& f) {
  return f.values.transpose().template cast<S>();
}

/// Per-dimension mean and inverse standard deviation over all frames.
struct InputStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd inv_std;

  static InputStats Identity(int dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
  }

  /// Statistics over the frames of `feature_seqs`. When `frame_masks` is
  /// given, only frames with a nonzero mask entry contribute; a null mask
  /// selects every frame of its sequence.
  static InputStats Estimate(const std::vector<const FeatureSequence*>& feature_seqs,
                             const std::vector<const std::vector<int>*>& frame_masks = {}) {
    if (!frame_masks.empty() && frame_masks.size() != feature_seqs.size())
      throw DataError("input statistics: one mask per sequence expected");
    Eigen::VectorXd sum, sq;
    double n = 0;
    for (std::size_t k = 0; k < feature_seqs.size(); ++k) {
      const FeatureSequence& f = *feature_seqs[k];
      const std::vector<int>* mask = frame_masks.empty() ? nullptr : frame_masks[k];
      if (mask && int(mask->size()) != f.num_frames())
        throw DataError("input statistics: mask length differs from frame count");
      if (sum.size() == 0) {
        sum = Eigen::VectorXd::Zero(f.dim());
        sq = Eigen::VectorXd::Zero(f.dim());
      }
      for (int t = 0; t < f.num_frames(); ++t) {
        if (mask && !(*mask)[std::size_t(t)]) continue;
        const Eigen::VectorXd x = f.values.row(t).transpose().cast<double>();
        sum += x;
        sq += x.cwiseAbs2();
        n += 1;
      }
    }
    if (n == 0) throw DataError("cannot estimate input statistics from no frames");
    InputStats s;
    s.mean = sum / n;
    const Eigen::ArrayXd var = (sq / n).array() - s.mean.array().square();
    s.inv_std = var.max(1e-8).rsqrt().matrix();
    return s;
  }
};

/// Frozen input normalizer stored as ordinary parameters so checkpoints
/// carry it.
template <typename S>
class InputNorm {
 public:
  InputNorm() = default;
  InputNorm(std::string prefix, int dim) : prefix_(std::move(prefix)), dim_(dim) {}

  void AddParams(nn::ParamStore<S>& ps) const {
    ps.Add(prefix_ + ".mean", dim_, 1, false);
    ps.Add(prefix_ + ".inv_std", dim_, 1, false).value.setOnes();
  }

  void Set(nn::ParamStore<S>& ps, const InputStats& st) const {
    if (st.mean.size() != dim_) throw DataError(prefix_ + ": statistics dimension mismatch");
    ps.at(prefix_ + ".mean").value = st.mean.cast<S>();
    ps.at(prefix_ + ".inv_std").value = st.inv_std.cast<S>();
  }

  nn::Mat<S> Forward(const nn::ParamStore<S>& ps, const nn::Mat<S>& x) const {
    if (x.rows() != dim_)
      throw DataError(prefix_ + ": input has " + std::to_string(x.rows()) +
                      " rows, expected " + std::to_string(dim_));
    const auto& mean = ps.Expect(prefix_ + ".mean", dim_, 1);
    const auto& inv = ps.Expect(prefix_ + ".inv_std", dim_, 1);
    return ((x.colwise() - mean.col(0)).array().colwise() * inv.col(0).array()).matrix();
  }

 private:
  std::string prefix_;
  int dim_ = 0;
};

struct SpeakerModelConfig {
  int input_dim = 0;
  int hidden = 32;
  int layers = 3;
  int attention_dim = 0;  // 0 -> hidden

  int embedding_dim() const { return 2 * hidden; }

  nlohmann::json ToJson() const {
    return {{"input_dim", input_dim}, {"hidden", hidden}, {"layers", layers},
            {"attention_dim", attention_dim}, {"K", embedding_dim()}};
  }
  static SpeakerModelConfig FromJson(const nlohmann::json& j) {
    SpeakerModelConfig c;
    c.input_dim = j.at("input_dim");
    c.hidden = j.at("hidden");
    c.layers = j.value("layers", 3);
    c.attention_dim = j.value("attention_dim", 0);
    return c;
  }
};

template <typename S>
struct EncoderCache {
  nn::Mat<S> normalized;
  std::vector<nn::BlstmCache<S>> blstm;
  std::vector<nn::Mat<S>> inputs;
  nn::AttentionCache<S> attention;
};

template <typename S>
class SpeakerEncoder {
 public:
  explicit SpeakerEncoder(SpeakerModelConfig cfg) : cfg_(cfg) {
    if (cfg_.input_dim <= 0 || cfg_.hidden <= 0 || cfg_.layers <= 0)
      throw ConfigError("speaker model: invalid dimensions");
    norm_ = InputNorm<S>("spk.input", cfg_.input_dim);
    int in = cfg_.input_dim;
    for (int l = 0; l < cfg_.layers; ++l) {
      layers_.emplace_back("spk.blstm" + std::to_string(l), in, cfg_.hidden);
      in = 2 * cfg_.hidden;
    }
    attention_ = nn::AttentivePooling<S>(
        "spk.attn", in, cfg_.attention_dim > 0 ? cfg_.attention_dim : cfg_.hidden);
  }

  void AddParams(nn::ParamStore<S>& ps, Rng& rng) const {
    norm_.AddParams(ps);
    for (const auto& l : layers_) l.AddParams(ps, rng);
    attention_.AddParams(ps, rng);
  }

  const InputNorm<S>& norm() const { return norm_; }
  const SpeakerModelConfig& config() const { return cfg_; }

  nn::Vec<S> Forward(const nn::ParamStore<S>& ps, const nn::Mat<S>& x,
                     EncoderCache<S>* cache = nullptr) const {
    if (x.cols() == 0) throw DataError("speaker encoder: empty feature sequence");
    nn::Mat<S> h = norm_.Forward(ps, x);
    if (cache) {
      cache->blstm.assign(layers_.size(), {});
      cache->inputs.assign(layers_.size(), {});
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      nn::Mat<S> next = layers_[l].Forward(ps, h, cache ? &cache->blstm[l] : nullptr);
      if (cache) cache->inputs[l] = std::move(h);
      h = std::move(next);
    }
    return attention_.Forward(ps, h, cache ? &cache->attention : nullptr);
  }

  /// Accumulates parameter gradients for dL/de.
  void Backward(nn::ParamStore<S>& ps, const EncoderCache<S>& c,
                const nn::Vec<S>& de) const {
    nn::Mat<S> dh = attention_.Backward(ps, c.attention, de);
    for (std::size_t l = layers_.size(); l-- > 0;)
      dh = layers_[l].Backward(ps, c.blstm[l], dh);
  }

  /// Attention weights over frames for inspection.
  nn::Vec<S> AttentionWeights(const nn::ParamStore<S>& ps, const nn::Mat<S>& x) const {
    EncoderCache<S> c;
    Forward(ps, x, &c);
    return c.attention.weights;
  }

 private:
  SpeakerModelConfig cfg_;
  InputNorm<S> norm_;
  std::vector<nn::Blstm<S>> layers_;
  nn::AttentivePooling<S> attention_;
};

/// A frozen encoder together with its parameters.
struct SpeakerModel {
  SpeakerModelConfig config;
  FeatureConfig features;  // front end the encoder was trained on
  nn::ParamStore<float> params;

  SpeakerEmbedding Encode(const FeatureSequence& stacked) const {
    return SpeakerEncoder<float>(config).Forward(params, ModelInput<float>(stacked));
  }

  void Save(const std::string& path) const {
    nn::CheckpointInfo info;
    info.metadata = config.ToJson();
    info.metadata["frozen"] = true;
    info.metadata["features"] = features.ToJson();
    nn::SaveCheckpoint(path, params, info);
  }

  static SpeakerModel Load(const std::string& path) {
    nn::CheckpointInfo info;
    SpeakerModel m;
    m.params = nn::LoadCheckpoint<float>(path, &info);
    m.config = SpeakerModelConfig::FromJson(info.metadata);
    m.features = FeatureConfig::FromJson(info.metadata.value("features", nlohmann::json::object()));
    m.params.SetTrainable(false);
    return m;
  }
};

/// a.b / (|a||b|), computed in double. Identical inputs give exactly 1.
template <typename A, typename B>
double CosineSimilarity(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.size() != b.size()) throw DataError("cosine similarity: dimension mismatch");
  const Eigen::VectorXd x = a.template cast<double>(), y = b.template cast<double>();
  const double xx = x.squaredNorm(), yy = y.squaredNorm();
  if (xx == 0 || yy == 0) throw DataError("cosine similarity of a zero vector");
  return std::clamp(x.dot(y) / std::sqrt(xx * yy), -1.0, 1.0);
}

// ---------------------------------------------------------- pretraining

struct LabeledFeatures {
  const FeatureSequence* features = nullptr;  // context-stacked
  int speaker = 0;
  const std::vector<int>* speech = nullptr;  // optional frame labels for input statistics
};

struct SpeakerTrainConfig {
  int hidden = 32;
  double lr = 1e-3;
  int batch_size = 16;
  int max_epochs = 100;
  int patience = 5;
  double clip = 5.0;
  std::uint64_t seed = 0;
};

struct SpeakerEpoch {
  int epoch = 0;
  double train_loss = 0, val_loss = 0, val_accuracy = 0;
};

struct SpeakerPretrainResult {
  SpeakerModel model;  // frozen encoder of the best validation epoch
  std::vector<SpeakerEpoch> history;
  double initial_train_loss = 0;       // training-set loss before any update
  double train_loss_after_first = 0;   // same, evaluated after epoch 1
  int best_epoch = 0;
};

namespace detail {

struct ClassifierEval {
  double loss = 0, accuracy = 0;
};

inline ClassifierEval EvaluateClassifier(const SpeakerEncoder<float>& enc,
                                         const nn::Linear<float>& head,
                                         const nn::ParamStore<float>& ps,
                                         const std::vector<LabeledFeatures>& data) {
  ClassifierEval r;
  for (const auto& d : data) {
    const nn::Mat<float> e = enc.Forward(ps, ModelInput<float>(*d.features));
    const auto [loss, post] = nn::SoftmaxCe<float>(head.Forward(ps, e), {d.speaker});
    r.loss += loss;
    Eigen::Index arg;
    post.col(0).maxCoeff(&arg);
    r.accuracy += arg == d.speaker ? 1.0 : 0.0;
  }
  r.loss /= double(data.size());
  r.accuracy /= double(data.size());
  return r;
}

}  // namespace detail

/// Trains encoder + linear head with softmax cross-entropy over speaker
/// identities, early-stopping on validation loss. The head is discarded.
inline SpeakerPretrainResult PretrainSpeakerEncoder(
    const std::vector<LabeledFeatures>& train, const std::vector<LabeledFeatures>& val,
    int n_speakers, const SpeakerTrainConfig& cfg,
    const std::function<void(const SpeakerEpoch&)>& on_epoch = {}) {
  if (n_speakers < 2) throw DataError("speaker pretraining needs at least 2 speakers");
  if (train.empty() || val.empty()) throw DataError("speaker pretraining needs data");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  SpeakerModelConfig mc;
  mc.input_dim = train.front().features->dim();
  mc.hidden = cfg.hidden;
  SpeakerEncoder<float> enc(mc);
  nn::Linear<float> head("head", mc.embedding_dim(), n_speakers);

  Rng init_rng = MakeRng(cfg.seed, 0, "speaker-init");
  nn::ParamStore<float> ps;
  enc.AddParams(ps, init_rng);
  head.AddParams(ps, init_rng);
  std::vector<const FeatureSequence*> feats;
  std::vector<const std::vector<int>*> masks;
  for (const auto& d : train) {
    feats.push_back(d.features);
    masks.push_back(d.speech);
  }
  enc.norm().Set(ps, InputStats::Estimate(feats, masks));

  nn::AdamState<float> adam;
  adam.lr = cfg.lr;
  SpeakerPretrainResult result;
  result.initial_train_loss = detail::EvaluateClassifier(enc, head, ps, train).loss;

  double best = std::numeric_limits<double>::infinity();
  nn::ParamStore<float> best_params = ps;
  int since_best = 0;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng = MakeRng(cfg.seed, std::uint64_t(epoch), "speaker-epoch");
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += std::size_t(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + std::size_t(cfg.batch_size));
      ps.ZeroGrad();
      const double scale = 1.0 / double(b1 - b0);
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& d = train[order[k]];
        EncoderCache<float> cache;
        const nn::Mat<float> e = enc.Forward(ps, ModelInput<float>(*d.features), &cache);
        const nn::Mat<float> logits = head.Forward(ps, e);
        auto ce = nn::SoftmaxCrossEntropy<float>(logits, {d.speaker}, scale);
        loss_sum += ce.loss_sum;
        const nn::Mat<float> de = head.Backward(ps, e, ce.grad);
        enc.Backward(ps, cache, de.col(0));
      }
      seen += b1 - b0;
      nn::ClipGradNorm(ps, cfg.clip);
      nn::AdamStep(ps, adam);
    }
    if (!std::isfinite(loss_sum)) throw NumericError("speaker pretraining diverged (NaN loss)");
    if (epoch == 1)
      result.train_loss_after_first = detail::EvaluateClassifier(enc, head, ps, train).loss;
    const auto v = detail::EvaluateClassifier(enc, head, ps, val);
    result.history.push_back({epoch, loss_sum / double(seen), v.loss, v.accuracy});
    if (on_epoch) on_epoch(result.history.back());
    if (v.loss < best) {
      best = v.loss;
      best_params = ps;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  result.model.config = mc;  // caller records the front end in model.features
  result.model.params = best_params.Extract("spk.");
  result.model.params.SetTrainable(false);
  return result;
}

}  // namespace pvad
