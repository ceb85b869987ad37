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

// Frame-level personalized VAD: the speaker embedding is appended to every
// input frame, followed by stacked unidirectional LSTMs, dropout, a linear
// layer and a softmax over {non-speech or non-target, target speech}.
// With embed_dim == 0 the same network is the standard VAD baseline.

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvad/nn/checkpoint.hpp"
#include "pvad/nn/layers.hpp"
#include "pvad/speaker_model.hpp"

namespace pvad {

struct PvadConfig {
  int input_dim = 0;
  int embed_dim = 0;  // 0: standard VAD, no conditioning
  int hidden = 32;
  int layers = 4;
  double dropout = 0.5;

  nlohmann::json ToJson() const {
    return {{"input_dim", input_dim}, {"embed_dim", embed_dim}, {"hidden", hidden},
            {"layers", layers}, {"dropout", dropout}, {"classes", 2}};
  }
  static PvadConfig FromJson(const nlohmann::json& j) {
    PvadConfig c;
    c.input_dim = j.at("input_dim");
    c.embed_dim = j.at("embed_dim");
    c.hidden = j.at("hidden");
    c.layers = j.value("layers", 4);
    c.dropout = j.value("dropout", 0.5);
    return c;
  }
};

template <typename S>
struct PvadCache {
  std::vector<nn::LstmCache<S>> lstm;
  nn::Mat<S> dropout_mask;
  nn::Mat<S> head_input;
};

template <typename S>
class PvadNetwork {
 public:
  explicit PvadNetwork(PvadConfig cfg) : cfg_(cfg) {
    if (cfg_.input_dim <= 0 || cfg_.hidden <= 0 || cfg_.layers <= 0 || cfg_.embed_dim < 0)
      throw ConfigError("pvad model: invalid dimensions");
    norm_ = InputNorm<S>("pvad.input", cfg_.input_dim);
    int in = cfg_.input_dim + cfg_.embed_dim;
    for (int l = 0; l < cfg_.layers; ++l) {
      lstm_.emplace_back("pvad.lstm" + std::to_string(l), in, cfg_.hidden);
      in = cfg_.hidden;
    }
    out_ = nn::Linear<S>("pvad.out", cfg_.hidden, 2);
  }

  void AddParams(nn::ParamStore<S>& ps, Rng& rng) const {
    norm_.AddParams(ps);
    for (const auto& l : lstm_) l.AddParams(ps, rng);
    out_.AddParams(ps, rng);
  }

  const PvadConfig& config() const { return cfg_; }
  const InputNorm<S>& norm() const { return norm_; }

  /// 2 x T logits. `rng` is only used in train mode.
  nn::Mat<S> Logits(const nn::ParamStore<S>& ps, const nn::Mat<S>& x,
                    const nn::Vec<S>& embedding, nn::Mode mode, Rng* rng = nullptr,
                    PvadCache<S>* cache = nullptr) const {
    if (embedding.size() != cfg_.embed_dim)
      throw DataError("pvad: embedding has dimension " + std::to_string(embedding.size()) +
                      ", model expects " + std::to_string(cfg_.embed_dim));
    nn::Mat<S> h(cfg_.input_dim + cfg_.embed_dim, x.cols());
    h.topRows(cfg_.input_dim) = norm_.Forward(ps, x);
    if (cfg_.embed_dim > 0) h.bottomRows(cfg_.embed_dim) = embedding.replicate(1, x.cols());
    if (cache) cache->lstm.assign(lstm_.size(), {});
    for (std::size_t l = 0; l < lstm_.size(); ++l)
      h = lstm_[l].Forward(ps, h, cache ? &cache->lstm[l] : nullptr);
    if (mode == nn::Mode::kTrain && cfg_.dropout > 0) {
      if (!rng) throw ConfigError("pvad: train mode needs an rng");
      nn::Mat<S> mask;
      h = nn::Dropout<S>(h, cfg_.dropout, mode, *rng, &mask);
      if (cache) cache->dropout_mask = std::move(mask);
    } else if (cache) {
      cache->dropout_mask.resize(0, 0);
    }
    if (cache) cache->head_input = h;
    return out_.Forward(ps, h);
  }

  nn::Mat<S> Posteriors(const nn::ParamStore<S>& ps, const nn::Mat<S>& x,
                        const nn::Vec<S>& embedding) const {
    return nn::Softmax<S>(Logits(ps, x, embedding, nn::Mode::kEval));
  }

  void Backward(nn::ParamStore<S>& ps, const PvadCache<S>& c,
                const nn::Mat<S>& dlogits) const {
    nn::Mat<S> dh = out_.Backward(ps, c.head_input, dlogits);
    if (c.dropout_mask.size() > 0) dh = dh.cwiseProduct(c.dropout_mask);
    for (std::size_t l = lstm_.size(); l-- > 0;) dh = lstm_[l].Backward(ps, c.lstm[l], dh);
  }

 private:
  PvadConfig cfg_;
  InputNorm<S> norm_;
  std::vector<nn::Lstm<S>> lstm_;
  nn::Linear<S> out_;
};

/// A trained detector with its parameters (float).
struct PvadModel {
  PvadConfig config;
  FeatureConfig features;
  nn::ParamStore<float> params;

  bool personalized() const { return config.embed_dim > 0; }

  /// T x 2 posteriors, eval mode. Logits are computed in float and
  /// normalized in double.
  Eigen::MatrixXd Forward(const FeatureSequence& input, const SpeakerEmbedding& e) const {
    const nn::Mat<float> logits =
        PvadNetwork<float>(config).Logits(params, ModelInput<float>(input), e, nn::Mode::kEval);
    return nn::Softmax<double>(logits.cast<double>()).transpose();
  }

  void Save(const std::string& path, long step = 0) const {
    nn::CheckpointInfo info;
    info.step = step;
    info.metadata = config.ToJson();
    info.metadata["features"] = features.ToJson();
    nn::SaveCheckpoint(path, params, info);
  }

  static PvadModel Load(const std::string& path) {
    nn::CheckpointInfo info;
    PvadModel m;
    m.params = nn::LoadCheckpoint<float>(path, &info);
    m.config = PvadConfig::FromJson(info.metadata);
    m.features = FeatureConfig::FromJson(info.metadata.value("features", nlohmann::json::object()));
    return m;
  }
};

}  // namespace pvad
