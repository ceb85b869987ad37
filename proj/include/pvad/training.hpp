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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvad/augmentation.hpp"
#include "pvad/corpus.hpp"
#include "pvad/nn/optim.hpp"
#include "pvad/pvad_model.hpp"
#include "pvad/speaker_model.hpp"

namespace pvad {

enum class Regime { kVad, kEnrollFull, kEnrollLess };

inline const char* RegimeName(Regime r) {
  switch (r) {
    case Regime::kVad: return "vad";
    case Regime::kEnrollFull: return "enroll-full";
    case Regime::kEnrollLess: return "enroll-less";
  }
  return "?";
}

inline Regime ParseRegime(const std::string& s) {
  if (s == "vad") return Regime::kVad;
  if (s == "enroll-full" || s == "enroll_full") return Regime::kEnrollFull;
  if (s == "enroll-less" || s == "enroll_less") return Regime::kEnrollLess;
  throw ConfigError("unknown regime '" + s + "'");
}

/// Additive noise used while training: each example is mixed with
/// probability `prob` at an SNR drawn uniformly from [snr_min, snr_max].
struct NoiseConfig {
  double prob = 0.5;
  double snr_min_db = 5.0;
  double snr_max_db = 30.0;
  std::vector<NoiseType> train_types = {NoiseType::kWhite, NoiseType::kPink,
                                        NoiseType::kBrown, NoiseType::kHum};
  std::vector<NoiseType> test_types = {NoiseType::kCrowd, NoiseType::kStation};
  bool conditioning_too = false;
  double bank_seconds = 20.0;
};

/// One long noise recording per type.
struct NoiseBank {
  std::vector<NoiseType> types;
  std::vector<Waveform> waves;

  static NoiseBank Make(const std::vector<NoiseType>& types, double seconds,
                        std::uint64_t seed, int sample_rate = 16000) {
    NoiseBank b;
    for (NoiseType t : types) {
      b.types.push_back(t);
      b.waves.push_back(MakeNoise(t, std::size_t(seconds * sample_rate),
                                  StreamSeed(seed, std::uint64_t(t), "noise-bank"),
                                  sample_rate));
    }
    return b;
  }
  bool empty() const { return waves.empty(); }
};

struct TrainConfig {
  Regime regime = Regime::kEnrollLess;
  bool aug = true;
  std::uint64_t seed = 0;
  int batch_size = 16;
  double lr = 1e-4;
  int max_epochs = 100;
  int patience = 5;
  double clip = 5.0;
  int hidden = 32;
  int layers = 4;
  double dropout = 0.5;
  int max_utts = 3;  // utterances per concatenated input
  std::pair<double, double> gap_range_s = {0.0, 0.5};
  int examples_per_epoch = 0;  // 0: one per training utterance
  FeatureConfig features;
  AugConfig aug_config;
  NoiseConfig noise;
};

/// How to build one example from a pool of utterances. Indices refer to
/// the pool; the noise draw is part of the recipe so that it is replayable.
struct ExampleRecipe {
  std::vector<std::size_t> inputs;       // enroll-less / vad: concatenation order
  int target_index = 0;                  // enroll-less: position of the target
  std::vector<std::size_t> targets;      // enroll-full: target speaker utterances
  std::vector<std::size_t> distractors;  // enroll-full: other speakers
  std::uint64_t seed = 0;
  int noise_index = -1;  // -1: clean
  double snr_db = kCleanSnr;

  bool operator==(const ExampleRecipe&) const = default;
};

/// Per-epoch minibatches of example indices: a seeded permutation cut into
/// full batches, the remainder dropped.
inline std::vector<std::vector<std::size_t>> EpochLoop(std::size_t n_examples,
                                                       int batch_size, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (std::size_t(batch_size) > n_examples)
    throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                      std::to_string(n_examples));
  std::vector<std::size_t> order(n_examples);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b + std::size_t(batch_size) <= n_examples; b += std::size_t(batch_size))
    batches.emplace_back(order.begin() + std::ptrdiff_t(b),
                         order.begin() + std::ptrdiff_t(b) + batch_size);
  return batches;
}

namespace detail {

inline void DrawNoise(ExampleRecipe& r, const NoiseConfig& nc, std::size_t n_types, Rng& rng) {
  if (n_types == 0 || Uniform(rng, 0, 1) >= nc.prob) return;
  r.noise_index = UniformInt(rng, 0, int(n_types) - 1);
  r.snr_db = Uniform(rng, nc.snr_min_db, nc.snr_max_db);
}

inline std::size_t DrawOther(std::size_t n, std::size_t exclude, Rng& rng) {
  std::size_t k = std::size_t(UniformInt(rng, 0, int(n) - 2));
  return k >= exclude ? k + 1 : k;
}

}  // namespace detail

/// Enroll-less (and standard VAD) recipes: every pool utterance is the
/// target of one example; partners are drawn from the whole pool by index,
/// so no speaker information is consulted.
inline std::vector<ExampleRecipe> PlanEnrollLess(std::size_t pool_size, std::size_t n_examples,
                                                 int max_utts, const NoiseConfig& nc,
                                                 std::size_t n_noise_types, Rng& rng) {
  if (pool_size < 2) throw DataError("enroll-less training needs at least 2 utterances");
  if (max_utts < 1 || max_utts > 3) throw ConfigError("max_utts must be in [1, 3]");
  std::vector<std::size_t> order(pool_size);
  std::iota(order.begin(), order.end(), 0);
  std::vector<ExampleRecipe> out;
  for (std::size_t k = 0; k < n_examples; ++k) {
    if (k % pool_size == 0) std::shuffle(order.begin(), order.end(), rng);
    ExampleRecipe r;
    const std::size_t target = order[k % pool_size];
    const int n = UniformInt(rng, 1, max_utts);
    r.target_index = UniformInt(rng, 0, n - 1);
    for (int j = 0; j < n; ++j)
      r.inputs.push_back(j == r.target_index ? target : detail::DrawOther(pool_size, target, rng));
    r.seed = rng();
    detail::DrawNoise(r, nc, n_noise_types, rng);
    out.push_back(std::move(r));
  }
  return out;
}

/// Speaker-indexed view of a labeled pool.
struct SpeakerIndex {
  std::vector<std::string> names;
  std::vector<int> speaker_of;                    // per pool utterance
  std::vector<std::vector<std::size_t>> members;  // per speaker

  static SpeakerIndex Build(const std::vector<Utterance>& pool) {
    SpeakerIndex idx;
    std::map<std::string, int> ids;
    for (const Utterance& u : pool) {
      if (!u.speaker_id) throw DataError("utterance " + u.utterance_id + " has no speaker label");
      auto [it, fresh] = ids.emplace(*u.speaker_id, int(idx.names.size()));
      if (fresh) {
        idx.names.push_back(*u.speaker_id);
        idx.members.emplace_back();
      }
      idx.speaker_of.push_back(it->second);
      idx.members[std::size_t(it->second)].push_back(idx.speaker_of.size() - 1);
    }
    return idx;
  }
};

/// Enroll-full recipes: one target input utterance, one enrollment from the
/// same speaker and 0..max_utts-1 distractors from other speakers.
inline std::vector<ExampleRecipe> PlanEnrollFull(const SpeakerIndex& idx, std::size_t n_examples,
                                                 int max_utts, const NoiseConfig& nc,
                                                 std::size_t n_noise_types, Rng& rng) {
  const std::size_t pool_size = idx.speaker_of.size();
  if (idx.members.size() < 2 && max_utts > 1)
    throw DataError("enroll-full examples with distractors need at least 2 speakers");
  for (std::size_t s = 0; s < idx.members.size(); ++s)
    if (idx.members[s].size() < 2)
      throw DataError("speaker " + idx.names[s] + " has fewer than 2 utterances");
  std::vector<std::size_t> order(pool_size);
  std::iota(order.begin(), order.end(), 0);
  std::vector<ExampleRecipe> out;
  for (std::size_t k = 0; k < n_examples; ++k) {
    if (k % pool_size == 0) std::shuffle(order.begin(), order.end(), rng);
    ExampleRecipe r;
    const std::size_t target = order[k % pool_size];
    const auto& same = idx.members[std::size_t(idx.speaker_of[target])];
    std::size_t enroll = target;
    while (enroll == target) enroll = same[std::size_t(UniformInt(rng, 0, int(same.size()) - 1))];
    r.targets = {target, enroll};
    const int n_distractors = UniformInt(rng, 0, max_utts - 1);
    for (int j = 0; j < n_distractors; ++j) {
      std::size_t d = target;
      while (idx.speaker_of[d] == idx.speaker_of[target])
        d = std::size_t(UniformInt(rng, 0, int(pool_size) - 1));
      r.distractors.push_back(d);
    }
    r.seed = rng();
    detail::DrawNoise(r, nc, n_noise_types, rng);
    out.push_back(std::move(r));
  }
  return out;
}

/// Builds the example a recipe describes.
inline TrainingExample Materialize(const ExampleRecipe& r, Regime regime,
                                   const std::vector<Utterance>& pool,
                                   const TrainConfig& cfg, const NoiseBank* bank) {
  NoiseMix mix;
  if (r.noise_index >= 0) {
    if (!bank || std::size_t(r.noise_index) >= bank->waves.size())
      throw ConfigError("recipe refers to a missing noise type");
    mix.noise = &bank->waves[std::size_t(r.noise_index)];
    mix.snr_db = r.snr_db;
    mix.conditioning_too = cfg.noise.conditioning_too;
  }
  auto ptrs = [&](const std::vector<std::size_t>& ids) {
    std::vector<const Utterance*> v;
    for (std::size_t i : ids) v.push_back(&pool.at(i));
    return v;
  };
  if (regime == Regime::kEnrollFull)
    return BuildEnrollFullExample(ptrs(r.targets), ptrs(r.distractors), cfg.gap_range_s, r.seed,
                                  cfg.features, mix);
  return BuildEnrollLessExample(ptrs(r.inputs), r.target_index, cfg.gap_range_s, r.seed,
                                cfg.features, mix);
}

/// An example ready for the network: input, labels and conditioning.
struct PreparedExample {
  nn::Mat<float> input;  // D x T
  std::vector<int> labels;
  SpeakerEmbedding embedding;
};

/// Conditioning embeddings: raw ones are cached by utterance id, augmented
/// ones are drawn from the recipe's own stream.
class Conditioner {
 public:
  Conditioner(const SpeakerModel* speaker, const FeatureConfig& fcfg, bool aug,
              const AugConfig& aug_cfg)
      : speaker_(speaker), fcfg_(fcfg), aug_(aug), aug_cfg_(aug_cfg) {}

  SpeakerEmbedding Embed(const TrainingExample& ex, std::uint64_t seed, bool clean_conditioning) {
    if (aug_) {
      Rng rng = MakeRng(seed, 0, "enroll-aug");
      return AugmentEmbedding(ex.conditioning, *speaker_, fcfg_, aug_cfg_, rng, nn::Mode::kTrain);
    }
    if (clean_conditioning) {
      auto it = cache_.find(ex.conditioning_id);
      if (it != cache_.end()) return it->second;
    }
    SpeakerEmbedding e = speaker_->Encode(FinalizeFeatures(ex.conditioning, fcfg_));
    if (clean_conditioning) cache_.emplace(ex.conditioning_id, e);
    return e;
  }

 private:
  const SpeakerModel* speaker_;
  FeatureConfig fcfg_;
  bool aug_;
  AugConfig aug_cfg_;
  std::map<std::string, SpeakerEmbedding> cache_;
};

inline PreparedExample Prepare(const TrainingExample& ex, Regime regime, Conditioner* cond,
                               std::uint64_t seed, bool clean_conditioning) {
  PreparedExample p;
  p.input = ModelInput<float>(ex.input);
  if (regime == Regime::kVad) {
    p.labels = ex.speech_labels;
    p.embedding.resize(0);
  } else {
    p.labels = ex.labels;
    p.embedding = cond->Embed(ex, seed, clean_conditioning);
  }
  return p;
}

/// Mean frame cross-entropy of `net` over a set of examples in eval mode.
template <typename S>
double MeanFrameLoss(const PvadNetwork<S>& net, const nn::ParamStore<S>& ps,
                     const std::vector<PreparedExample>& data) {
  double sum = 0;
  std::size_t frames = 0;
  for (const auto& ex : data) {
    const nn::Mat<S> logits = net.Logits(ps, ex.input.template cast<S>(),
                                         ex.embedding.template cast<S>(), nn::Mode::kEval);
    sum += nn::SoftmaxCrossEntropy<S>(logits, ex.labels, 1.0).loss_sum;
    frames += ex.labels.size();
  }
  if (frames == 0) throw DataError("loss over an empty set of frames");
  return sum / double(frames);
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0, val_loss = 0;
};

struct TrainResult {
  PvadModel model;  // best validation epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

/// Training and validation material for one run. Enroll-full needs speaker
/// labels on both pools; the other regimes never look at them.
struct TrainData {
  const std::vector<Utterance>* train = nullptr;
  const std::vector<Utterance>* val = nullptr;
};

namespace detail {

inline std::vector<ExampleRecipe> Plan(Regime regime, const std::vector<Utterance>& pool,
                                       const std::optional<SpeakerIndex>& idx, std::size_t n,
                                       const TrainConfig& cfg, std::size_t n_noise, Rng& rng) {
  if (regime == Regime::kEnrollFull)
    return PlanEnrollFull(*idx, n, cfg.max_utts, cfg.noise, n_noise, rng);
  return PlanEnrollLess(pool.size(), n, cfg.max_utts, cfg.noise, n_noise, rng);
}

/// Input statistics from speech frames of the training utterances alone.
inline InputStats PvadInputStats(const std::vector<Utterance>& pool, const FeatureConfig& fcfg) {
  std::vector<FeatureSequence> feats;
  feats.reserve(pool.size());
  for (const Utterance& u : pool) feats.push_back(ExtractFeatures(u.audio, fcfg));
  std::vector<const FeatureSequence*> fp;
  std::vector<const std::vector<int>*> masks;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    fp.push_back(&feats[i]);
    masks.push_back(&pool[i].vad_labels);
  }
  return InputStats::Estimate(fp, masks);
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains the standard VAD (regime vad) or a PVAD model against a frozen
/// speaker encoder, with patience-based early stopping on validation loss.
inline TrainResult TrainModel(const TrainData& data, const SpeakerModel* speaker,
                              const TrainConfig& cfg, const NoiseBank* bank = nullptr,
                              const EpochCallback& on_epoch = {}) {
  if (!data.train || !data.val || data.train->empty() || data.val->empty())
    throw DataError("training needs non-empty train and validation sets");
  const Regime regime = cfg.regime;
  if (regime != Regime::kVad && !speaker)
    throw ConfigError(std::string(RegimeName(regime)) + " training needs a speaker encoder");
  if (regime == Regime::kVad && cfg.aug)
    throw ConfigError("enrollment augmentation does not apply to the standard VAD");
  if (cfg.patience < 1 || cfg.max_epochs < 1) throw ConfigError("patience and max_epochs must be >= 1");
  const std::vector<Utterance>& train = *data.train;
  const std::vector<Utterance>& val = *data.val;
  std::optional<SpeakerIndex> train_idx, val_idx;
  if (regime == Regime::kEnrollFull) {
    train_idx = SpeakerIndex::Build(train);
    val_idx = SpeakerIndex::Build(val);
  }
  const std::size_t n_noise = bank ? bank->waves.size() : 0;
  const std::size_t n_examples =
      cfg.examples_per_epoch > 0 ? std::size_t(cfg.examples_per_epoch) : train.size();

  PvadConfig pc;
  pc.input_dim = cfg.features.stacked_dim();
  pc.embed_dim = regime == Regime::kVad ? 0 : speaker->config.embedding_dim();
  pc.hidden = cfg.hidden;
  pc.layers = cfg.layers;
  pc.dropout = cfg.dropout;
  PvadNetwork<float> net(pc);
  nn::ParamStore<float> ps;
  Rng init_rng = MakeRng(cfg.seed, 0, "pvad-init");
  net.AddParams(ps, init_rng);
  net.norm().Set(ps, detail::PvadInputStats(train, cfg.features));

  Conditioner train_cond(speaker, cfg.features, cfg.aug, cfg.aug_config);
  Conditioner val_cond(speaker, cfg.features, cfg.aug, cfg.aug_config);
  const bool clean_cond = !cfg.noise.conditioning_too;

  // Fixed validation set; augmented regimes keep a fixed augmentation draw.
  std::vector<PreparedExample> val_set;
  {
    Rng rng = MakeRng(cfg.seed, 0, "validation");
    for (const auto& r : detail::Plan(regime, val, val_idx, val.size(), cfg, n_noise, rng))
      val_set.push_back(Prepare(Materialize(r, regime, val, cfg, bank), regime, &val_cond,
                                r.seed, clean_cond));
  }

  nn::AdamState<float> adam;
  adam.lr = cfg.lr;
  TrainResult result;
  result.model.config = pc;
  result.model.features = cfg.features;
  nn::ParamStore<float> best = ps;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng plan_rng = MakeRng(cfg.seed, std::uint64_t(epoch), "plan");
    const auto recipes = detail::Plan(regime, train, train_idx, n_examples, cfg, n_noise, plan_rng);
    const auto batches = EpochLoop(recipes.size(), cfg.batch_size, plan_rng);
    double loss_sum = 0;
    std::size_t frames = 0;
    for (const auto& batch : batches) {
      std::vector<PreparedExample> prepared;
      std::size_t batch_frames = 0;
      for (std::size_t k : batch) {
        prepared.push_back(Prepare(Materialize(recipes[k], regime, train, cfg, bank), regime,
                                   &train_cond, recipes[k].seed, clean_cond));
        batch_frames += prepared.back().labels.size();
      }
      ps.ZeroGrad();
      for (std::size_t j = 0; j < batch.size(); ++j) {
        const PreparedExample& ex = prepared[j];
        Rng drop = MakeRng(recipes[batch[j]].seed, 0, "pvad-dropout");
        PvadCache<float> cache;
        const nn::Mat<float> logits =
            net.Logits(ps, ex.input, ex.embedding, nn::Mode::kTrain, &drop, &cache);
        auto ce = nn::SoftmaxCrossEntropy<float>(logits, ex.labels, 1.0 / double(batch_frames));
        loss_sum += ce.loss_sum;
        net.Backward(ps, cache, ce.grad);
      }
      frames += batch_frames;
      nn::ClipGradNorm(ps, cfg.clip);
      nn::AdamStep(ps, adam);
    }
    const double train_loss = loss_sum / double(frames);
    if (!std::isfinite(train_loss) || !ps.AllFinite())
      throw NumericError(std::string(RegimeName(regime)) + " training diverged at epoch " +
                         std::to_string(epoch));
    const double val_loss = MeanFrameLoss(net, ps, val_set);
    result.history.push_back({epoch, train_loss, val_loss});
    if (on_epoch) on_epoch(result.history.back());
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      best = ps;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  result.model.params = std::move(best);
  return result;
}

inline void WriteHistoryCsv(const std::filesystem::path& path,
                            const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  char buf[96];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%d,%.8f,%.8f\n", h.epoch, h.train_loss, h.val_loss);
    out << buf;
  }
}

}  // namespace pvad
