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

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvad/corpus.hpp"
#include "pvad/eval.hpp"
#include "pvad/nn/checkpoint.hpp"
#include "pvad/speaker_model.hpp"
#include "pvad/training.hpp"

namespace pvad {

namespace fs = std::filesystem;
using nlohmann::json;

inline const char* MaskStageName(MaskStage s) {
  return s == MaskStage::kPreDelta ? "pre_delta" : "post_stack";
}
inline const char* MaskShapeName(MaskShape s) {
  return s == MaskShape::kContiguous ? "contiguous" : "scattered";
}
inline const char* MaskFillName(MaskFill f) {
  return f == MaskFill::kZero ? "zero" : "input_mean";
}

/// Everything a run needs; parsed from a JSON file whose missing keys take
/// the defaults below.
struct ExperimentConfig {
  std::vector<std::uint64_t> seeds = {1};
  CorpusConfig corpus;
  double train_fraction = 0.68;  // per speaker
  double val_fraction = 0.12;
  bool write_corpus = true;
  FeatureConfig features;
  SpeakerTrainConfig speaker;
  TrainConfig train;  // regime, aug and seed are set per row
  int test_examples = 200;
  std::vector<double> test_snrs_db = {5, 10, 15, 20};

  static ExperimentConfig FromJson(const json& j);
  json ToJson() const;
  /// Hash of the resolved configuration, seeds excluded.
  std::string Hash() const;
};

namespace detail {

inline std::vector<NoiseType> ParseNoiseList(const json& j) {
  std::vector<NoiseType> v;
  for (const auto& s : j) v.push_back(ParseNoiseType(s.get<std::string>()));
  return v;
}

inline json NoiseListJson(const std::vector<NoiseType>& v) {
  json j = json::array();
  for (NoiseType t : v) j.push_back(NoiseName(t));
  return j;
}

template <typename T>
void Read(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::FromJson(const json& j) {
  ExperimentConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("seed")) c.seeds = {j.at("seed").get<std::uint64_t>()};
    if (c.seeds.empty()) throw ConfigError("config: no seeds");

    const json corpus = j.value("corpus", json::object());
    detail::Read(corpus, "speakers", c.corpus.n_speakers);
    detail::Read(corpus, "utts_per_speaker", c.corpus.utts_per_speaker);
    detail::Read(corpus, "min_duration_s", c.corpus.min_duration_s);
    detail::Read(corpus, "max_duration_s", c.corpus.max_duration_s);
    detail::Read(corpus, "train_fraction", c.train_fraction);
    detail::Read(corpus, "val_fraction", c.val_fraction);
    detail::Read(corpus, "write", c.write_corpus);
    detail::Read(corpus, "session_variation", c.corpus.synth.session_variation);
    if (c.corpus.synth.session_variation < 0 || c.corpus.synth.session_variation > 4)
      throw ConfigError("corpus.session_variation must be in [0, 4]");

    json fj = json::object();
    for (const char* k : {"n_mels", "context", "delta_window", "cmvn"})
      if (j.contains(k)) fj[k] = j.at(k);
    c.features = FeatureConfig::FromJson(fj);

    const json spk = j.value("speaker", json::object());
    detail::Read(spk, "hidden", c.speaker.hidden);
    detail::Read(spk, "lr", c.speaker.lr);
    detail::Read(spk, "batch_size", c.speaker.batch_size);
    detail::Read(spk, "max_epochs", c.speaker.max_epochs);
    detail::Read(spk, "patience", c.speaker.patience);
    detail::Read(spk, "clip", c.speaker.clip);

    TrainConfig& t = c.train;
    t.features = c.features;
    detail::Read(j, "batch_size", t.batch_size);
    detail::Read(j, "lr", t.lr);
    detail::Read(j, "hidden", t.hidden);
    detail::Read(j, "layers", t.layers);
    detail::Read(j, "dropout", t.dropout);
    detail::Read(j, "max_epochs", t.max_epochs);
    detail::Read(j, "patience", t.patience);
    detail::Read(j, "clip", t.clip);
    detail::Read(j, "max_utts", t.max_utts);
    detail::Read(j, "examples_per_epoch", t.examples_per_epoch);
    if (j.contains("gap_range_s")) {
      const auto g = j.at("gap_range_s").get<std::vector<double>>();
      if (g.size() != 2 || g[0] < 0 || g[1] < g[0]) throw ConfigError("gap_range_s must be [lo, hi]");
      t.gap_range_s = {g[0], g[1]};
    }

    const json aug = j.value("aug", json::object());
    detail::Read(aug, "fraction", t.aug_config.fraction);
    detail::Read(aug, "dropout_p", t.aug_config.dropout_p);
    if (aug.contains("mask_stage")) {
      const auto s = aug.at("mask_stage").get<std::string>();
      if (s == "pre_delta") t.aug_config.mask_stage = MaskStage::kPreDelta;
      else if (s == "post_stack") t.aug_config.mask_stage = MaskStage::kPostStack;
      else throw ConfigError("aug.mask_stage must be pre_delta or post_stack");
    }
    if (aug.contains("mask_shape")) {
      const auto s = aug.at("mask_shape").get<std::string>();
      if (s == "contiguous") t.aug_config.mask_shape = MaskShape::kContiguous;
      else if (s == "scattered") t.aug_config.mask_shape = MaskShape::kScattered;
      else throw ConfigError("aug.mask_shape must be contiguous or scattered");
    }
    if (aug.contains("mask_fill")) {
      const auto s = aug.at("mask_fill").get<std::string>();
      if (s == "zero") t.aug_config.mask_fill = MaskFill::kZero;
      else if (s == "input_mean") t.aug_config.mask_fill = MaskFill::kInputMean;
      else throw ConfigError("aug.mask_fill must be zero or input_mean");
    }

    const json noise = j.value("noise", json::object());
    detail::Read(noise, "prob", t.noise.prob);
    detail::Read(noise, "snr_min_db", t.noise.snr_min_db);
    detail::Read(noise, "snr_max_db", t.noise.snr_max_db);
    detail::Read(noise, "conditioning_too", t.noise.conditioning_too);
    detail::Read(noise, "bank_seconds", t.noise.bank_seconds);
    if (noise.contains("train_types")) t.noise.train_types = detail::ParseNoiseList(noise.at("train_types"));
    if (noise.contains("test_types")) t.noise.test_types = detail::ParseNoiseList(noise.at("test_types"));

    const json test = j.value("test", json::object());
    detail::Read(test, "examples", c.test_examples);
    detail::Read(test, "snrs_db", c.test_snrs_db);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  const TrainConfig& t = c.train;
  if (c.train_fraction <= 0 || c.val_fraction <= 0 || c.train_fraction + c.val_fraction >= 1)
    throw ConfigError("corpus fractions must be positive and leave room for a test split");
  if (t.lr <= 0 || c.speaker.lr <= 0) throw ConfigError("learning rates must be positive");
  if (!(t.aug_config.fraction >= 0) || t.aug_config.fraction >= 1 ||
      !(t.aug_config.dropout_p >= 0) || t.aug_config.dropout_p >= 1)
    throw ConfigError("aug.fraction and aug.dropout_p must lie in [0, 1)");
  if (t.noise.prob < 0 || t.noise.prob > 1 || t.noise.snr_max_db < t.noise.snr_min_db)
    throw ConfigError("invalid noise configuration");
  if (c.test_examples < 1) throw ConfigError("test.examples must be >= 1");
  return c;
}

inline json ExperimentConfig::ToJson() const {
  const TrainConfig& t = train;
  json j;
  j["seeds"] = seeds;
  j["corpus"] = {{"speakers", corpus.n_speakers},
                 {"utts_per_speaker", corpus.utts_per_speaker},
                 {"min_duration_s", corpus.min_duration_s},
                 {"max_duration_s", corpus.max_duration_s},
                 {"train_fraction", train_fraction},
                 {"val_fraction", val_fraction},
                 {"write", write_corpus},
                 {"session_variation", corpus.synth.session_variation}};
  j["n_mels"] = features.n_mels;
  j["context"] = features.context;
  j["delta_window"] = features.delta_window;
  j["cmvn"] = features.cmvn;
  j["speaker"] = {{"hidden", speaker.hidden}, {"lr", speaker.lr},
                  {"batch_size", speaker.batch_size}, {"max_epochs", speaker.max_epochs},
                  {"patience", speaker.patience}, {"clip", speaker.clip}};
  j["batch_size"] = t.batch_size;
  j["lr"] = t.lr;
  j["hidden"] = t.hidden;
  j["layers"] = t.layers;
  j["dropout"] = t.dropout;
  j["max_epochs"] = t.max_epochs;
  j["patience"] = t.patience;
  j["clip"] = t.clip;
  j["max_utts"] = t.max_utts;
  j["examples_per_epoch"] = t.examples_per_epoch;
  j["gap_range_s"] = {t.gap_range_s.first, t.gap_range_s.second};
  j["aug"] = {{"fraction", t.aug_config.fraction},
              {"dropout_p", t.aug_config.dropout_p},
              {"mask_stage", MaskStageName(t.aug_config.mask_stage)},
              {"mask_shape", MaskShapeName(t.aug_config.mask_shape)},
              {"mask_fill", MaskFillName(t.aug_config.mask_fill)}};
  j["noise"] = {{"prob", t.noise.prob},
                {"snr_min_db", t.noise.snr_min_db},
                {"snr_max_db", t.noise.snr_max_db},
                {"conditioning_too", t.noise.conditioning_too},
                {"bank_seconds", t.noise.bank_seconds},
                {"train_types", detail::NoiseListJson(t.noise.train_types)},
                {"test_types", detail::NoiseListJson(t.noise.test_types)}};
  j["test"] = {{"examples", test_examples}, {"snrs_db", test_snrs_db}};
  return j;
}

inline std::string ExperimentConfig::Hash() const {
  json j = ToJson();
  j.erase("seeds");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(Fnv1a(j.dump())));
  return std::string(buf, 12);
}

inline ExperimentConfig LoadExperimentConfig(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return ExperimentConfig::FromJson(j);
}

// ------------------------------------------------------------- stages

struct CorpusSplit {
  std::vector<Utterance> train, val, test;
};

/// Per-speaker split in utterance order: the first round(f_train * n)
/// utterances train, the next round(f_val * n) validate, the rest test.
/// Utterances without a speaker label form one group.
inline CorpusSplit SplitCorpus(const std::vector<Utterance>& utts, double f_train, double f_val) {
  std::map<std::string, std::vector<const Utterance*>> groups;
  std::vector<std::string> order;
  for (const Utterance& u : utts) {
    const std::string key = u.speaker_id ? "s:" + *u.speaker_id : "none";
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&u);
  }
  CorpusSplit s;
  for (const auto& key : order) {
    const auto& g = groups[key];
    const std::size_t n = g.size();
    const std::size_t n_tr = std::size_t(std::lround(f_train * double(n)));
    const std::size_t n_va = std::size_t(std::lround(f_val * double(n)));
    for (std::size_t i = 0; i < n; ++i)
      (i < n_tr ? s.train : i < n_tr + n_va ? s.val : s.test).push_back(*g[i]);
  }
  if (s.train.empty() || s.val.empty() || s.test.empty())
    throw DataError("corpus too small for a train/val/test split");
  return s;
}

/// Speaker classification pretraining on labeled pools.
inline SpeakerPretrainResult PretrainOnPools(const std::vector<Utterance>& train,
                                             const std::vector<Utterance>& val,
                                             const FeatureConfig& fcfg,
                                             const SpeakerTrainConfig& scfg,
                                             const std::function<void(const SpeakerEpoch&)>& on_epoch = {}) {
  const SpeakerIndex idx = SpeakerIndex::Build(train);
  std::map<std::string, int> id_of;
  for (std::size_t s = 0; s < idx.names.size(); ++s) id_of[idx.names[s]] = int(s);
  std::vector<FeatureSequence> ft, fv;
  std::vector<LabeledFeatures> lt, lv;
  ft.reserve(train.size());
  fv.reserve(val.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    ft.push_back(ExtractFeatures(train[i].audio, fcfg));
    lt.push_back({&ft.back(), idx.speaker_of[i], &train[i].vad_labels});
  }
  for (const Utterance& u : val) {
    if (!u.speaker_id || !id_of.count(*u.speaker_id))
      throw DataError("validation utterance " + u.utterance_id + " has an unknown speaker");
    fv.push_back(ExtractFeatures(u.audio, fcfg));
    lv.push_back({&fv.back(), id_of.at(*u.speaker_id), &u.vad_labels});
  }
  auto r = PretrainSpeakerEncoder(lt, lv, int(idx.names.size()), scfg, on_epoch);
  r.model.features = fcfg;
  return r;
}

/// Test inputs from the test pool: each holds one target utterance and up to
/// two utterances of other speakers; the enrollment is a different
/// utterance of the target speaker. Recipes depend only on `seed`, so
/// clean and noisy versions share inputs.
inline std::vector<ExampleRecipe> PlanTestSet(const std::vector<Utterance>& test_pool,
                                              int n_examples, int max_utts, std::uint64_t seed) {
  Rng rng = MakeRng(seed, 0, "test-set");
  NoiseConfig clean;
  clean.prob = 0;
  return PlanEnrollFull(SpeakerIndex::Build(test_pool), std::size_t(n_examples), max_utts, clean,
                        0, rng);
}

inline std::vector<TestInput> BuildTestInputs(const std::vector<ExampleRecipe>& recipes,
                                              const std::vector<Utterance>& pool,
                                              const SpeakerModel& speaker,
                                              const TrainConfig& cfg, const NoiseBank* bank,
                                              int noise_index, double snr_db) {
  Conditioner enroll(&speaker, cfg.features, false, cfg.aug_config);
  std::vector<TestInput> out;
  for (ExampleRecipe r : recipes) {
    r.noise_index = noise_index;
    r.snr_db = snr_db;
    TrainingExample ex = Materialize(r, Regime::kEnrollFull, pool, cfg, bank);
    out.push_back({std::move(ex.input), std::move(ex.labels), enroll.Embed(ex, 0, true)});
  }
  return out;
}

struct RowSpec {
  std::string key;    // directory name
  std::string label;  // table row
  Regime regime;
  bool aug;
};

inline const std::vector<RowSpec>& MatrixRows() {
  static const std::vector<RowSpec> rows = {
      {"vad", "Standard VAD", Regime::kVad, false},
      {"enroll-full-noaug", "Conventional PVAD (enroll-full w/o aug.)", Regime::kEnrollFull, false},
      {"enroll-full-aug", "PVAD (enroll-full w/ aug.)", Regime::kEnrollFull, true},
      {"enroll-less-noaug", "PVAD (enroll-less w/o aug.)", Regime::kEnrollLess, false},
      {"enroll-less-aug", "Proposed PVAD (enroll-less w/ aug.)", Regime::kEnrollLess, true},
  };
  return rows;
}

inline std::string Fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Re-throws an Error with the failing stage named, keeping its kind.
template <typename F>
auto Stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), "stage '" + name + "': " + e.what());
  }
}

inline void WriteJson(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline std::string ReadBytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Creates `dir`, refusing to reuse an existing one unless `force`.
inline void PrepareRunDir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!force)
      throw ConfigError("output " + dir.string() + " already exists (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

inline fs::path RunDir(const fs::path& out, const ExperimentConfig& cfg, std::uint64_t seed) {
  return out / ("run-" + cfg.Hash() + "-seed" + std::to_string(seed));
}

struct SimilaritySummary {
  double a_same_median = 0, a_cross_median = 0;
  double b_same_min = 0, b_same_max = 0;
  double c_same_median = 0, c_same_p95 = 0, c_cross_p90 = 0, c_cross_median = 0;

  static SimilaritySummary From(const SimilarityStudy& st) {
    SimilaritySummary s;
    s.a_same_median = Median(st.panels[0].same);
    s.a_cross_median = Median(st.panels[0].cross);
    const auto& b = st.panels[1].same;
    s.b_same_min = *std::min_element(b.begin(), b.end());
    s.b_same_max = *std::max_element(b.begin(), b.end());
    s.c_same_median = Median(st.panels[2].same);
    s.c_same_p95 = Quantile(st.panels[2].same, 0.95);
    s.c_cross_p90 = Quantile(st.panels[2].cross, 0.90);
    s.c_cross_median = Median(st.panels[2].cross);
    return s;
  }
  json ToJson() const {
    return {{"a_same_speaker_median", a_same_median}, {"a_different_speaker_median", a_cross_median},
            {"b_self_min", b_same_min}, {"b_self_max", b_same_max},
            {"c_same_utterance_median", c_same_median}, {"c_same_utterance_p95", c_same_p95},
            {"c_different_speaker_p90", c_cross_p90},
            {"c_different_speaker_median", c_cross_median}};
  }
};

struct MatrixResult {
  fs::path dir;
  std::map<std::string, Metrics> clean;                         // by row key
  std::map<std::string, std::map<double, Metrics>> noisy;       // row key -> snr
  std::map<std::string, TrainResult> training;                  // by row key
  SimilaritySummary similarity;
  bool encoder_unchanged = false;
  // Wall-clock seconds; also written to timing.json, the one output that
  // is not reproducible across reruns.
  double pretrain_seconds = 0, total_seconds = 0;
  std::map<std::string, double> train_seconds;
};

inline const std::vector<std::string>& NoisyRowKeys() {
  static const std::vector<std::string> k = {"enroll-full-noaug", "enroll-less-aug"};
  return k;
}

/// Synthesis, pretraining, the five training rows, clean and noisy
/// evaluation and the similarity study for one seed, all under one
/// directory. Files of completed stages stay in place if a later stage
/// fails.
inline MatrixResult RunMatrix(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out,
                              bool force, std::ostream* log = nullptr) {
  using Clock = std::chrono::steady_clock;
  auto since = [](Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };
  const auto t_start = Clock::now();
  MatrixResult res;
  res.dir = RunDir(out, cfg, seed);
  PrepareRunDir(res.dir, force);
  const std::string hash = cfg.Hash();
  const std::string header = "config_hash=" + hash + " seed=" + std::to_string(seed);
  json resolved = cfg.ToJson();
  resolved["seeds"] = {seed};
  WriteJson(res.dir / "config.json", {{"config_hash", hash}, {"config", resolved}});
  auto say = [&](const std::string& s) {
    if (log) *log << "[seed " << seed << "] " << s << std::endl;
  };

  say("synthesizing corpus");
  const Corpus corpus = Stage("synth-corpus", [&] { return SynthCorpus(cfg.corpus, seed); });
  const CorpusSplit split = Stage("split", [&] {
    return SplitCorpus(corpus.utterances, cfg.train_fraction, cfg.val_fraction);
  });
  if (cfg.write_corpus) {
    Stage("write-corpus", [&] {
      WriteCorpus(res.dir / "corpus" / "train", split.train);
      WriteCorpus(res.dir / "corpus" / "val", split.val);
      WriteCorpus(res.dir / "corpus" / "test", split.test);
      return 0;
    });
  }

  say("pretraining speaker encoder");
  SpeakerTrainConfig scfg = cfg.speaker;
  scfg.seed = StreamSeed(seed, 0, "speaker");
  const auto t_pre = Clock::now();
  const SpeakerPretrainResult pre = Stage("pretrain-speaker", [&] {
    return PretrainOnPools(split.train, split.val, cfg.features, scfg, [&](const SpeakerEpoch& e) {
      say("  epoch " + std::to_string(e.epoch) + " train " + Fixed(e.train_loss, 4) + " val " +
          Fixed(e.val_loss, 4) + " acc " + Fixed(e.val_accuracy, 3));
    });
  });
  res.pretrain_seconds = since(t_pre);
  const SpeakerModel& speaker = pre.model;
  const fs::path enc_path = res.dir / "encoder.ckpt";
  speaker.Save(enc_path.string());
  {
    std::ofstream h(res.dir / "encoder_history.csv");
    h << "epoch,train_loss,val_loss,val_accuracy\n";
    for (const auto& e : pre.history)
      h << e.epoch << "," << Fixed(e.train_loss, 8) << "," << Fixed(e.val_loss, 8) << ","
        << Fixed(e.val_accuracy) << "\n";
  }
  const std::string encoder_bytes = ReadBytes(enc_path);
  const std::string encoder_memory = nn::SerializeCheckpoint(speaker.params, {});

  const NoiseBank train_bank =
      NoiseBank::Make(cfg.train.noise.train_types, cfg.train.noise.bank_seconds,
                      StreamSeed(seed, 0, "train-noise"));
  const NoiseBank test_bank =
      NoiseBank::Make(cfg.train.noise.test_types, cfg.train.noise.bank_seconds,
                      StreamSeed(seed, 0, "test-noise"));

  say("building test sets");
  const auto test_recipes = Stage("test-set", [&] {
    return PlanTestSet(split.test, cfg.test_examples, cfg.train.max_utts,
                       StreamSeed(seed, 0, "test"));
  });
  const auto clean_tests = Stage("test-set", [&] {
    return BuildTestInputs(test_recipes, split.test, speaker, cfg.train, nullptr, -1, kCleanSnr);
  });
  std::map<double, std::vector<TestInput>> noisy_tests;
  for (double snr : cfg.test_snrs_db) {
    auto& v = noisy_tests[snr];
    for (std::size_t k = 0; k < test_bank.waves.size(); ++k) {
      auto part = Stage("noisy-test-set", [&] {
        return BuildTestInputs(test_recipes, split.test, speaker, cfg.train, &test_bank, int(k),
                               snr);
      });
      for (auto& t : part) v.push_back(std::move(t));
    }
  }

  std::ofstream clean_csv(res.dir / "table_clean.csv");
  clean_csv << "# " << header << "\n"
            << "model,regime,aug,AP (ns/nts),AP (ts),mAP\n";
  bool unchanged = true;
  for (const RowSpec& row : MatrixRows()) {
    say(std::string("training ") + row.key);
    TrainConfig tc = cfg.train;
    tc.regime = row.regime;
    tc.aug = row.aug;
    tc.seed = StreamSeed(seed, 0, "train-" + row.key);
    const fs::path row_dir = res.dir / "models" / row.key;
    fs::create_directories(row_dir);
    const auto t_row = Clock::now();
    TrainResult tr = Stage("train " + row.key, [&] {
      return TrainModel({&split.train, &split.val},
                        row.regime == Regime::kVad ? nullptr : &speaker, tc, &train_bank,
                        [&](const EpochRecord& e) {
                          say("  epoch " + std::to_string(e.epoch) + " train " +
                              Fixed(e.train_loss, 4) + " val " + Fixed(e.val_loss, 4));
                        });
    });
    res.train_seconds[row.key] = since(t_row);
    tr.model.Save((row_dir / "model.ckpt").string(), tr.best_epoch);
    if (row.regime != Regime::kVad)
      fs::copy_file(enc_path, row_dir / "encoder.ckpt", fs::copy_options::overwrite_existing);
    WriteHistoryCsv(row_dir / "history.csv", tr.history);
    unchanged = unchanged && nn::SerializeCheckpoint(speaker.params, {}) == encoder_memory &&
                ReadBytes(enc_path) == encoder_bytes;

    const PooledScores clean_scores = ScoreTestSet(tr.model, clean_tests);
    const Metrics m = Stage("evaluate " + row.key, [&] { return ComputeMetrics(clean_scores); });
    res.clean[row.key] = m;
    WritePrCurveCsv(row_dir / "pr_curve.csv", clean_scores);
    json records = json::array();
    auto record = [&](const Metrics& mm, const std::string& cond) {
      json r = MetricsJson(mm);
      r["regime"] = RegimeName(row.regime);
      r["aug"] = row.aug;
      r["noise_condition"] = cond;
      r["config_hash"] = hash;
      records.push_back(r);
    };
    record(m, "clean");
    clean_csv << '"' << row.label << "\"," << RegimeName(row.regime) << ","
              << (row.aug ? "on" : "off") << "," << Fixed(m.ap_ns_nts) << "," << Fixed(m.ap_ts)
              << "," << Fixed(m.map) << "\n";
    clean_csv.flush();
    if (std::find(NoisyRowKeys().begin(), NoisyRowKeys().end(), row.key) != NoisyRowKeys().end()) {
      for (const auto& [snr, tests] : noisy_tests) {
        const Metrics nm = Stage("evaluate " + row.key, [&] { return EvaluatePvad(tr.model, tests); });
        res.noisy[row.key][snr] = nm;
        record(nm, Fixed(snr, 0) + "dB");
      }
    }
    WriteJson(row_dir / "metrics.json", records);
    res.training[row.key] = std::move(tr);
  }
  clean_csv.close();
  res.encoder_unchanged = unchanged;

  {
    std::ofstream noisy_csv(res.dir / "table_noisy.csv");
    noisy_csv << "# " << header << " noise=";
    for (std::size_t k = 0; k < test_bank.types.size(); ++k)
      noisy_csv << (k ? "+" : "") << NoiseName(test_bank.types[k]);
    noisy_csv << "\nsnr_db";
    for (const auto& key : NoisyRowKeys())
      noisy_csv << "," << key << " AP (ns/nts)," << key << " AP (ts)," << key << " mAP";
    noisy_csv << "\n";
    for (double snr : cfg.test_snrs_db) {
      noisy_csv << Fixed(snr, 0);
      for (const auto& key : NoisyRowKeys()) {
        const Metrics& m = res.noisy.at(key).at(snr);
        noisy_csv << "," << Fixed(m.ap_ns_nts) << "," << Fixed(m.ap_ts) << "," << Fixed(m.map);
      }
      noisy_csv << "\n";
    }
  }

  say("similarity study");
  const SimilarityStudy st = Stage("similarity-study", [&] {
    return RunSimilarityStudy(speaker, split.test, cfg.features, cfg.train.aug_config,
                              StreamSeed(seed, 0, "similarity"));
  });
  WriteSimilarityCsv(res.dir / "similarity_hist.csv", st, header);
  res.similarity = SimilaritySummary::From(st);
  WriteJson(res.dir / "similarity_summary.json", res.similarity.ToJson());
  WriteJson(res.dir / "encoder_check.json",
            {{"bitwise_unchanged", res.encoder_unchanged}, {"config_hash", hash}});
  res.total_seconds = since(t_start);
  WriteJson(res.dir / "timing.json", {{"pretrain_s", res.pretrain_seconds},
                                      {"train_s", res.train_seconds},
                                      {"total_s", res.total_seconds}});
  say("done");
  return res;
}

}  // namespace pvad
