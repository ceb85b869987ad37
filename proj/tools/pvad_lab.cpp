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

// pvad-lab: corpus synthesis, training, evaluation and inference for
// personalized voice activity detection.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pvad/experiment.hpp"
#include "pvad/grad_suite.hpp"
#include "pvad/wav.hpp"

namespace fs = std::filesystem;
using namespace pvad;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

ExperimentConfig LoadConfig(const Globals& g) {
  ExperimentConfig cfg = LoadExperimentConfig(g.config);
  if (g.seed) cfg.seeds = {*g.seed};
  return cfg;
}

fs::path RequireOut(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  return g.out;
}

std::vector<Utterance> ReadSplit(const fs::path& corpus, const std::string& split,
                                 const FeatureConfig& fcfg) {
  const fs::path manifest = corpus / split / "manifest.jsonl";
  if (!fs::exists(manifest)) throw DataError("missing " + manifest.string());
  std::vector<Utterance> utts = ReadCorpus(manifest, Framing::From(fcfg, 16000));
  for (Utterance& u : utts) AlignToHop(u, Framing::From(fcfg, u.audio.sample_rate));
  return utts;
}

void CmdSynthCorpus(const Globals& g, int speakers, int utts_per_speaker) {
  ExperimentConfig cfg = LoadConfig(g);
  if (speakers > 0) cfg.corpus.n_speakers = speakers;
  if (utts_per_speaker > 0) cfg.corpus.utts_per_speaker = utts_per_speaker;
  const fs::path out = RequireOut(g);
  PrepareRunDir(out, g.force);
  const Corpus c = SynthCorpus(cfg.corpus, cfg.seeds.front());
  const CorpusSplit s = SplitCorpus(c.utterances, cfg.train_fraction, cfg.val_fraction);
  WriteCorpus(out / "train", s.train);
  WriteCorpus(out / "val", s.val);
  WriteCorpus(out / "test", s.test);
  std::cout << "wrote " << c.utterances.size() << " utterances (" << s.train.size() << " train, "
            << s.val.size() << " val, " << s.test.size() << " test) to " << out << "\n";
}

void CmdPretrain(const Globals& g, const std::string& corpus) {
  const ExperimentConfig cfg = LoadConfig(g);
  const fs::path out = RequireOut(g);
  const auto train = ReadSplit(corpus, "train", cfg.features);
  const auto val = ReadSplit(corpus, "val", cfg.features);
  PrepareRunDir(out, g.force);
  SpeakerTrainConfig scfg = cfg.speaker;
  scfg.seed = StreamSeed(cfg.seeds.front(), 0, "speaker");
  const auto r = PretrainOnPools(train, val, cfg.features, scfg);
  r.model.Save((out / "encoder.ckpt").string());
  std::ofstream h(out / "history.csv");
  h << "epoch,train_loss,val_loss,val_accuracy\n";
  for (const auto& e : r.history)
    h << e.epoch << "," << Fixed(e.train_loss, 8) << "," << Fixed(e.val_loss, 8) << ","
      << Fixed(e.val_accuracy) << "\n";
  std::cout << "best epoch " << r.best_epoch << ", encoder written to " << out / "encoder.ckpt"
            << "\n";
}

void CmdTrain(const Globals& g, const std::string& regime_s, const std::string& aug_s,
              const std::string& corpus, const std::string& encoder) {
  const ExperimentConfig cfg = LoadConfig(g);
  if (aug_s != "on" && aug_s != "off") throw ConfigError("--aug must be on or off");
  TrainConfig tc = cfg.train;
  tc.regime = ParseRegime(regime_s);
  tc.aug = aug_s == "on";
  tc.seed = StreamSeed(cfg.seeds.front(), 0, std::string("train-") + regime_s);
  const fs::path out = RequireOut(g);
  std::optional<SpeakerModel> speaker;
  if (tc.regime != Regime::kVad) {
    if (encoder.empty()) throw ConfigError("--encoder is required for PVAD regimes");
    speaker = SpeakerModel::Load(encoder);
  }
  const auto train = ReadSplit(corpus, "train", cfg.features);
  const auto val = ReadSplit(corpus, "val", cfg.features);
  PrepareRunDir(out, g.force);
  const NoiseBank bank = NoiseBank::Make(tc.noise.train_types, tc.noise.bank_seconds,
                                         StreamSeed(cfg.seeds.front(), 0, "train-noise"));
  const TrainResult r = TrainModel({&train, &val}, speaker ? &*speaker : nullptr, tc, &bank,
                                   [](const EpochRecord& e) {
                                     std::cerr << "epoch " << e.epoch << " train "
                                               << Fixed(e.train_loss, 4) << " val "
                                               << Fixed(e.val_loss, 4) << "\n";
                                   });
  r.model.Save((out / "model.ckpt").string(), r.best_epoch);
  if (speaker) fs::copy_file(encoder, out / "encoder.ckpt");
  WriteHistoryCsv(out / "history.csv", r.history);
  std::cout << "best epoch " << r.best_epoch << " (val loss " << Fixed(r.best_val_loss) << ")\n";
}

struct LoadedModel {
  PvadModel model;
  std::optional<SpeakerModel> speaker;
};

LoadedModel LoadModelDir(const fs::path& dir) {
  LoadedModel m;
  m.model = PvadModel::Load((dir / "model.ckpt").string());
  if (m.model.personalized()) m.speaker = SpeakerModel::Load((dir / "encoder.ckpt").string());
  return m;
}

void CmdEvaluate(const Globals& g, const std::string& model_dir, const std::string& corpus,
                 const std::string& noise, double snr) {
  const ExperimentConfig cfg = LoadConfig(g);
  const LoadedModel lm = LoadModelDir(model_dir);
  if (!lm.speaker) throw ConfigError("evaluate needs a PVAD model directory with encoder.ckpt");
  TrainConfig tc = cfg.train;
  tc.features = lm.model.features;
  const auto test = ReadSplit(corpus, "test", tc.features);
  const auto recipes =
      PlanTestSet(test, cfg.test_examples, tc.max_utts, StreamSeed(cfg.seeds.front(), 0, "test"));
  std::optional<NoiseBank> bank;
  int noise_index = -1;
  std::string condition = "clean";
  if (!noise.empty()) {
    bank = NoiseBank::Make({ParseNoiseType(noise)}, tc.noise.bank_seconds,
                           StreamSeed(cfg.seeds.front(), 0, "test-noise"));
    noise_index = 0;
    condition = noise + "@" + Fixed(snr, 0) + "dB";
  }
  const auto tests = BuildTestInputs(recipes, test, *lm.speaker, tc, bank ? &*bank : nullptr,
                                     noise_index, noise.empty() ? kCleanSnr : snr);
  const PooledScores scores = ScoreTestSet(lm.model, tests);
  const Metrics m = ComputeMetrics(scores);
  const fs::path out = RequireOut(g);
  PrepareRunDir(out, g.force);
  json j = MetricsJson(m);
  j["noise_condition"] = condition;
  j["model"] = model_dir;
  WriteJson(out / "metrics.json", j);
  WritePrCurveCsv(out / "pr_curve.csv", scores);
  std::cout << "AP (ns/nts) " << Fixed(m.ap_ns_nts, 4) << "  AP (ts) " << Fixed(m.ap_ts, 4)
            << "  mAP " << Fixed(m.map, 4) << "  frames " << m.n_frames << "\n";
}

void CmdInfer(const Globals& g, const std::string& model_dir, const std::string& enroll_wav,
              const std::string& input_wav) {
  const LoadedModel lm = LoadModelDir(model_dir);
  const FeatureConfig& fcfg = lm.model.features;
  const Waveform input = ReadWav(input_wav);
  const FeatureSequence x = ExtractFeatures(input, fcfg);
  SpeakerEmbedding e;
  if (lm.speaker) {
    if (enroll_wav.empty()) throw ConfigError("--enroll is required for a PVAD model");
    e = lm.speaker->Encode(ExtractFeatures(ReadWav(enroll_wav), lm.speaker->features));
  }
  const Eigen::MatrixXd post = lm.model.Forward(x, e);
  std::vector<int> q(std::size_t(post.rows()));
  for (Eigen::Index t = 0; t < post.rows(); ++t) q[std::size_t(t)] = post(t, 1) > post(t, 0);
  const double hop = fcfg.frame_shift_ms / 1000.0;
  json segs = json::array();
  for (std::size_t t = 0; t < q.size();) {
    if (!q[t]) {
      ++t;
      continue;
    }
    std::size_t end = t;
    while (end < q.size() && q[end]) ++end;
    segs.push_back({double(t) * hop, double(end) * hop});
    t = end;
  }
  json j = {{"frames", q.size()}, {"decisions", q}, {"segments", segs}};
  if (!g.out.empty()) {
    std::ofstream out(g.out);
    if (!out) throw DataError("cannot write " + g.out);
    out << j.dump() << "\n";
  }
  std::cout << "frames " << q.size() << "\n";
  for (int v : q) std::cout << v;
  std::cout << "\n";
  for (const auto& s : segs)
    std::cout << Fixed(s[0].get<double>(), 2) << " " << Fixed(s[1].get<double>(), 2) << "\n";
}

void CmdRunMatrix(const Globals& g) {
  const ExperimentConfig cfg = LoadConfig(g);
  const fs::path out = RequireOut(g);
  for (std::uint64_t seed : cfg.seeds) {
    const MatrixResult r = RunMatrix(cfg, seed, out, g.force, &std::cerr);
    std::cout << r.dir.string() << "\n";
    for (const RowSpec& row : MatrixRows()) {
      const Metrics& m = r.clean.at(row.key);
      std::printf("  %-42s AP(ns/nts) %.4f  AP(ts) %.4f  mAP %.4f\n", row.label.c_str(),
                  m.ap_ns_nts, m.ap_ts, m.map);
    }
  }
}

void CmdSimilarity(const Globals& g, const std::string& encoder, const std::string& corpus) {
  const ExperimentConfig cfg = LoadConfig(g);
  const SpeakerModel spk = SpeakerModel::Load(encoder);
  const auto test = ReadSplit(corpus, "test", spk.features);
  const fs::path out = RequireOut(g);
  PrepareRunDir(out, g.force);
  const auto st = RunSimilarityStudy(spk, test, spk.features, cfg.train.aug_config,
                                     StreamSeed(cfg.seeds.front(), 0, "similarity"));
  WriteSimilarityCsv(out / "similarity_hist.csv", st,
                     "config_hash=" + cfg.Hash() + " seed=" + std::to_string(cfg.seeds.front()));
  const auto summary = SimilaritySummary::From(st);
  WriteJson(out / "similarity_summary.json", summary.ToJson());
  std::cout << summary.ToJson().dump(2) << "\n";
}

int CmdGradCheck(const Globals& g) {
  const double tol = 1e-5;
  bool ok = true;
  for (const auto& e : RunGradientSuite(g.seed.value_or(1))) {
    const bool pass = e.max_rel_error < tol;
    ok = ok && pass;
    std::printf("%-20s max rel error %.3e  %s\n", e.block.c_str(), e.max_rel_error,
                pass ? "ok" : "FAILED");
  }
  if (!ok) throw NumericError("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized VAD experiments"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "JSON configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "override the configured seed");
  app.add_option("--out", g.out, "output directory (file for infer)");
  app.add_flag("--force", g.force, "overwrite an existing output directory");

  int speakers = 0, utts = 0;
  auto* synth = app.add_subcommand("synth-corpus", "synthesize a speaker-labeled corpus");
  synth->add_option("--speakers", speakers);
  synth->add_option("--utts-per-speaker", utts);

  std::string corpus, encoder, regime, aug = "off", model_dir, enroll, input, noise;
  double snr = 20;
  auto* pre = app.add_subcommand("pretrain-speaker", "pretrain the speaker encoder");
  pre->add_option("--corpus", corpus)->required();

  auto* train = app.add_subcommand("train", "train the VAD or a PVAD regime");
  train->add_option("--regime", regime)->required();
  train->add_option("--aug", aug);
  train->add_option("--corpus", corpus)->required();
  train->add_option("--encoder", encoder);

  auto* eval = app.add_subcommand("evaluate", "evaluate a PVAD model on the test split");
  eval->add_option("--model", model_dir)->required();
  eval->add_option("--corpus", corpus)->required();
  eval->add_option("--noise", noise, "test noise type (crowd, station, ...)");
  eval->add_option("--snr", snr, "SNR in dB when --noise is given");

  auto* infer = app.add_subcommand("infer", "frame decisions for one input");
  infer->add_option("--model", model_dir)->required();
  infer->add_option("--enroll", enroll);
  infer->add_option("--input", input)->required();

  auto* matrix = app.add_subcommand("run-matrix", "full experiment for every configured seed");
  auto* sim = app.add_subcommand("similarity-study", "embedding similarity histograms");
  sim->add_option("--encoder", encoder)->required();
  sim->add_option("--corpus", corpus)->required();
  auto* grad = app.add_subcommand("grad-check", "finite-difference gradient checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : int(ErrorKind::kConfig);
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*synth) CmdSynthCorpus(g, speakers, utts);
    if (*pre) CmdPretrain(g, corpus);
    if (*train) CmdTrain(g, regime, aug, corpus, encoder);
    if (*eval) CmdEvaluate(g, model_dir, corpus, noise, snr);
    if (*infer) CmdInfer(g, model_dir, enroll, input);
    if (*matrix) CmdRunMatrix(g);
    if (*sim) CmdSimilarity(g, encoder, corpus);
    if (*grad) return CmdGradCheck(g);
  } catch (const Error& e) {
    std::cerr << "pvad-lab: " << e.what() << "\n";
    return int(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "pvad-lab: " << e.what() << "\n";
    return int(ErrorKind::kData);
  }
  return 0;
}
