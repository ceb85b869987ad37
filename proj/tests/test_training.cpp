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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "pvad/nn/checkpoint.hpp"
#include "pvad/training.hpp"

namespace pvad {
namespace {

FeatureConfig TinyFeatures() {
  FeatureConfig f;
  f.n_mels = 10;
  f.context = 0;
  return f;
}

struct TinySetup {
  std::vector<Utterance> train, val;
  SpeakerModel speaker;

  TinySetup() {
    CorpusConfig cc;
    cc.n_speakers = 4;
    cc.utts_per_speaker = 8;
    cc.min_duration_s = 0.5;
    cc.max_duration_s = 0.6;
    const Corpus c = SynthCorpus(cc, 5);
    for (std::size_t i = 0; i < c.utterances.size(); ++i)
      (i % 8 < 6 ? train : val).push_back(c.utterances[i]);
    speaker.features = TinyFeatures();
    speaker.config.input_dim = speaker.features.stacked_dim();
    speaker.config.hidden = 3;
    Rng rng(3);
    SpeakerEncoder<float>(speaker.config).AddParams(speaker.params, rng);
    speaker.params.SetTrainable(false);
  }

  static const TinySetup& Get() {
    static const TinySetup s;
    return s;
  }
};

TrainConfig TinyTrain(Regime regime, bool aug) {
  TrainConfig t;
  t.regime = regime;
  t.aug = aug;
  t.seed = 11;
  t.batch_size = 4;
  t.lr = 3e-3;
  t.hidden = 6;
  t.max_epochs = 6;
  t.features = TinyFeatures();
  return t;
}

NoiseBank TinyBank() { return NoiseBank::Make({NoiseType::kWhite, NoiseType::kHum}, 2.0, 1); }

TEST(EpochLoop, DropsTheRemainder) {
  Rng rng(1);
  const auto b = EpochLoop(10, 3, rng);
  ASSERT_EQ(b.size(), 3u);
  std::set<std::size_t> seen;
  for (const auto& batch : b) {
    EXPECT_EQ(batch.size(), 3u);
    seen.insert(batch.begin(), batch.end());
  }
  EXPECT_EQ(seen.size(), 9u);
}

TEST(EpochLoop, SameSeedSameBatches) {
  Rng a(42), b(42);
  EXPECT_EQ(EpochLoop(50, 7, a), EpochLoop(50, 7, b));
}

TEST(EpochLoop, BatchLargerThanDatasetIsAnError) {
  Rng rng(1);
  EXPECT_THROW(EpochLoop(3, 4, rng), Error);
  EXPECT_THROW(EpochLoop(3, 0, rng), Error);
}

TEST(Plan, EnrollLessPartnersChangeBetweenEpochs) {
  NoiseConfig nc;
  Rng e1 = MakeRng(7, 1, "plan"), e2 = MakeRng(7, 2, "plan");
  const auto p1 = PlanEnrollLess(40, 40, 3, nc, 2, e1);
  const auto p2 = PlanEnrollLess(40, 40, 3, nc, 2, e2);
  EXPECT_NE(p1, p2);
  for (const auto& r : p1) {
    EXPECT_GE(r.inputs.size(), 1u);
    EXPECT_LE(r.inputs.size(), 3u);
    // The target appears only at its own position.
    const std::size_t target = r.inputs[std::size_t(r.target_index)];
    for (std::size_t j = 0; j < r.inputs.size(); ++j)
      if (int(j) != r.target_index) {
        EXPECT_NE(r.inputs[j], target);
      }
  }
  // Every pool utterance is the target exactly once per pass.
  std::set<std::size_t> targets;
  for (const auto& r : p1) targets.insert(r.inputs[std::size_t(r.target_index)]);
  EXPECT_EQ(targets.size(), 40u);
}

TEST(Plan, EnrollFullKeepsEnrollmentOutOfTheInput) {
  const auto& s = TinySetup::Get();
  const SpeakerIndex idx = SpeakerIndex::Build(s.train);
  Rng rng(9);
  const auto recipes = PlanEnrollFull(idx, 60, 3, NoiseConfig{}, 0, rng);
  for (const auto& r : recipes) {
    ASSERT_EQ(r.targets.size(), 2u);
    EXPECT_NE(r.targets[0], r.targets[1]);
    EXPECT_EQ(idx.speaker_of[r.targets[0]], idx.speaker_of[r.targets[1]]);
    for (std::size_t d : r.distractors) EXPECT_NE(idx.speaker_of[d], idx.speaker_of[r.targets[0]]);
    EXPECT_EQ(r.noise_index, -1);
    const auto ex = Materialize(r, Regime::kEnrollFull, s.train, TinyTrain(Regime::kEnrollFull, false), nullptr);
    for (const auto& seg : ex.segments) EXPECT_NE(seg.utterance_id, ex.conditioning_id);
  }
}

TEST(Plan, NoiseDrawsFollowTheConfiguration) {
  NoiseConfig nc;
  nc.prob = 0.5;
  Rng rng(4);
  const auto p = PlanEnrollLess(100, 2000, 3, nc, 3, rng);
  int noisy = 0;
  for (const auto& r : p) {
    if (r.noise_index < 0) continue;
    ++noisy;
    EXPECT_LT(r.noise_index, 3);
    EXPECT_GE(r.snr_db, 5.0);
    EXPECT_LE(r.snr_db, 30.0);
  }
  EXPECT_NEAR(noisy / 2000.0, 0.5, 0.05);
}

TEST(Conditioning, SingleUtteranceWithoutAugIsItsOwnEncoding) {
  const auto& s = TinySetup::Get();
  const Utterance& u = s.train[3];
  const auto ex = BuildEnrollLessExample({&u}, 0, {0, 0.5}, 1, s.speaker.features);
  Conditioner cond(&s.speaker, s.speaker.features, false, AugConfig{});
  EXPECT_EQ(cond.Embed(ex, 5, true), s.speaker.Encode(ExtractFeatures(u.audio, s.speaker.features)));
  EXPECT_EQ(ex.input.values, ExtractFeatures(u.audio, s.speaker.features).values);
}

TEST(Loss, UniformPosteriorsGiveLnTwo) {
  const nn::Mat<double> logits = nn::Mat<double>::Zero(2, 1);
  for (int y : {0, 1})
    EXPECT_DOUBLE_EQ(nn::SoftmaxCrossEntropy<double>(logits, {y}, 1.0).loss_sum, std::log(2.0));
}

TEST(Loss, MeanFrameLossMatchesScalarOracle) {
  Rng rng(12);
  PvadConfig pc;
  pc.input_dim = 5;
  pc.embed_dim = 3;
  pc.hidden = 4;
  PvadNetwork<double> net(pc);
  nn::ParamStore<double> ps;
  net.AddParams(ps, rng);
  for (auto& [name, p] : ps) p.value *= 3.0;  // sharper posteriors
  std::vector<PreparedExample> batch;
  for (int k = 0; k < 4; ++k) {
    PreparedExample ex;
    ex.input = nn::Mat<float>::Random(5, 7 + 3 * k);
    ex.embedding = Eigen::VectorXf::Random(3);
    for (int t = 0; t < ex.input.cols(); ++t) ex.labels.push_back(UniformInt(rng, 0, 1));
    batch.push_back(ex);
  }
  long double sum = 0;
  std::size_t frames = 0;
  for (const auto& ex : batch) {
    const nn::Mat<double> z = net.Logits(ps, ex.input.cast<double>(), ex.embedding.cast<double>(),
                                         nn::Mode::kEval);
    for (Eigen::Index t = 0; t < z.cols(); ++t, ++frames) {
      const long double a = z(0, t), b = z(1, t);
      const long double p1 = 1.0L / (1.0L + std::exp(a - b));
      sum -= std::log(ex.labels[std::size_t(t)] ? p1 : 1.0L - p1);
    }
  }
  EXPECT_NEAR(MeanFrameLoss(net, ps, batch), double(sum / frames), 1e-10);
}

TEST(TrainModel, EnrollLessNeverNeedsSpeakerLabels) {
  const auto& s = TinySetup::Get();
  std::vector<Utterance> train = s.train, val = s.val;
  for (auto& u : train) u.speaker_id.reset();
  for (auto& u : val) u.speaker_id.reset();
  const NoiseBank bank = TinyBank();
  TrainConfig tc = TinyTrain(Regime::kEnrollLess, true);
  tc.max_epochs = 1;
  EXPECT_NO_THROW(TrainModel({&train, &val}, &s.speaker, tc, &bank));
  tc.regime = Regime::kEnrollFull;
  EXPECT_THROW(TrainModel({&train, &val}, &s.speaker, tc, &bank), Error);
}

TEST(TrainModel, RegimeMismatchesAreErrors) {
  const auto& s = TinySetup::Get();
  EXPECT_THROW(TrainModel({&s.train, &s.val}, nullptr, TinyTrain(Regime::kEnrollLess, false)),
               Error);
  EXPECT_THROW(TrainModel({&s.train, &s.val}, nullptr, TinyTrain(Regime::kVad, true)), Error);
  const std::vector<Utterance> empty;
  EXPECT_THROW(TrainModel({&empty, &s.val}, nullptr, TinyTrain(Regime::kVad, false)), Error);
}

TEST(TrainModel, VadLossFallsAndBestCheckpointIsKept) {
  const auto& s = TinySetup::Get();
  const NoiseBank bank = TinyBank();
  TrainConfig tc = TinyTrain(Regime::kVad, false);
  const TrainResult r = TrainModel({&s.train, &s.val}, nullptr, tc, &bank);
  ASSERT_GE(r.history.size(), 5u);
  EXPECT_LT(r.history[4].train_loss, r.history[0].train_loss);
  double min_val = 1e300;
  for (const auto& h : r.history) min_val = std::min(min_val, h.val_loss);
  EXPECT_EQ(r.best_val_loss, min_val);
  EXPECT_LE(r.best_val_loss, r.history.back().val_loss);
  EXPECT_EQ(r.history[std::size_t(r.best_epoch - 1)].val_loss, r.best_val_loss);
  EXPECT_EQ(r.model.config.embed_dim, 0);
}

TEST(TrainModel, EarlyStoppingHaltsAfterPatienceEpochs) {
  const auto& s = TinySetup::Get();
  TrainConfig tc = TinyTrain(Regime::kVad, false);
  tc.lr = 0.3;  // unstable on purpose: validation loss stops improving
  tc.patience = 2;
  tc.max_epochs = 40;
  const TrainResult r = TrainModel({&s.train, &s.val}, nullptr, tc);
  const int last = r.history.back().epoch;
  ASSERT_LT(last, tc.max_epochs);
  EXPECT_EQ(last, r.best_epoch + tc.patience);
  for (const auto& h : r.history)
    if (h.epoch > r.best_epoch) {
      EXPECT_GE(h.val_loss, r.best_val_loss);
    }
}

TEST(TrainModel, FrozenEncoderIsBitwiseUnchanged) {
  const auto& s = TinySetup::Get();
  const std::string before = nn::SerializeCheckpoint(s.speaker.params, {});
  const NoiseBank bank = TinyBank();
  for (auto [regime, aug] : {std::pair{Regime::kEnrollFull, true}, std::pair{Regime::kEnrollLess, true}}) {
    TrainConfig tc = TinyTrain(regime, aug);
    tc.max_epochs = 2;
    const TrainResult r = TrainModel({&s.train, &s.val}, &s.speaker, tc, &bank);
    EXPECT_EQ(r.model.config.embed_dim, s.speaker.config.embedding_dim());
    for (const auto& [name, p] : r.model.params) EXPECT_NE(name.rfind("spk.", 0), 0u);
  }
  EXPECT_EQ(nn::SerializeCheckpoint(s.speaker.params, {}), before);
}

TEST(TrainModel, FixedSeedGivesIdenticalHistory) {
  const auto& s = TinySetup::Get();
  const NoiseBank bank = TinyBank();
  TrainConfig tc = TinyTrain(Regime::kEnrollLess, true);
  tc.max_epochs = 2;
  const auto a = TrainModel({&s.train, &s.val}, &s.speaker, tc, &bank);
  const auto b = TrainModel({&s.train, &s.val}, &s.speaker, tc, &bank);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].val_loss, b.history[i].val_loss);
  }
  EXPECT_EQ(nn::SerializeCheckpoint(a.model.params, {}), nn::SerializeCheckpoint(b.model.params, {}));
}

TEST(History, CsvLayout) {
  const std::string path = "/tmp/pvad_test_history.csv";
  WriteHistoryCsv(path, {{1, 0.5, 0.25}, {2, 0.4, 0.2}});
  std::ifstream in(path);
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  EXPECT_EQ(l1, "epoch,train_loss,val_loss");
  EXPECT_EQ(l2, "1,0.50000000,0.25000000");
}

}  // namespace
}  // namespace pvad
