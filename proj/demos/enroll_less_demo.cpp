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

// Small end-to-end walk through the library: synthesize a few speakers,
// pretrain the speaker encoder, train an enrollment-less PVAD with
// enrollment augmentation, then detect one speaker in a two-speaker
// recording given a separate enrollment utterance.
//
//   enroll_less_demo [seed]

#include <cstdio>
#include <string>

#include "pvad/experiment.hpp"

int main(int argc, char** argv) {
  using namespace pvad;
  const std::uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 7;

  CorpusConfig cc;
  cc.n_speakers = 10;
  cc.utts_per_speaker = 20;
  const Corpus corpus = SynthCorpus(cc, seed);
  const CorpusSplit split = SplitCorpus(corpus.utterances, 0.6, 0.2);

  FeatureConfig fcfg;
  fcfg.n_mels = 40;
  fcfg.context = 1;

  SpeakerTrainConfig scfg;
  scfg.hidden = 32;
  scfg.max_epochs = 30;
  scfg.seed = seed;
  std::printf("pretraining the speaker encoder on %zu utterances\n", split.train.size());
  const SpeakerModel speaker = PretrainOnPools(split.train, split.val, fcfg, scfg).model;

  TrainConfig tc;
  tc.regime = Regime::kEnrollLess;
  tc.aug = true;
  tc.aug_config.mask_fill = MaskFill::kInputMean;
  tc.features = fcfg;
  tc.hidden = 32;
  tc.layers = 2;
  tc.lr = 1e-3;
  tc.max_epochs = 60;
  tc.noise.prob = 0;
  tc.seed = seed;
  std::printf("training an enrollment-less PVAD\n");
  const PvadModel model =
      TrainModel({&split.train, &split.val}, &speaker, tc, nullptr, [](const EpochRecord& e) {
        std::printf("  epoch %2d  train %.4f  val %.4f\n", e.epoch, e.train_loss, e.val_loss);
      }).model;

  // One utterance of the target speaker and one of another speaker in
  // random order. A second target utterance serves as the enrollment.
  const Utterance& target = split.test[0];
  const Utterance& enroll = split.test[1];
  const Utterance* other = nullptr;
  for (const Utterance& u : split.test)
    if (u.speaker_id != target.speaker_id) {
      other = &u;
      break;
    }
  const TrainingExample ex =
      BuildEnrollFullExample({&enroll, &target}, {other}, {0.2, 0.2}, seed, fcfg);
  const SpeakerEmbedding e = speaker.Encode(FinalizeFeatures(ex.conditioning, fcfg));
  const Eigen::MatrixXd post = model.Forward(ex.input, e);

  std::printf("\nenrollment %s, input:", ex.conditioning_id.c_str());
  for (const Segment& s : ex.segments)
    std::printf(" %s%s", s.utterance_id.c_str(), s.is_target ? "*" : "");
  std::printf("\n%-6s", "truth");
  for (int q : ex.labels) std::printf("%c", q ? '#' : '.');
  std::printf("\n%-6s", "pvad");
  for (Eigen::Index t = 0; t < post.rows(); ++t) std::printf("%c", post(t, 1) > 0.5 ? '#' : '.');
  std::printf("\n");
  return 0;
}
