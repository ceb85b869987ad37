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

// Enrollment augmentation: frequency masking of the conditioning
// utterance followed by dropout on its speaker embedding.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "pvad/features.hpp"
#include "pvad/nn/layers.hpp"
#include "pvad/speaker_model.hpp"

namespace pvad {

enum class MaskStage { kPreDelta, kPostStack };
enum class MaskShape { kContiguous, kScattered };
// kZero writes 0 into masked bins. kInputMean writes the encoder's input
// mean, i.e. zero after the encoder's input normalization.
enum class MaskFill { kZero, kInputMean };

struct AugConfig {
  double fraction = 0.3333;
  double dropout_p = 0.5;
  MaskStage mask_stage = MaskStage::kPreDelta;
  MaskShape mask_shape = MaskShape::kContiguous;
  MaskFill mask_fill = MaskFill::kZero;
};

/// Masks round(fraction * D) feature columns across all frames: one
/// contiguous band with a uniform random start, or a random subset.
/// Masked columns become zero, or fill(d) when `fill` is non-empty.
inline FeatureSequence FreqMask(const FeatureSequence& x, double fraction, Rng& rng,
                                MaskShape shape = MaskShape::kContiguous,
                                const Eigen::VectorXf& fill = {}) {
  if (!(fraction >= 0.0) || fraction >= 1.0)
    throw ConfigError("mask fraction must satisfy 0 <= fraction < 1");
  const int D = x.dim();
  if (fill.size() != 0 && fill.size() != D)
    throw DataError("mask fill has dimension " + std::to_string(fill.size()) +
                    ", features have " + std::to_string(D));
  const int width = int(std::lround(fraction * D));
  FeatureSequence out = x;
  if (width == 0) return out;
  auto blank = [&](int d) {
    out.values.col(d).setConstant(fill.size() ? fill(d) : 0.0f);
  };
  if (shape == MaskShape::kContiguous) {
    const int start = UniformInt(rng, 0, D - width);
    for (int d = start; d < start + width; ++d) blank(d);
  } else {
    std::vector<int> cols(static_cast<std::size_t>(D));
    std::iota(cols.begin(), cols.end(), 0);
    std::shuffle(cols.begin(), cols.end(), rng);
    for (int k = 0; k < width; ++k) blank(cols[std::size_t(k)]);
  }
  return out;
}

/// Fill values for `aug.mask_fill`: empty for kZero, else the encoder's
/// input mean restricted to the masked representation (static bins of the
/// centre frame before deltas, the whole stacked vector after stacking).
inline Eigen::VectorXf MaskFillValues(const SpeakerModel& speaker, const FeatureConfig& fcfg,
                                      const AugConfig& aug) {
  if (aug.mask_fill == MaskFill::kZero) return {};
  const Eigen::VectorXf mean = speaker.params.at("spk.input.mean").value.col(0);
  if (aug.mask_stage == MaskStage::kPostStack) return mean;
  const int block = 3 * fcfg.n_mels;
  if (mean.size() != (2 * fcfg.context + 1) * block)
    throw DataError("mask fill: encoder input does not match the feature config");
  return mean.segment(fcfg.context * block, fcfg.n_mels);
}

/// Conditioning embedding from static features `x`.
/// Train mode: mask -> deltas/context -> encode -> dropout.
/// Eval mode: deltas/context -> encode, no augmentation.
inline SpeakerEmbedding AugmentEmbedding(const FeatureSequence& x,
                                         const SpeakerModel& speaker,
                                         const FeatureConfig& fcfg,
                                         const AugConfig& aug, Rng& rng,
                                         nn::Mode mode) {
  if (x.layout != FeatureLayout::kStatic)
    throw DataError("augment_embedding expects static features");
  if (mode == nn::Mode::kEval) return speaker.Encode(FinalizeFeatures(x, fcfg));
  const Eigen::VectorXf fill = MaskFillValues(speaker, fcfg, aug);
  FeatureSequence stacked;
  if (aug.mask_stage == MaskStage::kPreDelta) {
    stacked = FinalizeFeatures(FreqMask(x, aug.fraction, rng, aug.mask_shape, fill), fcfg);
  } else {
    stacked = FreqMask(FinalizeFeatures(x, fcfg), aug.fraction, rng, aug.mask_shape, fill);
  }
  const SpeakerEmbedding e = speaker.Encode(stacked);
  return nn::Dropout<float>(e, aug.dropout_p, nn::Mode::kTrain, rng);
}

}  // namespace pvad
