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
#include <complex>
#include <filesystem>
#include <random>

#include "pvad/features.hpp"

namespace pvad {
namespace {

Waveform Sine(double hz, int n, double amp = 0.5, int sr = 16000) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(std::size_t(n));
  for (int i = 0; i < n; ++i)
    w.samples[std::size_t(i)] = float(amp * std::sin(2 * M_PI * hz * i / sr));
  return w;
}

Waveform Noise(int n, std::uint64_t seed) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(std::size_t(n));
  for (auto& s : w.samples) s = float(Uniform(rng, -0.5, 0.5));
  return w;
}

TEST(FrameSignal, FrameCountMatchesReferenceLoop) {
  Waveform w;
  w.samples.assign(16000, 0.1f);
  int starts = 0;
  for (int s = 0; s + 320 <= 16000; s += 160) ++starts;
  EXPECT_EQ(starts, 99);
  EXPECT_EQ(FrameSignal(w, 20, 10).rows(), 99);
  EXPECT_EQ(FrameSignal(w, 20, 10).cols(), 320);
}

TEST(FrameSignal, HammingEndpoint) {
  const auto win = HammingWindow(320);
  EXPECT_NEAR(win[0], 0.08, 1e-15);
  EXPECT_NEAR(win[319], 0.08, 1e-12);
}

TEST(FrameSignal, ZeroSignalGivesZeroFrames) {
  Waveform w;
  w.samples.assign(1000, 0.0f);
  EXPECT_TRUE((FrameSignal(w, 20, 10).array() == 0.0).all());
}

TEST(FrameSignal, TooShortIsAnError) {
  Waveform w;
  w.samples.assign(319, 0.0f);
  EXPECT_THROW(FrameSignal(w, 20, 10), Error);
}

TEST(LogMel, SilenceHitsTheFloor) {
  Waveform w;
  w.samples.assign(800, 0.0f);
  const auto f = ExtractStatic(w, FeatureConfig{});
  EXPECT_EQ(f.dim(), 40);
  EXPECT_TRUE((f.values.array() == float(std::log(1e-10))).all());
}

// Reference triangular filter evaluated directly on a naive DFT.
int OracleArgmaxBand(const Waveform& w, int n_mels) {
  const int win = 320, n_fft = 512, sr = w.sample_rate;
  const double top = 2595.0 * std::log10(1.0 + (sr / 2.0) / 700.0);
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> power(n_fft / 2 + 1, 0.0);
  for (int k = 0; k <= n_fft / 2; ++k) {
    std::complex<double> acc = 0;
    for (int n = 0; n < win; ++n) {
      const double ham = 0.54 - 0.46 * std::cos(2 * M_PI * n / (win - 1));
      acc += ham * double(w.samples[std::size_t(n)]) *
             std::polar(1.0, -2 * M_PI * k * n / n_fft);
    }
    power[std::size_t(k)] = std::norm(acc);
  }
  int best = -1;
  double best_e = -1;
  for (int j = 0; j < n_mels; ++j) {
    const double lo = mel_to_hz(top * j / (n_mels + 1));
    const double mid = mel_to_hz(top * (j + 1) / (n_mels + 1));
    const double hi = mel_to_hz(top * (j + 2) / (n_mels + 1));
    double e = 0;
    for (int k = 0; k <= n_fft / 2; ++k) {
      const double f = double(k) * sr / n_fft;
      const double tri = std::max(0.0, std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid)));
      e += tri * power[std::size_t(k)];
    }
    if (e > best_e) {
      best_e = e;
      best = j;
    }
  }
  return best;
}

TEST(LogMel, SinusoidAtBandCenterPeaksInThatBand) {
  for (int band : {12, 20, 30}) {
    const double center = MelBandEdgesHz(40, 16000)[std::size_t(band) + 1];
    const Waveform w = Sine(center, 320);
    ASSERT_EQ(OracleArgmaxBand(w, 40), band);
    const auto f = ExtractStatic(w, FeatureConfig{});
    Eigen::Index arg;
    f.values.row(0).maxCoeff(&arg);
    EXPECT_EQ(arg, band) << "center " << center;
  }
}

TEST(LogMel, AmplitudeDoublingShiftsByLogFour) {
  Waveform a = Noise(4000, 3), b = a;
  for (auto& s : b.samples) s *= 2.0f;
  const auto fa = ExtractStatic(a, FeatureConfig{});
  const auto fb = ExtractStatic(b, FeatureConfig{});
  const Eigen::ArrayXXf diff = fb.values.array() - fa.values.array();
  EXPECT_NEAR(diff.minCoeff(), std::log(4.0), 1e-4);
  EXPECT_NEAR(diff.maxCoeff(), std::log(4.0), 1e-4);
}

FeatureSequence StaticFrom(const RowMatrixD& x) {
  FeatureSequence f;
  f.values = x.cast<float>();
  f.n_mels = int(x.cols());
  return f;
}

TEST(Deltas, ConstantInputHasZeroDeltas) {
  RowMatrixD x = RowMatrixD::Constant(7, 4, 3.25);
  const auto d = AddDeltas(StaticFrom(x));
  EXPECT_EQ(d.dim(), 12);
  EXPECT_TRUE((d.values.rightCols(8).array() == 0.0f).all());
}

TEST(Deltas, RampHasUnitSlopeInTheInterior) {
  const int T = 12;
  RowMatrixD x(T, 1);
  for (int t = 0; t < T; ++t) x(t, 0) = t;
  const auto d = AddDeltas(StaticFrom(x));
  for (int t = 2; t < T - 2; ++t) {
    double num = 0, den = 0;  // regression formula, reference loop
    for (int n = 1; n <= 2; ++n) {
      num += n * (x(t + n, 0) - x(t - n, 0));
      den += 2.0 * n * n;
    }
    ASSERT_DOUBLE_EQ(num / den, 1.0);
    EXPECT_FLOAT_EQ(d.values(t, 1), 1.0f);
  }
}

TEST(Deltas, FortyMelsGiveOneHundredTwenty) {
  const auto f = ExtractStatic(Noise(3200, 1), FeatureConfig{});
  EXPECT_EQ(AddDeltas(f).dim(), 120);
  EXPECT_EQ(StackContext(AddDeltas(f), 3).dim(), 840);
}

TEST(Context, RadiusZeroIsIdentity) {
  const auto d = AddDeltas(ExtractStatic(Noise(3200, 2), FeatureConfig{}));
  EXPECT_EQ(StackContext(d, 0).values, d.values);
}

TEST(Context, SingleFrameReplicatesEverywhere) {
  const auto d = AddDeltas(ExtractStatic(Noise(320, 2), FeatureConfig{}));
  ASSERT_EQ(d.num_frames(), 1);
  const auto s = StackContext(d, 3);
  for (int k = 0; k < 7; ++k)
    EXPECT_EQ(s.values.block(0, k * 120, 1, 120), d.values);
}

TEST(Context, CentreSlotIsTheFrameItself) {
  const auto d = AddDeltas(ExtractStatic(Noise(4000, 5), FeatureConfig{}));
  const auto s = StackContext(d, 2);
  for (int t = 0; t < d.num_frames(); ++t) {
    EXPECT_EQ(s.values.block(t, 2 * 120, 1, 120), d.values.row(t));
    EXPECT_EQ(s.values.block(t, 0, 1, 120), d.values.row(std::max(0, t - 2)));
  }
}

TEST(FeatureProperties, LengthPreservedAndDeterministic) {
  const Waveform w = Noise(5000, 9);
  FeatureConfig cfg;
  const auto st = ExtractStatic(w, cfg);
  const auto a = ExtractFeatures(w, cfg), b = ExtractFeatures(w, cfg);
  EXPECT_EQ(a.num_frames(), st.num_frames());
  EXPECT_EQ(a.values, b.values);
  EXPECT_TRUE(a.values.allFinite());
}

TEST(FeatureProperties, PerturbationIsLocal) {
  std::mt19937 gen(4);
  FeatureConfig cfg;
  cfg.context = 2;
  for (int trial = 0; trial < 5; ++trial) {
    Waveform w = Noise(6400, 100 + trial);
    const auto base_static = ExtractStatic(w, cfg);
    const auto base = ExtractFeatures(w, cfg);
    const int s = std::uniform_int_distribution<int>(0, 6399)(gen);
    w.samples[std::size_t(s)] += 0.3f;
    const auto st = ExtractStatic(w, cfg);
    const auto full = ExtractFeatures(w, cfg);
    for (int t = 0; t < base.num_frames(); ++t) {
      const bool covers = s >= t * 160 && s < t * 160 + 320;
      if (!covers) {
        EXPECT_EQ(st.values.row(t), base_static.values.row(t));
      }
      // deltas (radius 2, applied twice) and context (radius 2) widen it.
      bool near = false;
      for (int u = t - 6; u <= t + 6; ++u)
        near = near || (s >= u * 160 && s < u * 160 + 320);
      if (!near) {
        EXPECT_EQ(full.values.row(t), base.values.row(t));
      }
    }
  }
}

TEST(FeatureIo, BinaryExportRoundTrip) {
  const auto f = ExtractFeatures(Noise(2000, 11), FeatureConfig{});
  const auto stem = (std::filesystem::temp_directory_path() / "pvad_feat").string();
  WriteFeatureBinary(stem, f);
  const auto g = ReadFeatureBinary(stem);
  EXPECT_EQ(g.values, f.values);
  EXPECT_EQ(g.layout, FeatureLayout::kStacked);
  EXPECT_EQ(std::filesystem::file_size(stem + ".bin"),
            sizeof(float) * std::size_t(f.values.size()));
}

TEST(FeatureIo, WavRoundTripWithin16BitQuantization) {
  const Waveform w = Sine(440, 1600, 0.7);
  const auto path = (std::filesystem::temp_directory_path() / "pvad_w.wav").string();
  WriteWav(path, w);
  const Waveform r = ReadWav(path);
  ASSERT_EQ(r.size(), w.size());
  EXPECT_EQ(r.sample_rate, 16000);
  for (std::size_t i = 0; i < w.size(); ++i)
    EXPECT_NEAR(r.samples[i], w.samples[i], 1.0 / 16000);
}

TEST(FeatureIo, CorruptWavIsADataError) {
  const auto path = (std::filesystem::temp_directory_path() / "pvad_bad.wav").string();
  std::ofstream(path) << "not a wav";
  try {
    ReadWav(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

}  // namespace
}  // namespace pvad
