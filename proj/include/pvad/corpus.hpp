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

// Synthetic speakers and utterances, noise generation and SNR-controlled
// mixing, and construction of enrollment-less / enrollment-full training
// examples by concatenating utterances.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvad/common.hpp"
#include "pvad/features.hpp"
#include "pvad/wav.hpp"

namespace pvad {

struct SpeakerSpec {
  std::uint64_t seed = 0;
  double fundamental_freq_hz = 120.0;
  std::vector<double> harmonic_profile;
  std::vector<double> formant_centers_hz;
  std::vector<double> formant_bandwidths_hz;
};

struct Utterance {
  Waveform audio;
  std::vector<int> vad_labels;  // s_t per frame
  std::optional<std::string> speaker_id;
  std::string utterance_id;
  // Voiced sample span [begin, end), known for synthetic utterances only.
  std::optional<std::pair<std::size_t, std::size_t>> voiced_span;

  int num_speech_frames() const {
    return int(std::count(vad_labels.begin(), vad_labels.end(), 1));
  }
};

/// Framing used for labels; must agree with the FeatureConfig in use.
struct Framing {
  int win = 320;
  int hop = 160;

  static Framing From(const FeatureConfig& cfg, int sample_rate) {
    return {cfg.win_samples(sample_rate), cfg.hop_samples(sample_rate)};
  }
};

/// Frame labels under the "any overlap" rule: frame t is speech when its
/// window [t*hop, t*hop + win) intersects [begin, end).
inline std::vector<int> OverlapLabels(std::size_t n_samples, std::size_t begin,
                                      std::size_t end, const Framing& fr) {
  const int T = NumFrames(n_samples, fr.win, fr.hop);
  std::vector<int> labels(std::size_t(std::max(T, 0)), 0);
  for (int t = 0; t < T; ++t) {
    const std::size_t lo = std::size_t(t) * std::size_t(fr.hop);
    const std::size_t hi = lo + std::size_t(fr.win);
    labels[std::size_t(t)] = (lo < end && begin < hi) ? 1 : 0;
  }
  return labels;
}

/// Zero-pads the audio to a whole number of hops so that utterances can be
/// concatenated on the frame grid; padded frames are non-speech.
inline void AlignToHop(Utterance& u, const Framing& fr) {
  const std::size_t hop = std::size_t(fr.hop);
  const std::size_t n = u.audio.size();
  const std::size_t padded = std::max<std::size_t>(
      ((n + hop - 1) / hop) * hop, std::size_t(fr.win));
  u.audio.samples.resize(padded, 0.0f);
  const int T = NumFrames(padded, fr.win, fr.hop);
  u.vad_labels.resize(std::size_t(T), 0);
}

// ------------------------------------------------------------- speakers

inline SpeakerSpec MakeSpeaker(std::uint64_t seed) {
  Rng rng = MakeRng(seed, 0, "speaker");
  SpeakerSpec s;
  s.seed = seed;
  s.fundamental_freq_hz = std::exp(Uniform(rng, std::log(85.0), std::log(250.0)));
  const double tract = Uniform(rng, 0.82, 1.22);
  const std::array<double, 4> base = {520, 1480, 2500, 3500};
  const std::array<double, 4> bw = {70, 100, 140, 200};
  for (std::size_t i = 0; i < base.size(); ++i) {
    s.formant_centers_hz.push_back(base[i] * tract * Uniform(rng, 0.92, 1.08));
    s.formant_bandwidths_hz.push_back(bw[i] * Uniform(rng, 0.8, 1.4));
  }
  const double tilt = Uniform(rng, 0.5, 1.3);
  std::normal_distribution<double> ripple(0.0, 0.35);
  for (int k = 1; k <= 48; ++k)
    s.harmonic_profile.push_back(std::pow(double(k), -tilt) * std::exp(ripple(rng)));
  return s;
}

struct SynthConfig {
  int sample_rate = 16000;
  Framing framing;
  double min_silence_s = 0.1;
  double max_silence_s = 0.4;
  double session_variation = 1.0;  // scale of per-utterance session effects
};

namespace detail {

// Relative formant multipliers (F1, F2, F3) of a small vowel inventory.
inline constexpr std::array<std::array<double, 3>, 7> kVowels = {{
    {1.45, 0.85, 1.00},
    {0.55, 1.55, 1.10},
    {0.60, 0.62, 0.92},
    {0.90, 1.30, 1.05},
    {0.95, 0.66, 0.95},
    {1.00, 1.00, 1.00},
    {0.66, 0.92, 1.00},
}};

inline double FormantGain(double f, const std::vector<double>& centers,
                          const std::vector<double>& bandwidths) {
  static constexpr std::array<double, 4> kWeight = {1.0, 0.7, 0.45, 0.3};
  double g = 0.02;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const double x = (f - centers[i]) / (0.5 * bandwidths[i]);
    g += kWeight[std::min<std::size_t>(i, 3)] / std::sqrt(1.0 + x * x);
  }
  return g;
}

/// Voiced harmonic signal of `n` samples with per-utterance prosody and
/// vowel sequence. Peak amplitude is not normalized.
inline std::vector<double> SynthVoiced(const SpeakerSpec& spk, std::size_t n,
                                       int sr, Rng& rng, double session = 1.0) {
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  const double dur = double(n) / sr;

  // Syllables: vowel targets and syllabic amplitude envelope.
  struct Syl {
    double start, len;
    std::size_t vowel;
    double accent;
  };
  std::vector<Syl> syls;
  for (double t = 0; t < dur;) {
    const double len = Uniform(rng, 0.10, 0.25);
    syls.push_back({t, len, std::size_t(UniformInt(rng, 0, int(kVowels.size()) - 1)),
                    Uniform(rng, -0.06, 0.06)});
    t += len;
  }
  auto syllable_at = [&](double t) {
    std::size_t i = 0;
    while (i + 1 < syls.size() && syls[i + 1].start <= t) ++i;
    return i;
  };

  const double f0_scale = Uniform(rng, 0.9, 1.1);
  const double drift_rate = Uniform(rng, 1.5, 4.0);
  const double drift_depth = Uniform(rng, 0.02, 0.07);
  const double drift_phase = Uniform(rng, 0, 2 * M_PI);
  const double declination = Uniform(rng, 0.04, 0.14);

  // Session effects: vocal effort, formant shift and a smooth channel
  // response in log frequency, fixed for the utterance. `session` scales
  // their ranges.
  const double formant_shift = 1.0 + session * Uniform(rng, -0.06, 0.06);
  const double tilt_shift = session * Uniform(rng, -0.25, 0.25);
  std::array<double, 3> eq_db, eq_phase;
  for (std::size_t j = 0; j < eq_db.size(); ++j) {
    eq_db[j] = session * Uniform(rng, -4.0, 4.0) / double(j + 1);
    eq_phase[j] = Uniform(rng, 0, 2 * M_PI);
  }
  auto channel_gain = [&](double f) {
    const double x = std::log2(std::max(f, 50.0) / 50.0);
    double db = 0.0;
    for (std::size_t j = 0; j < eq_db.size(); ++j)
      db += eq_db[j] * std::cos(M_PI * double(j + 1) * x / 7.3 + eq_phase[j]);
    return std::pow(10.0, db / 20.0);
  };

  const std::size_t n_harm = spk.harmonic_profile.size();
  std::vector<double> harm_phase(n_harm);
  for (auto& p : harm_phase) p = Uniform(rng, 0, 2 * M_PI);
  std::vector<double> amp(n_harm, 0.0);
  std::vector<std::complex<double>> rot(n_harm), osc(n_harm);
  std::vector<double> centers(spk.formant_centers_hz.size());
  std::normal_distribution<double> aspiration(0.0, 1.0);

  const std::size_t block = 80;
  double phase = 0.0;
  for (std::size_t b0 = 0; b0 < n; b0 += block) {
    const double t = (double(b0) + 0.5 * block) / sr;
    const std::size_t si = syllable_at(t);
    const Syl& s = syls[si];
    const double u = std::clamp((t - s.start) / s.len, 0.0, 1.0);
    // Crossfade vowel targets over the first 30% of each syllable.
    const auto& cur = kVowels[s.vowel];
    const auto& prev = kVowels[si > 0 ? syls[si - 1].vowel : s.vowel];
    const double w = std::min(1.0, u / 0.3);
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const double mult = k < 3 ? (1 - w) * prev[k] + w * cur[k] : 1.0;
      centers[k] = spk.formant_centers_hz[k] * mult * formant_shift;
    }
    const double f0 = spk.fundamental_freq_hz * f0_scale *
                      (1.0 - declination * t / dur) *
                      (1.0 + drift_depth * std::sin(2 * M_PI * drift_rate * t + drift_phase)) *
                      (1.0 + s.accent * std::sin(M_PI * u));
    const double env = 0.35 + 0.65 * std::sin(M_PI * u);
    for (std::size_t k = 0; k < n_harm; ++k) {
      const double f = double(k + 1) * f0;
      amp[k] = f < 0.47 * sr
                   ? spk.harmonic_profile[k] * std::pow(double(k + 1), -tilt_shift) *
                         FormantGain(f, centers, spk.formant_bandwidths_hz) *
                         channel_gain(f) * env
                   : 0.0;
    }
    // F0 is constant within a block, so each harmonic is a rotating phasor.
    const double dphi = 2 * M_PI * f0 / sr;
    std::size_t active = 0;
    while (active < n_harm && amp[active] > 0) ++active;
    for (std::size_t k = 0; k < active; ++k) {
      const double p0 = double(k + 1) * phase + harm_phase[k];
      rot[k] = std::polar(1.0, double(k + 1) * dphi);
      osc[k] = std::polar(1.0, p0) * rot[k];
    }
    const std::size_t b1 = std::min(n, b0 + block);
    for (std::size_t i = b0; i < b1; ++i) {
      double v = 0.0;
      for (std::size_t k = 0; k < active; ++k) {
        v += amp[k] * osc[k].imag();
        osc[k] *= rot[k];
      }
      out[i] = v + 0.01 * env * aspiration(rng);
    }
    phase = std::fmod(phase + double(b1 - b0) * dphi, 2 * M_PI);
  }
  // 20 ms onset/offset ramps.
  const std::size_t ramp = std::min<std::size_t>(n / 2, std::size_t(0.02 * sr));
  for (std::size_t i = 0; i < ramp; ++i) {
    const double g = 0.5 - 0.5 * std::cos(M_PI * double(i) / double(ramp));
    out[i] *= g;
    out[n - 1 - i] *= g;
  }
  return out;
}

}  // namespace detail

/// One utterance of `spk`: `duration_s` seconds of voicing between random
/// leading and trailing silences, peak-normalized to 0.5. The total length
/// is rounded up to a whole number of hops.
inline Utterance SynthUtterance(const SpeakerSpec& spk, double duration_s,
                                std::uint64_t rng_seed,
                                const SynthConfig& cfg = {}) {
  if (!(duration_s >= 0.5))
    throw DataError("synth_utterance: duration must be >= 0.5 s");
  Rng rng = MakeRng(rng_seed, spk.seed, "utterance");
  const int sr = cfg.sample_rate;
  const auto lead = std::size_t(Uniform(rng, cfg.min_silence_s, cfg.max_silence_s) * sr);
  const auto trail = std::size_t(Uniform(rng, cfg.min_silence_s, cfg.max_silence_s) * sr);
  const auto voiced = std::size_t(duration_s * sr);
  const std::size_t hop = std::size_t(cfg.framing.hop);
  const std::size_t total = ((lead + voiced + trail + hop - 1) / hop) * hop;

  const std::vector<double> v = detail::SynthVoiced(spk, voiced, sr, rng, cfg.session_variation);
  double peak = 0.0;
  for (double x : v) peak = std::max(peak, std::abs(x));
  Utterance u;
  u.audio.sample_rate = sr;
  u.audio.samples.assign(total, 0.0f);
  for (std::size_t i = 0; i < voiced; ++i)
    u.audio.samples[lead + i] = float(0.5 * v[i] / peak);
  u.voiced_span = {lead, lead + voiced};
  u.vad_labels = OverlapLabels(total, lead, lead + voiced, cfg.framing);
  return u;
}

// ---------------------------------------------------------------- noise

enum class NoiseType { kWhite, kPink, kBrown, kHum, kCrowd, kStation };

inline const char* NoiseName(NoiseType t) {
  switch (t) {
    case NoiseType::kWhite: return "white";
    case NoiseType::kPink: return "pink";
    case NoiseType::kBrown: return "brown";
    case NoiseType::kHum: return "hum";
    case NoiseType::kCrowd: return "crowd";
    case NoiseType::kStation: return "station";
  }
  return "?";
}

inline NoiseType ParseNoiseType(const std::string& s) {
  for (auto t : {NoiseType::kWhite, NoiseType::kPink, NoiseType::kBrown,
                 NoiseType::kHum, NoiseType::kCrowd, NoiseType::kStation})
    if (s == NoiseName(t)) return t;
  throw ConfigError("unknown noise type " + s);
}

/// Noise of the given type, scaled to RMS 0.1.
inline Waveform MakeNoise(NoiseType type, std::size_t n, std::uint64_t seed,
                          int sample_rate = 16000) {
  Rng rng = MakeRng(seed, std::uint64_t(type), "noise");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(n, 0.0);
  const double sr = sample_rate;
  switch (type) {
    case NoiseType::kWhite:
      for (auto& v : x) v = gauss(rng);
      break;
    case NoiseType::kPink: {
      // Paul Kellet's economy pink filter.
      double b0 = 0, b1 = 0, b2 = 0;
      for (auto& v : x) {
        const double w = gauss(rng);
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        v = b0 + b1 + b2 + w * 0.1848;
      }
      break;
    }
    case NoiseType::kBrown: {
      double acc = 0;
      for (auto& v : x) {
        acc = 0.995 * acc + gauss(rng);
        v = acc;
      }
      break;
    }
    case NoiseType::kHum: {
      const double f = Uniform(rng, 45, 110);
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) {
        acc = 0.99 * acc + gauss(rng);
        double v = 0.05 * acc;
        for (int k = 1; k <= 6; ++k) v += std::sin(2 * M_PI * f * k * double(i) / sr) / k;
        x[i] = v;
      }
      break;
    }
    case NoiseType::kCrowd: {
      // Babble of several talkers who never appear in any corpus.
      SynthConfig sc;
      sc.sample_rate = sample_rate;
      for (int talker = 0; talker < 6; ++talker) {
        const SpeakerSpec spk = MakeSpeaker(StreamSeed(seed, std::uint64_t(talker), "babble"));
        std::size_t pos = std::size_t(Uniform(rng, 0, 0.5) * sr);
        int k = 0;
        while (pos < n) {
          const Utterance u = SynthUtterance(spk, Uniform(rng, 0.8, 2.0),
                                             StreamSeed(seed, std::uint64_t(100 * talker + k++), "babble-utt"),
                                             sc);
          for (std::size_t i = 0; i < u.audio.size() && pos + i < n; ++i)
            x[pos + i] += u.audio.samples[i];
          pos += u.audio.size();
        }
      }
      for (auto& v : x) v += 0.05 * gauss(rng);
      break;
    }
    case NoiseType::kStation: {
      double acc = 0;
      const double mod = Uniform(rng, 0.1, 0.4);
      for (std::size_t i = 0; i < n; ++i) {
        acc = 0.998 * acc + gauss(rng);
        const double t = double(i) / sr;
        x[i] = acc * (1.0 + 0.6 * std::sin(2 * M_PI * mod * t));
      }
      // Announcement chimes.
      for (double t0 = Uniform(rng, 0.5, 3.0); t0 < double(n) / sr; t0 += Uniform(rng, 2.0, 6.0)) {
        const double f = Uniform(rng, 600, 1400);
        for (std::size_t i = std::size_t(t0 * sr); i < std::min(n, std::size_t((t0 + 0.6) * sr)); ++i) {
          const double tt = double(i) / sr - t0;
          x[i] += 40.0 * std::exp(-4.0 * tt) * (std::sin(2 * M_PI * f * tt) + 0.5 * std::sin(2 * M_PI * 1.5 * f * tt));
        }
      }
      break;
    }
  }
  double sq = 0;
  for (double v : x) sq += v * v;
  const double rms = n ? std::sqrt(sq / double(n)) : 1.0;
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    w.samples[i] = float(rms > 0 ? 0.1 * x[i] / rms : 0.0);
  return w;
}

/// Mask of samples covered by at least one speech-labelled frame.
inline std::vector<char> SpeechSampleMask(const Utterance& u, const Framing& fr) {
  std::vector<char> mask(u.audio.size(), 0);
  for (std::size_t t = 0; t < u.vad_labels.size(); ++t) {
    if (!u.vad_labels[t]) continue;
    const std::size_t lo = t * std::size_t(fr.hop);
    const std::size_t hi = std::min(mask.size(), lo + std::size_t(fr.win));
    std::fill(mask.begin() + std::ptrdiff_t(lo), mask.begin() + std::ptrdiff_t(hi), 1);
  }
  return mask;
}

/// Mean power of the speech-labelled samples.
inline double SpeechPower(const Utterance& u, const Framing& fr) {
  const auto mask = SpeechSampleMask(u, fr);
  double sq = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      sq += double(u.audio.samples[i]) * u.audio.samples[i];
      ++count;
    }
  if (count == 0) throw DataError("SNR undefined: utterance has no speech frames");
  return sq / double(count);
}

inline constexpr double kCleanSnr = std::numeric_limits<double>::infinity();

/// Adds `noise` scaled so that speech power / noise power equals snr_db.
/// A noise segment of the utterance's length is taken from a random
/// offset, tiling the noise when it is too short.
inline Utterance MixNoise(const Utterance& u, const Waveform& noise,
                          double snr_db, std::uint64_t rng_seed,
                          const Framing& fr = {}) {
  if (std::isinf(snr_db) && snr_db > 0) return u;
  if (noise.sample_rate != u.audio.sample_rate)
    throw DataError("mix_noise: sample rate mismatch");
  if (noise.size() == 0) throw DataError("mix_noise: empty noise");
  const double p_speech = SpeechPower(u, fr);
  Rng rng = MakeRng(rng_seed, 0, "mix");
  const std::size_t n = u.audio.size();
  const std::size_t offset =
      noise.size() > n
          ? std::size_t(UniformInt(rng, 0, int(noise.size() - n)))
          : std::size_t(UniformInt(rng, 0, int(noise.size()) - 1));
  std::vector<double> seg(n);
  double sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    seg[i] = noise.samples[(offset + i) % noise.size()];
    sq += seg[i] * seg[i];
  }
  const double p_noise = sq / double(n);
  if (p_noise <= 0) throw DataError("mix_noise: silent noise segment");
  const double gain = std::sqrt(p_speech / (p_noise * std::pow(10.0, snr_db / 10.0)));
  Utterance out = u;
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double v = double(u.audio.samples[i]) + gain * seg[i];
    if (std::abs(v) > 1.0) {
      v = std::clamp(v, -1.0, 1.0);
      ++clipped;
    }
    out.audio.samples[i] = float(v);
  }
  if (clipped)
    std::cerr << "warning: mix_noise clipped " << clipped << " samples of "
              << u.utterance_id << " at " << snr_db << " dB\n";
  return out;
}

// ------------------------------------------------------ training examples

struct Segment {
  std::string utterance_id;
  std::size_t start_sample = 0;
  std::size_t num_samples = 0;
  bool is_target = false;
};

struct TrainingExample {
  FeatureSequence input;         // context-stacked features of the mixture
  FeatureSequence conditioning;  // static features of the conditioning utterance
  std::vector<int> labels;       // q_t
  std::vector<int> speech_labels;  // s_t of the mixture, any speaker
  std::string conditioning_id;
  std::optional<std::string> target_speaker;
  std::vector<Segment> segments;
  Utterance mixture;  // clean concatenated audio with s labels
};

/// Optional noise applied to the concatenated input before feature
/// extraction (and to the conditioning utterance if requested).
struct NoiseMix {
  const Waveform* noise = nullptr;
  double snr_db = kCleanSnr;
  bool conditioning_too = false;
};

namespace detail {

inline TrainingExample Assemble(const std::vector<const Utterance*>& inputs,
                                const std::vector<bool>& is_target,
                                const Utterance& conditioning,
                                std::pair<double, double> gap_range_s,
                                Rng& rng, const FeatureConfig& fcfg,
                                const NoiseMix& noise) {
  const int sr = inputs.front()->audio.sample_rate;
  const Framing fr = Framing::From(fcfg, sr);
  const std::size_t hop = std::size_t(fr.hop);
  TrainingExample ex;
  Utterance& mix = ex.mixture;
  mix.audio.sample_rate = sr;
  mix.utterance_id = "mix";
  std::vector<std::pair<std::size_t, const Utterance*>> placed;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Utterance u = *inputs[k];
    if (u.audio.sample_rate != sr) throw DataError("sample rate mismatch in concatenation");
    if (u.audio.size() % hop != 0 || int(u.vad_labels.size()) != NumFrames(u.audio.size(), fr.win, fr.hop))
      throw DataError("utterance " + u.utterance_id + " is not aligned to the frame grid");
    if (k > 0) {
      const double gap = Uniform(rng, gap_range_s.first, gap_range_s.second);
      const std::size_t gap_hops = std::size_t(std::llround(gap * sr / double(hop)));
      mix.audio.samples.resize(mix.audio.size() + gap_hops * hop, 0.0f);
    }
    const std::size_t start = mix.audio.size();
    mix.audio.samples.insert(mix.audio.samples.end(), u.audio.samples.begin(),
                             u.audio.samples.end());
    ex.segments.push_back({u.utterance_id, start, u.audio.size(), bool(is_target[k])});
    placed.emplace_back(start, inputs[k]);
  }
  const int T = NumFrames(mix.audio.size(), fr.win, fr.hop);
  mix.vad_labels.assign(std::size_t(T), 0);
  ex.labels.assign(std::size_t(T), 0);
  for (std::size_t k = 0; k < placed.size(); ++k) {
    const auto [start, u] = placed[k];
    const std::size_t first = start / hop;
    for (std::size_t j = 0; j < u->vad_labels.size(); ++j) {
      mix.vad_labels[first + j] = u->vad_labels[j];
      if (is_target[k]) ex.labels[first + j] = u->vad_labels[j];
    }
  }
  ex.speech_labels = mix.vad_labels;

  Utterance noisy = mix;
  Utterance cond = conditioning;
  if (noise.noise && !(std::isinf(noise.snr_db) && noise.snr_db > 0)) {
    noisy = MixNoise(mix, *noise.noise, noise.snr_db, rng(), fr);
    if (noise.conditioning_too)
      cond = MixNoise(conditioning, *noise.noise, noise.snr_db, rng(), fr);
  }
  ex.input = ExtractFeatures(noisy.audio, fcfg);
  ex.conditioning = ExtractStatic(cond.audio, fcfg);
  ex.conditioning_id = conditioning.utterance_id;
  return ex;
}

}  // namespace detail

/// Concatenates 1-3 utterances with random silent gaps; the conditioning
/// utterance is utts[target_index] itself, and q marks its speech frames.
inline TrainingExample BuildEnrollLessExample(
    const std::vector<const Utterance*>& utts, int target_index,
    std::pair<double, double> gap_range_s, std::uint64_t rng_seed,
    const FeatureConfig& fcfg, const NoiseMix& noise = {}) {
  if (utts.empty() || utts.size() > 3)
    throw DataError("enroll-less example needs 1 to 3 utterances");
  if (target_index < 0 || target_index >= int(utts.size()))
    throw DataError("target index out of range");
  Rng rng = MakeRng(rng_seed, 0, "enroll-less");
  std::vector<bool> is_target(utts.size(), false);
  is_target[std::size_t(target_index)] = true;
  auto ex = detail::Assemble(utts, is_target, *utts[std::size_t(target_index)],
                             gap_range_s, rng, fcfg, noise);
  return ex;
}

/// Reserves one target utterance as enrollment and concatenates the rest
/// with the distractors in random order.
inline TrainingExample BuildEnrollFullExample(
    const std::vector<const Utterance*>& target_utts,
    const std::vector<const Utterance*>& distractor_utts,
    std::pair<double, double> gap_range_s, std::uint64_t rng_seed,
    const FeatureConfig& fcfg, const NoiseMix& noise = {}) {
  if (target_utts.size() < 2)
    throw DataError("enroll-full example needs at least 2 target utterances");
  const auto& spk = target_utts.front()->speaker_id;
  if (!spk) throw DataError("enroll-full example needs speaker labels");
  for (const Utterance* u : target_utts)
    if (u->speaker_id != spk) throw DataError("target utterances mix speakers");
  for (const Utterance* u : distractor_utts)
    if (!u->speaker_id || u->speaker_id == spk)
      throw DataError("distractor " + u->utterance_id + " is not another speaker");

  Rng rng = MakeRng(rng_seed, 0, "enroll-full");
  const std::size_t enroll = std::size_t(UniformInt(rng, 0, int(target_utts.size()) - 1));
  std::vector<std::pair<const Utterance*, bool>> pool;
  for (std::size_t i = 0; i < target_utts.size(); ++i)
    if (i != enroll) pool.emplace_back(target_utts[i], true);
  for (const Utterance* u : distractor_utts) pool.emplace_back(u, false);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<const Utterance*> inputs;
  std::vector<bool> is_target;
  for (const auto& [u, t] : pool) {
    inputs.push_back(u);
    is_target.push_back(t);
  }
  auto ex = detail::Assemble(inputs, is_target, *target_utts[enroll], gap_range_s,
                             rng, fcfg, noise);
  ex.target_speaker = spk;
  return ex;
}

// ---------------------------------------------------------------- corpus

struct CorpusConfig {
  int n_speakers = 20;
  int utts_per_speaker = 50;
  double min_duration_s = 0.8;
  double max_duration_s = 1.6;
  SynthConfig synth;
};

struct Corpus {
  std::vector<SpeakerSpec> speakers;
  std::vector<Utterance> utterances;
};

inline std::string SpeakerName(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "spk%03d", i);
  return buf;
}

/// Speakers x utterances; utterance k of speaker i depends only on
/// (seed, i, k).
inline Corpus SynthCorpus(const CorpusConfig& cfg, std::uint64_t seed) {
  if (cfg.n_speakers < 1 || cfg.utts_per_speaker < 1)
    throw ConfigError("corpus needs >= 1 speaker and utterance");
  Corpus c;
  for (int i = 0; i < cfg.n_speakers; ++i) {
    c.speakers.push_back(MakeSpeaker(StreamSeed(seed, std::uint64_t(i), "corpus-speaker")));
    for (int k = 0; k < cfg.utts_per_speaker; ++k) {
      const std::uint64_t us = StreamSeed(seed, std::uint64_t(i) * 100003 + std::uint64_t(k), "corpus-utt");
      Rng rng = MakeRng(us, 0, "duration");
      const double dur = Uniform(rng, cfg.min_duration_s, cfg.max_duration_s);
      Utterance u = SynthUtterance(c.speakers.back(), dur, us, cfg.synth);
      u.speaker_id = SpeakerName(i);
      char buf[48];
      std::snprintf(buf, sizeof buf, "%s_u%03d", SpeakerName(i).c_str(), k);
      u.utterance_id = buf;
      c.utterances.push_back(std::move(u));
    }
  }
  return c;
}

/// Writes wav/<id>.wav, labels/<id>.json and manifest.jsonl under `dir`.
inline void WriteCorpus(const std::filesystem::path& dir,
                        const std::vector<Utterance>& utts) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "wav");
  fs::create_directories(dir / "labels");
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  for (const Utterance& u : utts) {
    const std::string wav = "wav/" + u.utterance_id + ".wav";
    const std::string lab = "labels/" + u.utterance_id + ".json";
    WriteWav((dir / wav).string(), u.audio);
    std::ofstream(dir / lab) << nlohmann::json(u.vad_labels).dump() << "\n";
    nlohmann::json rec = {{"utterance_id", u.utterance_id},
                          {"speaker_id", u.speaker_id ? nlohmann::json(*u.speaker_id)
                                                      : nlohmann::json(nullptr)},
                          {"wav_path", wav},
                          {"labels_path", lab},
                          {"duration_s", u.audio.duration_s()}};
    manifest << rec.dump() << "\n";
  }
}

/// Reads a JSON-lines manifest; relative paths resolve against its
/// directory. Utterances are padded onto the frame grid of `framing`.
inline std::vector<Utterance> ReadCorpus(const std::filesystem::path& manifest_path,
                                         const Framing& framing = {}) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  const auto base = manifest_path.parent_path();
  std::vector<Utterance> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bad manifest line: " + std::string(e.what()));
    }
    Utterance u;
    u.utterance_id = rec.at("utterance_id");
    if (!rec.at("speaker_id").is_null()) u.speaker_id = rec.at("speaker_id").get<std::string>();
    u.audio = ReadWav((base / rec.at("wav_path").get<std::string>()).string());
    std::ifstream lf(base / rec.at("labels_path").get<std::string>());
    if (!lf) throw DataError("missing labels for " + u.utterance_id);
    nlohmann::json labels;
    lf >> labels;
    u.vad_labels = labels.get<std::vector<int>>();
    const int T = NumFrames(u.audio.size(), framing.win, framing.hop);
    if (int(u.vad_labels.size()) != T)
      throw DataError("labels of " + u.utterance_id + " have " +
                      std::to_string(u.vad_labels.size()) + " frames, audio has " +
                      std::to_string(T));
    AlignToHop(u, framing);
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace pvad
