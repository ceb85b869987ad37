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

// Log mel filterbank features with delta/acceleration coefficients and
// left-right context stacking.

#pragma once

#include <fftw3.h>

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvad/common.hpp"
#include "pvad/wav.hpp"

namespace pvad {

using RowMatrixF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixD =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class FeatureLayout { kStatic, kDeltas, kStacked };

inline const char* LayoutName(FeatureLayout l) {
  switch (l) {
    case FeatureLayout::kStatic: return "static";
    case FeatureLayout::kDeltas: return "static+delta+delta2";
    case FeatureLayout::kStacked: return "context-stacked";
  }
  return "?";
}

/// T x D feature matrix, one row per frame.
struct FeatureSequence {
  RowMatrixF values;
  double frame_shift_ms = 10.0;
  double frame_length_ms = 20.0;
  int n_mels = 0;
  int context = 0;
  FeatureLayout layout = FeatureLayout::kStatic;

  int num_frames() const { return int(values.rows()); }
  int dim() const { return int(values.cols()); }
};

struct FeatureConfig {
  int n_mels = 40;
  double frame_length_ms = 20.0;
  double frame_shift_ms = 10.0;
  int context = 3;
  int delta_window = 2;
  double log_floor = 1e-10;
  bool cmvn = false;  // per-utterance mean/variance normalization

  int win_samples(int sample_rate) const {
    return int(std::lround(frame_length_ms * sample_rate / 1000.0));
  }
  int hop_samples(int sample_rate) const {
    return int(std::lround(frame_shift_ms * sample_rate / 1000.0));
  }
  int static_dim() const { return n_mels; }
  int stacked_dim() const { return (2 * context + 1) * 3 * n_mels; }

  nlohmann::json ToJson() const {
    return {{"n_mels", n_mels}, {"frame_length_ms", frame_length_ms},
            {"frame_shift_ms", frame_shift_ms}, {"context", context},
            {"delta_window", delta_window}, {"log_floor", log_floor}, {"cmvn", cmvn}};
  }
  /// Missing keys keep their defaults.
  static FeatureConfig FromJson(const nlohmann::json& j) {
    FeatureConfig c;
    c.n_mels = j.value("n_mels", c.n_mels);
    c.frame_length_ms = j.value("frame_length_ms", c.frame_length_ms);
    c.frame_shift_ms = j.value("frame_shift_ms", c.frame_shift_ms);
    c.context = j.value("context", c.context);
    c.delta_window = j.value("delta_window", c.delta_window);
    c.log_floor = j.value("log_floor", c.log_floor);
    c.cmvn = j.value("cmvn", c.cmvn);
    if (c.n_mels < 1 || c.context < 0 || c.delta_window < 1 || !(c.log_floor > 0) ||
        !(c.frame_shift_ms > 0) || !(c.frame_length_ms >= c.frame_shift_ms))
      throw ConfigError("invalid feature configuration");
    return c;
  }
};

inline int NumFrames(std::size_t n_samples, int win, int hop) {
  if (n_samples < std::size_t(win)) return 0;
  return int((n_samples - std::size_t(win)) / std::size_t(hop)) + 1;
}

inline std::vector<double> HammingWindow(int length) {
  std::vector<double> w(std::size_t(length), 1.0);
  if (length == 1) return w;
  for (int n = 0; n < length; ++n)
    w[std::size_t(n)] = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / (length - 1));
  return w;
}

/// Splits the signal into Hamming-windowed frames, one per row.
inline RowMatrixD FrameSignal(const Waveform& w, double win_ms, double hop_ms) {
  if (!(hop_ms > 0) || win_ms < hop_ms)
    throw ConfigError("frame_signal: need win_ms >= hop_ms > 0");
  const int win = int(std::lround(win_ms * w.sample_rate / 1000.0));
  const int hop = int(std::lround(hop_ms * w.sample_rate / 1000.0));
  const int frames = NumFrames(w.size(), win, hop);
  if (frames < 1)
    throw DataError("input too short: " + std::to_string(w.size()) +
                    " samples, need at least " + std::to_string(win));
  const auto window = HammingWindow(win);
  RowMatrixD out(frames, win);
  for (int t = 0; t < frames; ++t) {
    const float* src = w.samples.data() + std::size_t(t) * std::size_t(hop);
    for (int n = 0; n < win; ++n) out(t, n) = window[std::size_t(n)] * src[n];
  }
  return out;
}

inline double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double MelToHz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

inline int FftSizeFor(int frame_length) {
  int n = 1;
  while (n < frame_length) n <<= 1;
  return n;
}

/// Edge frequencies of the M triangular filters: band j spans
/// [edges[j], edges[j+2]] and peaks at edges[j+1].
inline std::vector<double> MelBandEdgesHz(int n_mels, int sample_rate) {
  const double top = HzToMel(sample_rate / 2.0);
  std::vector<double> edges(std::size_t(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[std::size_t(i)] = MelToHz(top * i / (n_mels + 1));
  return edges;
}

/// M x (n_fft/2 + 1) triangular filterbank spanning 0 Hz to Nyquist.
inline Eigen::MatrixXd MelFilterbank(int n_mels, int n_fft, int sample_rate) {
  if (n_mels < 1) throw ConfigError("n_mels must be >= 1");
  const auto edges = MelBandEdgesHz(n_mels, sample_rate);
  const int bins = n_fft / 2 + 1;
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
  for (int j = 0; j < n_mels; ++j) {
    const double lo = edges[std::size_t(j)], mid = edges[std::size_t(j) + 1],
                 hi = edges[std::size_t(j) + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = double(k) * sample_rate / n_fft;
      double v = 0.0;
      if (f > lo && f <= mid)
        v = (f - lo) / (mid - lo);
      else if (f > mid && f < hi)
        v = (hi - f) / (hi - mid);
      fb(j, k) = v;
    }
  }
  return fb;
}

/// Power spectrum rows (|FFT|^2, n_fft/2+1 bins) of windowed frames.
inline RowMatrixD PowerSpectrum(const RowMatrixD& frames) {
  const int frame_len = int(frames.cols());
  const int n_fft = FftSizeFor(frame_len);
  const int bins = n_fft / 2 + 1;
  double* in = fftw_alloc_real(std::size_t(n_fft));
  fftw_complex* out = fftw_alloc_complex(std::size_t(bins));
  fftw_plan plan;
  {
    // Planner calls are not thread-safe in FFTW; execution is.
    static std::mutex planner_mutex;
    std::lock_guard<std::mutex> lock(planner_mutex);
    plan = fftw_plan_dft_r2c_1d(n_fft, in, out, FFTW_ESTIMATE);
  }
  RowMatrixD power(frames.rows(), bins);
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    for (int n = 0; n < n_fft; ++n) in[n] = n < frame_len ? frames(t, n) : 0.0;
    fftw_execute(plan);
    for (int k = 0; k < bins; ++k)
      power(t, k) = out[k][0] * out[k][0] + out[k][1] * out[k][1];
  }
  {
    static std::mutex destroy_mutex;
    std::lock_guard<std::mutex> lock(destroy_mutex);
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return power;
}

inline FeatureSequence LogMel(const RowMatrixD& frames, int sample_rate,
                              int n_mels, double log_floor = 1e-10) {
  const int n_fft = FftSizeFor(int(frames.cols()));
  const Eigen::MatrixXd fb = MelFilterbank(n_mels, n_fft, sample_rate);
  const RowMatrixD power = PowerSpectrum(frames);
  RowMatrixD energies = power * fb.transpose();
  FeatureSequence fs;
  fs.values = energies.unaryExpr([log_floor](double e) {
                                    return std::log(std::max(e, log_floor));
                                  })
                  .cast<float>();
  fs.n_mels = n_mels;
  fs.layout = FeatureLayout::kStatic;
  fs.frame_length_ms = 1000.0 * double(frames.cols()) / sample_rate;
  return fs;
}

namespace detail {

inline RowMatrixD Delta(const RowMatrixD& x, int window) {
  const Eigen::Index T = x.rows();
  double denom = 0.0;
  for (int n = 1; n <= window; ++n) denom += double(n) * n;
  denom *= 2.0;
  RowMatrixD d = RowMatrixD::Zero(T, x.cols());
  auto clampi = [T](Eigen::Index i) {
    return std::clamp<Eigen::Index>(i, 0, T - 1);
  };
  for (Eigen::Index t = 0; t < T; ++t)
    for (int n = 1; n <= window; ++n)
      d.row(t) += double(n) * (x.row(clampi(t + n)) - x.row(clampi(t - n)));
  return d / denom;
}

}  // namespace detail

/// [static, delta, acceleration] per frame with edge replication.
inline FeatureSequence AddDeltas(const FeatureSequence& f, int window = 2) {
  if (f.layout != FeatureLayout::kStatic)
    throw DataError("add_deltas expects static features");
  const RowMatrixD x = f.values.cast<double>();
  const RowMatrixD d1 = detail::Delta(x, window);
  const RowMatrixD d2 = detail::Delta(d1, window);
  FeatureSequence out = f;
  out.values.resize(x.rows(), 3 * x.cols());
  out.values << f.values, d1.cast<float>(), d2.cast<float>();
  out.layout = FeatureLayout::kDeltas;
  return out;
}

/// Frame t becomes frames t-c..t+c concatenated, replicating edges.
inline FeatureSequence StackContext(const FeatureSequence& f, int context) {
  if (f.layout != FeatureLayout::kDeltas)
    throw DataError("stack_context expects static+delta+delta2 features");
  if (context < 0) throw ConfigError("context radius must be >= 0");
  const Eigen::Index T = f.values.rows(), D = f.values.cols();
  FeatureSequence out = f;
  out.values.resize(T, (2 * context + 1) * D);
  for (Eigen::Index t = 0; t < T; ++t)
    for (int k = -context; k <= context; ++k) {
      Eigen::Index src = std::clamp<Eigen::Index>(t + k, 0, T - 1);
      out.values.block(t, (k + context) * D, 1, D) = f.values.row(src);
    }
  out.context = context;
  out.layout = FeatureLayout::kStacked;
  return out;
}

inline void ApplyCmvn(FeatureSequence& f) {
  const Eigen::RowVectorXf mean = f.values.colwise().mean();
  f.values.rowwise() -= mean;
  Eigen::RowVectorXf sd =
      (f.values.array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (sd(j) > 1e-6f) f.values.col(j) /= sd(j);
}

inline FeatureSequence ExtractStatic(const Waveform& w, const FeatureConfig& cfg) {
  FeatureSequence f =
      LogMel(FrameSignal(w, cfg.frame_length_ms, cfg.frame_shift_ms),
             w.sample_rate, cfg.n_mels, cfg.log_floor);
  f.frame_shift_ms = cfg.frame_shift_ms;
  f.frame_length_ms = cfg.frame_length_ms;
  return f;
}

/// Deltas + context stacking (+ optional CMVN) on top of static features.
inline FeatureSequence FinalizeFeatures(const FeatureSequence& static_feats,
                                        const FeatureConfig& cfg) {
  FeatureSequence f =
      StackContext(AddDeltas(static_feats, cfg.delta_window), cfg.context);
  if (cfg.cmvn) ApplyCmvn(f);
  return f;
}

inline FeatureSequence ExtractFeatures(const Waveform& w, const FeatureConfig& cfg) {
  return FinalizeFeatures(ExtractStatic(w, cfg), cfg);
}

/// Writes little-endian f32 row-major values to `stem`.bin and a one-line
/// JSON sidecar to `stem`.json.
inline void WriteFeatureBinary(const std::string& stem, const FeatureSequence& f) {
  {
    std::ofstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw DataError("cannot write " + stem + ".bin");
    // RowMatrixF storage is already row-major; x86/ARM hosts are little-endian.
    bin.write(reinterpret_cast<const char*>(f.values.data()),
              std::streamsize(sizeof(float) * std::size_t(f.values.size())));
  }
  nlohmann::json side = {{"rows", f.num_frames()},
                         {"cols", f.dim()},
                         {"layout", LayoutName(f.layout)}};
  std::ofstream js(stem + ".json");
  if (!js) throw DataError("cannot write " + stem + ".json");
  js << side.dump() << "\n";
}

inline FeatureSequence ReadFeatureBinary(const std::string& stem) {
  std::ifstream js(stem + ".json");
  if (!js) throw DataError("cannot read " + stem + ".json");
  nlohmann::json side;
  js >> side;
  const int rows = side.at("rows"), cols = side.at("cols");
  FeatureSequence f;
  f.values.resize(rows, cols);
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw DataError("cannot read " + stem + ".bin");
  bin.read(reinterpret_cast<char*>(f.values.data()),
           std::streamsize(sizeof(float) * std::size_t(f.values.size())));
  if (!bin) throw DataError("truncated feature file " + stem + ".bin");
  const std::string layout = side.at("layout");
  f.layout = layout == "static"                ? FeatureLayout::kStatic
             : layout == "static+delta+delta2" ? FeatureLayout::kDeltas
                                               : FeatureLayout::kStacked;
  return f;
}

}  // namespace pvad
