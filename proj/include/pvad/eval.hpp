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
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvad/augmentation.hpp"
#include "pvad/corpus.hpp"
#include "pvad/pvad_model.hpp"
#include "pvad/speaker_model.hpp"

namespace pvad {

/// Ranking of `scores` by descending score; equal scores keep input order.
inline std::vector<std::size_t> RankDescending(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

/// Non-interpolated average precision: mean of the precision at the rank of
/// each positive.
inline double AveragePrecision(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw DataError("average precision: scores and labels differ in length");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("average precision: non-finite score");
  const auto order = RankDescending(scores);
  double hits = 0, sum = 0;
  for (std::size_t n = 0; n < order.size(); ++n) {
    if (labels[order[n]]) {
      hits += 1;
      sum += hits / double(n + 1);
    }
  }
  if (hits == 0) throw DataError("AP undefined: no positive labels");
  return sum / hits;
}

/// Per-frame posteriors (T x 2) and target labels of one scored input.
struct ScoredInput {
  Eigen::MatrixXd posteriors;
  std::vector<int> labels;  // q
};

struct PooledScores {
  std::vector<double> score0, score1;  // per frame
  std::vector<int> q;

  void Add(const ScoredInput& s) {
    if (s.posteriors.rows() != Eigen::Index(s.labels.size()) || s.posteriors.cols() != 2)
      throw DataError("scored input: posterior shape does not match labels");
    for (std::size_t t = 0; t < s.labels.size(); ++t) {
      score0.push_back(s.posteriors(Eigen::Index(t), 0));
      score1.push_back(s.posteriors(Eigen::Index(t), 1));
      q.push_back(s.labels[t]);
    }
  }
  std::size_t size() const { return q.size(); }
};

/// Micro-mean AP: one AP over the pooled (frame, class) predictions, frame
/// major, each frame contributing both class scores.
inline double PooledMap(const PooledScores& p) {
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(2 * p.size());
  labels.reserve(2 * p.size());
  for (std::size_t t = 0; t < p.size(); ++t) {
    scores.push_back(p.score0[t]);
    labels.push_back(1 - p.q[t]);
    scores.push_back(p.score1[t]);
    labels.push_back(p.q[t]);
  }
  return AveragePrecision(scores, labels);
}

struct Metrics {
  double ap_ns_nts = 0, ap_ts = 0, map = 0;
  std::size_t n_frames = 0;
};

inline Metrics ComputeMetrics(const PooledScores& p) {
  if (p.size() == 0) throw DataError("evaluation on an empty test set");
  Metrics m;
  std::vector<int> neg(p.q.size());
  for (std::size_t t = 0; t < p.q.size(); ++t) neg[t] = 1 - p.q[t];
  m.ap_ns_nts = AveragePrecision(p.score0, neg);
  m.ap_ts = AveragePrecision(p.score1, p.q);
  m.map = PooledMap(p);
  m.n_frames = p.size();
  return m;
}

/// A test input with its real enrollment embedding (empty for the VAD).
struct TestInput {
  FeatureSequence input;
  std::vector<int> labels;
  SpeakerEmbedding enrollment;
};

/// Scores every test input with the model in eval mode and pools frames.
/// A standard VAD is scored against q with its speech posterior.
inline PooledScores ScoreTestSet(const PvadModel& model, const std::vector<TestInput>& tests) {
  if (tests.empty()) throw DataError("evaluation on an empty test set");
  PooledScores pooled;
  const SpeakerEmbedding none;
  for (const TestInput& t : tests)
    pooled.Add({model.Forward(t.input, model.personalized() ? t.enrollment : none), t.labels});
  return pooled;
}

inline Metrics EvaluatePvad(const PvadModel& model, const std::vector<TestInput>& tests) {
  return ComputeMetrics(ScoreTestSet(model, tests));
}

/// Precision and recall at thresholds 0, 0.01, ..., 1 for both classes.
inline void WritePrCurveCsv(const std::filesystem::path& path, const PooledScores& p) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "class,threshold,precision,recall\n";
  char buf[128];
  for (int cls = 0; cls < 2; ++cls) {
    const auto& s = cls == 0 ? p.score0 : p.score1;
    std::size_t positives = 0;
    for (int q : p.q) positives += std::size_t(cls == 0 ? 1 - q : q);
    for (int k = 0; k <= 100; ++k) {
      const double thr = k / 100.0;
      std::size_t tp = 0, fp = 0;
      for (std::size_t t = 0; t < s.size(); ++t) {
        if (s[t] < thr) continue;
        (((cls == 0) ? 1 - p.q[t] : p.q[t]) ? tp : fp) += 1;
      }
      const double prec = tp + fp ? double(tp) / double(tp + fp) : 1.0;
      const double rec = positives ? double(tp) / double(positives) : 0.0;
      std::snprintf(buf, sizeof buf, "%s,%.2f,%.6f,%.6f\n", cls == 0 ? "ns_nts" : "ts", thr, prec,
                    rec);
      out << buf;
    }
  }
}

inline nlohmann::json MetricsJson(const Metrics& m) {
  return {{"ap_ns_nts", m.ap_ns_nts}, {"ap_ts", m.ap_ts}, {"map", m.map},
          {"n_frames", m.n_frames}};
}

// ------------------------------------------------------ similarity study

/// Linear-interpolated quantile of unsorted values, q in [0, 1].
inline double Quantile(std::vector<double> v, double q) {
  if (v.empty()) throw DataError("quantile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const std::size_t lo = std::size_t(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

inline double Median(const std::vector<double>& v) { return Quantile(v, 0.5); }

inline constexpr int kHistBins = 40;  // width 0.05 over [-1, 1]

inline int HistBin(double s) {
  const int b = int(std::floor((s + 1.0) / 0.05));
  return std::clamp(b, 0, kHistBins - 1);
}

struct SimilarityPanel {
  std::string name;
  std::string same_label;          // "same_speaker" or "same_utterance"
  std::vector<double> same, cross;
};

struct SimilarityStudy {
  std::vector<SimilarityPanel> panels;  // a, b, c
};

/// Panel a: embeddings of different utterances, same vs different speaker.
/// Panel b: each embedding against itself, plus the cross-speaker pairs.
/// Panel c: two independently augmented embeddings of one utterance, plus
/// the cross-speaker pairs.
inline SimilarityStudy RunSimilarityStudy(const SpeakerModel& speaker,
                                          const std::vector<Utterance>& utts,
                                          const FeatureConfig& fcfg, const AugConfig& aug,
                                          std::uint64_t seed) {
  if (utts.size() < 2) throw DataError("similarity study needs at least 2 utterances");
  std::vector<SpeakerEmbedding> emb;
  std::vector<FeatureSequence> statics;
  for (const Utterance& u : utts) {
    if (!u.speaker_id) throw DataError("similarity study needs speaker labels");
    statics.push_back(ExtractStatic(u.audio, fcfg));
    emb.push_back(speaker.Encode(FinalizeFeatures(statics.back(), fcfg)));
  }
  SimilarityPanel a{"a", "same_speaker", {}, {}};
  for (std::size_t i = 0; i < utts.size(); ++i)
    for (std::size_t j = i + 1; j < utts.size(); ++j)
      (utts[i].speaker_id == utts[j].speaker_id ? a.same : a.cross)
          .push_back(CosineSimilarity(emb[i], emb[j]));
  if (a.same.empty()) throw DataError("similarity study needs >= 2 utterances of a speaker");
  if (a.cross.empty()) throw DataError("similarity study needs >= 2 speakers");
  SimilarityPanel b{"b", "same_utterance", {}, a.cross};
  for (const auto& e : emb) b.same.push_back(CosineSimilarity(e, e));
  SimilarityPanel c{"c", "same_utterance", {}, a.cross};
  for (std::size_t i = 0; i < utts.size(); ++i) {
    Rng r1 = MakeRng(seed, 2 * i, "similarity-aug");
    Rng r2 = MakeRng(seed, 2 * i + 1, "similarity-aug");
    const auto e1 = AugmentEmbedding(statics[i], speaker, fcfg, aug, r1, nn::Mode::kTrain);
    const auto e2 = AugmentEmbedding(statics[i], speaker, fcfg, aug, r2, nn::Mode::kTrain);
    c.same.push_back(CosineSimilarity(e1, e2));
  }
  return {{std::move(a), std::move(b), std::move(c)}};
}

inline std::vector<int> Histogram(const std::vector<double>& v) {
  std::vector<int> h(kHistBins, 0);
  for (double s : v) ++h[std::size_t(HistBin(s))];
  return h;
}

inline void WriteSimilarityCsv(const std::filesystem::path& path, const SimilarityStudy& st,
                               const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "panel,pair_type,bin_left,count\n";
  char buf[96];
  for (const auto& p : st.panels) {
    for (const auto& [type, values] :
         {std::pair{p.same_label, &p.same}, std::pair{std::string("different_speaker"), &p.cross}}) {
      const auto h = Histogram(*values);
      for (int k = 0; k < kHistBins; ++k) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.2f,%d\n", p.name.c_str(), type.c_str(),
                      -1.0 + 0.05 * k, h[std::size_t(k)]);
        out << buf;
      }
    }
  }
}

}  // namespace pvad
