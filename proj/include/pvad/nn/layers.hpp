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

// Differentiable building blocks: linear, LSTM, BLSTM, attentive pooling,
// softmax cross-entropy and inverted dropout. Sequences are stored with one
// frame per column (D x T).

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pvad/nn/params.hpp"

namespace pvad::nn {

enum class Mode { kTrain, kEval };

template <typename S>
inline Mat<S> Sigmoid(const Mat<S>& z) {
  return (S(1) + (-z.array()).exp()).inverse().matrix();
}

// ---------------------------------------------------------------- Linear

template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(std::string prefix, int in, int out)
      : prefix_(std::move(prefix)), in_(in), out_(out) {}

  void AddParams(ParamStore<S>& ps, Rng& rng, bool trainable = true) const {
    InitUniform(ps.Add(prefix_ + ".W", out_, in_, trainable), in_, rng);
    InitUniform(ps.Add(prefix_ + ".b", out_, 1, trainable), in_, rng);
  }

  Mat<S> Forward(const ParamStore<S>& ps, const Mat<S>& x) const {
    if (x.rows() != in_)
      throw DataError(prefix_ + ": input has " + std::to_string(x.rows()) +
                      " rows, expected " + std::to_string(in_));
    const Mat<S>& W = ps.Expect(prefix_ + ".W", out_, in_);
    const Mat<S>& b = ps.Expect(prefix_ + ".b", out_, 1);
    Mat<S> y = W * x;
    y.colwise() += b.col(0);
    return y;
  }

  Mat<S> Backward(ParamStore<S>& ps, const Mat<S>& x, const Mat<S>& dy) const {
    Param<S>& W = ps.at(prefix_ + ".W");
    Param<S>& b = ps.at(prefix_ + ".b");
    if (W.trainable) W.grad.noalias() += dy * x.transpose();
    if (b.trainable) b.grad += dy.rowwise().sum();
    return W.value.transpose() * dy;
  }

  int in() const { return in_; }
  int out() const { return out_; }

 private:
  std::string prefix_;
  int in_ = 0, out_ = 0;
};

// ---------------------------------------------------------------- LSTM

template <typename S>
struct LstmCache {
  Mat<S> x, i, f, g, o, c, tanh_c, h;
};

/// Unidirectional LSTM, zero initial state. Gate rows are ordered
/// [input, forget, candidate, output].
template <typename S>
class Lstm {
 public:
  Lstm() = default;
  Lstm(std::string prefix, int in, int hidden)
      : prefix_(std::move(prefix)), in_(in), hidden_(hidden) {}

  void AddParams(ParamStore<S>& ps, Rng& rng, bool trainable = true) const {
    InitUniform(ps.Add(prefix_ + ".Wx", 4 * hidden_, in_, trainable), in_, rng);
    InitUniform(ps.Add(prefix_ + ".Wh", 4 * hidden_, hidden_, trainable),
                hidden_, rng);
    Param<S>& b = ps.Add(prefix_ + ".b", 4 * hidden_, 1, trainable);
    InitUniform(b, hidden_, rng);
    b.value.block(hidden_, 0, hidden_, 1).setConstant(S(1));  // forget gate
  }

  Mat<S> Forward(const ParamStore<S>& ps, const Mat<S>& x,
                 LstmCache<S>* cache = nullptr) const {
    const int H = hidden_;
    if (x.rows() != in_)
      throw DataError(prefix_ + ": input has " + std::to_string(x.rows()) +
                      " rows, expected " + std::to_string(in_));
    const Mat<S>& Wx = ps.Expect(prefix_ + ".Wx", 4 * H, in_);
    const Mat<S>& Wh = ps.Expect(prefix_ + ".Wh", 4 * H, H);
    const Mat<S>& b = ps.Expect(prefix_ + ".b", 4 * H, 1);
    const Eigen::Index T = x.cols();

    Mat<S> z = Wx * x;
    z.colwise() += b.col(0);
    LstmCache<S> local;
    LstmCache<S>& c = cache ? *cache : local;
    c.i.resize(H, T);
    c.f.resize(H, T);
    c.g.resize(H, T);
    c.o.resize(H, T);
    c.c.resize(H, T);
    c.tanh_c.resize(H, T);
    c.h.resize(H, T);
    Vec<S> h_prev = Vec<S>::Zero(H), c_prev = Vec<S>::Zero(H);
    Vec<S> zt(4 * H);
    for (Eigen::Index t = 0; t < T; ++t) {
      zt = z.col(t);
      if (t > 0) zt.noalias() += Wh * h_prev;
      auto sig = [](auto v) { return (S(1) + (-v.array()).exp()).inverse(); };
      c.i.col(t) = sig(zt.segment(0, H));
      c.f.col(t) = sig(zt.segment(H, H));
      c.g.col(t) = zt.segment(2 * H, H).array().tanh();
      c.o.col(t) = sig(zt.segment(3 * H, H));
      c.c.col(t) = c.f.col(t).cwiseProduct(c_prev) +
                   c.i.col(t).cwiseProduct(c.g.col(t));
      c.tanh_c.col(t) = c.c.col(t).array().tanh();
      c.h.col(t) = c.o.col(t).cwiseProduct(c.tanh_c.col(t));
      h_prev = c.h.col(t);
      c_prev = c.c.col(t);
    }
    if (cache) c.x = x;
    return c.h;
  }

  /// Full BPTT. Accumulates into trainable gradients; returns dL/dx.
  Mat<S> Backward(ParamStore<S>& ps, const LstmCache<S>& c,
                  const Mat<S>& dh_out) const {
    const int H = hidden_;
    const Eigen::Index T = c.h.cols();
    Param<S>& Wx = ps.at(prefix_ + ".Wx");
    Param<S>& Wh = ps.at(prefix_ + ".Wh");
    Param<S>& b = ps.at(prefix_ + ".b");
    Mat<S> dz(4 * H, T);
    Vec<S> dh_next = Vec<S>::Zero(H), dc_next = Vec<S>::Zero(H);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      const Vec<S> dh = dh_out.col(t) + dh_next;
      const auto tc = c.tanh_c.col(t).array();
      const Vec<S> dc =
          dc_next.array() + dh.array() * c.o.col(t).array() * (S(1) - tc * tc);
      const auto i = c.i.col(t).array(), f = c.f.col(t).array(),
                 g = c.g.col(t).array(), o = c.o.col(t).array();
      dz.col(t).segment(0, H) = dc.array() * g * i * (S(1) - i);
      if (t > 0)
        dz.col(t).segment(H, H) =
            dc.array() * c.c.col(t - 1).array() * f * (S(1) - f);
      else
        dz.col(t).segment(H, H).setZero();
      dz.col(t).segment(2 * H, H) = dc.array() * i * (S(1) - g * g);
      dz.col(t).segment(3 * H, H) = dh.array() * tc * o * (S(1) - o);
      dc_next = dc.cwiseProduct(c.f.col(t));
      dh_next.noalias() = Wh.value.transpose() * dz.col(t);
    }
    if (Wx.trainable) Wx.grad.noalias() += dz * c.x.transpose();
    if (Wh.trainable && T > 1)
      Wh.grad.noalias() +=
          dz.rightCols(T - 1) * c.h.leftCols(T - 1).transpose();
    if (b.trainable) b.grad += dz.rowwise().sum();
    return Wx.value.transpose() * dz;
  }

  int in() const { return in_; }
  int hidden() const { return hidden_; }

 private:
  std::string prefix_;
  int in_ = 0, hidden_ = 0;
};

// ---------------------------------------------------------------- BLSTM

template <typename S>
struct BlstmCache {
  LstmCache<S> fwd, bwd;
};

/// Output rows are [forward; backward] hidden states for each frame.
template <typename S>
class Blstm {
 public:
  Blstm() = default;
  Blstm(const std::string& prefix, int in, int hidden)
      : fwd_(prefix + ".fwd", in, hidden), bwd_(prefix + ".bwd", in, hidden) {}

  void AddParams(ParamStore<S>& ps, Rng& rng, bool trainable = true) const {
    fwd_.AddParams(ps, rng, trainable);
    bwd_.AddParams(ps, rng, trainable);
  }

  Mat<S> Forward(const ParamStore<S>& ps, const Mat<S>& x,
                 BlstmCache<S>* cache = nullptr) const {
    const int H = fwd_.hidden();
    Mat<S> out(2 * H, x.cols());
    out.topRows(H) = fwd_.Forward(ps, x, cache ? &cache->fwd : nullptr);
    const Mat<S> x_rev = x.rowwise().reverse();
    out.bottomRows(H) =
        bwd_.Forward(ps, x_rev, cache ? &cache->bwd : nullptr).rowwise().reverse();
    return out;
  }

  Mat<S> Backward(ParamStore<S>& ps, const BlstmCache<S>& c,
                  const Mat<S>& dy) const {
    const int H = fwd_.hidden();
    Mat<S> dx = fwd_.Backward(ps, c.fwd, dy.topRows(H));
    const Mat<S> dy_rev = dy.bottomRows(H).rowwise().reverse();
    dx += bwd_.Backward(ps, c.bwd, dy_rev).rowwise().reverse();
    return dx;
  }

  int out() const { return 2 * fwd_.hidden(); }

 private:
  Lstm<S> fwd_, bwd_;
};

// ------------------------------------------------------ Attentive pooling

template <typename S>
struct AttentionCache {
  Mat<S> h, u;
  Vec<S> weights;
};

/// e = sum_t a_t h_t with a = softmax_t(v' tanh(W h_t + b)).
template <typename S>
class AttentivePooling {
 public:
  AttentivePooling() = default;
  AttentivePooling(std::string prefix, int in, int attn_dim)
      : prefix_(std::move(prefix)), in_(in), attn_(attn_dim) {}

  void AddParams(ParamStore<S>& ps, Rng& rng, bool trainable = true) const {
    InitUniform(ps.Add(prefix_ + ".W", attn_, in_, trainable), in_, rng);
    InitUniform(ps.Add(prefix_ + ".b", attn_, 1, trainable), in_, rng);
    InitUniform(ps.Add(prefix_ + ".v", attn_, 1, trainable), attn_, rng);
  }

  Vec<S> Forward(const ParamStore<S>& ps, const Mat<S>& h,
                 AttentionCache<S>* cache = nullptr) const {
    if (h.cols() == 0) throw DataError(prefix_ + ": empty sequence");
    const Mat<S>& W = ps.Expect(prefix_ + ".W", attn_, in_);
    const Mat<S>& b = ps.Expect(prefix_ + ".b", attn_, 1);
    const Mat<S>& v = ps.Expect(prefix_ + ".v", attn_, 1);
    Mat<S> u = W * h;
    u.colwise() += b.col(0);
    u = u.array().tanh().matrix();
    Vec<S> scores = u.transpose() * v.col(0);
    scores.array() -= scores.maxCoeff();
    Vec<S> a = scores.array().exp().matrix();
    a /= a.sum();
    Vec<S> e = h * a;
    if (cache) {
      cache->h = h;
      cache->u = std::move(u);
      cache->weights = a;
    }
    return e;
  }

  Mat<S> Backward(ParamStore<S>& ps, const AttentionCache<S>& c,
                  const Vec<S>& de) const {
    Param<S>& W = ps.at(prefix_ + ".W");
    Param<S>& b = ps.at(prefix_ + ".b");
    Param<S>& v = ps.at(prefix_ + ".v");
    const Vec<S>& a = c.weights;
    Mat<S> dh = de * a.transpose();
    const Vec<S> da = c.h.transpose() * de;
    const Vec<S> ds = (a.array() * (da.array() - a.dot(da))).matrix();
    if (v.trainable) v.grad.col(0) += c.u * ds;
    const Mat<S> dpre =
        ((v.value.col(0) * ds.transpose()).array() * (S(1) - c.u.array().square()))
            .matrix();
    if (W.trainable) W.grad.noalias() += dpre * c.h.transpose();
    if (b.trainable) b.grad += dpre.rowwise().sum();
    dh.noalias() += W.value.transpose() * dpre;
    return dh;
  }

 private:
  std::string prefix_;
  int in_ = 0, attn_ = 0;
};

// --------------------------------------------------- Softmax + cross-entropy

template <typename S>
Mat<S> Softmax(const Mat<S>& logits) {
  Mat<S> p = logits;
  for (Eigen::Index t = 0; t < p.cols(); ++t) {
    p.col(t).array() -= p.col(t).maxCoeff();
    p.col(t) = p.col(t).array().exp().matrix();
    p.col(t) /= p.col(t).sum();
  }
  return p;
}

template <typename S>
struct CrossEntropyResult {
  double loss_sum = 0.0;  // sum over frames of -log p(label)
  Mat<S> posteriors;      // C x T
  Mat<S> grad;            // d(scale * loss_sum) / d logits
};

/// Softmax over each column and the summed negative log-likelihood of
/// `labels`. The returned gradient is scaled by `scale` (1/N_frames for a
/// frame mean).
template <typename S>
CrossEntropyResult<S> SoftmaxCrossEntropy(const Mat<S>& logits,
                                          const std::vector<int>& labels,
                                          double scale) {
  const Eigen::Index C = logits.rows(), T = logits.cols();
  if (Eigen::Index(labels.size()) != T)
    throw DataError("softmax_ce: " + std::to_string(labels.size()) +
                    " labels for " + std::to_string(T) + " frames");
  CrossEntropyResult<S> r;
  r.posteriors.resize(C, T);
  r.grad.resize(C, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const int y = labels[std::size_t(t)];
    if (y < 0 || y >= C)
      throw DataError("softmax_ce: label " + std::to_string(y) +
                      " out of range [0, " + std::to_string(C) + ")");
    // Stabilized log-softmax in double.
    const Eigen::VectorXd z = logits.col(t).template cast<double>();
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    const Eigen::VectorXd p = (z.array() - lse).exp().matrix();
    r.loss_sum += lse - z(y);
    r.posteriors.col(t) = p.cast<S>();
    Eigen::VectorXd g = p;
    g(y) -= 1.0;
    r.grad.col(t) = (scale * g).cast<S>();
  }
  return r;
}

/// Mean-over-frames form: returns (loss, posteriors).
template <typename S>
std::pair<double, Mat<S>> SoftmaxCe(const Mat<S>& logits,
                                    const std::vector<int>& labels) {
  auto r = SoftmaxCrossEntropy<S>(logits, labels,
                                  labels.empty() ? 1.0 : 1.0 / labels.size());
  return {labels.empty() ? 0.0 : r.loss_sum / double(labels.size()),
          std::move(r.posteriors)};
}

// ---------------------------------------------------------------- Dropout

/// Inverted dropout: survivors are scaled by 1/(1-p); identity in eval mode.
/// When `mask` is given it receives the multiplier applied to each entry.
template <typename S>
Mat<S> Dropout(const Mat<S>& x, double p, Mode mode, Rng& rng,
               Mat<S>* mask = nullptr) {
  if (!(p >= 0.0) || p >= 1.0)
    throw ConfigError("dropout ratio must satisfy 0 <= p < 1");
  if (mode == Mode::kEval || p == 0.0) {
    if (mask) *mask = Mat<S>::Ones(x.rows(), x.cols());
    return x;
  }
  std::bernoulli_distribution keep(1.0 - p);
  const S scale = S(1.0 / (1.0 - p));
  Mat<S> m(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = keep(rng) ? scale : S(0);
  Mat<S> y = x.cwiseProduct(m);
  if (mask) *mask = std::move(m);
  return y;
}

}  // namespace pvad::nn
