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

#include <string>
#include <vector>

#include "pvad/nn/grad_check.hpp"
#include "pvad/nn/layers.hpp"
#include "pvad/pvad_model.hpp"
#include "pvad/speaker_model.hpp"

namespace pvad {

struct GradSuiteEntry {
  std::string block;
  double max_rel_error = 0;
};

namespace detail {

inline nn::Mat<double> RandomMatrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  nn::Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Uniform(rng, -1, 1);
  return m;
}

/// Adds the block input as a trainable tensor named "input" so that the
/// check also covers the gradient the block passes downwards.
inline nn::Param<double>& AddInput(nn::ParamStore<double>& ps, Eigen::Index r, Eigen::Index c,
                                   Rng& rng) {
  nn::Param<double>& p = ps.Add("input", r, c, true);
  p.value = RandomMatrix(r, c, rng);
  return p;
}

}  // namespace detail

/// Central-difference checks of every differentiable block at tiny sizes,
/// in double precision. Losses are random linear read-outs of the block
/// output, or cross-entropy where the block ends in a classifier.
inline std::vector<GradSuiteEntry> RunGradientSuite(std::uint64_t seed, double step = 1e-6) {
  using nn::Mat;
  using nn::ParamStore;
  std::vector<GradSuiteEntry> out;
  Rng rng = MakeRng(seed, 0, "grad-suite");
  auto run = [&](const std::string& name, ParamStore<double>& ps, auto&& loss) {
    out.push_back({name, nn::GradCheck(loss, ps, step).worst});
  };

  {
    nn::Linear<double> lin("lin", 4, 3);
    ParamStore<double> ps;
    lin.AddParams(ps, rng);
    detail::AddInput(ps, 4, 5, rng);
    const Mat<double> w = detail::RandomMatrix(3, 5, rng);
    run("linear", ps, [&](ParamStore<double>& p, bool grad) {
      const Mat<double> x = p.at("input").value;
      const Mat<double> y = lin.Forward(p, x);
      if (grad) p.at("input").grad += lin.Backward(p, x, w);
      return y.cwiseProduct(w).sum();
    });
  }
  {
    nn::Lstm<double> lstm("lstm", 3, 4);
    ParamStore<double> ps;
    lstm.AddParams(ps, rng);
    detail::AddInput(ps, 3, 6, rng);
    const Mat<double> w = detail::RandomMatrix(4, 6, rng);
    run("lstm", ps, [&](ParamStore<double>& p, bool grad) {
      nn::LstmCache<double> c;
      const Mat<double> h = lstm.Forward(p, p.at("input").value, &c);
      if (grad) p.at("input").grad += lstm.Backward(p, c, w);
      return h.cwiseProduct(w).sum();
    });
  }
  {
    nn::Blstm<double> blstm("blstm", 3, 3);
    ParamStore<double> ps;
    blstm.AddParams(ps, rng);
    detail::AddInput(ps, 3, 5, rng);
    const Mat<double> w = detail::RandomMatrix(6, 5, rng);
    run("blstm", ps, [&](ParamStore<double>& p, bool grad) {
      nn::BlstmCache<double> c;
      const Mat<double> h = blstm.Forward(p, p.at("input").value, &c);
      if (grad) p.at("input").grad += blstm.Backward(p, c, w);
      return h.cwiseProduct(w).sum();
    });
  }
  {
    nn::AttentivePooling<double> att("attn", 4, 3);
    ParamStore<double> ps;
    att.AddParams(ps, rng);
    detail::AddInput(ps, 4, 6, rng);
    const nn::Vec<double> w = detail::RandomMatrix(4, 1, rng).col(0);
    run("attentive_pooling", ps, [&](ParamStore<double>& p, bool grad) {
      nn::AttentionCache<double> c;
      const nn::Vec<double> e = att.Forward(p, p.at("input").value, &c);
      if (grad) p.at("input").grad += att.Backward(p, c, w);
      return e.dot(w);
    });
  }
  {
    ParamStore<double> ps;
    ps.Add("logits", 2, 7, true).value = 3.0 * detail::RandomMatrix(2, 7, rng);
    const std::vector<int> labels = {0, 1, 1, 0, 1, 0, 0};
    run("softmax_ce", ps, [&](ParamStore<double>& p, bool grad) {
      auto ce = nn::SoftmaxCrossEntropy<double>(p.at("logits").value, labels, 1.0 / 7);
      if (grad) p.at("logits").grad += ce.grad;
      return ce.loss_sum / 7;
    });
  }
  {
    SpeakerModelConfig mc;
    mc.input_dim = 3;
    mc.hidden = 2;
    SpeakerEncoder<double> enc(mc);
    ParamStore<double> ps;
    enc.AddParams(ps, rng);
    const Mat<double> x = detail::RandomMatrix(3, 5, rng);
    const nn::Vec<double> w = detail::RandomMatrix(4, 1, rng).col(0);
    run("speaker_encoder", ps, [&](ParamStore<double>& p, bool grad) {
      EncoderCache<double> c;
      const nn::Vec<double> e = enc.Forward(p, x, &c);
      if (grad) enc.Backward(p, c, w);
      return e.dot(w);
    });
  }
  for (int embed : {3, 0}) {
    PvadConfig pc;
    pc.input_dim = 3;
    pc.embed_dim = embed;
    pc.hidden = 2;
    PvadNetwork<double> net(pc);
    ParamStore<double> ps;
    net.AddParams(ps, rng);
    const Mat<double> x = detail::RandomMatrix(3, 6, rng);
    const nn::Vec<double> e = detail::RandomMatrix(embed, 1, rng).col(0);
    const std::vector<int> labels = {0, 0, 1, 1, 1, 0};
    run(embed ? "pvad_stack" : "standard_vad_stack", ps, [&](ParamStore<double>& p, bool grad) {
      Rng drop = MakeRng(seed, 1, "grad-suite-dropout");
      PvadCache<double> c;
      const Mat<double> logits = net.Logits(p, x, e, nn::Mode::kTrain, &drop, &c);
      auto ce = nn::SoftmaxCrossEntropy<double>(logits, labels, 1.0 / 6);
      if (grad) net.Backward(p, c, ce.grad);
      return ce.loss_sum / 6;
    });
  }
  return out;
}

}  // namespace pvad
