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
#include <filesystem>

#include "pvad/nn/checkpoint.hpp"
#include "pvad/nn/grad_check.hpp"
#include "pvad/nn/layers.hpp"
#include "pvad/nn/optim.hpp"

namespace pvad::nn {
namespace {

using MatD = Mat<double>;

MatD RandomMat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Uniform(rng, -scale, scale);
  return m;
}

// Sum of a fixed random projection of the outputs, so every output entry
// carries a distinct weight into the loss.
double Project(const MatD& y, const MatD& w) { return (y.array() * w.array()).sum(); }

TEST(Lstm, ZeroWeightsGiveZeroStates) {
  ParamStore<double> ps;
  Rng rng(1);
  Lstm<double> lstm("l", 3, 4);
  lstm.AddParams(ps, rng);
  for (auto& [_, p] : ps) p.value.setZero();
  const MatD h = lstm.Forward(ps, RandomMat(3, 5, rng));
  EXPECT_TRUE((h.array() == 0.0).all());
}

TEST(Lstm, SingleStepMatchesCellFormula) {
  ParamStore<double> ps;
  Rng rng(2);
  Lstm<double> lstm("l", 2, 3);
  lstm.AddParams(ps, rng);
  const MatD x = RandomMat(2, 1, rng);
  const MatD h = lstm.Forward(ps, x);
  const MatD z = ps.at("l.Wx").value * x + ps.at("l.b").value;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (int k = 0; k < 3; ++k) {
    const double i = sig(z(k)), g = std::tanh(z(6 + k)), o = sig(z(9 + k));
    EXPECT_NEAR(h(k, 0), o * std::tanh(i * g), 1e-14);
  }
}

TEST(Lstm, ForgetBiasStartsAtOne) {
  ParamStore<float> ps;
  Rng rng(3);
  Lstm<float>("l", 4, 5).AddParams(ps, rng);
  EXPECT_TRUE((ps.at("l.b").value.block(5, 0, 5, 1).array() == 1.0f).all());
}

TEST(Lstm, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  ParamStore<double> ps;
  Lstm<double> lstm("l", 2, 2);
  lstm.AddParams(ps, rng);
  const MatD x = RandomMat(2, 3, rng);
  const MatD w = RandomMat(2, 3, rng);
  auto loss = [&](ParamStore<double>& p, bool grad) {
    LstmCache<double> cache;
    const MatD h = lstm.Forward(p, x, &cache);
    if (grad) lstm.Backward(p, cache, w);
    return Project(h, w);
  };
  const auto report = GradCheck(loss, ps);
  EXPECT_LT(report.worst, 1e-5) << report.worst_param;
}

TEST(Lstm, InputGradientMatchesFiniteDifferences) {
  Rng rng(5);
  ParamStore<double> ps;
  Lstm<double> lstm("l", 3, 2);
  lstm.AddParams(ps, rng);
  MatD x = RandomMat(3, 4, rng);
  const MatD w = RandomMat(2, 4, rng);
  LstmCache<double> cache;
  lstm.Forward(ps, x, &cache);
  const MatD dx = lstm.Backward(ps, cache, w);
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double saved = x.data()[k];
    x.data()[k] = saved + 1e-6;
    const double lp = Project(lstm.Forward(ps, x), w);
    x.data()[k] = saved - 1e-6;
    const double lm = Project(lstm.Forward(ps, x), w);
    x.data()[k] = saved;
    EXPECT_NEAR(dx.data()[k], (lp - lm) / 2e-6, 1e-8);
  }
}

TEST(Lstm, FutureFramesDoNotAffectThePast) {
  Rng rng(6);
  ParamStore<float> ps;
  Lstm<float> lstm("l", 3, 4);
  lstm.AddParams(ps, rng);
  Mat<float> x = RandomMat(3, 8, rng).cast<float>();
  const Mat<float> base = lstm.Forward(ps, x);
  x.rightCols(3).setConstant(7.0f);
  const Mat<float> edited = lstm.Forward(ps, x);
  EXPECT_EQ(base.leftCols(5), edited.leftCols(5));
}

TEST(Blstm, OutputWidthIsTwiceHidden) {
  Rng rng(7);
  ParamStore<double> ps;
  Blstm<double> b("b", 3, 2);
  b.AddParams(ps, rng);
  EXPECT_EQ(b.Forward(ps, RandomMat(3, 5, rng)).rows(), 4);
}

TEST(Blstm, PalindromeWithSharedWeightsIsMirrored) {
  Rng rng(8);
  ParamStore<double> ps;
  Blstm<double> b("b", 2, 3);
  b.AddParams(ps, rng);
  for (const char* n : {".Wx", ".Wh", ".b"})
    ps.at(std::string("b.bwd") + n).value = ps.at(std::string("b.fwd") + n).value;
  MatD x = RandomMat(2, 7, rng);
  for (int t = 0; t < 3; ++t) x.col(6 - t) = x.col(t);
  const MatD y = b.Forward(ps, x);
  for (int t = 0; t < 7; ++t) {
    EXPECT_TRUE(y.col(t).head(3).isApprox(y.col(6 - t).tail(3), 1e-14));
    EXPECT_TRUE(y.col(t).tail(3).isApprox(y.col(6 - t).head(3), 1e-14));
  }
}

TEST(Blstm, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  ParamStore<double> ps;
  Blstm<double> b("b", 2, 2);
  b.AddParams(ps, rng);
  const MatD x = RandomMat(2, 3, rng);
  const MatD w = RandomMat(4, 3, rng);
  auto loss = [&](ParamStore<double>& p, bool grad) {
    BlstmCache<double> cache;
    const MatD y = b.Forward(p, x, &cache);
    if (grad) b.Backward(p, cache, w);
    return Project(y, w);
  };
  EXPECT_LT(GradCheck(loss, ps).worst, 1e-5);
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  ParamStore<double> ps;
  AttentivePooling<double> att("a", 4, 3);
  att.AddParams(ps, rng);
  ps.Add("h", 4, 5).value = RandomMat(4, 5, rng);
  const MatD w = RandomMat(4, 1, rng);
  auto loss = [&](ParamStore<double>& p, bool grad) {
    AttentionCache<double> cache;
    const Vec<double> e = att.Forward(p, p.at("h").value, &cache);
    if (grad) p.at("h").grad += att.Backward(p, cache, w.col(0));
    return Project(e, w);
  };
  EXPECT_LT(GradCheck(loss, ps).worst, 1e-5);
}

TEST(SoftmaxCe, ZeroLogitsAreUniform) {
  const auto [loss, post] = SoftmaxCe<double>(MatD::Zero(2, 1), {0});
  EXPECT_DOUBLE_EQ(post(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(post(1, 0), 0.5);
  EXPECT_NEAR(loss, std::log(2.0), 1e-15);
}

TEST(SoftmaxCe, RowsSumToOneEvenForExtremeLogits) {
  Rng rng(11);
  const MatD logits = RandomMat(3, 50, rng, 400.0);
  std::vector<int> labels(50, 2);
  const auto [loss, post] = SoftmaxCe<double>(logits, labels);
  EXPECT_TRUE(std::isfinite(loss));
  for (int t = 0; t < 50; ++t) EXPECT_NEAR(post.col(t).sum(), 1.0, 1e-9);
}

TEST(SoftmaxCe, GradientIsPosteriorMinusOneHotOverT) {
  Rng rng(12);
  const MatD logits0 = RandomMat(2, 4, rng);
  const std::vector<int> labels = {0, 1, 1, 0};
  const auto r = SoftmaxCrossEntropy<double>(logits0, labels, 0.25);
  MatD logits = logits0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    const double saved = logits.data()[k];
    logits.data()[k] = saved + 1e-6;
    const double lp = SoftmaxCe<double>(logits, labels).first;
    logits.data()[k] = saved - 1e-6;
    const double lm = SoftmaxCe<double>(logits, labels).first;
    logits.data()[k] = saved;
    EXPECT_NEAR(r.grad.data()[k], (lp - lm) / 2e-6, 1e-9);
  }
  MatD onehot = MatD::Zero(2, 4);
  for (int t = 0; t < 4; ++t) onehot(labels[std::size_t(t)], t) = 1;
  EXPECT_TRUE(r.grad.isApprox((r.posteriors - onehot) / 4.0, 1e-14));
}

TEST(SoftmaxCe, OutOfRangeLabelIsAnError) {
  EXPECT_THROW(SoftmaxCe<double>(MatD::Zero(2, 1), {2}), Error);
  EXPECT_THROW(SoftmaxCe<double>(MatD::Zero(2, 1), {-1}), Error);
}

TEST(Dropout, ZeroRateAndEvalAreIdentity) {
  Rng rng(13);
  const MatD x = RandomMat(5, 6, rng);
  EXPECT_EQ(Dropout(x, 0.0, Mode::kTrain, rng), x);
  EXPECT_EQ(Dropout(x, 0.7, Mode::kEval, rng), x);
  EXPECT_THROW(Dropout(x, 1.0, Mode::kTrain, rng), Error);
}

TEST(Dropout, InvertedScalingKeepsTheMean) {
  Rng rng(14);
  const MatD ones = MatD::Ones(100000, 1);
  const MatD y = Dropout(ones, 0.5, Mode::kTrain, rng);
  EXPECT_NEAR(y.mean(), 1.0, 0.01);
  EXPECT_TRUE(((y.array() == 0.0) || (y.array() == 2.0)).all());
}

TEST(Adam, FirstUnitStepMovesByLearningRate) {
  ParamStore<double> ps;
  ps.Add("w", 3, 1);
  ps.at("w").grad.setOnes();
  AdamState<double> st;
  st.lr = 0.01;
  AdamStep(ps, st);
  EXPECT_TRUE(ps.at("w").value.isApprox(MatD::Constant(3, 1, -0.01), 1e-6));
}

TEST(Adam, ZeroGradientIsNoMove) {
  ParamStore<double> ps;
  ps.Add("w", 2, 2).value.setConstant(0.3);
  AdamState<double> st;
  AdamStep(ps, st);
  EXPECT_TRUE((ps.at("w").value.array() == 0.3).all());
}

TEST(Adam, TwoStepTraceMatchesHandComputation) {
  // lr 0.1, g = +1 then -1 on a scalar starting at 0:
  // step 1: m_hat = v_hat = 1 -> theta = -0.1
  // step 2: m = -0.01, v = 0.001999, c1 = 0.19, c2 = 0.001999
  //         -> m_hat = -1/19, v_hat = 1 -> theta = -0.1 + 0.1/19 = -1.8/19
  ParamStore<double> ps;
  ps.Add("w", 1, 1);
  AdamState<double> st;
  st.lr = 0.1;
  ps.at("w").grad(0, 0) = 1.0;
  AdamStep(ps, st);
  EXPECT_NEAR(ps.at("w").value(0, 0), -0.1, 1e-8);
  ps.at("w").grad(0, 0) = -1.0;
  AdamStep(ps, st);
  EXPECT_NEAR(ps.at("w").value(0, 0), -1.8 / 19.0, 1e-8);
  EXPECT_EQ(st.step, 2);
}

TEST(Adam, FrozenParametersAreBitwiseUntouched) {
  Rng rng(15);
  ParamStore<float> ps;
  Linear<float>("frozen", 3, 2).AddParams(ps, rng, false);
  Linear<float>("live", 3, 2).AddParams(ps, rng, true);
  const Mat<float> before = ps.at("frozen.W").value;
  AdamState<float> st;
  for (int k = 0; k < 20; ++k) {
    for (auto& [_, p] : ps) p.grad.setConstant(0.5f);
    AdamStep(ps, st);
  }
  EXPECT_EQ(ps.at("frozen.W").value, before);
  EXPECT_EQ(st.m.count("frozen.W"), 0u);
  EXPECT_NE(ps.at("live.W").value, Mat<float>::Zero(2, 3));
}

TEST(ClipGradNorm, ScalesToTheLimit) {
  ParamStore<double> ps;
  ps.Add("a", 1, 1).grad(0, 0) = 3.0;
  ps.Add("b", 1, 1).grad(0, 0) = 4.0;
  EXPECT_DOUBLE_EQ(ClipGradNorm(ps, 1.0), 5.0);
  EXPECT_NEAR(GradNorm(ps), 1.0, 1e-12);
}

TEST(GradCheck, LinearWithCrossEntropyIsTight) {
  Rng rng(16);
  ParamStore<double> ps;
  Linear<double> lin("lin", 4, 3);
  lin.AddParams(ps, rng);
  const MatD x = RandomMat(4, 6, rng);
  const std::vector<int> labels = {0, 2, 1, 1, 0, 2};
  auto loss = [&](ParamStore<double>& p, bool grad) {
    const MatD logits = lin.Forward(p, x);
    auto r = SoftmaxCrossEntropy<double>(logits, labels, 1.0 / 6);
    if (grad) lin.Backward(p, x, r.grad);
    return r.loss_sum / 6;
  };
  EXPECT_LT(GradCheck(loss, ps).worst, 1e-7);
}

TEST(GradCheck, CorruptedGradientFails) {
  Rng rng(17);
  ParamStore<double> ps;
  Linear<double> lin("lin", 4, 3);
  lin.AddParams(ps, rng);
  const MatD x = RandomMat(4, 6, rng, 3.0);
  const std::vector<int> labels = {0, 2, 1, 1, 0, 2};
  auto loss = [&](ParamStore<double>& p, bool grad) {
    auto r = SoftmaxCrossEntropy<double>(lin.Forward(p, x), labels, 1.0);
    if (grad) lin.Backward(p, x, MatD(1.01 * r.grad));
    return r.loss_sum;
  };
  EXPECT_FALSE(GradCheck(loss, ps).Passed(1e-5));
}

TEST(GradCheck, NondeterministicClosureIsRejected) {
  ParamStore<double> ps;
  ps.Add("w", 1, 1);
  int calls = 0;
  auto loss = [&](ParamStore<double>&, bool) { return double(++calls); };
  EXPECT_THROW(GradCheck(loss, ps), Error);
}

TEST(Checkpoint, RoundTripIsBitwiseStable) {
  Rng rng(18);
  ParamStore<float> ps;
  Lstm<float>("a", 3, 2).AddParams(ps, rng);
  Linear<float>("z", 2, 2).AddParams(ps, rng, false);
  const auto dir = std::filesystem::temp_directory_path();
  const std::string p1 = (dir / "pvad_ck1.bin").string(), p2 = (dir / "pvad_ck2.bin").string();
  CheckpointInfo info;
  info.step = 42;
  info.metadata = {{"K", 4}, {"frozen", true}};
  SaveCheckpoint(p1, ps, info);
  CheckpointInfo back;
  const auto loaded = LoadCheckpoint<float>(p1, &back);
  SaveCheckpoint(p2, loaded, back);
  EXPECT_EQ(SerializeCheckpoint(ps, info), SerializeCheckpoint(loaded, back));
  EXPECT_EQ(back.step, 42);
  EXPECT_FALSE(loaded.at("z.W").trainable);
  EXPECT_EQ(loaded.at("a.Wx").value, ps.at("a.Wx").value);
  EXPECT_THROW(LoadCheckpoint<double>(p1), Error);
}

TEST(ParamStore, ShapeMismatchNamesTheParameter) {
  Rng rng(19);
  ParamStore<double> ps;
  Lstm<double> lstm("enc.layer0", 3, 2);
  lstm.AddParams(ps, rng);
  ps.at("enc.layer0.Wh").value.resize(8, 3);
  try {
    lstm.Forward(ps, RandomMat(3, 2, rng));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("enc.layer0.Wh"), std::string::npos);
  }
}

}  // namespace
}  // namespace pvad::nn
