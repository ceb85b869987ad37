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

// Adam with bias correction, and global-norm gradient clipping.

#pragma once

#include <cmath>
#include <map>
#include <string>

#include "pvad/nn/params.hpp"

namespace pvad::nn {

template <typename S>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Mat<S>> m, v;
};

/// One Adam update over every trainable entry. Frozen entries are never
/// touched, not even their moment buffers.
template <typename S>
void AdamStep(ParamStore<S>& ps, AdamState<S>& st) {
  st.step += 1;
  const double c1 = 1.0 - std::pow(st.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, double(st.step));
  for (auto& [name, p] : ps) {
    if (!p.trainable) continue;
    auto [mit, fresh] = st.m.try_emplace(name);
    Mat<S>& m = mit->second;
    Mat<S>& v = st.v[name];
    if (fresh) {
      m = Mat<S>::Zero(p.value.rows(), p.value.cols());
      v = Mat<S>::Zero(p.value.rows(), p.value.cols());
    }
    m = S(st.beta1) * m + S(1 - st.beta1) * p.grad;
    v = S(st.beta2) * v + S(1 - st.beta2) * p.grad.cwiseAbs2();
    const auto m_hat = m.array() / S(c1);
    const auto v_hat = v.array() / S(c2);
    p.value.array() -= S(st.lr) * m_hat / (v_hat.sqrt() + S(st.eps));
  }
}

template <typename S>
double GradNorm(const ParamStore<S>& ps) {
  double sq = 0.0;
  for (const auto& [_, p] : ps)
    if (p.trainable) sq += p.grad.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

/// Rescales trainable gradients so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
template <typename S>
double ClipGradNorm(ParamStore<S>& ps, double max_norm) {
  const double norm = GradNorm(ps);
  if (max_norm > 0 && norm > max_norm) {
    const S scale = S(max_norm / norm);
    for (auto& [_, p] : ps)
      if (p.trainable) p.grad *= scale;
  }
  return norm;
}

}  // namespace pvad::nn
