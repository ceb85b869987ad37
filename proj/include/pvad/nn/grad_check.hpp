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

// Central finite-difference gradient checker (double precision).

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "pvad/nn/params.hpp"

namespace pvad::nn {

struct GradCheckReport {
  std::map<std::string, double> max_rel_error;
  double worst = 0.0;
  std::string worst_param;

  bool Passed(double tol) const { return worst < tol; }
};

/// `loss(params, want_grad)` must return the loss and, when want_grad is
/// set, accumulate analytic gradients into params. It has to be
/// deterministic; two plain evaluations that disagree raise an error.
/// `max_per_param` bounds how many entries of each tensor are probed
/// (spread evenly); 0 probes all of them.
inline GradCheckReport GradCheck(
    const std::function<double(ParamStore<double>&, bool)>& loss,
    ParamStore<double>& params, double step = 1e-6,
    Eigen::Index max_per_param = 0) {
  const double l0 = loss(params, false);
  const double l1 = loss(params, false);
  if (l0 != l1)
    throw NumericError("grad_check: loss closure is not deterministic");
  params.ZeroGrad();
  loss(params, true);

  GradCheckReport report;
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    const Eigen::Index n = p.value.size();
    const Eigen::Index stride =
        (max_per_param > 0 && n > max_per_param) ? n / max_per_param : 1;
    double worst = 0.0;
    for (Eigen::Index k = 0; k < n; k += stride) {
      double& w = p.value.data()[k];
      const double saved = w;
      w = saved + step;
      const double lp = loss(params, false);
      w = saved - step;
      const double lm = loss(params, false);
      w = saved;
      const double numeric = (lp - lm) / (2 * step);
      const double analytic = p.grad.data()[k];
      const double rel = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
    report.max_rel_error[name] = worst;
    if (worst >= report.worst) {
      report.worst = worst;
      report.worst_param = name;
    }
  }
  return report;
}

}  // namespace pvad::nn
