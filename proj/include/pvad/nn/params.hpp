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

// Named parameter collection with gradient slots and trainable flags.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>

#include "pvad/common.hpp"

namespace pvad::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct Param {
  Mat<S> value;
  Mat<S> grad;
  bool trainable = true;
};

/// Parameters keyed by path ("pvad.lstm0.Wx"). Iteration order is the
/// lexicographic key order, which fixes the order of every reduction.
template <typename S>
class ParamStore {
 public:
  using Map = std::map<std::string, Param<S>>;

  Param<S>& Add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                bool trainable = true) {
    Param<S>& p = params_[name];
    p.value = Mat<S>::Zero(rows, cols);
    p.grad = Mat<S>::Zero(rows, cols);
    p.trainable = trainable;
    return p;
  }

  bool contains(const std::string& name) const {
    return params_.count(name) != 0;
  }

  Param<S>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("missing parameter " + name);
    return it->second;
  }
  const Param<S>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("missing parameter " + name);
    return it->second;
  }

  /// Value of `name`, checked against the expected shape.
  const Mat<S>& Expect(const std::string& name, Eigen::Index rows,
                       Eigen::Index cols) const {
    const Param<S>& p = at(name);
    if (p.value.rows() != rows || p.value.cols() != cols)
      throw DataError("shape mismatch for " + name + ": have " +
                      std::to_string(p.value.rows()) + "x" +
                      std::to_string(p.value.cols()) + ", expected " +
                      std::to_string(rows) + "x" + std::to_string(cols));
    return p.value;
  }

  void ZeroGrad() {
    for (auto& [_, p] : params_) p.grad.setZero();
  }

  void SetTrainable(bool trainable) {
    for (auto& [_, p] : params_) p.trainable = trainable;
  }

  /// Moves every entry whose key starts with `prefix` into a new store.
  ParamStore Extract(const std::string& prefix) const {
    ParamStore out;
    for (const auto& [name, p] : params_)
      if (name.rfind(prefix, 0) == 0) out.params_[name] = p;
    return out;
  }

  void Merge(const ParamStore& other) {
    for (const auto& [name, p] : other.params_) params_[name] = p;
  }

  template <typename T>
  ParamStore<T> Cast() const {
    ParamStore<T> out;
    for (const auto& [name, p] : params_) {
      Param<T>& q = out.Add(name, p.value.rows(), p.value.cols(), p.trainable);
      q.value = p.value.template cast<T>();
    }
    return out;
  }

  std::size_t NumScalars() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += std::size_t(p.value.size());
    return n;
  }

  /// Adds `scale * other.grad` into this store's gradients.
  void AccumulateGrad(const ParamStore& other, S scale = S(1)) {
    for (auto& [name, p] : params_) {
      auto it = other.params_.find(name);
      if (it != other.params_.end()) p.grad += scale * it->second.grad;
    }
  }

  bool AllFinite() const {
    for (const auto& [_, p] : params_)
      if (!p.value.allFinite()) return false;
    return true;
  }

  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  Map params_;
};

/// Fills every entry with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename S>
void InitUniform(Param<S>& p, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(std::max<Eigen::Index>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i)
      p.value(i, j) = S(dist(rng));
}

}  // namespace pvad::nn
