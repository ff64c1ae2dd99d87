// Copyright 2026 The mbvo Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Test-only oracles: central finite differences and seeded generators.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <functional>
#include <random>

#include "mbvo/geometry.hpp"

namespace mbvo::testing {

/// Central-difference Jacobian of f at x.
template <int Rows, int Cols>
Eigen::Matrix<double, Rows, Cols> numeric_jacobian(
    const std::function<Eigen::Matrix<double, Rows, 1>(const Eigen::Matrix<double, Cols, 1>&)>& f,
    const Eigen::Matrix<double, Cols, 1>& x, double h = 1e-6) {
  Eigen::Matrix<double, Rows, Cols> J;
  for (int c = 0; c < Cols; ++c) {
    Eigen::Matrix<double, Cols, 1> xp = x, xm = x;
    xp(c) += h;
    xm(c) -= h;
    J.col(c) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

inline Eigen::MatrixXd numeric_jacobian_dynamic(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (int c = 0; c < x.size(); ++c) {
    Eigen::VectorXd xp = x, xm = x;
    xp(c) += h;
    xm(c) -= h;
    J.col(c) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// Frobenius relative error, floored so that all-zero references compare absolutely.
inline double relative_error(const Eigen::MatrixXd& actual, const Eigen::MatrixXd& expected) {
  return (actual - expected).norm() / std::max(expected.norm(), 1.0);
}

inline Vec3 random_vec3(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return Vec3{u(rng), u(rng), u(rng)};
}

inline Pose random_pose(std::mt19937_64& rng, double max_angle, double max_trans) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec3 axis{n(rng), n(rng), n(rng)};
  axis.normalize();
  const double angle = u(rng) * max_angle;
  return {so3_exp(axis * angle), random_vec3(rng, -max_trans, max_trans)};
}

inline Covariance3 random_spd(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat3 A;
  for (int i = 0; i < 9; ++i) A(i) = n(rng);
  return scale * (A * A.transpose() + 0.1 * Mat3::Identity());
}

}  // namespace mbvo::testing
