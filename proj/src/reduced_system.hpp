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


// Normal equations with 3-D points eliminated by Schur complement. Shared by
// the static and cluster optimizers and by marginalization.
#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "mbvo/estimation.hpp"

namespace mbvo::detail {

using Mat63 = Eigen::Matrix<double, 6, 3>;

struct PointBlock {
  Mat3 H = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  /// (offset of a 6-wide pose block in the state vector, H_pose_point).
  std::vector<std::pair<int, Mat63>> coupling;

  void add_coupling(int offset, const Mat63& block);
};

struct ReducedSystem {
  ReducedSystem(int state_dim, int point_count)
      : H(MatX::Zero(state_dim, state_dim)),
        b(VecX::Zero(state_dim)),
        points(static_cast<std::size_t>(point_count)),
        fixed(static_cast<std::size_t>(state_dim), false) {}

  MatX H;
  VecX b;
  std::vector<PointBlock> points;
  /// Dimensions held at zero increment.
  std::vector<bool> fixed;

  /// Adds a weighted reprojection factor. pose_offset < 0 means the pose is
  /// constant, point < 0 that the point is constant.
  void add_reprojection(int pose_offset, int point, const StereoResidual& res, const Mat3& W,
                        double weight);
};

struct Step {
  VecX state;
  std::vector<Vec3> points;
};

/// Levenberg-Marquardt step with multiplicative diagonal damping; nullopt if
/// the damped reduced system is singular.
std::optional<Step> solve(const ReducedSystem& sys, double lambda);

/// Eliminates every point without damping; singular point blocks get 1e-9 I.
std::pair<MatX, VecX> eliminate_points(const ReducedSystem& sys, bool* regularized);

}  // namespace mbvo::detail

namespace mbvo::detail {

/// Damped Gauss-Newton loop. P provides cost(), linearize() -> ReducedSystem,
/// apply(const Step&), save() and restore().
template <class P>
SolveSummary levenberg_marquardt(P& problem, const SolverOptions& options) {
  SolveSummary s;
  double cost = problem.cost();
  s.initial_cost = cost;
  s.cost_history.push_back(cost);
  double lambda = options.initial_lambda;
  for (int it = 0; it < options.max_iters; ++it) {
    if (cost <= 0.0) {
      s.converged = true;
      break;
    }
    const ReducedSystem sys = problem.linearize();
    if (it == 0 && !solve(sys, 0.0)) {
      s.rank_deficient = true;
      break;
    }
    bool accepted = false, solved_any = false;
    double new_cost = cost;
    for (int attempt = 0; attempt <= options.max_rejections; ++attempt) {
      const auto step = solve(sys, lambda);
      if (!step) {
        lambda *= 10.0;
        continue;
      }
      solved_any = true;
      problem.save();
      problem.apply(*step);
      new_cost = problem.cost();
      if (new_cost < cost) {
        accepted = true;
        break;
      }
      problem.restore();
      lambda *= 10.0;
    }
    if (!accepted) {
      // No damped step lowers the cost: a (local) minimum within precision.
      s.converged = solved_any;
      break;
    }
    ++s.iterations;
    const double rel = (cost - new_cost) / cost;
    cost = new_cost;
    s.cost_history.push_back(cost);
    lambda = std::max(lambda / 10.0, 1e-12);
    if (rel < options.relative_tolerance) {
      s.converged = true;
      break;
    }
  }
  s.final_cost = cost;
  return s;
}

}  // namespace mbvo::detail
