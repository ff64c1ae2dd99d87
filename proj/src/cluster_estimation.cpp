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


#include <map>

#include "mbvo/estimation.hpp"
#include "reduced_system.hpp"

namespace mbvo {

using detail::ReducedSystem;
using detail::Step;

WnoaResidual wnoa_residual(const ClusterTrackState& a, const ClusterTrackState& b) {
  const double dt = b.timestamp - a.timestamp;
  WnoaResidual r;
  r.e.head<3>() = b.pose.translation() - a.pose.translation() - dt * a.velocity;
  r.e.tail<3>() = b.velocity - a.velocity;
  r.J.setZero();
  r.J.block<3, 3>(0, 0) = -Mat3::Identity();
  r.J.block<3, 3>(0, 3) = -dt * Mat3::Identity();
  r.J.block<3, 3>(3, 3) = -Mat3::Identity();
  r.J.block<3, 3>(0, 6) = Mat3::Identity();
  r.J.block<3, 3>(3, 9) = Mat3::Identity();
  return r;
}

namespace {

constexpr int kStateDim = 9;  // [t, w, v]
constexpr double kInvalidResidualCost = 1e12;

struct ClusterLm {
  ClusterProblem& p;
  const std::map<int, Pose>& cameras;
  const HuberKernel& huber;
  Mat3 W;
  std::map<int, int> state_of_frame;
  std::vector<std::size_t> obs;
  std::map<int, int> point_index;
  std::vector<int> point_ids;
  std::vector<bool> fixed;
  std::vector<ClusterTrackState> saved_states;
  std::map<int, Vec3> saved_points;

  ClusterLm(ClusterProblem& problem, const std::map<int, Pose>& cams, const HuberKernel& h)
      : p(problem), cameras(cams), huber(h), W(problem.sigma_z.ldlt().solve(Mat3::Identity())) {
    for (std::size_t k = 0; k < p.states.size(); ++k)
      state_of_frame[p.states[k].frame] = static_cast<int>(k);
    std::map<int, int> count;
    std::vector<int> per_state(p.states.size(), 0);
    auto usable = [&](const ClusterObservation& o) {
      return state_of_frame.count(o.frame) && cameras.count(o.frame) &&
             p.body_points.count(o.landmark);
    };
    for (const auto& o : p.observations)
      if (usable(o)) ++count[o.landmark];
    for (std::size_t i = 0; i < p.observations.size(); ++i) {
      const auto& o = p.observations[i];
      if (!usable(o) || count[o.landmark] < 2) continue;
      obs.push_back(i);
      ++per_state[state_of_frame[o.frame]];
      if (point_index.emplace(o.landmark, static_cast<int>(point_ids.size())).second)
        point_ids.push_back(o.landmark);
    }
    fixed.assign(kStateDim * p.states.size(), false);
    for (std::size_t k = 0; k < p.states.size(); ++k) {
      const bool hold_pose = k == 0 && p.fix_first_pose;
      const bool hold_rotation = hold_pose || per_state[k] < p.min_rotation_observations;
      for (int d = 0; d < 3; ++d) {
        fixed[kStateDim * k + d] = hold_pose;
        fixed[kStateDim * k + 3 + d] = hold_rotation;
      }
    }
  }

  StereoResidual residual(std::size_t i) const {
    const auto& o = p.observations[i];
    return cluster_residual(cameras.at(o.frame), p.states[state_of_frame.at(o.frame)].pose,
                            p.body_points.at(o.landmark), o.z, p.K);
  }

  double cost() const {
    double c = motion_prior_cost(p);
    for (std::size_t i : obs) {
      const auto r = residual(i);
      c += r.valid ? huber.cost(r.r.dot(W * r.r)) : kInvalidResidualCost;
    }
    return c;
  }

  ReducedSystem linearize() const {
    ReducedSystem sys(static_cast<int>(kStateDim * p.states.size()),
                      static_cast<int>(point_ids.size()));
    sys.fixed = fixed;
    for (std::size_t i : obs) {
      const auto r = residual(i);
      if (!r.valid) continue;
      const auto& o = p.observations[i];
      sys.add_reprojection(kStateDim * state_of_frame.at(o.frame), point_index.at(o.landmark), r,
                           W, huber.weight(r.r.dot(W * r.r)));
    }
    for (std::size_t k = 0; k + 1 < p.states.size(); ++k) {
      const auto& a = p.states[k];
      const auto& b = p.states[k + 1];
      const double dt = b.timestamp - a.timestamp;
      const Mat6 info = wnoa_factor(dt, p.Q).information;
      const WnoaResidual w = wnoa_residual(a, b);
      const Vec6& e = w.e;
      const auto& J = w.J;
      const Eigen::Matrix<double, 12, 12> H = J.transpose() * info * J;
      const Eigen::Matrix<double, 12, 1> g = -J.transpose() * info * e;
      const int oa = static_cast<int>(kStateDim * k), ob = oa + kStateDim;
      const int idx[4] = {oa, oa + 6, ob, ob + 6};
      for (int i = 0; i < 4; ++i) {
        sys.b.segment<3>(idx[i]) += g.segment<3>(3 * i);
        for (int j = 0; j < 4; ++j) sys.H.block<3, 3>(idx[i], idx[j]) += H.block<3, 3>(3 * i, 3 * j);
      }
    }
    return sys;
  }

  void apply(const Step& s) {
    for (std::size_t k = 0; k < p.states.size(); ++k) {
      const auto d = s.state.segment<kStateDim>(static_cast<Eigen::Index>(kStateDim * k));
      p.states[k].pose = apply_increment(p.states[k].pose, d.head<6>());
      p.states[k].velocity += d.tail<3>();
    }
    for (std::size_t i = 0; i < point_ids.size(); ++i) p.body_points.at(point_ids[i]) += s.points[i];
  }

  void save() {
    saved_states = p.states;
    saved_points.clear();
    for (int id : point_ids) saved_points[id] = p.body_points.at(id);
  }

  void restore() {
    p.states = saved_states;
    for (const auto& [id, v] : saved_points) p.body_points.at(id) = v;
  }
};

}  // namespace

double motion_prior_cost(const ClusterProblem& problem) {
  double c = 0.0;
  for (std::size_t k = 0; k + 1 < problem.states.size(); ++k) {
    const auto& a = problem.states[k];
    const auto& b = problem.states[k + 1];
    const Vec6 e = wnoa_residual(a, b).e;
    c += e.dot(wnoa_factor(b.timestamp - a.timestamp, problem.Q).information * e);
  }
  return c;
}

double cluster_cost(const ClusterProblem& problem, const std::map<int, Pose>& cameras,
                    const HuberKernel& huber) {
  return ClusterLm(const_cast<ClusterProblem&>(problem), cameras, huber).cost();
}

SolveSummary optimize_cluster(ClusterProblem& problem, const std::map<int, Pose>& cameras,
                              const SolverOptions& options) {
  for (std::size_t k = 1; k < problem.states.size(); ++k)
    if (problem.states[k].frame <= problem.states[k - 1].frame)
      throw std::invalid_argument("optimize_cluster: states must be in increasing frame order");
  ClusterLm lm(problem, cameras, options.huber);
  return detail::levenberg_marquardt(lm, options);
}

}  // namespace mbvo
