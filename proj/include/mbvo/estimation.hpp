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


#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "mbvo/geometry.hpp"

namespace mbvo {

using Mat36 = Eigen::Matrix<double, 3, 6>;

/// Pose increment layout [dt; w]: t' = t + dt, R' = exp(w) R.
Pose apply_increment(const Pose& P, const Vec6& delta);
/// a boxminus b, so that apply_increment(b, pose_difference(a, b)) == a.
Vec6 pose_difference(const Pose& a, const Pose& b);

/// Huber penalty applied to the squared Mahalanobis norm e^2 of a residual:
/// e^2 inside the threshold, 2 delta e - delta^2 outside.
struct HuberKernel {
  double delta = 2.4;
  double cost(double squared_norm) const;
  /// IRLS weight d(cost)/d(e^2).
  double weight(double squared_norm) const;
};

struct SolverOptions {
  int max_iters = 10;
  double relative_tolerance = 1e-6;
  double initial_lambda = 1e-4;
  /// Damping attempts per linearization before giving up.
  int max_rejections = 8;
  HuberKernel huber;
};

struct SolveSummary {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  /// Cost after every accepted step, starting with the initial cost.
  std::vector<double> cost_history;
  bool converged = false;
  /// The reduced system was singular beyond damping; states were left untouched
  /// by the failing step.
  bool rank_deficient = false;
};

/// Stereo reprojection residual r = z - pi(X) and its Jacobians with respect
/// to the pose increment and the point.
struct StereoResidual {
  Vec3 r = Vec3::Zero();
  Mat36 J_pose = Mat36::Zero();
  Mat3 J_point = Mat3::Zero();
  bool valid = false;
};

/// Static landmark seen from a camera-to-world pose; J_pose is with respect to
/// the camera increment.
StereoResidual static_residual(const Pose& camera, const Vec3& point, const StereoMeasurement& z,
                               const StereoIntrinsics& K);
/// Body-frame point of a cluster; J_pose is with respect to the cluster pose
/// increment and J_point to the body point. The camera is held fixed.
StereoResidual cluster_residual(const Pose& camera, const Pose& cluster, const Vec3& body,
                                const StereoMeasurement& z, const StereoIntrinsics& K);

class NonPositiveDt : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// White-noise-on-acceleration prior over (translation, velocity).
struct WnoaFactor {
  Mat6 A;
  Mat6 information;
};
WnoaFactor wnoa_factor(double dt, const Mat3& Q);
/// Q-hat itself, [[dt^3/3, dt^2/2], [dt^2/2, dt]] (x) Q.
Mat6 wnoa_covariance(double dt, const Mat3& Q);

/// Quadratic marginalization prior over camera increments of `frames`,
/// expressed at the linearization poses: cost = d^T H d - 2 beta^T d with
/// d = pose_difference(x, x*) stacked per frame.
struct InformationPrior {
  std::vector<int> frames;
  MatX H;
  VecX beta;
  std::vector<Pose> linearization;

  bool empty() const { return frames.empty(); }
  /// Strong prior holding one frame at `pose` (gauge anchor).
  static InformationPrior anchor(int frame, const Pose& pose, double information = 1e8);
  VecX delta(const std::map<int, Pose>& poses) const;
  double cost(const std::map<int, Pose>& poses) const;
};

struct StaticObservation {
  int frame = -1;
  int landmark = -1;
  StereoMeasurement z;
};

struct StaticProblem {
  /// Camera-to-world poses keyed by frame id.
  std::map<int, Pose> cameras;
  /// World-frame static landmark positions.
  std::map<int, Vec3> landmarks;
  std::vector<StaticObservation> observations;
  std::set<int> fixed_frames;
  Covariance3 sigma_z = Covariance3::Identity();
  StereoIntrinsics K;
};

/// Robust reprojection cost plus prior cost. Landmarks observed fewer than
/// twice are left out, as in the optimizer.
double static_cost(const StaticProblem& problem, const InformationPrior& prior,
                   const HuberKernel& huber);

/// Windowed bundle adjustment over camera poses and static landmarks with the
/// marginalization prior. Landmarks with fewer than two observations are
/// neither optimized nor counted.
SolveSummary optimize_static(StaticProblem& problem, const InformationPrior& prior,
                             const SolverOptions& options = {});

/// Squared Mahalanobis norm of each observation's residual (infinity when
/// the point projects behind the camera), in observation order.
std::vector<double> observation_chi2(const StaticProblem& problem);

/// Dense Schur complement: keeps `keep`, eliminates `drop`. A singular
/// eliminated block is regularized with 1e-9 I and reported.
std::pair<MatX, VecX> schur_marginalize(const MatX& Lambda, const VecX& b,
                                        std::span<const int> keep, std::span<const int> drop,
                                        bool* regularized = nullptr);

struct Marginalization {
  InformationPrior prior;
  /// Landmarks eliminated together with the frame; the caller drops them.
  std::vector<int> removed_landmarks;
  bool regularized = false;
};

/// Removes `frame` from the problem's window. Its observations of landmarks
/// the newest frame still sees are simply dropped; landmarks the newest frame
/// does not see are marginalized along with the frame's pose.
Marginalization marginalize_frame(const StaticProblem& problem, int frame, int newest_frame,
                                  const InformationPrior& prior, const HuberKernel& huber = {});

struct ClusterTrackState {
  int frame = -1;
  double timestamp = 0.0;
  /// Body-to-world.
  Pose pose;
  /// World-frame linear velocity.
  Vec3 velocity = Vec3::Zero();
};

/// WNOA error between consecutive states, [t_b - t_a - dt v_a; v_b - v_a], and
/// its Jacobian with respect to (t_a, v_a, t_b, v_b). Rotation does not enter.
struct WnoaResidual {
  Vec6 e;
  Eigen::Matrix<double, 6, 12> J;
};
WnoaResidual wnoa_residual(const ClusterTrackState& a, const ClusterTrackState& b);

struct ClusterObservation {
  int frame = -1;
  int landmark = -1;
  StereoMeasurement z;
};

struct ClusterProblem {
  /// Per-frame states in increasing frame order.
  std::vector<ClusterTrackState> states;
  /// Member points in the body frame.
  std::map<int, Vec3> body_points;
  std::vector<ClusterObservation> observations;
  Covariance3 sigma_z = Covariance3::Identity();
  StereoIntrinsics K;
  Mat3 Q = 0.01 * Mat3::Identity();
  /// Holds the first state's pose (velocity stays free) to fix the gauge.
  bool fix_first_pose = true;
  /// Frames with fewer observations keep their rotation.
  int min_rotation_observations = 3;
};

double motion_prior_cost(const ClusterProblem& problem);
double cluster_cost(const ClusterProblem& problem, const std::map<int, Pose>& cameras,
                    const HuberKernel& huber);

/// Per-cluster optimization over the temporal track with fixed cameras.
SolveSummary optimize_cluster(ClusterProblem& problem, const std::map<int, Pose>& cameras,
                              const SolverOptions& options = {});

struct ClusterInit {
  Pose pose;
  /// Two principal variances coincide; the rotation fell back to identity.
  bool degenerate = false;
};

/// Centroid and principal axes (descending variance) of a point cloud.
ClusterInit init_cluster_pose(std::span<const Vec3> points);

struct Triangulation {
  Vec3 world = Vec3::Zero();
  Vec3 camera_point = Vec3::Zero();
  Covariance3 camera_cov = Covariance3::Identity();
};

/// Stereo triangulation into the world; nullopt on degenerate disparity.
std::optional<Triangulation> triangulate(const StereoMeasurement& z, const Pose& camera,
                                         const StereoIntrinsics& K, const Covariance3& sigma_z,
                                         const GeometryLimits& limits = {});

struct PoseTracking {
  Pose camera;
  std::vector<bool> inliers;
  int inlier_count = 0;
  SolveSummary summary;
};

/// Pose-only refinement of a camera against fixed world points, with rounds of
/// chi-square outlier rejection.
PoseTracking track_camera(const Pose& initial, std::span<const Vec3> points,
                          std::span<const StereoMeasurement> z, const Covariance3& sigma_z,
                          const StereoIntrinsics& K, const SolverOptions& options = {},
                          double chi2_threshold = 7.815, int rounds = 3);

}  // namespace mbvo
