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

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mbvo/scene_sim.hpp"
#include "mbvo/trajectory.hpp"

namespace mbvo {

class InsufficientOverlap : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Index pairs (estimate, truth) matched by nearest timestamp within max_dt.
std::vector<std::pair<std::size_t, std::size_t>> associate_timestamps(const Trajectory& est,
                                                                      const Trajectory& truth,
                                                                      double max_dt);

/// Matched pose pairs (estimate, truth).
struct PosePairs {
  std::vector<Pose> est;
  std::vector<Pose> truth;
};
PosePairs match_poses(const Trajectory& est, const Trajectory& truth, double max_dt);

/// T_r with est_t * T_r ~ truth_t: chordal mean of the relative rotations and
/// least-squares translation. Throws InsufficientOverlap below 3 pairs.
Pose register_trajectory(const PosePairs& pairs);

/// Sum over pairs of |log(G^-1 P T)|^2, the objective register_trajectory targets.
double registration_residual(const PosePairs& pairs, const Pose& T);

enum class Alignment { None, Rigid };

/// Translation RMSE after optional rigid (Horn, no scale) alignment of the
/// estimate positions onto the truth positions.
double compute_ate(const PosePairs& pairs, Alignment alignment);

struct RelativePoseError {
  double rotation_rmse = 0.0;     // radians
  double translation_rmse = 0.0;  // meters
};
/// Consecutive-pair relative pose error. Throws InsufficientOverlap below 2 pairs.
RelativePoseError compute_rpe(const PosePairs& pairs);

struct MaxDrift {
  double translation = 0.0;
  /// Max absolute intrinsic ZYX angle error: (yaw, pitch, roll), radians.
  Vec3 rotation = Vec3::Zero();
};
/// Maximum deviation of each estimate from its truth pose.
MaxDrift compute_max_drift(const PosePairs& pairs);

/// Intrinsic ZYX angles (yaw about z, pitch about y, roll about x).
Vec3 euler_zyx(const Mat3& R);

/// Fraction of (estimated cluster, true body) labels that agree under the
/// one-to-one cluster-to-body mapping maximizing agreement. Negative
/// estimated ids (outliers) never agree.
double segmentation_accuracy(std::span<const std::pair<int, int>> labels);

struct MetricReport {
  double ate_rmse = 0.0;
  double rpe_trans_rmse = 0.0;
  double rpe_rot_rmse = 0.0;
  double max_drift_trans = 0.0;
  Vec3 max_drift_rot = Vec3::Zero();
  std::optional<double> segmentation_accuracy;
  /// Named extra entries, e.g. per-cluster metrics.
  std::vector<std::pair<std::string, double>> extra;
  /// Named text entries, e.g. "missing" markers.
  std::vector<std::pair<std::string, std::string>> notes;
};

/// Per-frame cluster id of every feature, parallel to the frame's features.
struct FrameLabels {
  int frame = -1;
  std::vector<int> feature_clusters;
};

struct BodyEvaluation {
  int body = 0;
  /// Estimated cluster mapped to this body; empty when it was never tracked.
  std::optional<int> cluster;
  /// Metrics after right-multiplying the estimate by the registration T_r.
  MetricReport report;
  Pose registration;
  double path_length = 0.0;
  std::size_t pairs = 0;
};

struct SequenceEvaluation {
  /// Camera metrics without alignment, plus the final-frame segmentation accuracy.
  MetricReport camera;
  double camera_path_length = 0.0;
  std::vector<BodyEvaluation> bodies;
  /// Estimated cluster id to true body (0 = static) under the overlap matching.
  std::map<int, int> cluster_to_body;
};

/// Summed translation increments of the truth poses.
double path_length(std::span<const Pose> poses);

/// Full evaluation of a run against simulator ground truth. Clusters are mapped
/// to bodies by maximum feature overlap over all frames (one-to-one).
SequenceEvaluation evaluate_sequence(const Trajectory& camera,
                                     const std::map<int, Trajectory>& clusters,
                                     const std::vector<FrameLabels>& labels,
                                     const sim::GroundTruth& truth, double max_dt);

/// Flattens a sequence evaluation into one report (camera keys plus
/// body_<b>_* extras, "missing" notes for untracked bodies).
MetricReport flatten(const SequenceEvaluation& e);

void write_report_text(std::ostream& out, const MetricReport& r);
void write_report_json(std::ostream& out, const MetricReport& r);

}  // namespace mbvo
