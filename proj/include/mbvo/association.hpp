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

#include <optional>
#include <span>
#include <vector>

#include "mbvo/geometry.hpp"
#include "mbvo/landmark.hpp"
#include "mbvo/observations.hpp"

namespace mbvo {

struct AssociationParams {
  /// Squared Mahalanobis gate on predicted stereo measurements.
  double gate = 4.0;
  /// Half-size (pixels) of the left-image window searched around each feature.
  double window_px = 40.0;
  /// Minimum normalized Hamming similarity for any accepted match.
  double similarity_floor = 0.6;
  /// Box association is accepted while the entropy stays below this.
  double entropy_threshold = 1.0;
  /// Logarithm base for the entropy; e by default.
  double entropy_log_base = 0.0;
};

/// Keeps the world-frame covariance of the least uncertain camera-frame
/// triangulation: replaced when det(sigma_cam) is below the cached determinant.
/// The first observation is always stored.
void update_best_covariance(Landmark& landmark, const Covariance3& sigma_cam,
                            const Mat3& camera_rotation);

struct Prediction {
  int landmark_id = -1;
  int cluster_id = kStaticCluster;
  StereoMeasurement zeta;
  /// Image-space covariance J_pi Sigma J_pi^T.
  Covariance3 gamma = Covariance3::Identity();
  Descriptor descriptor;
};

/// Predicted measurement of p + displacement seen from cam_from_world. Returns
/// nullopt when the predicted point is behind the camera (BehindCamera).
std::optional<Prediction> predict_landmark(const Landmark& landmark, const Vec3& world_position,
                                           const Vec3& displacement, const Pose& cam_from_world,
                                           const StereoIntrinsics& K,
                                           const GeometryLimits& limits = {});

/// Gated probabilistic matching of features to dynamic landmark predictions.
/// Entry k of the result is the matched landmark id or -1. Only features whose
/// entry in `taken` is false are considered.
std::vector<int> associate_features(std::span<const Prediction> predictions,
                                    std::span<const Feature> features,
                                    const std::vector<bool>& taken, const AssociationParams& params);

/// Nearest-neighbour descriptor matching inside the pixel window, no Mahalanobis
/// gate. Used for static landmarks.
std::vector<int> associate_nearest(std::span<const Prediction> predictions,
                                   std::span<const Feature> features,
                                   const std::vector<bool>& taken, const AssociationParams& params);

struct BoxAssociation {
  /// Cluster id per box, -1 when unassociated.
  std::vector<int> box_to_cluster;
  /// Entropy of the accepted cluster per box (NaN when unassociated).
  std::vector<double> box_entropy;
  /// Every evaluated cluster with its entropy and preferred box.
  struct Candidate {
    int cluster_id;
    int best_box;
    double entropy;
    double best_mass;
  };
  std::vector<Candidate> candidates;
};

double shannon_entropy(std::span<const double> masses, double log_base = 0.0);

/// Entropy-gated box-to-cluster association from predicted features.
BoxAssociation associate_boxes(std::span<const SemanticBox> boxes,
                               std::span<const Prediction> predictions,
                               const AssociationParams& params);

/// Brute-force descriptor matching between a cluster's unmatched landmarks and
/// free features inside an associated box. Only mutual, unique best pairs above
/// the similarity floor are returned as (feature index, landmark id).
std::vector<std::pair<int, int>> box_interior_rematch(
    const SemanticBox& box, std::span<const Prediction> cluster_landmarks,
    std::span<const Feature> features, const std::vector<bool>& taken,
    const AssociationParams& params);

}  // namespace mbvo
