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
#include <string>
#include <vector>

#include "mbvo/geometry.hpp"
#include "mbvo/landmark.hpp"
#include "mbvo/observations.hpp"

namespace mbvo {

/// Which unary factors enter the CRF (ablation switch).
enum class UnaryTerms { k2D, k2D3D, kFull };

/// Accepts "2d", "2d3d" and "full". Throws std::invalid_argument otherwise.
UnaryTerms parse_unary_terms(const std::string& s);
std::string to_string(UnaryTerms t);

enum class LabelKind { Static, Cluster, NewBox, Outlier };

struct Label {
  LabelKind kind = LabelKind::Outlier;
  /// Live cluster id for Cluster labels, 0 for Static.
  int cluster_id = -1;
  /// Source box for NewBox labels.
  int box_index = -1;
};

/// Center and scalar spread of a cluster's point cloud.
struct SpatialModel {
  Vec3 center = Vec3::Zero();
  double dimension = 1.0;
};

/// Linear-interpolated percentile, q in [0, 1]. `values` must be non-empty.
double percentile(std::vector<double> values, double q);

/// Per-axis median as center; dimension is the norm of the per-axis 30th-70th
/// percentile ranges, floored at min_dimension. Throws on an empty cloud.
SpatialModel spatial_model(std::span<const Vec3> points, double min_dimension = 0.05);

// The unary functions below return log-probabilities, unnormalized.

/// Detection term: labels whose box contains the pixel share eta, the rest
/// share 1 - eta. box_label maps each box to a label index or -1.
VecX unary_2d(const Vec2& pixel, std::span<const SemanticBox> boxes,
              std::span<const int> box_label, int label_count, double eta);

/// Spatial term. Static labels are neutral (log 1), outlier gets log_p_out,
/// labels without a model are neutral too.
VecX unary_3d(const Vec3& point, const Covariance3& sigma, std::span<const Label> labels,
              std::span<const std::optional<SpatialModel>> models, double log_p_out);

struct MotionEvidence {
  StereoMeasurement z;
  Pose cam_from_world;
};

/// Reprojection term. transports[l][e] maps the point from the current frame
/// into the frame of evidence e under label l's trajectory (identity for the
/// static label); an empty vector marks a label without trajectory, which
/// receives the best value among labels that have one.
VecX unary_motion(const Vec3& point, std::span<const MotionEvidence> evidence,
                  std::span<const std::vector<Pose>> transports, const Covariance3& sigma_z,
                  const StereoIntrinsics& K);

/// Sum of the enabled log terms turned into per-node normalized energies
/// -log p. Empty vectors are treated as absent. Throws NonFiniteEnergy.
VecX combine_unaries(const VecX& log_2d, const VecX& log_3d, const VecX& log_motion,
                     UnaryTerms terms);

class NonFiniteEnergy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gaussian smoothing kernel exp(-|pi - pj|^2 / bandwidth^2).
double pairwise_kernel(const Vec3& pi, const Vec3& pj, double bandwidth = 1.0);
/// Potts pairwise energy (without the alpha weight).
double pairwise_energy(int label_i, int label_j, const Vec3& pi, const Vec3& pj,
                       double bandwidth = 1.0);

struct CrfProblem {
  /// N x M energies, -log p per node and label.
  MatX unary;
  std::vector<Vec3> positions;
  double alpha = 5.0;
  double bandwidth = 1.0;
};

struct MeanFieldResult {
  MatX marginals;
  std::vector<int> labels;
  /// Free energy before the first sweep and after every sweep.
  std::vector<double> free_energy;
};

/// Energy of a discrete labeling.
double crf_energy(const CrfProblem& problem, std::span<const int> labels);
/// Mean-field free energy of factorized marginals Q (N x M).
double free_energy(const CrfProblem& problem, const MatX& Q);

/// Dense mean-field inference with exact O(N^2) messages. Nodes are updated
/// in sequence within each sweep. Ties in the argmax pick the lower label.
/// With label_restarts the sweeps are repeated from one start per label that
/// leans every node towards it, and the run whose MAP labeling has the lowest
/// CRF energy is returned (the unary-initialized run wins ties). Sweeps stop
/// early once no marginal moves by more than 1e-12.
MeanFieldResult mean_field_infer(const CrfProblem& problem, int iterations = 10,
                                 bool label_restarts = true, bool record_free_energy = true);

inline constexpr int kSpawnCluster = -2;

struct LabelMatch {
  /// Per label: cluster id, kSpawnCluster, or kOutlierCluster.
  std::vector<int> label_cluster;
  int spawned = 0;
};

/// Kuhn-Munkres matching of inferred labels to existing dynamic clusters with
/// cost -(shared landmark ids). The static label always maps to cluster 0 and
/// the outlier label to kOutlierCluster. `node_labels` and `node_landmarks`
/// are per node; landmark id -1 marks a node not yet in the map.
LabelMatch match_labels(std::span<const Label> labels, std::span<const int> node_labels,
                        std::span<const int> node_landmarks,
                        const std::map<int, std::set<int>>& clusters, int min_new_cluster_size = 8);

struct Assignment {
  int cluster = kStaticCluster;
  int weight = 1;
};

/// Hysteresis on cluster membership: agreement raises the weight (capped),
/// disagreement lowers it, and at zero the landmark adopts `observed` with
/// weight 1.
Assignment update_assignment_weight(Assignment current, int observed, int w_max = 100);

}  // namespace mbvo
