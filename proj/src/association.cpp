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


#include "mbvo/association.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mbvo {

void update_best_covariance(Landmark& landmark, const Covariance3& sigma_cam,
                            const Mat3& camera_rotation) {
  const double det = sigma_cam.determinant();
  if (landmark.has_covariance() && !(det < landmark.best_det)) return;
  Covariance3 world = camera_rotation * sigma_cam * camera_rotation.transpose();
  landmark.best_cov = 0.5 * (world + world.transpose());
  landmark.best_det = det;
}

std::optional<Prediction> predict_landmark(const Landmark& landmark, const Vec3& world_position,
                                           const Vec3& displacement, const Pose& cam_from_world,
                                           const StereoIntrinsics& K,
                                           const GeometryLimits& limits) {
  const Vec3 p_cam = cam_from_world * (world_position + displacement);
  auto zeta = try_project_camera(p_cam, K, limits);
  if (!zeta) return std::nullopt;
  // Chain rule through the world-to-camera rotation.
  const Mat3 J = projection_jacobian(p_cam, K, limits) * cam_from_world.rotation();
  Covariance3 gamma = J * landmark.best_cov * J.transpose();
  Prediction out;
  out.landmark_id = landmark.id;
  out.cluster_id = landmark.cluster_id;
  out.zeta = *zeta;
  out.gamma = 0.5 * (gamma + gamma.transpose());
  out.descriptor = landmark.descriptor;
  return out;
}

namespace {

bool in_window(const StereoMeasurement& a, const StereoMeasurement& b, double w) {
  return std::abs(a.uL - b.uL) <= w && std::abs(a.vL - b.vL) <= w;
}

std::vector<int> match(std::span<const Prediction> predictions, std::span<const Feature> features,
                       const std::vector<bool>& taken, const AssociationParams& params,
                       bool gated) {
  std::vector<int> result(features.size(), -1);
  if (predictions.empty()) return result;

  std::vector<Mat3> info;
  if (gated) {
    info.reserve(predictions.size());
    for (const auto& p : predictions) info.push_back(p.gamma.ldlt().solve(Mat3::Identity()));
  }

  struct Claim {
    double score;
    std::size_t feature;
    std::size_t prediction;
  };
  std::vector<Claim> claims;
  for (std::size_t k = 0; k < features.size(); ++k) {
    if (k < taken.size() && taken[k]) continue;
    const auto& z = features[k].z;
    double best = -1.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const auto& pred = predictions[i];
      if (!in_window(pred.zeta, z, params.window_px)) continue;
      if (gated) {
        const Vec3 r = pred.zeta.vector() - z.vector();
        if (!(r.dot(info[i] * r) < params.gate)) continue;
      }
      const double s = descriptor_similarity(pred.descriptor, features[k].descriptor);
      if (s < params.similarity_floor) continue;
      if (s > best) {
        best = s;
        best_i = i;
      }
    }
    if (best >= 0.0) claims.push_back({best, k, best_i});
  }

  std::sort(claims.begin(), claims.end(), [](const Claim& a, const Claim& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.feature < b.feature;
  });
  std::vector<bool> used(predictions.size(), false);
  for (const auto& c : claims) {
    if (used[c.prediction]) continue;
    used[c.prediction] = true;
    result[c.feature] = predictions[c.prediction].landmark_id;
  }
  return result;
}

}  // namespace

std::vector<int> associate_features(std::span<const Prediction> predictions,
                                    std::span<const Feature> features,
                                    const std::vector<bool>& taken,
                                    const AssociationParams& params) {
  return match(predictions, features, taken, params, true);
}

std::vector<int> associate_nearest(std::span<const Prediction> predictions,
                                   std::span<const Feature> features,
                                   const std::vector<bool>& taken,
                                   const AssociationParams& params) {
  return match(predictions, features, taken, params, false);
}

double shannon_entropy(std::span<const double> masses, double log_base) {
  double total = 0.0;
  for (double m : masses) total += m;
  if (!(total > 0.0)) return 0.0;
  double e = 0.0;
  for (double m : masses) {
    if (m <= 0.0) continue;
    const double p = m / total;
    e -= p * std::log(p);
  }
  if (log_base > 0.0) e /= std::log(log_base);
  return e;
}

BoxAssociation associate_boxes(std::span<const SemanticBox> boxes,
                               std::span<const Prediction> predictions,
                               const AssociationParams& params) {
  BoxAssociation out;
  out.box_to_cluster.assign(boxes.size(), -1);
  out.box_entropy.assign(boxes.size(), std::numeric_limits<double>::quiet_NaN());
  if (boxes.empty() || predictions.empty()) return out;

  std::vector<int> clusters;
  for (const auto& p : predictions)
    if (p.cluster_id > 0) clusters.push_back(p.cluster_id);
  std::sort(clusters.begin(), clusters.end());
  clusters.erase(std::unique(clusters.begin(), clusters.end()), clusters.end());

  std::vector<double> mass(boxes.size());
  for (int q : clusters) {
    std::fill(mass.begin(), mass.end(), 0.0);
    for (const auto& p : predictions) {
      if (p.cluster_id != q) continue;
      const double det = p.gamma.determinant();
      if (!(det > 0.0)) continue;
      for (std::size_t m = 0; m < boxes.size(); ++m)
        if (boxes[m].contains(p.zeta.uL, p.zeta.vL)) mass[m] += 1.0 / det;
    }
    std::size_t best = 0;
    for (std::size_t m = 1; m < boxes.size(); ++m)
      if (mass[m] > mass[best]) best = m;
    if (!(mass[best] > 0.0)) continue;
    out.candidates.push_back(
        {q, static_cast<int>(best), shannon_entropy(mass, params.entropy_log_base), mass[best]});
  }

  std::vector<BoxAssociation::Candidate> accepted;
  for (const auto& c : out.candidates)
    if (c.entropy < params.entropy_threshold) accepted.push_back(c);
  std::stable_sort(accepted.begin(), accepted.end(),
                   [](const auto& a, const auto& b) { return a.entropy < b.entropy; });
  for (const auto& c : accepted) {
    if (out.box_to_cluster[c.best_box] != -1) continue;
    out.box_to_cluster[c.best_box] = c.cluster_id;
    out.box_entropy[c.best_box] = c.entropy;
  }
  return out;
}

std::vector<std::pair<int, int>> box_interior_rematch(
    const SemanticBox& box, std::span<const Prediction> cluster_landmarks,
    std::span<const Feature> features, const std::vector<bool>& taken,
    const AssociationParams& params) {
  std::vector<std::size_t> free;
  for (std::size_t k = 0; k < features.size(); ++k) {
    if (k < taken.size() && taken[k]) continue;
    if (box.contains(features[k].z.uL, features[k].z.vL)) free.push_back(k);
  }
  std::vector<std::pair<int, int>> out;
  const std::size_t L = cluster_landmarks.size();
  if (free.empty() || L == 0) return out;

  MatX S(free.size(), L);
  for (std::size_t a = 0; a < free.size(); ++a)
    for (std::size_t b = 0; b < L; ++b)
      S(a, b) = descriptor_similarity(features[free[a]].descriptor,
                                      cluster_landmarks[b].descriptor);

  // Unique argmax of a row or column; -1 if the maximum is shared.
  auto unique_best = [](const auto& v) -> Eigen::Index {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
      if (v(i) > v(best)) best = i;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (i != best && v(i) == v(best)) return -1;
    return best;
  };

  for (std::size_t a = 0; a < free.size(); ++a) {
    const Eigen::Index b = unique_best(S.row(a));
    if (b < 0 || S(a, b) < params.similarity_floor) continue;
    if (unique_best(S.col(b)) != static_cast<Eigen::Index>(a)) continue;
    out.emplace_back(static_cast<int>(free[a]), cluster_landmarks[b].landmark_id);
  }
  return out;
}

}  // namespace mbvo
