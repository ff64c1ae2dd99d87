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


#include "mbvo/evaluation.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>

#include "mbvo/hungarian.hpp"

namespace mbvo {

std::vector<std::pair<std::size_t, std::size_t>> associate_timestamps(const Trajectory& est,
                                                                      const Trajectory& truth,
                                                                      double max_dt) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].timestamp;
    while (j + 1 < truth.size() && std::abs(truth[j + 1].timestamp - t) <= std::abs(truth[j].timestamp - t))
      ++j;
    if (j < truth.size() && std::abs(truth[j].timestamp - t) <= max_dt) out.emplace_back(i, j);
  }
  return out;
}

PosePairs match_poses(const Trajectory& est, const Trajectory& truth, double max_dt) {
  PosePairs p;
  for (const auto& [i, j] : associate_timestamps(est, truth, max_dt)) {
    p.est.push_back(est[i].pose);
    p.truth.push_back(truth[j].pose);
  }
  return p;
}

namespace {

Mat3 project_to_so3(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * D * svd.matrixV().transpose();
}

double rotation_angle(const Mat3& R) {
  // The log map stays accurate near zero, where acos of the trace does not.
  return so3_log(R).norm();
}

double rms(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

Pose register_trajectory(const PosePairs& pairs) {
  const std::size_t n = pairs.est.size();
  if (n < 3) throw InsufficientOverlap("register_trajectory: need at least 3 pose pairs");
  Mat3 M = Mat3::Zero();
  Vec3 t = Vec3::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    const Mat3 RpT = pairs.est[k].rotation().transpose();
    M += RpT * pairs.truth[k].rotation();
    t += RpT * (pairs.truth[k].translation() - pairs.est[k].translation());
  }
  return {project_to_so3(M), t / static_cast<double>(n)};
}

double registration_residual(const PosePairs& pairs, const Pose& T) {
  double s = 0.0;
  for (std::size_t k = 0; k < pairs.est.size(); ++k) {
    const Pose E = pairs.truth[k].inverse() * pairs.est[k] * T;
    s += (E.translation().squaredNorm() + std::pow(rotation_angle(E.rotation()), 2));
  }
  return s;
}

double compute_ate(const PosePairs& pairs, Alignment alignment) {
  const std::size_t n = pairs.est.size();
  if (n < 2) throw InsufficientOverlap("compute_ate: need at least 2 pose pairs");
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  if (alignment == Alignment::Rigid) {
    Vec3 me = Vec3::Zero(), mt = Vec3::Zero();
    for (std::size_t k = 0; k < n; ++k) {
      me += pairs.est[k].translation();
      mt += pairs.truth[k].translation();
    }
    me /= static_cast<double>(n);
    mt /= static_cast<double>(n);
    Mat3 C = Mat3::Zero();
    for (std::size_t k = 0; k < n; ++k)
      C += (pairs.truth[k].translation() - mt) * (pairs.est[k].translation() - me).transpose();
    R = project_to_so3(C);
    t = mt - R * me;
  }
  std::vector<double> err;
  for (std::size_t k = 0; k < n; ++k)
    err.push_back((R * pairs.est[k].translation() + t - pairs.truth[k].translation()).norm());
  return rms(err);
}

RelativePoseError compute_rpe(const PosePairs& pairs) {
  const std::size_t n = pairs.est.size();
  if (n < 2) throw InsufficientOverlap("compute_rpe: need at least 2 pose pairs");
  std::vector<double> rot, trans;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const Pose dq = pairs.truth[k].inverse() * pairs.truth[k + 1];
    const Pose dp = pairs.est[k].inverse() * pairs.est[k + 1];
    const Pose E = dq.inverse() * dp;
    trans.push_back(E.translation().norm());
    rot.push_back(rotation_angle(E.rotation()));
  }
  return {rms(rot), rms(trans)};
}

Vec3 euler_zyx(const Mat3& R) {
  const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
  const double yaw = std::atan2(R(1, 0), R(0, 0));
  const double roll = std::atan2(R(2, 1), R(2, 2));
  return {yaw, pitch, roll};
}

MaxDrift compute_max_drift(const PosePairs& pairs) {
  MaxDrift d;
  for (std::size_t k = 0; k < pairs.est.size(); ++k) {
    d.translation = std::max(d.translation,
                             (pairs.est[k].translation() - pairs.truth[k].translation()).norm());
    const Vec3 e =
        euler_zyx(pairs.truth[k].rotation().transpose() * pairs.est[k].rotation()).cwiseAbs();
    d.rotation = d.rotation.cwiseMax(e);
  }
  return d;
}

double segmentation_accuracy(std::span<const std::pair<int, int>> labels) {
  if (labels.empty()) return 0.0;
  std::map<int, int> cluster_index, body_index;
  for (const auto& [c, b] : labels) {
    if (c >= 0) cluster_index.emplace(c, 0);
    body_index.emplace(b, 0);
  }
  int k = 0;
  for (auto& [id, idx] : cluster_index) idx = k++;
  k = 0;
  for (auto& [id, idx] : body_index) idx = k++;
  MatX overlap = MatX::Zero(static_cast<Eigen::Index>(cluster_index.size()),
                            static_cast<Eigen::Index>(body_index.size()));
  for (const auto& [c, b] : labels)
    if (c >= 0) overlap(cluster_index[c], body_index[b]) += 1.0;
  double agree = 0.0;
  if (overlap.size() > 0) {
    const auto assign = solve_assignment(-overlap);
    for (Eigen::Index r = 0; r < overlap.rows(); ++r)
      if (assign[r] >= 0) agree += overlap(r, assign[r]);
  }
  return agree / static_cast<double>(labels.size());
}

double path_length(std::span<const Pose> poses) {
  double s = 0.0;
  for (std::size_t k = 1; k < poses.size(); ++k)
    s += (poses[k].translation() - poses[k - 1].translation()).norm();
  return s;
}

namespace {

MetricReport metrics(const PosePairs& pairs) {
  MetricReport r;
  r.ate_rmse = compute_ate(pairs, Alignment::None);
  const auto rpe = compute_rpe(pairs);
  r.rpe_rot_rmse = rpe.rotation_rmse;
  r.rpe_trans_rmse = rpe.translation_rmse;
  const auto d = compute_max_drift(pairs);
  r.max_drift_trans = d.translation;
  r.max_drift_rot = d.rotation;
  return r;
}

}  // namespace

SequenceEvaluation evaluate_sequence(const Trajectory& camera,
                                     const std::map<int, Trajectory>& clusters,
                                     const std::vector<FrameLabels>& labels,
                                     const sim::GroundTruth& truth, double max_dt) {
  SequenceEvaluation e;
  Trajectory truth_camera;
  for (const auto& f : truth.frames) truth_camera.push_back({f.timestamp, f.camera});
  const PosePairs cam = match_poses(camera, truth_camera, max_dt);
  e.camera = metrics(cam);
  e.camera_path_length = path_length(cam.truth);

  std::map<int, int> body_of;
  for (const auto& l : truth.landmarks) body_of[l.id] = l.body;
  std::map<int, const sim::FrameTruth*> truth_frame;
  for (const auto& f : truth.frames) truth_frame[f.index] = &f;

  // Overlap between estimated clusters and true bodies across all frames.
  std::map<int, std::map<int, double>> overlap;
  std::set<int> cluster_ids, body_ids;
  for (const auto& c : clusters) cluster_ids.insert(c.first);
  for (std::size_t b = 0; b < truth.cluster_labels.size(); ++b) body_ids.insert(static_cast<int>(b) + 1);
  for (const auto& fl : labels) {
    const auto it = truth_frame.find(fl.frame);
    if (it == truth_frame.end()) continue;
    const auto& prov = it->second->feature_landmarks;
    for (std::size_t k = 0; k < fl.feature_clusters.size() && k < prov.size(); ++k) {
      const int c = fl.feature_clusters[k];
      const int b = body_of[prov[k]];
      if (c > 0 && b > 0) {
        overlap[c][b] += 1.0;
        cluster_ids.insert(c);
      }
    }
  }
  const std::vector<int> cl(cluster_ids.begin(), cluster_ids.end());
  const std::vector<int> bl(body_ids.begin(), body_ids.end());
  e.cluster_to_body[0] = 0;
  std::map<int, int> body_cluster;
  if (!cl.empty() && !bl.empty()) {
    MatX cost = MatX::Zero(static_cast<Eigen::Index>(cl.size()), static_cast<Eigen::Index>(bl.size()));
    for (std::size_t i = 0; i < cl.size(); ++i)
      for (std::size_t j = 0; j < bl.size(); ++j) {
        const auto it = overlap.find(cl[i]);
        if (it != overlap.end() && it->second.count(bl[j])) cost(i, j) = -it->second.at(bl[j]);
      }
    const auto assign = solve_assignment(cost);
    for (std::size_t i = 0; i < cl.size(); ++i)
      if (assign[i] >= 0 && cost(i, assign[i]) < 0.0) {
        e.cluster_to_body[cl[i]] = bl[static_cast<std::size_t>(assign[i])];
        body_cluster[bl[static_cast<std::size_t>(assign[i])]] = cl[i];
      }
  }

  for (int b : bl) {
    BodyEvaluation be;
    be.body = b;
    Trajectory truth_body;
    for (const auto& f : truth.frames) truth_body.push_back({f.timestamp, f.clusters[b - 1].pose});
    const auto it = body_cluster.find(b);
    if (it != body_cluster.end() && clusters.count(it->second)) {
      PosePairs pairs = match_poses(clusters.at(it->second), truth_body, max_dt);
      if (pairs.est.size() >= 3) {
        be.cluster = it->second;
        be.registration = register_trajectory(pairs);
        for (auto& p : pairs.est) p = p * be.registration;
        be.report = metrics(pairs);
        be.path_length = path_length(pairs.truth);
        be.pairs = pairs.est.size();
      }
    }
    e.bodies.push_back(be);
  }

  // Segmentation on the last labeled frame.
  if (!labels.empty()) {
    const auto& fl = labels.back();
    const auto it = truth_frame.find(fl.frame);
    if (it != truth_frame.end()) {
      std::vector<std::pair<int, int>> pairs;
      const auto& prov = it->second->feature_landmarks;
      for (std::size_t k = 0; k < fl.feature_clusters.size() && k < prov.size(); ++k)
        pairs.emplace_back(fl.feature_clusters[k], body_of[prov[k]]);
      e.camera.segmentation_accuracy = segmentation_accuracy(pairs);
    }
  }
  return e;
}

MetricReport flatten(const SequenceEvaluation& e) {
  MetricReport r = e.camera;
  r.extra.emplace_back("camera_path_length", e.camera_path_length);
  for (const auto& b : e.bodies) {
    const std::string p = "body_" + std::to_string(b.body) + "_";
    if (!b.cluster) {
      r.notes.emplace_back(p + "status", "missing");
      continue;
    }
    r.notes.emplace_back(p + "status", "tracked");
    r.extra.emplace_back(p + "cluster", *b.cluster);
    r.extra.emplace_back(p + "ate_rmse", b.report.ate_rmse);
    r.extra.emplace_back(p + "rpe_trans_rmse", b.report.rpe_trans_rmse);
    r.extra.emplace_back(p + "rpe_rot_rmse", b.report.rpe_rot_rmse);
    r.extra.emplace_back(p + "max_drift_trans", b.report.max_drift_trans);
    r.extra.emplace_back(p + "max_drift_yaw", b.report.max_drift_rot(0));
    r.extra.emplace_back(p + "max_drift_pitch", b.report.max_drift_rot(1));
    r.extra.emplace_back(p + "max_drift_roll", b.report.max_drift_rot(2));
    r.extra.emplace_back(p + "path_length", b.path_length);
    r.extra.emplace_back(p + "pairs", static_cast<double>(b.pairs));
  }
  return r;
}

void write_report_text(std::ostream& out, const MetricReport& r) {
  out << std::setprecision(10);
  out << "ate_rmse = " << r.ate_rmse << "\n";
  out << "rpe_trans_rmse = " << r.rpe_trans_rmse << "\n";
  out << "rpe_rot_rmse = " << r.rpe_rot_rmse << "\n";
  out << "max_drift_trans = " << r.max_drift_trans << "\n";
  out << "max_drift_yaw = " << r.max_drift_rot(0) << "\n";
  out << "max_drift_pitch = " << r.max_drift_rot(1) << "\n";
  out << "max_drift_roll = " << r.max_drift_rot(2) << "\n";
  if (r.segmentation_accuracy) out << "segmentation_accuracy = " << *r.segmentation_accuracy << "\n";
  for (const auto& [k, v] : r.extra) out << k << " = " << v << "\n";
  for (const auto& [k, v] : r.notes) out << k << " = " << v << "\n";
}

void write_report_json(std::ostream& out, const MetricReport& r) {
  nlohmann::ordered_json j;
  j["ate_rmse"] = r.ate_rmse;
  j["rpe_trans_rmse"] = r.rpe_trans_rmse;
  j["rpe_rot_rmse"] = r.rpe_rot_rmse;
  j["max_drift_trans"] = r.max_drift_trans;
  j["max_drift_rot"] = {{"yaw", r.max_drift_rot(0)}, {"pitch", r.max_drift_rot(1)},
                        {"roll", r.max_drift_rot(2)}};
  if (r.segmentation_accuracy) j["segmentation_accuracy"] = *r.segmentation_accuracy;
  for (const auto& [k, v] : r.extra) j["extra"][k] = v;
  for (const auto& [k, v] : r.notes) j["notes"][k] = v;
  out << j.dump(2) << "\n";
}

}  // namespace mbvo
