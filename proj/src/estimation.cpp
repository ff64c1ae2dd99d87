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


#include "mbvo/estimation.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

#include "reduced_system.hpp"

namespace mbvo {

using detail::ReducedSystem;
using detail::Step;

Pose apply_increment(const Pose& P, const Vec6& delta) {
  return {so3_exp(delta.tail<3>()) * P.rotation(), P.translation() + delta.head<3>()};
}

Vec6 pose_difference(const Pose& a, const Pose& b) {
  Vec6 d;
  d.head<3>() = a.translation() - b.translation();
  d.tail<3>() = so3_log(a.rotation() * b.rotation().transpose());
  return d;
}

double HuberKernel::cost(double e2) const {
  const double e = std::sqrt(e2);
  return e <= delta ? e2 : 2.0 * delta * e - delta * delta;
}

double HuberKernel::weight(double e2) const {
  const double e = std::sqrt(e2);
  return e <= delta ? 1.0 : delta / e;
}

StereoResidual static_residual(const Pose& camera, const Vec3& point, const StereoMeasurement& z,
                               const StereoIntrinsics& K) {
  StereoResidual out;
  const Mat3 Rt = camera.rotation().transpose();
  const Vec3 d = point - camera.translation();
  const Vec3 X = Rt * d;
  const auto zeta = try_project_camera(X, K);
  if (!zeta) return out;
  const Mat3 G = -projection_jacobian(X, K) * Rt;  // dr/dp
  out.r = z.vector() - zeta->vector();
  out.J_point = G;
  out.J_pose.leftCols<3>() = -G;
  out.J_pose.rightCols<3>() = G * hat(d);
  out.valid = true;
  return out;
}

StereoResidual cluster_residual(const Pose& camera, const Pose& cluster, const Vec3& body,
                                const StereoMeasurement& z, const StereoIntrinsics& K) {
  StereoResidual out;
  const Mat3 Rt = camera.rotation().transpose();
  const Vec3 Rb = cluster.rotation() * body;
  const Vec3 X = Rt * (Rb + cluster.translation() - camera.translation());
  const auto zeta = try_project_camera(X, K);
  if (!zeta) return out;
  const Mat3 G = -projection_jacobian(X, K) * Rt;  // dr/dp (world point)
  out.r = z.vector() - zeta->vector();
  out.J_pose.leftCols<3>() = G;
  out.J_pose.rightCols<3>() = -G * hat(Rb);
  out.J_point = G * cluster.rotation();
  out.valid = true;
  return out;
}

Mat6 wnoa_covariance(double dt, const Mat3& Q) {
  if (!(dt > 0.0)) throw NonPositiveDt("wnoa: dt must be positive");
  Mat6 C;
  C << dt * dt * dt / 3.0 * Q, dt * dt / 2.0 * Q, dt * dt / 2.0 * Q, dt * Q;
  return C;
}

WnoaFactor wnoa_factor(double dt, const Mat3& Q) {
  if (!(dt > 0.0)) throw NonPositiveDt("wnoa: dt must be positive");
  const Mat3 Qi = Q.ldlt().solve(Mat3::Identity());
  WnoaFactor f;
  f.A.setIdentity();
  f.A.topRightCorner<3, 3>() = dt * Mat3::Identity();
  f.information << 12.0 / (dt * dt * dt) * Qi, -6.0 / (dt * dt) * Qi, -6.0 / (dt * dt) * Qi,
      4.0 / dt * Qi;
  return f;
}

InformationPrior InformationPrior::anchor(int frame, const Pose& pose, double information) {
  InformationPrior p;
  p.frames = {frame};
  p.H = information * MatX::Identity(6, 6);
  p.beta = VecX::Zero(6);
  p.linearization = {pose};
  return p;
}

VecX InformationPrior::delta(const std::map<int, Pose>& poses) const {
  VecX d(static_cast<Eigen::Index>(6 * frames.size()));
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto it = poses.find(frames[k]);
    if (it == poses.end())
      throw std::invalid_argument("prior frame " + std::to_string(frames[k]) + " has no pose");
    d.segment<6>(static_cast<Eigen::Index>(6 * k)) = pose_difference(it->second, linearization[k]);
  }
  return d;
}

double InformationPrior::cost(const std::map<int, Pose>& poses) const {
  if (empty()) return 0.0;
  const VecX d = delta(poses);
  return d.dot(H * d) - 2.0 * beta.dot(d);
}

namespace {

constexpr double kInvalidResidualCost = 1e12;

/// Prior re-expressed at the current poses: H' = J^T H J, b' = J^T (beta - H d).
std::pair<MatX, VecX> prior_at(const InformationPrior& prior, const std::map<int, Pose>& poses) {
  const VecX d = prior.delta(poses);
  const Eigen::Index n = d.size();
  MatX J = MatX::Identity(n, n);
  for (Eigen::Index k = 0; k < n; k += 6)
    J.block<3, 3>(k + 3, k + 3) = so3_left_jacobian_inverse(d.segment<3>(k + 3));
  return {J.transpose() * prior.H * J, J.transpose() * (prior.beta - prior.H * d)};
}

/// Adds the prior into a state system given the offset of each prior frame
/// (-1 for constant frames).
void add_prior(ReducedSystem& sys, const InformationPrior& prior,
               const std::map<int, Pose>& poses, const std::map<int, int>& offset) {
  if (prior.empty()) return;
  const auto [H, b] = prior_at(prior, poses);
  for (std::size_t i = 0; i < prior.frames.size(); ++i) {
    const int oi = offset.at(prior.frames[i]);
    if (oi < 0) continue;
    sys.b.segment<6>(oi) += b.segment<6>(static_cast<Eigen::Index>(6 * i));
    for (std::size_t j = 0; j < prior.frames.size(); ++j) {
      const int oj = offset.at(prior.frames[j]);
      if (oj < 0) continue;
      sys.H.block<6, 6>(oi, oj) +=
          H.block<6, 6>(static_cast<Eigen::Index>(6 * i), static_cast<Eigen::Index>(6 * j));
    }
  }
}

/// Observations of landmarks seen at least twice among the problem's frames.
std::vector<std::size_t> usable_observations(const StaticProblem& p) {
  std::map<int, int> count;
  for (const auto& o : p.observations)
    if (p.cameras.count(o.frame) && p.landmarks.count(o.landmark)) ++count[o.landmark];
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p.observations.size(); ++i) {
    const auto& o = p.observations[i];
    if (p.cameras.count(o.frame) && count[o.landmark] >= 2) out.push_back(i);
  }
  return out;
}

struct StaticLm {
  StaticProblem& p;
  const InformationPrior& prior;
  const HuberKernel& huber;
  Mat3 W;
  std::vector<std::size_t> obs;
  std::map<int, int> frame_offset;
  std::map<int, int> point_index;
  std::vector<int> point_ids;
  std::map<int, Pose> saved_cameras;
  std::map<int, Vec3> saved_points;

  StaticLm(StaticProblem& problem, const InformationPrior& pr, const HuberKernel& h)
      : p(problem), prior(pr), huber(h), W(problem.sigma_z.ldlt().solve(Mat3::Identity())) {
    obs = usable_observations(p);
    int off = 0;
    for (const auto& [id, pose] : p.cameras) {
      frame_offset[id] = p.fixed_frames.count(id) ? -1 : off;
      if (!p.fixed_frames.count(id)) off += 6;
    }
    for (std::size_t i : obs) {
      const int lm = p.observations[i].landmark;
      if (point_index.emplace(lm, static_cast<int>(point_ids.size())).second) point_ids.push_back(lm);
    }
  }

  int state_dim() const {
    int n = 0;
    for (const auto& [id, o] : frame_offset) n += o >= 0 ? 6 : 0;
    return n;
  }

  double cost() const {
    double c = prior.cost(p.cameras);
    for (std::size_t i : obs) {
      const auto& o = p.observations[i];
      const auto r = static_residual(p.cameras.at(o.frame), p.landmarks.at(o.landmark), o.z, p.K);
      c += r.valid ? huber.cost(r.r.dot(W * r.r)) : kInvalidResidualCost;
    }
    return c;
  }

  ReducedSystem linearize() const {
    ReducedSystem sys(state_dim(), static_cast<int>(point_ids.size()));
    for (std::size_t i : obs) {
      const auto& o = p.observations[i];
      const auto r = static_residual(p.cameras.at(o.frame), p.landmarks.at(o.landmark), o.z, p.K);
      if (!r.valid) continue;
      sys.add_reprojection(frame_offset.at(o.frame), point_index.at(o.landmark), r, W,
                           huber.weight(r.r.dot(W * r.r)));
    }
    add_prior(sys, prior, p.cameras, frame_offset);
    return sys;
  }

  void apply(const Step& s) {
    for (auto& [id, pose] : p.cameras) {
      const int o = frame_offset.at(id);
      if (o >= 0) pose = apply_increment(pose, s.state.segment<6>(o));
    }
    for (std::size_t k = 0; k < point_ids.size(); ++k) p.landmarks.at(point_ids[k]) += s.points[k];
  }

  void save() {
    saved_cameras = p.cameras;
    saved_points.clear();
    for (int id : point_ids) saved_points[id] = p.landmarks.at(id);
  }

  void restore() {
    p.cameras = saved_cameras;
    for (const auto& [id, v] : saved_points) p.landmarks.at(id) = v;
  }
};

}  // namespace

double static_cost(const StaticProblem& problem, const InformationPrior& prior,
                   const HuberKernel& huber) {
  StaticProblem& p = const_cast<StaticProblem&>(problem);  // StaticLm only reads here
  return StaticLm(p, prior, huber).cost();
}

SolveSummary optimize_static(StaticProblem& problem, const InformationPrior& prior,
                             const SolverOptions& options) {
  for (int f : prior.frames)
    if (!problem.cameras.count(f))
      throw std::invalid_argument("optimize_static: prior frame " + std::to_string(f) +
                                  " missing from the window");
  StaticLm lm(problem, prior, options.huber);
  return detail::levenberg_marquardt(lm, options);
}

std::vector<double> observation_chi2(const StaticProblem& problem) {
  const Mat3 W = problem.sigma_z.ldlt().solve(Mat3::Identity());
  std::vector<double> out;
  out.reserve(problem.observations.size());
  for (const auto& o : problem.observations) {
    const auto cam = problem.cameras.find(o.frame);
    const auto lm = problem.landmarks.find(o.landmark);
    if (cam == problem.cameras.end() || lm == problem.landmarks.end()) {
      out.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    const auto r = static_residual(cam->second, lm->second, o.z, problem.K);
    out.push_back(r.valid ? r.r.dot(W * r.r) : std::numeric_limits<double>::infinity());
  }
  return out;
}

std::pair<MatX, VecX> schur_marginalize(const MatX& Lambda, const VecX& b,
                                        std::span<const int> keep, std::span<const int> drop,
                                        bool* regularized) {
  const auto na = static_cast<Eigen::Index>(keep.size());
  const auto nb = static_cast<Eigen::Index>(drop.size());
  MatX Laa(na, na), Lab(na, nb), Lbb(nb, nb);
  VecX ba(na), bb(nb);
  for (Eigen::Index i = 0; i < na; ++i) {
    ba(i) = b(keep[i]);
    for (Eigen::Index j = 0; j < na; ++j) Laa(i, j) = Lambda(keep[i], keep[j]);
    for (Eigen::Index j = 0; j < nb; ++j) Lab(i, j) = Lambda(keep[i], drop[j]);
  }
  for (Eigen::Index i = 0; i < nb; ++i) {
    bb(i) = b(drop[i]);
    for (Eigen::Index j = 0; j < nb; ++j) Lbb(i, j) = Lambda(drop[i], drop[j]);
  }
  if (nb == 0) return {Laa, ba};
  Eigen::LLT<MatX> llt(Lbb);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
    if (regularized) *regularized = true;
    llt.compute(Lbb + 1e-9 * MatX::Identity(nb, nb));
  }
  const MatX X = llt.solve(Lab.transpose());  // Lbb^-1 Lba
  MatX H = Laa - Lab * X;
  const VecX beta = ba - Lab * llt.solve(bb);
  H = 0.5 * (H + H.transpose());
  return {H, beta};
}

Marginalization marginalize_frame(const StaticProblem& problem, int frame, int newest_frame,
                                  const InformationPrior& prior, const HuberKernel& huber) {
  Marginalization out;
  std::set<int> seen_by_frame, seen_by_newest;
  for (const auto& o : problem.observations) {
    if (o.frame == frame) seen_by_frame.insert(o.landmark);
    if (o.frame == newest_frame) seen_by_newest.insert(o.landmark);
  }
  std::set<int> eliminated;
  for (int lm : seen_by_frame)
    if (!seen_by_newest.count(lm) && problem.landmarks.count(lm)) eliminated.insert(lm);

  const bool in_prior = std::find(prior.frames.begin(), prior.frames.end(), frame) != prior.frames.end();
  if (eliminated.empty() && !in_prior) {
    out.prior = prior;
    return out;
  }

  std::set<int> frames(prior.frames.begin(), prior.frames.end());
  frames.insert(frame);
  std::vector<const StaticObservation*> factors;
  for (const auto& o : problem.observations) {
    if (!eliminated.count(o.landmark) || !problem.cameras.count(o.frame)) continue;
    frames.insert(o.frame);
    factors.push_back(&o);
  }

  std::map<int, int> offset;
  int dim = 0;
  for (int f : frames) {
    offset[f] = dim;
    dim += 6;
  }
  std::map<int, int> point_index;
  for (int lm : eliminated) point_index.emplace(lm, static_cast<int>(point_index.size()));

  const Mat3 W = problem.sigma_z.ldlt().solve(Mat3::Identity());
  ReducedSystem sys(dim, static_cast<int>(point_index.size()));
  for (const auto* o : factors) {
    const auto r = static_residual(problem.cameras.at(o->frame), problem.landmarks.at(o->landmark),
                                   o->z, problem.K);
    if (!r.valid) continue;
    sys.add_reprojection(offset.at(o->frame), point_index.at(o->landmark), r, W,
                         huber.weight(r.r.dot(W * r.r)));
  }
  add_prior(sys, prior, problem.cameras, offset);

  const auto [S, rhs] = detail::eliminate_points(sys, &out.regularized);
  std::vector<int> keep, drop;
  for (int f : frames) {
    for (int k = 0; k < 6; ++k) (f == frame ? drop : keep).push_back(offset.at(f) + k);
    if (f != frame) {
      out.prior.frames.push_back(f);
      out.prior.linearization.push_back(problem.cameras.at(f));
    }
  }
  std::tie(out.prior.H, out.prior.beta) = schur_marginalize(S, rhs, keep, drop, &out.regularized);
  out.removed_landmarks.assign(eliminated.begin(), eliminated.end());
  return out;
}

std::optional<Triangulation> triangulate(const StereoMeasurement& z, const Pose& camera,
                                         const StereoIntrinsics& K, const Covariance3& sigma_z,
                                         const GeometryLimits& limits) {
  const auto X = try_back_project(z, K, limits);
  if (!X) return std::nullopt;
  Triangulation t;
  t.camera_point = *X;
  t.world = camera * *X;
  t.camera_cov = propagate_measurement_noise(z, sigma_z, K, limits);
  return t;
}

namespace {

struct PoseOnlyLm {
  Pose& camera;
  std::span<const Vec3> points;
  std::span<const StereoMeasurement> z;
  const std::vector<bool>& active;
  const StereoIntrinsics& K;
  const HuberKernel& huber;
  Mat3 W;
  Pose saved;

  double cost() const {
    double c = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!active[i]) continue;
      const auto r = static_residual(camera, points[i], z[i], K);
      c += r.valid ? huber.cost(r.r.dot(W * r.r)) : kInvalidResidualCost;
    }
    return c;
  }
  ReducedSystem linearize() const {
    ReducedSystem sys(6, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!active[i]) continue;
      const auto r = static_residual(camera, points[i], z[i], K);
      if (r.valid) sys.add_reprojection(0, -1, r, W, huber.weight(r.r.dot(W * r.r)));
    }
    return sys;
  }
  void apply(const Step& s) { camera = apply_increment(camera, s.state.head<6>()); }
  void save() { saved = camera; }
  void restore() { camera = saved; }
};

}  // namespace

PoseTracking track_camera(const Pose& initial, std::span<const Vec3> points,
                          std::span<const StereoMeasurement> z, const Covariance3& sigma_z,
                          const StereoIntrinsics& K, const SolverOptions& options,
                          double chi2_threshold, int rounds) {
  PoseTracking out;
  out.camera = initial;
  const Mat3 W = sigma_z.ldlt().solve(Mat3::Identity());
  std::vector<bool> active(points.size(), true);
  auto classify = [&] {
    out.inlier_count = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto r = static_residual(out.camera, points[i], z[i], K);
      active[i] = r.valid && r.r.dot(W * r.r) <= chi2_threshold;
      out.inlier_count += active[i];
    }
  };
  for (int round = 0; round < std::max(rounds, 1); ++round) {
    PoseOnlyLm lm{out.camera, points, z, active, K, options.huber, W, {}};
    out.summary = detail::levenberg_marquardt(lm, options);
    const std::vector<bool> before = active;
    classify();
    if (active == before) break;
  }
  out.inliers = active;
  return out;
}

ClusterInit init_cluster_pose(std::span<const Vec3> points) {
  ClusterInit out;
  if (points.empty()) throw std::invalid_argument("init_cluster_pose: empty cloud");
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  c /= static_cast<double>(points.size());
  Mat3 C = Mat3::Zero();
  for (const auto& p : points) C += (p - c) * (p - c).transpose();
  C /= static_cast<double>(points.size());
  out.pose = Pose{Mat3::Identity(), c};

  Eigen::SelfAdjointEigenSolver<Mat3> es(C);
  const Vec3 ev = es.eigenvalues();  // ascending
  const double scale = std::max(ev(2), std::numeric_limits<double>::min());
  if (ev(1) - ev(0) <= 1e-9 * scale || ev(2) - ev(1) <= 1e-9 * scale) {
    out.degenerate = true;
    return out;
  }
  auto fix_sign = [](Vec3 a) {
    for (int k = 0; k < 3; ++k) {
      if (std::abs(a(k)) > 1e-12) return a(k) < 0.0 ? Vec3(-a) : a;
    }
    return a;
  };
  Mat3 R;
  R.col(0) = fix_sign(es.eigenvectors().col(2));
  R.col(1) = fix_sign(es.eigenvectors().col(1));
  R.col(2) = R.col(0).cross(R.col(1));
  out.pose.rotation() = R;
  return out;
}

}  // namespace mbvo
