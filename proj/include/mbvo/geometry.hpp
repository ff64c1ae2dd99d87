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

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>
#include <stdexcept>
#include <string>

namespace mbvo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// Symmetric positive-definite 3x3 covariance (pixels^2 or meters^2).
using Covariance3 = Mat3;

enum class GeometryErrorKind { NonPositiveDepth, DegenerateDisparity, NearPiRotation };

class GeometryError : public std::runtime_error {
 public:
  GeometryError(GeometryErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  GeometryErrorKind kind() const noexcept { return kind_; }

 private:
  GeometryErrorKind kind_;
};

Mat3 hat(const Vec3& w);
Mat3 so3_exp(const Vec3& w);
/// Throws NearPiRotation when the angle is within 1e-6 of pi.
Vec3 so3_log(const Mat3& R);
/// Left Jacobian of SO(3) and its inverse.
Mat3 so3_left_jacobian(const Vec3& w);
Mat3 so3_left_jacobian_inverse(const Vec3& w);

/// Rigid transform x -> R x + t. Rotations are kept as matrices; quaternions
/// only appear at I/O boundaries.
class Pose {
 public:
  Pose() : R_(Mat3::Identity()), t_(Vec3::Zero()) {}
  Pose(const Mat3& R, const Vec3& t) : R_(R), t_(t) {}

  static Pose identity() { return {}; }
  static Pose from_quaternion(const Eigen::Quaterniond& q, const Vec3& t);

  const Mat3& rotation() const { return R_; }
  const Vec3& translation() const { return t_; }
  Mat3& rotation() { return R_; }
  Vec3& translation() { return t_; }

  /// Unit quaternion with non-negative w.
  Eigen::Quaterniond quaternion() const;

  Pose inverse() const { return {R_.transpose(), -R_.transpose() * t_}; }
  Pose operator*(const Pose& o) const { return {R_ * o.R_, R_ * o.t_ + t_}; }
  Vec3 operator*(const Vec3& p) const { return R_ * p + t_; }

  /// Re-orthonormalizes the rotation (SVD projection).
  void normalize();

 private:
  Mat3 R_;
  Vec3 t_;
};

/// T^{ab} = (P^a)^{-1} P^b.
inline Pose relative(const Pose& a, const Pose& b) { return a.inverse() * b; }

/// Twist layout is [translation part; rotation part].
Pose se3_exp(const Vec6& twist);
Vec6 se3_log(const Pose& P);

struct StereoIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double baseline = 1.0;

  /// Throws std::invalid_argument unless fx, fy, baseline > 0.
  void validate() const;
};

/// Validity floors for projection and triangulation.
struct GeometryLimits {
  double depth_min = 0.1;
  double disparity_min = 1e-3;
};

struct StereoMeasurement {
  double uL = 0.0;
  double vL = 0.0;
  double uR = 0.0;

  double disparity() const { return uL - uR; }
  Vec3 vector() const { return {uL, vL, uR}; }
  static StereoMeasurement from_vector(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
  friend bool operator==(const StereoMeasurement&, const StereoMeasurement&) = default;
};

/// Projects a camera-frame point. Throws NonPositiveDepth.
StereoMeasurement project_camera(const Vec3& point_cam, const StereoIntrinsics& K,
                                 const GeometryLimits& limits = {});
std::optional<StereoMeasurement> try_project_camera(const Vec3& point_cam,
                                                    const StereoIntrinsics& K,
                                                    const GeometryLimits& limits = {});

/// Projects a world point through the world-to-camera transform.
StereoMeasurement project(const Pose& cam_from_world, const Vec3& point_world,
                          const StereoIntrinsics& K, const GeometryLimits& limits = {});

/// Camera-frame triangulation. Throws DegenerateDisparity.
Vec3 back_project(const StereoMeasurement& z, const StereoIntrinsics& K,
                  const GeometryLimits& limits = {});
std::optional<Vec3> try_back_project(const StereoMeasurement& z, const StereoIntrinsics& K,
                                     const GeometryLimits& limits = {});

/// d(uL, vL, uR) / d(x, y, z).
Mat3 projection_jacobian(const Vec3& point_cam, const StereoIntrinsics& K,
                         const GeometryLimits& limits = {});
/// d(x, y, z) / d(uL, vL, uR).
Mat3 back_projection_jacobian(const StereoMeasurement& z, const StereoIntrinsics& K,
                              const GeometryLimits& limits = {});

/// Camera-space covariance of a triangulated point: J Sigma_z J^T.
Covariance3 propagate_measurement_noise(const StereoMeasurement& z, const Covariance3& sigma_z,
                                        const StereoIntrinsics& K,
                                        const GeometryLimits& limits = {});

}  // namespace mbvo
