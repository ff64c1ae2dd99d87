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

#include "mbvo/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mbvo {

Mat3 hat(const Vec3& w) {
  Mat3 W;
  W << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return W;
}

Mat3 so3_exp(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 W = hat(w);
  if (theta2 < 1e-16) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + (std::sin(theta) / theta) * W +
         ((1.0 - std::cos(theta)) / theta2) * W * W;
}

Vec3 so3_log(const Mat3& R) {
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double theta = std::acos(c);
  if (theta > std::numbers::pi - 1e-6) {
    throw GeometryError(GeometryErrorKind::NearPiRotation,
                        "rotation angle too close to pi for a unique logarithm");
  }
  const Vec3 v(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < 1e-8) {
    return 0.5 * v;
  }
  return (0.5 * theta / std::sin(theta)) * v;
}

Pose Pose::from_quaternion(const Eigen::Quaterniond& q, const Vec3& t) {
  return {q.normalized().toRotationMatrix(), t};
}

Eigen::Quaterniond Pose::quaternion() const {
  Eigen::Quaterniond q(R_);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

void Pose::normalize() {
  Eigen::JacobiSVD<Mat3> svd(R_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Mat3 U = svd.matrixU();
    U.col(2) *= -1.0;
    R = U * svd.matrixV().transpose();
  }
  R_ = R;
}

Mat3 so3_left_jacobian(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 W = hat(w);
  if (theta2 < 1e-12) {
    return Mat3::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + ((1.0 - std::cos(theta)) / theta2) * W +
         ((theta - std::sin(theta)) / (theta2 * theta)) * W * W;
}

Mat3 so3_left_jacobian_inverse(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 W = hat(w);
  if (theta2 < 1e-12) {
    return Mat3::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
  }
  const double theta = std::sqrt(theta2);
  const double coeff =
      (1.0 - (theta * std::sin(theta)) / (2.0 * (1.0 - std::cos(theta)))) / theta2;
  return Mat3::Identity() - 0.5 * W + coeff * W * W;
}

Pose se3_exp(const Vec6& twist) {
  const Vec3 rho = twist.head<3>();
  const Vec3 phi = twist.tail<3>();
  return {so3_exp(phi), so3_left_jacobian(phi) * rho};
}

Vec6 se3_log(const Pose& P) {
  const Vec3 phi = so3_log(P.rotation());
  Vec6 out;
  out.head<3>() = so3_left_jacobian_inverse(phi) * P.translation();
  out.tail<3>() = phi;
  return out;
}

void StereoIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !(baseline > 0.0)) {
    throw std::invalid_argument("stereo intrinsics require fx, fy, baseline > 0");
  }
}

std::optional<StereoMeasurement> try_project_camera(const Vec3& p, const StereoIntrinsics& K,
                                                    const GeometryLimits& limits) {
  if (!(p.z() > limits.depth_min)) return std::nullopt;
  const double inv_z = 1.0 / p.z();
  return StereoMeasurement{K.fx * p.x() * inv_z + K.cx, K.fy * p.y() * inv_z + K.cy,
                           K.fx * (p.x() - K.baseline) * inv_z + K.cx};
}

StereoMeasurement project_camera(const Vec3& p, const StereoIntrinsics& K,
                                 const GeometryLimits& limits) {
  auto z = try_project_camera(p, K, limits);
  if (!z) {
    throw GeometryError(GeometryErrorKind::NonPositiveDepth,
                        "point depth " + std::to_string(p.z()) + " below depth floor");
  }
  return *z;
}

StereoMeasurement project(const Pose& cam_from_world, const Vec3& point_world,
                          const StereoIntrinsics& K, const GeometryLimits& limits) {
  return project_camera(cam_from_world * point_world, K, limits);
}

std::optional<Vec3> try_back_project(const StereoMeasurement& z, const StereoIntrinsics& K,
                                     const GeometryLimits& limits) {
  const double d = z.disparity();
  if (!(d > limits.disparity_min)) return std::nullopt;
  const double depth = K.fx * K.baseline / d;
  return Vec3((z.uL - K.cx) * depth / K.fx, (z.vL - K.cy) * depth / K.fy, depth);
}

Vec3 back_project(const StereoMeasurement& z, const StereoIntrinsics& K,
                  const GeometryLimits& limits) {
  auto p = try_back_project(z, K, limits);
  if (!p) {
    throw GeometryError(GeometryErrorKind::DegenerateDisparity,
                        "disparity " + std::to_string(z.disparity()) + " below floor");
  }
  return *p;
}

Mat3 projection_jacobian(const Vec3& p, const StereoIntrinsics& K, const GeometryLimits& limits) {
  if (!(p.z() > limits.depth_min)) {
    throw GeometryError(GeometryErrorKind::NonPositiveDepth, "point depth below depth floor");
  }
  const double iz = 1.0 / p.z();
  const double iz2 = iz * iz;
  Mat3 J;
  J << K.fx * iz, 0.0, -K.fx * p.x() * iz2,
       0.0, K.fy * iz, -K.fy * p.y() * iz2,
       K.fx * iz, 0.0, -K.fx * (p.x() - K.baseline) * iz2;
  return J;
}

Mat3 back_projection_jacobian(const StereoMeasurement& z, const StereoIntrinsics& K,
                              const GeometryLimits& limits) {
  const double d = z.disparity();
  if (!(d > limits.disparity_min)) {
    throw GeometryError(GeometryErrorKind::DegenerateDisparity, "disparity below floor");
  }
  const double b = K.baseline;
  const double du = z.uL - K.cx;
  const double dv = z.vL - K.cy;
  const double id = 1.0 / d;
  const double id2 = id * id;
  const double ky = K.fx / K.fy;
  Mat3 J;
  J << b * id - du * b * id2, 0.0, du * b * id2,
       -dv * ky * b * id2, ky * b * id, dv * ky * b * id2,
       -K.fx * b * id2, 0.0, K.fx * b * id2;
  return J;
}

Covariance3 propagate_measurement_noise(const StereoMeasurement& z, const Covariance3& sigma_z,
                                        const StereoIntrinsics& K, const GeometryLimits& limits) {
  const Mat3 J = back_projection_jacobian(z, K, limits);
  Covariance3 out = J * sigma_z * J.transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace mbvo
