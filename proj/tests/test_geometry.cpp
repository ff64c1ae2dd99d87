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

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <numbers>
#include <random>

#include "test_util.hpp"

using namespace mbvo;
using mbvo::testing::numeric_jacobian;
using mbvo::testing::relative_error;

namespace {

const StereoIntrinsics kUnit{1.0, 1.0, 0.0, 0.0, 1.0};
const StereoIntrinsics kSecond{100.0, 100.0, 50.0, 50.0, 0.5};
const StereoIntrinsics kCamera{520.0, 515.0, 320.0, 240.0, 0.12};

Vec3 random_visible_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> xy(-3.0, 3.0), depth(0.5, 30.0);
  return {xy(rng), xy(rng), depth(rng)};
}

}  // namespace

TEST(Project, OpticalAxisPoint) {
  const auto z = project(Pose::identity(), Vec3(0, 0, 1), kUnit);
  EXPECT_DOUBLE_EQ(z.uL, 0.0);
  EXPECT_DOUBLE_EQ(z.vL, 0.0);
  EXPECT_DOUBLE_EQ(z.uR, -1.0);
}

TEST(Project, HandEvaluatedPinhole) {
  const auto z = project(Pose::identity(), Vec3(1, 1, 2), kSecond);
  EXPECT_DOUBLE_EQ(z.uL, 100.0);
  EXPECT_DOUBLE_EQ(z.vL, 100.0);
  EXPECT_DOUBLE_EQ(z.uR, 75.0);
}

TEST(Project, RejectsPointsNearOrBehindCamera) {
  try {
    project(Pose::identity(), Vec3(0, 0, 0.05), kUnit);
    FAIL() << "expected NonPositiveDepth";
  } catch (const GeometryError& e) {
    EXPECT_EQ(e.kind(), GeometryErrorKind::NonPositiveDepth);
  }
  EXPECT_THROW(project(Pose::identity(), Vec3(0, 0, -2.0), kUnit), GeometryError);
  EXPECT_FALSE(try_project_camera(Vec3(0, 0, 0.1), kUnit).has_value());
}

TEST(BackProject, InvertsExamples) {
  EXPECT_TRUE(back_project({0, 0, -1}, kUnit).isApprox(Vec3(0, 0, 1), 1e-15));
  EXPECT_TRUE(back_project({100, 100, 75}, kSecond).isApprox(Vec3(1, 1, 2), 1e-15));
}

TEST(BackProject, DegenerateDisparity) {
  try {
    back_project({10.0, 5.0, 10.0}, kCamera);
    FAIL() << "expected DegenerateDisparity";
  } catch (const GeometryError& e) {
    EXPECT_EQ(e.kind(), GeometryErrorKind::DegenerateDisparity);
  }
  EXPECT_FALSE(try_back_project({10.0, 5.0, 10.0 - 5e-4}, kCamera).has_value());
}

TEST(ProjectBackProject, RoundTrips) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p = random_visible_point(rng);
    const Vec3 q = back_project(project_camera(p, kCamera), kCamera);
    EXPECT_LT((p - q).norm(), 1e-9);
  }
  std::uniform_real_distribution<double> u(0, 640), v(0, 480), d(1.0, 80.0);
  for (int i = 0; i < 100; ++i) {
    const double uL = u(rng);
    const StereoMeasurement z{uL, v(rng), uL - d(rng)};
    const auto back = project_camera(back_project(z, kCamera), kCamera);
    EXPECT_LT((back.vector() - z.vector()).norm(), 1e-9);
  }
}

TEST(Jacobians, MatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p = random_visible_point(rng);
    const Mat3 Ja = projection_jacobian(p, kCamera);
    const Mat3 Jn = numeric_jacobian<3, 3>(
        [](const Vec3& x) { return project_camera(x, kCamera).vector(); }, p);
    EXPECT_LT(relative_error(Ja, Jn), 1e-5);

    const StereoMeasurement z = project_camera(p, kCamera);
    const Mat3 Jb = back_projection_jacobian(z, kCamera);
    const Mat3 Jbn = numeric_jacobian<3, 3>(
        [](const Vec3& x) { return back_project(StereoMeasurement::from_vector(x), kCamera); },
        z.vector());
    EXPECT_LT(relative_error(Jb, Jbn), 1e-5);
    EXPECT_LT(relative_error(Jb, Ja.inverse()), 1e-6);
  }
}

TEST(Jacobians, RightImageDepthDerivative) {
  const Mat3 J = projection_jacobian(Vec3(0, 0, 1), kUnit);
  EXPECT_DOUBLE_EQ(J(2, 2), 1.0);
}

TEST(NoisePropagation, IdentityWhenJacobianIsIdentity) {
  // fx = fy = baseline = 1 at disparity 1 and principal point: J = diag(1, 1, -1) up to the
  // uR column coupling; use a measurement at the principal point so J^T J = I after
  // propagation of an isotropic input.
  const StereoMeasurement z{0.0, 0.0, -1.0};
  const Covariance3 out = propagate_measurement_noise(z, Mat3::Identity(), kUnit);
  const Mat3 J = back_projection_jacobian(z, kUnit);
  EXPECT_LT((out - J * J.transpose()).norm(), 1e-15);
  // J = [[1,0,0],[0,1,0],[-1,0,1]]: the lateral block is exactly identity.
  EXPECT_NEAR(out(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(out(1, 1), 1.0, 1e-15);
}

TEST(NoisePropagation, LinearInInputCovariance) {
  std::mt19937_64 rng(3);
  const StereoMeasurement z = project_camera(Vec3(0.4, -0.2, 6.0), kCamera);
  const Covariance3 S = mbvo::testing::random_spd(rng);
  const Covariance3 a = propagate_measurement_noise(z, S, kCamera);
  const Covariance3 b = propagate_measurement_noise(z, 2.0 * S, kCamera);
  EXPECT_EQ(b, 2.0 * a);
}

TEST(NoisePropagation, GrowsWithDepthAsFiniteDifferencesPredict) {
  const Mat3 S = Mat3::Identity();
  const StereoMeasurement near = project_camera(Vec3(0.1, 0.1, 1.0), kCamera);
  const StereoMeasurement far = project_camera(Vec3(1.0, 1.0, 10.0), kCamera);
  const double tr_near = propagate_measurement_noise(near, S, kCamera).trace();
  const double tr_far = propagate_measurement_noise(far, S, kCamera).trace();
  EXPECT_GT(tr_far, tr_near);

  auto fd_trace = [&](const StereoMeasurement& z) {
    const Mat3 J = numeric_jacobian<3, 3>(
        [](const Vec3& x) { return back_project(StereoMeasurement::from_vector(x), kCamera); },
        z.vector());
    return (J * S * J.transpose()).trace();
  };
  EXPECT_NEAR(tr_far / tr_near, fd_trace(far) / fd_trace(near), 1e-4 * tr_far / tr_near);
}

TEST(NoisePropagation, PreservesSymmetricPositiveDefinite) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const StereoMeasurement z = project_camera(random_visible_point(rng), kCamera);
    const Covariance3 out = propagate_measurement_noise(z, mbvo::testing::random_spd(rng), kCamera);
    EXPECT_LT((out - out.transpose()).norm(), 1e-12 * out.norm());
    Eigen::SelfAdjointEigenSolver<Mat3> es(out);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  }
}

TEST(Se3, ExpOfZeroIsIdentity) {
  const Pose P = se3_exp(Vec6::Zero());
  EXPECT_EQ(P.rotation(), Mat3::Identity());
  EXPECT_EQ(P.translation(), Vec3::Zero());
}

TEST(Se3, PureTranslation) {
  Vec6 xi;
  xi << 1.0, -2.0, 3.0, 0.0, 0.0, 0.0;
  const Pose P = se3_exp(xi);
  EXPECT_EQ(P.rotation(), Mat3::Identity());
  EXPECT_TRUE(P.translation().isApprox(Vec3(1, -2, 3)));
}

TEST(Se3, ExpLogRoundTrip) {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi - 1e-3);
  for (int i = 0; i < 1000; ++i) {
    Vec3 axis(u(rng), u(rng), u(rng));
    axis.normalize();
    Vec6 xi;
    xi.head<3>() = mbvo::testing::random_vec3(rng, -5.0, 5.0);
    xi.tail<3>() = axis * angle(rng);
    const Vec6 back = se3_log(se3_exp(xi));
    EXPECT_LT((back - xi).norm(), 1e-9) << "twist " << xi.transpose();
  }
}

TEST(Se3, LogNearPiThrows) {
  Vec6 xi = Vec6::Zero();
  xi(3) = std::numbers::pi - 1e-8;
  try {
    se3_log(se3_exp(xi));
    FAIL() << "expected NearPiRotation";
  } catch (const GeometryError& e) {
    EXPECT_EQ(e.kind(), GeometryErrorKind::NearPiRotation);
  }
}

TEST(PoseAlgebra, GroupAxioms) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 100; ++i) {
    const Pose a = mbvo::testing::random_pose(rng, 3.0, 10.0);
    const Pose b = mbvo::testing::random_pose(rng, 3.0, 10.0);
    const Pose c = mbvo::testing::random_pose(rng, 3.0, 10.0);
    const Pose id = a * a.inverse();
    EXPECT_LT((id.rotation() - Mat3::Identity()).norm(), 1e-9);
    EXPECT_LT(id.translation().norm(), 1e-9);
    EXPECT_NEAR(a.rotation().determinant(), 1.0, 1e-9);
    EXPECT_LT((a.rotation() * a.rotation().transpose() - Mat3::Identity()).norm(), 1e-9);
    const Pose l = (a * b) * c;
    const Pose r = a * (b * c);
    EXPECT_LT((l.rotation() - r.rotation()).norm(), 1e-9);
    EXPECT_LT((l.translation() - r.translation()).norm(), 1e-9);
    const Pose u = Pose::identity() * a * Pose::identity();
    EXPECT_LT((u.rotation() - a.rotation()).norm(), 1e-15);
    EXPECT_LT((u.translation() - a.translation()).norm(), 1e-15);
  }
}

TEST(PoseAlgebra, QuaternionRoundTrip) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    const Pose a = mbvo::testing::random_pose(rng, 3.0, 10.0);
    const Pose b = Pose::from_quaternion(a.quaternion(), a.translation());
    EXPECT_LT((a.rotation() - b.rotation()).norm(), 1e-12);
    EXPECT_GE(a.quaternion().w(), 0.0);
  }
}

TEST(PoseAlgebra, RelativeTransform) {
  std::mt19937_64 rng(21);
  const Pose a = mbvo::testing::random_pose(rng, 1.0, 2.0);
  const Pose b = mbvo::testing::random_pose(rng, 1.0, 2.0);
  const Pose ab = relative(a, b);
  const Pose back = a * ab;
  EXPECT_LT((back.rotation() - b.rotation()).norm(), 1e-12);
  EXPECT_LT((back.translation() - b.translation()).norm(), 1e-12);
}
