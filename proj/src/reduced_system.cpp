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


#include "reduced_system.hpp"

#include <Eigen/Cholesky>
#include <algorithm>

namespace mbvo::detail {

namespace {

constexpr double kMinDiagonal = 1e-6;
constexpr double kMinRcond = 1e-14;

void damp(Eigen::Ref<MatX> A, double lambda) {
  for (Eigen::Index i = 0; i < A.rows(); ++i) A(i, i) += lambda * std::max(A(i, i), kMinDiagonal);
}

std::optional<Mat3> invert_spd(const Mat3& A) {
  Eigen::LLT<Mat3> llt(A);
  if (llt.info() != Eigen::Success || llt.rcond() < kMinRcond) return std::nullopt;
  return llt.solve(Mat3::Identity());
}

// S -= sum_ab C_a Hinv C_b^T and rhs -= C_a Hinv b over one point.
void reduce_point(const PointBlock& p, const Mat3& Hinv, MatX& S, VecX& rhs) {
  for (const auto& [oa, Ca] : p.coupling) {
    const Mat63 CaHinv = Ca * Hinv;
    rhs.segment<6>(oa) -= CaHinv * p.b;
    for (const auto& [ob, Cb] : p.coupling) S.block<6, 6>(oa, ob) -= CaHinv * Cb.transpose();
  }
}

}  // namespace

void PointBlock::add_coupling(int offset, const Mat63& block) {
  for (auto& [o, c] : coupling) {
    if (o == offset) {
      c += block;
      return;
    }
  }
  coupling.emplace_back(offset, block);
}

void ReducedSystem::add_reprojection(int pose_offset, int point, const StereoResidual& res,
                                     const Mat3& W, double weight) {
  const Mat3 Ww = weight * W;
  if (pose_offset >= 0) {
    const Mat63 JtW = res.J_pose.transpose() * Ww;
    H.block<6, 6>(pose_offset, pose_offset) += JtW * res.J_pose;
    b.segment<6>(pose_offset) -= JtW * res.r;
    if (point >= 0) points[point].add_coupling(pose_offset, JtW * res.J_point);
  }
  if (point >= 0) {
    const Mat3 JtW = res.J_point.transpose() * Ww;
    points[point].H += JtW * res.J_point;
    points[point].b -= JtW * res.r;
  }
}

std::optional<Step> solve(const ReducedSystem& sys, double lambda) {
  const Eigen::Index n = sys.H.rows();
  MatX S = sys.H;
  VecX rhs = sys.b;
  damp(S, lambda);

  std::vector<Mat3> Hinv(sys.points.size());
  for (std::size_t i = 0; i < sys.points.size(); ++i) {
    Mat3 Hp = sys.points[i].H;
    damp(Hp, lambda);
    auto inv = invert_spd(Hp);
    if (!inv) return std::nullopt;
    Hinv[i] = *inv;
    reduce_point(sys.points[i], Hinv[i], S, rhs);
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    if (!sys.fixed[i]) continue;
    S.row(i).setZero();
    S.col(i).setZero();
    S(i, i) = 1.0;
    rhs(i) = 0.0;
  }

  Step step;
  step.state = VecX::Zero(n);
  if (n > 0) {
    S = 0.5 * (S + S.transpose());
    Eigen::LLT<MatX> llt(S);
    if (llt.info() != Eigen::Success || llt.rcond() < kMinRcond) return std::nullopt;
    step.state = llt.solve(rhs);
    if (!step.state.allFinite()) return std::nullopt;
  }

  step.points.resize(sys.points.size());
  for (std::size_t i = 0; i < sys.points.size(); ++i) {
    Vec3 r = sys.points[i].b;
    for (const auto& [o, C] : sys.points[i].coupling) r -= C.transpose() * step.state.segment<6>(o);
    step.points[i] = Hinv[i] * r;
    if (!step.points[i].allFinite()) return std::nullopt;
  }
  return step;
}

std::pair<MatX, VecX> eliminate_points(const ReducedSystem& sys, bool* regularized) {
  MatX S = sys.H;
  VecX rhs = sys.b;
  for (const auto& p : sys.points) {
    auto inv = invert_spd(p.H);
    if (!inv) {
      if (regularized) *regularized = true;
      inv = (p.H + 1e-9 * Mat3::Identity()).inverse();
    }
    reduce_point(p, *inv, S, rhs);
  }
  return {0.5 * (S + S.transpose()), rhs};
}

}  // namespace mbvo::detail
