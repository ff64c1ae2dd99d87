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


#include "mbvo/clustering.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mbvo/hungarian.hpp"
#include "test_util.hpp"

using namespace mbvo;

namespace {

const StereoIntrinsics kK{520.0, 520.0, 320.0, 240.0, 0.5};

SemanticBox box(double x0, double y0, double x1, double y1) {
  SemanticBox b;
  b.min_corner = {x0, y0};
  b.max_corner = {x1, y1};
  return b;
}

VecX probabilities(const VecX& log_p) {
  const VecX e = log_p.array().exp();
  return e;
}

/// Exhaustive minimum of the CRF energy.
double brute_force_min(const CrfProblem& p) {
  const int n = static_cast<int>(p.positions.size());
  const int m = static_cast<int>(p.unary.cols());
  std::vector<int> labels(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    best = std::min(best, crf_energy(p, labels));
    int k = 0;
    while (k < n && ++labels[k] == m) labels[k++] = 0;
    if (k == n) break;
  }
  return best;
}

/// Minimum over all injective row-to-column maps (rows <= cols).
double brute_force_assignment(const MatX& cost) {
  std::vector<int> cols(cost.cols());
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (Eigen::Index r = 0; r < cost.rows(); ++r) c += cost(r, cols[r]);
    best = std::min(best, c);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

CrfProblem random_problem(std::mt19937_64& rng, int n, int m, double alpha) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, m - 1);
  CrfProblem p;
  p.alpha = alpha;
  p.unary.resize(n, m);
  for (int i = 0; i < n; ++i) {
    // The preferred label leads every other label by at least 1 nat.
    const int preferred = pick(rng);
    const double base = u(rng);
    for (int l = 0; l < m; ++l) p.unary(i, l) = l == preferred ? base : base + 1.0 + u(rng) * 3.0;
    p.positions.push_back(mbvo::testing::random_vec3(rng, 0.0, 2.0));
  }
  return p;
}

}  // namespace

TEST(Unary2d, SingleBoxWithThreeLabels) {
  const std::vector<SemanticBox> boxes{box(0, 0, 100, 100)};
  const std::vector<int> label{1};
  const VecX p = probabilities(unary_2d({50, 50}, boxes, label, 3, 0.95));
  EXPECT_NEAR(p(1), 0.95, 1e-12);
  EXPECT_NEAR(p(0), 0.025, 1e-12);
  EXPECT_NEAR(p(2), 0.025, 1e-12);
}

TEST(Unary2d, NoBoxIsUniform) {
  const std::vector<SemanticBox> boxes{box(0, 0, 100, 100)};
  const std::vector<int> label{1};
  const VecX p = probabilities(unary_2d({150, 50}, boxes, label, 3, 0.95));
  EXPECT_NEAR(p(0), p(1), 1e-15);
  EXPECT_NEAR(p(1), p(2), 1e-15);
}

TEST(Unary2d, OverlappingBoxesSplitEta) {
  const std::vector<SemanticBox> boxes{box(0, 0, 100, 100), box(50, 50, 150, 150)};
  const std::vector<int> label{1, 2};
  const VecX p = probabilities(unary_2d({75, 75}, boxes, label, 4, 0.95));
  EXPECT_NEAR(p(1), 0.475, 1e-12);
  EXPECT_NEAR(p(2), 0.475, 1e-12);
  EXPECT_NEAR(p(0), 0.025, 1e-12);
  EXPECT_NEAR(p(3), 0.025, 1e-12);
}

TEST(Unary3d, HandEvaluatedQuadraticForm) {
  Covariance3 S = Covariance3::Zero();
  S.diagonal() << 0.01, 0.01, 0.04;
  const std::vector<Label> labels{{LabelKind::Static, 0}, {LabelKind::Cluster, 3},
                                  {LabelKind::Outlier}};
  const std::vector<std::optional<SpatialModel>> models{
      std::nullopt, SpatialModel{Vec3(1, 2, 3), 0.5}, std::nullopt};
  const VecX lp = unary_3d(Vec3(1.1, 2, 3.2), S, labels, models, -4.0);
  EXPECT_NEAR(lp(1), -8.0, 1e-12);
  EXPECT_DOUBLE_EQ(lp(0), 0.0);
  EXPECT_DOUBLE_EQ(lp(2), -4.0);
  // At the center the exponent vanishes.
  EXPECT_DOUBLE_EQ(unary_3d(Vec3(1, 2, 3), S, labels, models, -4.0)(1), 0.0);
}

TEST(Unary3d, RatioBetweenClustersIsClosedForm) {
  const std::vector<Label> labels{{LabelKind::Cluster, 1}, {LabelKind::Cluster, 2}};
  const std::vector<std::optional<SpatialModel>> models{SpatialModel{Vec3(0, 0, 0), 1.0},
                                                        SpatialModel{Vec3(3, 0, 0), 1.0}};
  const Vec3 x(1.0, 0.5, 0.0);
  const VecX lp = unary_3d(x, Covariance3::Identity(), labels, models, -4.0);
  const double d1 = x.squaredNorm(), d2 = (x - Vec3(3, 0, 0)).squaredNorm();
  EXPECT_NEAR(std::exp(lp(0) - lp(1)), std::exp(d2 - d1), 1e-9);
}

TEST(SpatialModel, MedianAndPercentileSpread) {
  std::vector<Vec3> pts;
  for (int i = 0; i <= 10; ++i) pts.emplace_back(i, 2.0 * i, 5.0);
  const SpatialModel m = spatial_model(pts);
  EXPECT_TRUE(m.center.isApprox(Vec3(5, 10, 5)));
  // 70th - 30th percentile: 4 along x, 8 along y, 0 along z.
  EXPECT_NEAR(m.dimension, std::sqrt(16.0 + 64.0), 1e-12);
  EXPECT_THROW(spatial_model({}), std::invalid_argument);
}

TEST(UnaryMotion, PerfectStaticHypothesisHasZeroResidual) {
  const Vec3 p(0.3, -0.2, 5.0);
  const Pose cam0 = Pose::identity();
  const Pose cam1{so3_exp(Vec3(0, 0.05, 0)), Vec3(0.2, 0, 0.1)};
  const std::vector<MotionEvidence> ev{{project(cam0, p, kK), cam0}, {project(cam1, p, kK), cam1}};
  const std::vector<std::vector<Pose>> transports{{Pose::identity(), Pose::identity()}};
  const VecX lp = unary_motion(p, ev, transports, Covariance3::Identity(), kK);
  EXPECT_NEAR(lp(0), 0.0, 1e-9);
}

TEST(UnaryMotion, SidewaysClusterShiftInClosedForm) {
  // Point on the optical axis at 5 m; the cluster hypothesis moved it 1 m along x.
  const Vec3 p(0, 0, 5.0);
  const Pose cam = Pose::identity();
  const std::vector<MotionEvidence> ev{{project(cam, p, kK), cam}};
  const Pose shift{Mat3::Identity(), Vec3(1, 0, 0)};
  const std::vector<std::vector<Pose>> transports{{Pose::identity()}, {shift}, {}};
  const VecX lp = unary_motion(p, ev, transports, Covariance3::Identity(), kK);
  const double du = 520.0 * 1.0 / 5.0;  // both uL and uR move by fx * dx / z
  EXPECT_NEAR(lp(1) - lp(0), -2.0 * du * du, 1e-6);
  // Label without trajectory takes the best available value.
  EXPECT_DOUBLE_EQ(lp(2), lp(0));
}

TEST(UnaryMotion, NoEvidenceIsNeutral) {
  const std::vector<std::vector<Pose>> transports{{}, {}};
  EXPECT_TRUE(unary_motion(Vec3(0, 0, 5), {}, transports, Covariance3::Identity(), kK).isZero());
}

TEST(CombineUnaries, NormalizedPerNodeAndRespectsAblation) {
  VecX a(3), b(3), c(3);
  a << std::log(0.95), std::log(0.025), std::log(0.025);
  b << 0.0, -8.0, -4.0;
  c << -100.0, 0.0, 0.0;
  for (auto terms : {UnaryTerms::k2D, UnaryTerms::k2D3D, UnaryTerms::kFull}) {
    const VecX e = combine_unaries(a, b, c, terms);
    EXPECT_NEAR((-e).array().exp().sum(), 1.0, 1e-12);
  }
  const VecX only2d = combine_unaries(a, b, c, UnaryTerms::k2D);
  EXPECT_NEAR(only2d(0), -std::log(0.95), 1e-12);
  // Without motion evidence the full unary reduces to the 2D+3D product.
  EXPECT_TRUE(combine_unaries(a, b, VecX(), UnaryTerms::kFull)
                  .isApprox(combine_unaries(a, b, c, UnaryTerms::k2D3D)));
  VecX bad = a;
  bad(1) = -std::numeric_limits<double>::infinity();
  EXPECT_THROW(combine_unaries(bad, b, c, UnaryTerms::k2D), NonFiniteEnergy);
}

TEST(UnaryTerms, ParseAndPrint) {
  for (const char* s : {"2d", "2d3d", "full"}) EXPECT_EQ(to_string(parse_unary_terms(s)), s);
  EXPECT_THROW(parse_unary_terms("3d"), std::invalid_argument);
}

TEST(Pairwise, PottsKernel) {
  EXPECT_DOUBLE_EQ(pairwise_energy(1, 1, Vec3::Zero(), Vec3(9, 0, 0)), 0.0);
  EXPECT_DOUBLE_EQ(pairwise_energy(0, 1, Vec3(1, 1, 1), Vec3(1, 1, 1)), 1.0);
  EXPECT_NEAR(pairwise_energy(0, 1, Vec3::Zero(), Vec3(0, 2, 0)), std::exp(-4.0), 1e-15);
  EXPECT_NEAR(std::exp(-4.0), 0.0183, 1e-4);
}

TEST(MeanField, ZeroAlphaIsUnaryArgmax) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    CrfProblem p = random_problem(rng, 30, 4, 0.0);
    const auto r = mean_field_infer(p);
    for (int i = 0; i < 30; ++i) {
      Eigen::Index best;
      p.unary.row(i).minCoeff(&best);
      EXPECT_EQ(r.labels[i], best);
    }
  }
}

TEST(MeanField, SingleNodeOneIteration) {
  CrfProblem p;
  p.unary.resize(1, 3);
  p.unary << 2.0, 0.5, 1.0;
  p.positions = {Vec3::Zero()};
  EXPECT_EQ(mean_field_infer(p, 1).labels[0], 1);
}

TEST(MeanField, NonFiniteUnaryRejected) {
  CrfProblem p;
  p.unary.resize(1, 2);
  p.unary << 1.0, std::nan("");
  p.positions = {Vec3::Zero()};
  EXPECT_THROW(mean_field_infer(p), NonFiniteEnergy);
}

TEST(MeanField, SeparatedGroupsAreLabeledUniformly) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  CrfProblem p;
  p.unary.resize(8, 3);
  for (int i = 0; i < 8; ++i) {
    const int group = i < 4 ? 0 : 1;
    p.positions.push_back(Vec3(group * 10.0, 0, 0) + mbvo::testing::random_vec3(rng, 0, 0.5));
    for (int l = 0; l < 3; ++l) p.unary(i, l) = 1.5 + u(rng);
    p.unary(i, group) = 0.5 + u(rng);
  }
  // One dissenting node per group.
  p.unary(1, 0) = 1.4;
  p.unary(1, 2) = 1.0;
  p.unary(6, 1) = 1.4;
  p.unary(6, 0) = 1.0;
  const auto r = mean_field_infer(p);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(r.labels[i], i < 4 ? 0 : 1) << "node " << i;
  EXPECT_NEAR(crf_energy(p, r.labels), brute_force_min(p), 1e-12);
}

TEST(MeanField, FreeEnergyIsMonotone) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const CrfProblem p = random_problem(rng, 40, 5, 5.0);
    const auto r = mean_field_infer(p, 15);
    ASSERT_GE(r.free_energy.size(), 2u);
    ASSERT_LE(r.free_energy.size(), 16u);
    for (std::size_t k = 1; k < r.free_energy.size(); ++k)
      EXPECT_LE(r.free_energy[k], r.free_energy[k - 1] + 1e-9);
    EXPECT_NEAR(r.free_energy.back(), free_energy(p, r.marginals), 1e-9);
    for (Eigen::Index i = 0; i < r.marginals.rows(); ++i)
      EXPECT_NEAR(r.marginals.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(MeanField, MapEnergyNearExhaustiveOptimum) {
  std::mt19937_64 rng(4);
  int close = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + trial % 5;
    const CrfProblem p = random_problem(rng, n, 2 + trial % 2, 5.0);
    const auto r = mean_field_infer(p);
    const double best = brute_force_min(p);
    const double got = crf_energy(p, r.labels);
    EXPECT_GE(got, best - 1e-9);
    if (got - best <= 0.05 * std::abs(best)) ++close;
  }
  EXPECT_GE(close, 95);
}

TEST(Hungarian, MatchesPermutationBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int n = 1; n <= 6; ++n) {
    for (int trial = 0; trial < 200; ++trial) {
      const int cols = n + trial % 2;  // square and wide
      MatX C(n, cols);
      for (Eigen::Index i = 0; i < C.size(); ++i) C(i) = std::round(u(rng) * 2.0) / 2.0;
      const auto a = solve_assignment(C);
      double cost = 0.0;
      std::vector<bool> used(cols, false);
      for (int r = 0; r < n; ++r) {
        ASSERT_GE(a[r], 0);
        ASSERT_FALSE(used[a[r]]);
        used[a[r]] = true;
        cost += C(r, a[r]);
      }
      EXPECT_NEAR(cost, brute_force_assignment(C), 1e-9);
      // Tall matrices leave exactly rows - cols rows unassigned.
      const MatX T = C.transpose();
      const auto at = solve_assignment(T);
      EXPECT_EQ(std::count(at.begin(), at.end(), -1), std::max<Eigen::Index>(0, T.rows() - T.cols()));
    }
  }
}

TEST(Hungarian, ThreeByThreeAgainstBruteForce) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> u(0, 10);
  for (int trial = 0; trial < 200; ++trial) {
    MatX C(3, 3);
    for (Eigen::Index i = 0; i < 9; ++i) C(i) = -u(rng);
    const auto a = solve_assignment(C);
    EXPECT_DOUBLE_EQ(C(0, a[0]) + C(1, a[1]) + C(2, a[2]), brute_force_assignment(C));
  }
}

TEST(MatchLabels, IdentityWhenMembershipUnchanged) {
  const std::vector<Label> labels{{LabelKind::Static, 0}, {LabelKind::Cluster, 4},
                                  {LabelKind::Cluster, 7}, {LabelKind::Outlier}};
  std::map<int, std::set<int>> clusters{{4, {10, 11, 12}}, {7, {20, 21}}};
  const std::vector<int> node_labels{0, 1, 1, 1, 2, 2};
  const std::vector<int> node_lms{1, 10, 11, 12, 20, 21};
  const auto m = match_labels(labels, node_labels, node_lms, clusters);
  EXPECT_EQ(m.label_cluster, (std::vector<int>{0, 4, 7, kOutlierCluster}));
  EXPECT_EQ(m.spawned, 0);
}

TEST(MatchLabels, FollowsMembersWhenLabelsArePermuted) {
  const std::vector<Label> labels{{LabelKind::Static, 0}, {LabelKind::Cluster, 4},
                                  {LabelKind::Cluster, 7}, {LabelKind::Outlier}};
  std::map<int, std::set<int>> clusters{{4, {10, 11, 12}}, {7, {20, 21}}};
  // CRF put cluster 4's landmarks under label 2 and vice versa.
  const std::vector<int> node_labels{2, 2, 2, 1, 1};
  const std::vector<int> node_lms{10, 11, 12, 20, 21};
  const auto m = match_labels(labels, node_labels, node_lms, clusters);
  EXPECT_EQ(m.label_cluster[1], 7);
  EXPECT_EQ(m.label_cluster[2], 4);
}

TEST(MatchLabels, DisjointGroupSpawnsOrBecomesOutlier) {
  const std::vector<Label> labels{{LabelKind::Static, 0}, {LabelKind::NewBox, -1, 0},
                                  {LabelKind::NewBox, -1, 1}, {LabelKind::Outlier}};
  std::map<int, std::set<int>> clusters{{4, {10, 11}}};
  std::vector<int> node_labels, node_lms;
  for (int i = 0; i < 10; ++i) {
    node_labels.push_back(1);
    node_lms.push_back(-1);
  }
  for (int i = 0; i < 5; ++i) {
    node_labels.push_back(2);
    node_lms.push_back(-1);
  }
  const auto m = match_labels(labels, node_labels, node_lms, clusters);
  EXPECT_EQ(m.label_cluster[1], kSpawnCluster);
  EXPECT_EQ(m.label_cluster[2], kOutlierCluster);
  EXPECT_EQ(m.spawned, 1);
}

TEST(AssignmentWeight, SwitchesWhenWeightHitsZero) {
  Assignment a{1, 3};
  a = update_assignment_weight(a, 2);
  EXPECT_EQ(a.cluster, 1);
  EXPECT_EQ(a.weight, 2);
  a = update_assignment_weight(a, 2);
  EXPECT_EQ(a.cluster, 1);
  a = update_assignment_weight(a, 2);
  EXPECT_EQ(a.cluster, 2);
  EXPECT_EQ(a.weight, 1);
}

TEST(AssignmentWeight, ConsistentLabelsAccumulateUpToCap) {
  Assignment a{1, 1};
  for (int i = 0; i < 5; ++i) a = update_assignment_weight(a, 1);
  EXPECT_EQ(a.weight, 6);
  for (int i = 0; i < 200; ++i) a = update_assignment_weight(a, 1);
  EXPECT_EQ(a.weight, 100);
}

TEST(AssignmentWeight, AlternatingLabelsTrace) {
  // Starting at w=1 under cluster 1 and observing 2,1,2,1,...: each
  // disagreement drops w to 0, so the landmark follows every new label.
  Assignment a{1, 1};
  for (int k = 0; k < 6; ++k) {
    const int observed = k % 2 == 0 ? 2 : 1;
    a = update_assignment_weight(a, observed);
    EXPECT_EQ(a.cluster, observed);
    EXPECT_EQ(a.weight, 1);
  }
  // Alternating agreement and disagreement (1,2,1,2,...) oscillates between
  // w=2 and w=1 and never switches.
  a = {1, 1};
  for (int k = 0; k < 6; ++k) {
    a = update_assignment_weight(a, k % 2 == 0 ? 1 : 2);
    EXPECT_EQ(a.cluster, 1);
    EXPECT_EQ(a.weight, k % 2 == 0 ? 2 : 1);
  }
}

TEST(AssignmentWeight, RandomSequencesKeepInvariants) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    Assignment a{label(rng), 1};
    for (int k = 0; k < 200; ++k) {
      const Assignment before = a;
      const int obs = label(rng);
      a = update_assignment_weight(a, obs, 10);
      EXPECT_GE(a.weight, 1);
      EXPECT_LE(a.weight, 10);
      if (a.cluster != before.cluster) {
        EXPECT_EQ(before.weight, 1);
        EXPECT_EQ(a.cluster, obs);
        EXPECT_EQ(a.weight, 1);
      }
    }
  }
}
