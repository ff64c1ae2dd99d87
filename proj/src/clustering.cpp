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

#include <algorithm>
#include <cmath>
#include <limits>

#include "mbvo/hungarian.hpp"

namespace mbvo {

UnaryTerms parse_unary_terms(const std::string& s) {
  if (s == "2d") return UnaryTerms::k2D;
  if (s == "2d3d") return UnaryTerms::k2D3D;
  if (s == "full") return UnaryTerms::kFull;
  throw std::invalid_argument("unary_terms must be 2d, 2d3d or full, got '" + s + "'");
}

std::string to_string(UnaryTerms t) {
  switch (t) {
    case UnaryTerms::k2D: return "2d";
    case UnaryTerms::k2D3D: return "2d3d";
    case UnaryTerms::kFull: return "full";
  }
  return "full";
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return values[lo] + f * (values[hi] - values[lo]);
}

SpatialModel spatial_model(std::span<const Vec3> points, double min_dimension) {
  if (points.empty()) throw std::invalid_argument("spatial_model of empty cloud");
  SpatialModel m;
  Vec3 spread;
  std::vector<double> axis(points.size());
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < points.size(); ++i) axis[i] = points[i](a);
    m.center(a) = percentile(axis, 0.5);
    spread(a) = percentile(axis, 0.7) - percentile(axis, 0.3);
  }
  m.dimension = std::max(spread.norm(), min_dimension);
  return m;
}

VecX unary_2d(const Vec2& pixel, std::span<const SemanticBox> boxes, std::span<const int> box_label,
              int label_count, double eta) {
  std::vector<bool> in(static_cast<std::size_t>(label_count), false);
  int count = 0;
  for (std::size_t b = 0; b < boxes.size() && b < box_label.size(); ++b) {
    const int l = box_label[b];
    if (l < 0 || l >= label_count || in[l]) continue;
    if (!boxes[b].contains(pixel.x(), pixel.y())) continue;
    in[l] = true;
    ++count;
  }
  VecX out(label_count);
  if (count == 0 || count == label_count) {
    out.setConstant(std::log(1.0 / label_count));
    return out;
  }
  const double in_log = std::log(eta / count);
  const double out_log = std::log((1.0 - eta) / (label_count - count));
  for (int l = 0; l < label_count; ++l) out(l) = in[l] ? in_log : out_log;
  return out;
}

VecX unary_3d(const Vec3& point, const Covariance3& sigma, std::span<const Label> labels,
              std::span<const std::optional<SpatialModel>> models, double log_p_out) {
  VecX out = VecX::Zero(static_cast<Eigen::Index>(labels.size()));
  const auto ldlt = sigma.ldlt();
  for (std::size_t l = 0; l < labels.size(); ++l) {
    if (labels[l].kind == LabelKind::Outlier) {
      out(l) = log_p_out;
      continue;
    }
    if (labels[l].kind == LabelKind::Static || l >= models.size() || !models[l]) continue;
    const Vec3 d = point - models[l]->center;
    const double l2 = models[l]->dimension * models[l]->dimension;
    out(l) = -d.dot(ldlt.solve(d)) / l2;
  }
  return out;
}

VecX unary_motion(const Vec3& point, std::span<const MotionEvidence> evidence,
                  std::span<const std::vector<Pose>> transports, const Covariance3& sigma_z,
                  const StereoIntrinsics& K) {
  constexpr double kUnprojectable = -1e6;
  const Eigen::Index M = static_cast<Eigen::Index>(transports.size());
  VecX out = VecX::Zero(M);
  if (evidence.empty()) return out;
  const auto info = sigma_z.ldlt();
  const double log_norm = -0.5 * std::log(sigma_z.determinant());
  std::vector<bool> has(transports.size(), false);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < transports.size(); ++l) {
    if (transports[l].size() != evidence.size()) continue;
    has[l] = true;
    double acc = 0.0;
    for (std::size_t e = 0; e < evidence.size(); ++e) {
      const Vec3 pc = evidence[e].cam_from_world * (transports[l][e] * point);
      const auto zeta = try_project_camera(pc, K);
      if (!zeta) {
        acc += kUnprojectable;
        continue;
      }
      const Vec3 r = evidence[e].z.vector() - zeta->vector();
      acc += -r.dot(info.solve(r)) + log_norm;
    }
    out(l) = acc;
    best = std::max(best, acc);
  }
  if (std::isinf(best)) return VecX::Zero(M);
  for (std::size_t l = 0; l < transports.size(); ++l)
    if (!has[l]) out(l) = best;
  return out;
}

VecX combine_unaries(const VecX& log_2d, const VecX& log_3d, const VecX& log_motion,
                     UnaryTerms terms) {
  VecX s = log_2d;
  if (terms != UnaryTerms::k2D && log_3d.size() == s.size()) s += log_3d;
  if (terms == UnaryTerms::kFull && log_motion.size() == s.size()) s += log_motion;
  if (!s.allFinite()) throw NonFiniteEnergy("non-finite unary log-probability");
  const double mx = s.maxCoeff();
  const double lse = mx + std::log((s.array() - mx).exp().sum());
  return -(s.array() - lse).matrix();
}

double pairwise_kernel(const Vec3& pi, const Vec3& pj, double bandwidth) {
  return std::exp(-(pi - pj).squaredNorm() / (bandwidth * bandwidth));
}

double pairwise_energy(int label_i, int label_j, const Vec3& pi, const Vec3& pj,
                       double bandwidth) {
  return label_i == label_j ? 0.0 : pairwise_kernel(pi, pj, bandwidth);
}

namespace {

MatX kernel_matrix(const CrfProblem& p) {
  const Eigen::Index n = static_cast<Eigen::Index>(p.positions.size());
  MatX Kmat = MatX::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      Kmat(i, j) = Kmat(j, i) = pairwise_kernel(p.positions[i], p.positions[j], p.bandwidth);
  return Kmat;
}

void check(const CrfProblem& p) {
  if (p.unary.rows() != static_cast<Eigen::Index>(p.positions.size()))
    throw std::invalid_argument("CrfProblem: unary rows must match node count");
  if (p.unary.cols() < 1) throw std::invalid_argument("CrfProblem: at least one label");
  if (!p.unary.allFinite()) throw NonFiniteEnergy("non-finite unary energy");
}

double free_energy_with(const CrfProblem& p, const MatX& Kmat, const MatX& Q) {
  double e = (Q.array() * p.unary.array()).sum();
  const MatX S = Kmat * Q;
  e += p.alpha * 0.5 * (Kmat.sum() - (Q.array() * S.array()).sum());
  for (Eigen::Index i = 0; i < Q.size(); ++i)
    if (Q(i) > 0.0) e += Q(i) * std::log(Q(i));
  return e;
}

void softmax_row(const VecX& logits, MatX& Q, Eigen::Index i) {
  const double mx = logits.maxCoeff();
  const VecX ex = (logits.array() - mx).exp();
  Q.row(i) = (ex / ex.sum()).transpose();
}

}  // namespace

double crf_energy(const CrfProblem& problem, std::span<const int> labels) {
  double e = 0.0;
  const std::size_t n = problem.positions.size();
  for (std::size_t i = 0; i < n; ++i) e += problem.unary(i, labels[i]);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      e += problem.alpha * pairwise_energy(labels[i], labels[j], problem.positions[i],
                                           problem.positions[j], problem.bandwidth);
  return e;
}

double free_energy(const CrfProblem& problem, const MatX& Q) {
  check(problem);
  return free_energy_with(problem, kernel_matrix(problem), Q);
}

namespace {

std::vector<int> argmax_labels(const MatX& Q) {
  std::vector<int> labels(static_cast<std::size_t>(Q.rows()));
  for (Eigen::Index i = 0; i < Q.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index l = 1; l < Q.cols(); ++l)
      if (Q(i, l) > Q(i, best)) best = l;
    labels[i] = static_cast<int>(best);
  }
  return labels;
}

MeanFieldResult run_mean_field(const CrfProblem& problem, const MatX& Kmat, const VecX& row_sum,
                               MatX Q, int iterations, bool record) {
  const Eigen::Index n = problem.unary.rows();
  const Eigen::Index m = problem.unary.cols();
  MeanFieldResult r;
  r.marginals = std::move(Q);
  MatX S = Kmat * r.marginals;
  if (record) r.free_energy.push_back(free_energy_with(problem, Kmat, r.marginals));
  for (int it = 0; it < iterations; ++it) {
    double change = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const VecX logits = -problem.unary.row(i).transpose() -
                          problem.alpha * (VecX::Constant(m, row_sum(i)) - S.row(i).transpose());
      const Eigen::RowVectorXd old = r.marginals.row(i);
      softmax_row(logits, r.marginals, i);
      const Eigen::RowVectorXd diff = r.marginals.row(i) - old;
      change = std::max(change, diff.cwiseAbs().maxCoeff());
      S.noalias() += Kmat.col(i) * diff;
    }
    if (record) r.free_energy.push_back(free_energy_with(problem, Kmat, r.marginals));
    // A sweep that moves nothing is a fixed point; further sweeps repeat it.
    if (change < 1e-12) break;
  }
  r.labels = argmax_labels(r.marginals);
  return r;
}

double energy_with(const CrfProblem& p, const MatX& Kmat, std::span<const int> labels) {
  double e = 0.0;
  const Eigen::Index n = Kmat.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    e += p.unary(i, labels[i]);
    for (Eigen::Index j = i + 1; j < n; ++j)
      if (labels[i] != labels[j]) e += p.alpha * Kmat(i, j);
  }
  return e;
}

}  // namespace

MeanFieldResult mean_field_infer(const CrfProblem& problem, int iterations, bool label_restarts,
                                 bool record_free_energy) {
  check(problem);
  const Eigen::Index n = problem.unary.rows();
  const Eigen::Index m = problem.unary.cols();
  const MatX Kmat = kernel_matrix(problem);
  const VecX row_sum = Kmat.rowwise().sum();

  MatX Q(n, m);
  for (Eigen::Index i = 0; i < n; ++i) softmax_row(-problem.unary.row(i).transpose(), Q, i);
  MeanFieldResult best = run_mean_field(problem, Kmat, row_sum, Q, iterations, record_free_energy);
  if (!label_restarts || m == 1 || problem.alpha == 0.0) return best;

  double best_energy = energy_with(problem, Kmat, best.labels);
  for (Eigen::Index l = 0; l < m; ++l) {
    // Start from a state leaning towards label l everywhere.
    Q.setConstant(0.1 / static_cast<double>(m));
    Q.col(l).array() += 0.9;
    MeanFieldResult r = run_mean_field(problem, Kmat, row_sum, Q, iterations, record_free_energy);
    const double e = energy_with(problem, Kmat, r.labels);
    if (e < best_energy) {
      best_energy = e;
      best = std::move(r);
    }
  }
  return best;
}

LabelMatch match_labels(std::span<const Label> labels, std::span<const int> node_labels,
                        std::span<const int> node_landmarks,
                        const std::map<int, std::set<int>>& clusters, int min_new_cluster_size) {
  LabelMatch out;
  out.label_cluster.assign(labels.size(), kOutlierCluster);

  std::vector<int> counts(labels.size(), 0);
  for (int l : node_labels)
    if (l >= 0 && static_cast<std::size_t>(l) < labels.size()) ++counts[l];

  std::vector<std::size_t> rows;
  for (std::size_t l = 0; l < labels.size(); ++l) {
    if (labels[l].kind == LabelKind::Static) out.label_cluster[l] = kStaticCluster;
    if (labels[l].kind == LabelKind::Cluster || labels[l].kind == LabelKind::NewBox)
      rows.push_back(l);
  }
  std::vector<int> cols;
  for (const auto& [id, members] : clusters)
    if (id > 0) cols.push_back(id);

  MatX overlap = MatX::Zero(static_cast<Eigen::Index>(rows.size()),
                            static_cast<Eigen::Index>(cols.size()));
  std::vector<int> row_of(labels.size(), -1);
  for (std::size_t r = 0; r < rows.size(); ++r) row_of[rows[r]] = static_cast<int>(r);
  for (std::size_t k = 0; k < node_labels.size(); ++k) {
    const int l = node_labels[k];
    if (l < 0 || static_cast<std::size_t>(l) >= labels.size() || row_of[l] < 0) continue;
    const int lm = node_landmarks[k];
    if (lm < 0) continue;
    for (std::size_t c = 0; c < cols.size(); ++c)
      if (clusters.at(cols[c]).count(lm)) overlap(row_of[l], static_cast<Eigen::Index>(c)) += 1.0;
  }

  const std::vector<int> assign = solve_assignment(-overlap);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t l = rows[r];
    const int c = assign[r];
    if (c >= 0 && overlap(static_cast<Eigen::Index>(r), c) > 0.0) {
      out.label_cluster[l] = cols[static_cast<std::size_t>(c)];
    } else if (counts[l] >= min_new_cluster_size) {
      out.label_cluster[l] = kSpawnCluster;
      ++out.spawned;
    }
  }
  return out;
}

Assignment update_assignment_weight(Assignment current, int observed, int w_max) {
  if (observed == current.cluster) {
    current.weight = std::min(current.weight + 1, w_max);
    return current;
  }
  if (--current.weight <= 0) return {observed, 1};
  return current;
}

}  // namespace mbvo
