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


#include "mbvo/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <limits>
#include <string>
#include <thread>

namespace mbvo {

namespace {

class StageTimer {
 public:
  explicit StageTimer(double& acc) : acc_(acc), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    acc_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  double& acc_;
  std::chrono::steady_clock::time_point start_;
};

// A detector box hugs the nearest object, but sparse features behind it also
// fall inside. Split the in-box cloud at depth gaps and keep the nearest group
// large enough to seed a cluster. Returns the group's [min, max] camera depth.
std::pair<double, double> nearest_depth_group(std::vector<double> depths, std::size_t min_size) {
  std::sort(depths.begin(), depths.end());
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= depths.size(); ++i) {
    const bool split =
        i == depths.size() || depths[i] - depths[i - 1] > std::max(1.0, 0.1 * depths[i - 1]);
    if (!split) continue;
    if (i - begin >= min_size) return {depths[begin], depths[i - 1]};
    begin = i;
  }
  // No group is large enough: keep everything.
  if (depths.empty()) return {0.0, 0.0};
  return {depths.front(), depths.back()};
}

}  // namespace

int resolve_worker_count(int configured) {
  int n = configured > 0 ? configured
                         : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("CLUSTERVO_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap > 0) n = std::min(n, static_cast<int>(cap));
  }
  return std::max(1, n);
}

struct Engine::Node {
  int feature = -1;
  int landmark = -1;
  Vec3 world = Vec3::Zero();
  Covariance3 cam_cov = Covariance3::Identity();
};

Engine::Engine(EngineConfig config, CameraModel camera)
    : config_(std::move(config)), camera_(camera), window_(config_.window) {
  camera_.intrinsics.validate();
  workers_ = resolve_worker_count(config_.threads);
}

Covariance3 Engine::sigma_z() const {
  return config_.pixel_sigma * config_.pixel_sigma * Covariance3::Identity();
}

Pose Engine::predict_camera() const {
  if (history_.empty()) return Pose{};
  const Pose& p1 = history_.back().camera;
  if (history_.size() < 2) return p1;
  const Pose& p0 = history_[history_.size() - 2].camera;
  Pose p = p1 * (p0.inverse() * p1);
  p.normalize();
  return p;
}

std::set<int> Engine::cluster_members(int cluster) const {
  std::set<int> out;
  for (const auto& [id, lm] : landmarks_)
    if (lm.cluster_id == cluster) out.insert(id);
  return out;
}

FrameOutput Engine::process_frame(const FrameObservations& frame) {
  if (!history_.empty() &&
      (frame.index <= history_.back().frame || !(frame.timestamp > history_.back().timestamp))) {
    throw std::invalid_argument("process_frame: frames must arrive in increasing order");
  }
  const StereoIntrinsics& K = camera_.intrinsics;
  const int t = frame.index;
  const std::size_t nf = frame.features.size();
  const bool bootstrap = history_.empty();
  std::vector<int> feature_landmark(nf, -1);
  std::vector<bool> taken(nf, false);

  FrameOutput out;
  out.frame = t;
  out.timestamp = frame.timestamp;
  Pose camera = predict_camera();
  if (bootstrap) prior_ = InformationPrior::anchor(t, camera, config_.anchor_information);

  // Static landmarks: nearest neighbour in the prediction window.
  {
    StageTimer timer(timings_.association);
    std::vector<Prediction> preds;
    const Pose cam_from_world = camera.inverse();
    for (const auto& [id, lm] : landmarks_) {
      if (!lm.is_static() || !lm.has_covariance() ||
          lm.last_observed_frame < t - config_.live_frames)
        continue;
      if (auto p = predict_landmark(lm, lm.position, Vec3::Zero(), cam_from_world, K, config_.limits))
        preds.push_back(std::move(*p));
    }
    const auto m = associate_nearest(preds, frame.features, taken, config_.association);
    for (std::size_t k = 0; k < nf; ++k)
      if (m[k] >= 0) {
        feature_landmark[k] = m[k];
        taken[k] = true;
      }
  }

  if (!bootstrap) {
    StageTimer timer(timings_.tracking);
    std::vector<Vec3> points;
    std::vector<StereoMeasurement> zs;
    for (std::size_t k = 0; k < nf; ++k) {
      if (feature_landmark[k] < 0) continue;
      points.push_back(landmarks_.at(feature_landmark[k]).position);
      zs.push_back(frame.features[k].z);
    }
    const PoseTracking tr = track_camera(camera, points, zs, sigma_z(), K, config_.solver,
                                         config_.chi2_threshold, config_.track_rounds);
    out.static_inliers = tr.inlier_count;
    if (tr.inlier_count >= config_.min_static_matches)
      camera = tr.camera;
    else
      out.tracking_lost = true;
  }

  // Predicted states of live clusters, then gated and box-level association.
  std::map<int, ClusterFrameState> states;
  BoxAssociation boxes;
  boxes.box_to_cluster.assign(frame.boxes.size(), -1);
  {
    StageTimer timer(timings_.association);
    if (!bootstrap) {
      const double dt = frame.timestamp - history_.back().timestamp;
      for (const auto& [id, c] : clusters_) {
        if (!c.alive) continue;
        const auto it = history_.back().clusters.find(id);
        if (it == history_.back().clusters.end()) continue;
        ClusterFrameState s = it->second;
        s.pose.translation() += s.velocity * dt;
        states[id] = s;
      }
      std::vector<Prediction> dyn;
      const Pose cam_from_world = camera.inverse();
      for (const auto& [id, lm] : landmarks_) {
        if (!lm.is_dynamic() || !lm.has_covariance()) continue;
        const auto prev = history_.back().clusters.find(lm.cluster_id);
        if (!states.count(lm.cluster_id) || prev == history_.back().clusters.end()) continue;
        const Vec3 world = prev->second.pose * lm.position;
        if (auto p = predict_landmark(lm, world, prev->second.velocity * dt, cam_from_world, K,
                                      config_.limits))
          dyn.push_back(std::move(*p));
      }
      const auto m = associate_features(dyn, frame.features, taken, config_.association);
      std::set<int> matched;
      for (std::size_t k = 0; k < nf; ++k)
        if (m[k] >= 0) {
          feature_landmark[k] = m[k];
          taken[k] = true;
          matched.insert(m[k]);
        }
      boxes = associate_boxes(frame.boxes, dyn, config_.association);
      for (std::size_t b = 0; b < frame.boxes.size(); ++b) {
        const int q = boxes.box_to_cluster[b];
        if (q < 0) continue;
        std::vector<Prediction> candidates;
        for (const auto& p : dyn)
          if (p.cluster_id == q && !matched.count(p.landmark_id)) candidates.push_back(p);
        for (const auto& [k, id] :
             box_interior_rematch(frame.boxes[b], candidates, frame.features, taken, config_.association)) {
          feature_landmark[k] = id;
          taken[k] = true;
          matched.insert(id);
        }
      }
    }
  }

  {
    StageTimer timer(timings_.clustering);
    run_clustering(frame, camera, feature_landmark, states, boxes.box_to_cluster);
  }

  // Liveness and the window entry of this frame.
  FrameEntry entry;
  entry.id = t;
  entry.timestamp = frame.timestamp;
  entry.camera = camera;
  for (std::size_t k = 0; k < nf; ++k) {
    const int id = feature_landmark[k];
    if (id < 0) continue;
    const Landmark& lm = landmarks_.at(id);
    if (lm.cluster_id < 0) continue;
    entry.matches.emplace_back(static_cast<int>(k), id);
    if (lm.is_static())
      entry.static_landmarks.insert(id);
    else
      entry.observed_clusters.insert(lm.cluster_id);
  }
  for (auto& [id, c] : clusters_) {
    if (!c.alive) continue;
    if (entry.observed_clusters.count(id)) c.last_seen = t;
    // last_seen counts frames, so liveness follows the frame index.
    if (t - c.last_seen >= config_.live_frames) c.alive = false;
    if (!c.alive) states.erase(id);
  }
  entry.clusters = states;

  history_.push_back({t, frame.timestamp, camera, out.tracking_lost, states});
  {
    StageTimer timer(timings_.window);
    handle_window_update(window_.push_frame(std::move(entry)));
  }
  {
    StageTimer timer(timings_.static_optimization);
    optimize_static_window();
  }
  {
    StageTimer timer(timings_.cluster_optimization);
    optimize_clusters();
  }

  const FrameRecord& rec = history_.back();
  out.camera = rec.camera;
  const FrameEntry& newest = window_.newest();
  for (const auto& [id, s] : rec.clusters) {
    ClusterOutput co;
    co.id = id;
    co.pose = s.pose;
    co.velocity = s.velocity;
    for (const auto& [k, lm] : newest.matches)
      if (landmarks_.count(lm) && landmarks_.at(lm).cluster_id == id) co.members.push_back(lm);
    std::sort(co.members.begin(), co.members.end());
    out.clusters.push_back(std::move(co));
  }
  out.feature_landmarks = feature_landmark;
  out.feature_clusters.assign(nf, -1);
  for (std::size_t k = 0; k < nf; ++k) {
    const auto it = landmarks_.find(feature_landmark[k]);
    if (it != landmarks_.end()) out.feature_clusters[k] = it->second.cluster_id;
  }
  consecutive_lost_ = out.tracking_lost ? consecutive_lost_ + 1 : 0;
  return out;
}

void Engine::run_clustering(const FrameObservations& frame, const Pose& camera,
                            std::vector<int>& feature_landmark,
                            std::map<int, ClusterFrameState>& states,
                            const std::vector<int>& box_to_cluster) {
  const StereoIntrinsics& K = camera_.intrinsics;
  const int t = frame.index;
  const Covariance3 Sz = sigma_z();
  const Mat3& Rc = camera.rotation();

  std::vector<Node> nodes;
  for (std::size_t k = 0; k < frame.features.size(); ++k) {
    const auto tri = triangulate(frame.features[k].z, camera, K, Sz, config_.limits);
    if (!tri) continue;
    nodes.push_back({static_cast<int>(k), feature_landmark[k], tri->world, tri->camera_cov});
  }

  auto record = [&](Landmark& lm, const Node& n) {
    lm.observations[t] = frame.features[n.feature].z;
    lm.last_observed_frame = t;
    update_best_covariance(lm, n.cam_cov, Rc);
  };
  auto create = [&](const Node& n, int cluster) {
    Landmark lm;
    lm.id = next_landmark_id_++;
    lm.cluster_id = cluster;
    lm.position = cluster > 0 ? states.at(cluster).pose.inverse() * n.world : n.world;
    lm.descriptor = frame.features[n.feature].descriptor;
    record(lm, n);
    feature_landmark[n.feature] = lm.id;
    landmarks_.emplace(lm.id, std::move(lm));
  };

  // Matched features without a valid triangulation still count as observations.
  std::vector<bool> is_node(frame.features.size(), false);
  for (const auto& n : nodes) is_node[n.feature] = true;
  for (std::size_t k = 0; k < frame.features.size(); ++k) {
    if (is_node[k] || feature_landmark[k] < 0) continue;
    Landmark& lm = landmarks_.at(feature_landmark[k]);
    lm.observations[t] = frame.features[k].z;
    lm.last_observed_frame = t;
  }

  if (history_.empty()) {
    // Bootstrap: no clusters exist yet, everything is static.
    for (const auto& n : nodes) {
      if (n.landmark >= 0)
        record(landmarks_.at(n.landmark), n);
      else
        create(n, kStaticCluster);
    }
    return;
  }
  if (nodes.empty()) return;

  // Labels: static, live clusters, unassociated boxes, outlier.
  std::vector<Label> labels{{LabelKind::Static, kStaticCluster, -1}};
  std::map<int, int> cluster_label;
  for (const auto& [id, s] : states) {
    cluster_label[id] = static_cast<int>(labels.size());
    labels.push_back({LabelKind::Cluster, id, -1});
  }
  std::vector<int> box_label(frame.boxes.size(), -1);
  for (std::size_t b = 0; b < frame.boxes.size(); ++b) {
    const int q = box_to_cluster[b];
    if (q >= 0 && cluster_label.count(q)) {
      box_label[b] = cluster_label[q];
    } else {
      box_label[b] = static_cast<int>(labels.size());
      labels.push_back({LabelKind::NewBox, -1, static_cast<int>(b)});
    }
  }
  labels.push_back({LabelKind::Outlier, kOutlierCluster, -1});
  const int M = static_cast<int>(labels.size());

  std::map<int, std::set<int>> membership;
  for (const auto& [id, s] : states) membership[id] = cluster_members(id);

  const bool use_3d = config_.unary_terms != UnaryTerms::k2D;
  const Pose cam_from_world = camera.inverse();
  std::vector<std::optional<SpatialModel>> models(static_cast<std::size_t>(M));
  std::vector<std::optional<std::pair<double, double>>> box_depth(static_cast<std::size_t>(M));
  if (use_3d) {
    for (int l = 0; l < M; ++l) {
      std::vector<Vec3> pts;
      if (labels[l].kind == LabelKind::Cluster) {
        const Pose& P = states.at(labels[l].cluster_id).pose;
        for (int id : membership.at(labels[l].cluster_id)) pts.push_back(P * landmarks_.at(id).position);
        if (!pts.empty()) {
          std::pair<double, double> range{std::numeric_limits<double>::infinity(),
                                          -std::numeric_limits<double>::infinity()};
          for (const Vec3& p : pts) {
            const double d = (cam_from_world * p).z();
            range = {std::min(range.first, d), std::max(range.second, d)};
          }
          box_depth[l] = range;
        }
      } else if (labels[l].kind == LabelKind::NewBox) {
        const SemanticBox& box = frame.boxes[static_cast<std::size_t>(labels[l].box_index)];
        std::vector<double> depths;
        for (const auto& n : nodes) {
          const auto& z = frame.features[n.feature].z;
          if (box.contains(z.uL, z.vL)) depths.push_back((cam_from_world * n.world).z());
        }
        const auto range = nearest_depth_group(std::move(depths),
                                               static_cast<std::size_t>(config_.min_new_cluster_size));
        box_depth[l] = range;
        for (const auto& n : nodes) {
          const auto& z = frame.features[n.feature].z;
          const double d = (cam_from_world * n.world).z();
          if (box.contains(z.uL, z.vL) && d >= range.first && d <= range.second) pts.push_back(n.world);
        }
      }
      if (!pts.empty()) models[l] = spatial_model(pts, config_.min_cluster_dimension);
    }
  }

  // Motion evidence from the frame motion_offset back, if it is still in the window.
  const FrameEntry* past = nullptr;
  if (config_.unary_terms == UnaryTerms::kFull &&
      t - history_.front().frame >= config_.motion_offset)
    past = window_.find(t - config_.motion_offset);
  std::vector<std::optional<Pose>> past_transport(static_cast<std::size_t>(M));
  if (past) {
    past_transport[0] = Pose{};
    for (const auto& [id, l] : cluster_label) {
      const auto it = past->clusters.find(id);
      if (it != past->clusters.end()) past_transport[l] = it->second.pose * states.at(id).pose.inverse();
    }
  }

  const Eigen::Index N = static_cast<Eigen::Index>(nodes.size());
  CrfProblem crf;
  crf.unary.resize(N, M);
  crf.alpha = config_.alpha;
  crf.bandwidth = config_.bandwidth;
  const Covariance3 floor = config_.spatial_cov_floor * Covariance3::Identity();
  for (Eigen::Index i = 0; i < N; ++i) {
    const Node& n = nodes[i];
    const auto& z = frame.features[n.feature].z;
    crf.positions.push_back(n.world);
    const VecX l2d = unary_2d(Vec2(z.uL, z.vL), frame.boxes, box_label, M, config_.eta);
    VecX l3d, lmot;
    if (use_3d) l3d = unary_3d(n.world, Rc * n.cam_cov * Rc.transpose() + floor, labels, models,
                               config_.log_p_out);
    if (past) {
      std::vector<MotionEvidence> ev{{z, cam_from_world}};
      const Landmark* lm = n.landmark >= 0 ? &landmarks_.at(n.landmark) : nullptr;
      const auto po = lm ? lm->observations.find(past->id) : std::map<int, StereoMeasurement>::const_iterator{};
      const bool has_past = lm && po != lm->observations.end();
      if (has_past) ev.push_back({po->second, past->camera.inverse()});
      std::vector<std::vector<Pose>> transports(static_cast<std::size_t>(M));
      for (int l = 0; l < M; ++l) {
        if (!past_transport[l]) continue;
        transports[l].push_back(Pose{});
        if (has_past) transports[l].push_back(*past_transport[l]);
      }
      lmot = unary_motion(n.world, ev, transports, Sz, K);
    }
    crf.unary.row(i) = combine_unaries(l2d, l3d, lmot, config_.unary_terms).transpose();
  }

  const MeanFieldResult mf =
      mean_field_infer(crf, config_.mean_field_iterations, config_.label_restarts, false);
  // A new-box label only claims nodes at the depth of the box's object. The
  // rest abstain this frame instead of dragging background into the cluster.
  std::vector<int> node_labels = mf.labels;
  std::vector<bool> abstain(static_cast<std::size_t>(N), false);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto& range = box_depth[static_cast<std::size_t>(node_labels[i])];
    if (!range) continue;
    const double d = (cam_from_world * nodes[i].world).z();
    const double margin = std::max(1.0, 0.1 * d);
    if (d < range->first - margin || d > range->second + margin) {
      abstain[i] = true;
      node_labels[i] = M - 1;
    }
  }
  std::vector<int> node_landmarks;
  for (const auto& n : nodes) node_landmarks.push_back(n.landmark);
  LabelMatch match = match_labels(labels, node_labels, node_landmarks, membership,
                                  config_.min_new_cluster_size);

  for (int l = 0; l < M; ++l) {
    if (match.label_cluster[l] != kSpawnCluster) continue;
    std::vector<Vec3> pts;
    for (Eigen::Index i = 0; i < N; ++i)
      if (node_labels[i] == l) pts.push_back(nodes[i].world);
    const int id = next_cluster_id_++;
    Cluster c;
    c.id = id;
    c.last_seen = t;
    if (labels[l].kind == LabelKind::NewBox)
      c.class_label = frame.boxes[static_cast<std::size_t>(labels[l].box_index)].class_label;
    clusters_[id] = c;
    states[id] = {init_cluster_pose(pts).pose, Vec3::Zero()};
    match.label_cluster[l] = id;
  }

  for (Eigen::Index i = 0; i < N; ++i) {
    const Node& n = nodes[i];
    if (abstain[i]) {
      if (n.landmark >= 0 && landmarks_.at(n.landmark).cluster_id >= 0)
        record(landmarks_.at(n.landmark), n);
      continue;
    }
    const int observed = match.label_cluster[node_labels[i]];
    if (n.landmark < 0) {
      if (observed >= 0) create(n, observed);
      continue;
    }
    Landmark& lm = landmarks_.at(n.landmark);
    const Assignment a =
        update_assignment_weight({lm.cluster_id, lm.weight}, observed, config_.w_max);
    if (a.cluster != lm.cluster_id) {
      if (a.cluster > 0)
        lm.position = states.at(a.cluster).pose.inverse() * n.world;
      else
        lm.position = n.world;
      lm.cluster_id = a.cluster;
    }
    lm.weight = a.weight;
    if (lm.cluster_id >= 0) record(lm, n);
  }
}

void Engine::drop_frame_observations(const FrameEntry& entry) {
  for (const auto& [k, id] : entry.matches) {
    const auto it = landmarks_.find(id);
    if (it != landmarks_.end()) it->second.observations.erase(entry.id);
  }
}

StaticProblem Engine::build_static_problem(const std::optional<FrameEntry>& extra) const {
  StaticProblem p;
  p.sigma_z = sigma_z();
  p.K = camera_.intrinsics;
  for (const auto* track : {&window_.spatial(), &window_.temporal()})
    for (const auto& f : *track) p.cameras[f.id] = f.camera;
  if (extra) p.cameras[extra->id] = extra->camera;
  std::set<int> ids;
  for (const auto* track : {&window_.spatial(), &window_.temporal()})
    for (const auto& f : *track) ids.insert(f.static_landmarks.begin(), f.static_landmarks.end());
  if (extra) ids.insert(extra->static_landmarks.begin(), extra->static_landmarks.end());
  for (int id : ids) {
    const auto it = landmarks_.find(id);
    if (it == landmarks_.end() || !it->second.is_static()) continue;
    const Landmark& lm = it->second;
    bool any = false;
    for (const auto& [f, z] : lm.observations) {
      if (!p.cameras.count(f)) continue;
      p.observations.push_back({f, id, z});
      any = true;
    }
    if (any) p.landmarks[id] = lm.position;
  }
  return p;
}

void Engine::handle_window_update(const WindowUpdate& update) {
  const int newest = window_.newest().id;
  if (update.marginalize) {
    const FrameEntry& f = *update.marginalize;
    const StaticProblem p = build_static_problem(f);
    Marginalization m = marginalize_frame(p, f.id, newest, prior_, config_.solver.huber);
    prior_ = std::move(m.prior);
    drop_frame_observations(f);
    for (int id : m.removed_landmarks) landmarks_.erase(id);
  }
  if (update.discarded) {
    const FrameEntry& f = *update.discarded;
    drop_frame_observations(f);
    if (std::find(prior_.frames.begin(), prior_.frames.end(), f.id) != prior_.frames.end()) {
      const StaticProblem p = build_static_problem(f);
      prior_ = marginalize_frame(p, f.id, newest, prior_, config_.solver.huber).prior;
    }
  }
}

namespace {

FrameRecord* find_record(std::vector<FrameRecord>& history, int frame) {
  const auto it = std::lower_bound(history.begin(), history.end(), frame,
                                   [](const FrameRecord& r, int f) { return r.frame < f; });
  return it != history.end() && it->frame == frame ? &*it : nullptr;
}

}  // namespace

void Engine::optimize_static_window() {
  StaticProblem p = build_static_problem(std::nullopt);
  // Frames with too little support are held to keep the system well posed.
  std::map<int, int> per_frame;
  for (const auto& o : p.observations) ++per_frame[o.frame];
  for (const auto& [f, pose] : p.cameras)
    if (per_frame[f] < 3) p.fixed_frames.insert(f);

  for (int round = 0;; ++round) {
    const SolveSummary s = optimize_static(p, prior_, config_.solver);
    if (s.rank_deficient || round >= config_.chi2_rounds) break;
    const auto chi2 = observation_chi2(p);
    std::vector<StaticObservation> kept;
    bool rejected = false;
    for (std::size_t i = 0; i < p.observations.size(); ++i) {
      const auto& o = p.observations[i];
      if (chi2[i] > config_.chi2_threshold) {
        landmarks_.at(o.landmark).observations.erase(o.frame);
        rejected = true;
      } else {
        kept.push_back(o);
      }
    }
    if (!rejected) break;
    p.observations = std::move(kept);
  }

  for (const auto& [f, pose] : p.cameras) {
    if (FrameEntry* e = window_.find(f)) e->camera = pose;
    if (FrameRecord* r = find_record(history_, f)) r->camera = pose;
  }
  for (const auto& [id, x] : p.landmarks) landmarks_.at(id).position = x;
}

void Engine::optimize_clusters() {
  struct Job {
    int id;
    ClusterProblem problem;
    SolveSummary summary;
  };
  std::vector<Job> jobs;
  std::map<int, Pose> cameras;
  for (const auto& f : window_.temporal()) cameras[f.id] = f.camera;

  for (const auto& [id, s] : window_.newest().clusters) {
    ClusterProblem p;
    p.sigma_z = sigma_z();
    p.K = camera_.intrinsics;
    p.Q = config_.q_spectral * Mat3::Identity();
    std::set<int> frames;
    for (const auto& f : window_.temporal()) {
      const auto it = f.clusters.find(id);
      if (it == f.clusters.end()) continue;
      p.states.push_back({f.id, f.timestamp, it->second.pose, it->second.velocity});
      frames.insert(f.id);
    }
    std::map<int, int> per_frame;
    for (const auto& [lid, lm] : landmarks_) {
      if (lm.cluster_id != id) continue;
      bool any = false;
      for (const auto& [f, z] : lm.observations) {
        if (!frames.count(f)) continue;
        p.observations.push_back({f, lid, z});
        ++per_frame[f];
        any = true;
      }
      if (any) p.body_points[lid] = lm.position;
    }
    const auto supported = std::count_if(per_frame.begin(), per_frame.end(), [&](const auto& kv) {
      return kv.second >= config_.min_cluster_observations;
    });
    if (supported < config_.min_cluster_frames) continue;
    jobs.push_back({id, std::move(p), {}});
  }
  if (jobs.empty()) return;

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        jobs[i].summary = optimize_cluster(jobs[i].problem, cameras, config_.solver);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::min<int>(workers_, static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (const auto& job : jobs) {
    if (job.summary.rank_deficient) continue;
    for (const auto& s : job.problem.states) {
      const ClusterFrameState st{s.pose, s.velocity};
      if (FrameEntry* e = window_.find(s.frame)) e->clusters[job.id] = st;
      if (FrameRecord* r = find_record(history_, s.frame)) r->clusters[job.id] = st;
    }
    for (const auto& [lid, x] : job.problem.body_points) landmarks_.at(lid).position = x;
  }
}

Trajectory Engine::camera_trajectory() const {
  Trajectory tr;
  for (const auto& r : history_) tr.push_back({r.timestamp, r.camera});
  return tr;
}

std::map<int, Trajectory> Engine::cluster_trajectories() const {
  std::map<int, Trajectory> out;
  for (const auto& r : history_)
    for (const auto& [id, s] : r.clusters) out[id].push_back({r.timestamp, s.pose});
  return out;
}

RunResult run_sequence(const EngineConfig& config, const CameraModel& camera,
                       const std::vector<FrameObservations>& frames, int max_lost_frames) {
  Engine engine(config, camera);
  RunResult r;
  for (const auto& f : frames) {
    r.frames.push_back(engine.process_frame(f));
    if (engine.consecutive_lost() > max_lost_frames) {
      r.aborted = true;
      break;
    }
  }
  r.camera = engine.camera_trajectory();
  r.clusters = engine.cluster_trajectories();
  r.timings = engine.timings();
  r.workers = engine.worker_count();
  return r;
}

}  // namespace mbvo
