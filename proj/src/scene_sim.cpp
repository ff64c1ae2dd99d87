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


#include "mbvo/scene_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace mbvo::sim {

Path::Path(std::vector<Waypoint> waypoints) : waypoints_(std::move(waypoints)) {
  std::stable_sort(waypoints_.begin(), waypoints_.end(),
                   [](const Waypoint& a, const Waypoint& b) { return a.time < b.time; });
}

std::size_t Path::segment(double t) const {
  // Index i such that t lies in [w_i, w_{i+1}); the last segment absorbs the end.
  std::size_t i = 0;
  while (i + 2 < waypoints_.size() && t >= waypoints_[i + 1].time) ++i;
  return i;
}

Pose Path::at(double t) const {
  if (waypoints_.empty()) return Pose::identity();
  if (waypoints_.size() == 1 || t <= waypoints_.front().time) {
    const auto& w = waypoints_.front();
    return {so3_exp(w.rotation), w.position};
  }
  if (t >= waypoints_.back().time) {
    const auto& w = waypoints_.back();
    return {so3_exp(w.rotation), w.position};
  }
  const std::size_t i = segment(t);
  const Waypoint& a = waypoints_[i];
  const Waypoint& b = waypoints_[i + 1];
  const double span = b.time - a.time;
  const double s = span > 0.0 ? (t - a.time) / span : 0.0;
  const Eigen::Quaterniond qa(so3_exp(a.rotation));
  const Eigen::Quaterniond qb(so3_exp(b.rotation));
  const Vec3 p = (1.0 - s) * a.position + s * b.position;
  return {qa.slerp(s, qb).toRotationMatrix(), p};
}

Vec3 Path::velocity(double t) const {
  if (waypoints_.size() < 2) return Vec3::Zero();
  if (t < waypoints_.front().time || t >= waypoints_.back().time) return Vec3::Zero();
  const std::size_t i = segment(t);
  const Waypoint& a = waypoints_[i];
  const Waypoint& b = waypoints_[i + 1];
  const double span = b.time - a.time;
  return span > 0.0 ? Vec3((b.position - a.position) / span) : Vec3::Zero();
}

void NoiseSpec::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument(std::string(name) + " must be a probability in [0, 1]");
    }
  };
  prob(descriptor_corruption_rate, "descriptor_corruption");
  prob(box_miss_rate, "box_miss");
  prob(feature_dropout_rate, "feature_dropout");
  if (!(pixel_sigma >= 0.0)) throw std::invalid_argument("pixel_sigma must be >= 0");
  if (!(box_jitter_sigma >= 0.0)) throw std::invalid_argument("box_jitter must be >= 0");
}

void ClusterSpec::validate() const {
  if (landmark_count < 4) throw std::invalid_argument("cluster needs at least 4 landmarks");
  if (!(extent.minCoeff() > 0.0)) throw std::invalid_argument("cluster extent must be > 0");
  if (trajectory.empty()) throw std::invalid_argument("cluster trajectory has no waypoints");
  if (class_label.empty() || class_label.find_first_of(" \t\n") != std::string::npos) {
    throw std::invalid_argument("cluster label must be a non-empty token");
  }
}

void WorldSpec::validate() const {
  if (frame_count < 1) throw std::invalid_argument("frame_count must be >= 1");
  if (!(frame_dt > 0.0)) throw std::invalid_argument("frame_dt must be > 0");
  if (static_landmark_count < 0) throw std::invalid_argument("static landmark count < 0");
  if ((static_box_max - static_box_min).minCoeff() <= 0.0 && static_landmark_count > 0) {
    throw std::invalid_argument("static box is empty");
  }
  for (const auto& p : static_patches) {
    if (p.count < 0 || !(p.extent.minCoeff() >= 0.0)) {
      throw std::invalid_argument("static patch needs count >= 0 and extent >= 0");
    }
  }
  for (const auto& c : clusters) c.validate();
  noise.validate();
  camera.intrinsics.validate();
  if (camera.width <= 0 || camera.height <= 0) throw std::invalid_argument("image size <= 0");
  if (!(max_depth > 0.0)) throw std::invalid_argument("max_depth must be > 0");
  if (camera_trajectory.empty()) throw std::invalid_argument("camera trajectory is empty");
}

Vec3 GroundTruth::world_position(int landmark_id, int frame) const {
  const LandmarkTruth& l = landmarks.at(static_cast<std::size_t>(landmark_id));
  if (l.body == 0) return l.position;
  return frames.at(static_cast<std::size_t>(frame))
             .clusters.at(static_cast<std::size_t>(l.body - 1))
             .pose *
         l.position;
}

namespace {

Descriptor random_descriptor(std::mt19937_64& rng) {
  Descriptor d;
  for (std::size_t word = 0; word < kDescriptorBits / 64; ++word) {
    const std::uint64_t bits = rng();
    for (std::size_t b = 0; b < 64; ++b) {
      d[word * 64 + b] = ((bits >> b) & 1u) != 0;
    }
  }
  return d;
}

Vec3 sample_box_surface(std::mt19937_64& rng, const Vec3& e) {
  // Face areas: pairs of faces orthogonal to x, y, z.
  const double ax = e.y() * e.z(), ay = e.x() * e.z(), az = e.x() * e.y();
  std::uniform_real_distribution<double> u(0.0, ax + ay + az);
  std::uniform_real_distribution<double> s(-1.0, 1.0);
  std::bernoulli_distribution sign(0.5);
  const double pick = u(rng);
  Vec3 p{s(rng) * e.x(), s(rng) * e.y(), s(rng) * e.z()};
  const double side = sign(rng) ? 1.0 : -1.0;
  if (pick < ax) {
    p.x() = side * e.x();
  } else if (pick < ax + ay) {
    p.y() = side * e.y();
  } else {
    p.z() = side * e.z();
  }
  return p;
}

struct Visible {
  int landmark;
  StereoMeasurement z;
};

}  // namespace

Dataset generate_world(const WorldSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.rng_seed);
  Dataset out;
  out.camera = spec.camera;
  GroundTruth& gt = out.truth;
  for (const auto& c : spec.clusters) gt.cluster_labels.push_back(c.class_label);

  // Camera path bounding box, grown by the clearance, is kept free of static points.
  Vec3 path_min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 path_max = -path_min;
  for (int k = 0; k < spec.frame_count; ++k) {
    const Vec3 c = spec.camera_trajectory.at(k * spec.frame_dt).translation();
    path_min = path_min.cwiseMin(c);
    path_max = path_max.cwiseMax(c);
  }
  path_min.array() -= spec.static_clearance;
  path_max.array() += spec.static_clearance;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto inside = [](const Vec3& p, const Vec3& lo, const Vec3& hi) {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  };
  for (int i = 0; i < spec.static_landmark_count; ++i) {
    Vec3 p;
    int attempts = 0;
    do {
      if (++attempts > 10000) {
        throw std::invalid_argument("static box lies inside the camera clearance region");
      }
      for (int a = 0; a < 3; ++a) {
        p(a) = spec.static_box_min(a) + unit(rng) * (spec.static_box_max(a) - spec.static_box_min(a));
      }
    } while (inside(p, path_min, path_max));
    gt.landmarks.push_back({static_cast<int>(gt.landmarks.size()), 0, p});
  }
  for (const auto& patch : spec.static_patches) {
    std::uniform_real_distribution<double> s(-1.0, 1.0);
    for (int i = 0; i < patch.count; ++i) {
      const Vec3 offset{s(rng) * patch.extent.x(), s(rng) * patch.extent.y(),
                        s(rng) * patch.extent.z()};
      const Vec3 p = patch.center + offset;
      gt.landmarks.push_back({static_cast<int>(gt.landmarks.size()), 0, p});
    }
  }
  for (std::size_t c = 0; c < spec.clusters.size(); ++c) {
    const auto& cs = spec.clusters[c];
    for (int i = 0; i < cs.landmark_count; ++i) {
      gt.landmarks.push_back({static_cast<int>(gt.landmarks.size()), static_cast<int>(c) + 1,
                              sample_box_surface(rng, cs.extent)});
    }
  }
  std::vector<Descriptor> descriptors;
  descriptors.reserve(gt.landmarks.size());
  for (std::size_t i = 0; i < gt.landmarks.size(); ++i) descriptors.push_back(random_descriptor(rng));

  const StereoIntrinsics& K = spec.camera.intrinsics;
  const GeometryLimits limits;
  std::bernoulli_distribution dropout(spec.noise.feature_dropout_rate);
  std::bernoulli_distribution corrupt(spec.noise.descriptor_corruption_rate);
  std::bernoulli_distribution miss(spec.noise.box_miss_rate);
  std::bernoulli_distribution take_other_bit(0.4);
  std::uniform_int_distribution<std::size_t> any_landmark(
      0, gt.landmarks.empty() ? 0 : gt.landmarks.size() - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int k = 0; k < spec.frame_count; ++k) {
    const double t = k * spec.frame_dt;
    FrameTruth ft;
    ft.index = k;
    ft.timestamp = t;
    ft.camera = spec.camera_trajectory.at(t);
    for (const auto& cs : spec.clusters) {
      ft.clusters.push_back({cs.trajectory.at(t), cs.trajectory.velocity(t)});
    }
    gt.frames.push_back(ft);

    const Pose cam_from_world = ft.camera.inverse();
    std::vector<Visible> visible;
    for (const auto& l : gt.landmarks) {
      const Vec3 pc = cam_from_world * gt.world_position(l.id, k);
      if (pc.z() > spec.max_depth) continue;
      const auto z = try_project_camera(pc, K, limits);
      if (!z || !spec.camera.in_image(z->uL, z->vL) || !spec.camera.in_image(z->uR, z->vL) ||
          !(z->disparity() > limits.disparity_min)) {
        continue;
      }
      visible.push_back({l.id, *z});
    }

    FrameObservations obs;
    obs.index = k;
    obs.timestamp = t;
    FrameTruth& frame_truth = gt.frames.back();

    // Boxes bound the true projections of each visible body.
    for (std::size_t c = 0; c < spec.clusters.size(); ++c) {
      const int body = static_cast<int>(c) + 1;
      Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity());
      Vec2 hi = -lo;
      int n = 0;
      for (const auto& v : visible) {
        if (gt.landmarks[static_cast<std::size_t>(v.landmark)].body != body) continue;
        lo = lo.cwiseMin(Vec2(v.z.uL, v.z.vL));
        hi = hi.cwiseMax(Vec2(v.z.uL, v.z.vL));
        ++n;
      }
      if (n == 0) continue;
      const bool missed = miss(rng);
      if (spec.noise.box_jitter_sigma > 0.0) {
        lo.x() += spec.noise.box_jitter_sigma * gauss(rng);
        lo.y() += spec.noise.box_jitter_sigma * gauss(rng);
        hi.x() += spec.noise.box_jitter_sigma * gauss(rng);
        hi.y() += spec.noise.box_jitter_sigma * gauss(rng);
      }
      lo = lo.cwiseMax(Vec2::Zero());
      hi = hi.cwiseMin(Vec2(spec.camera.width - 1.0, spec.camera.height - 1.0));
      SemanticBox box{lo, hi, spec.clusters[c].class_label, 0.9};
      if (missed || !box.valid()) continue;
      obs.boxes.push_back(box);
      frame_truth.box_bodies.push_back(body);
    }

    std::vector<std::pair<Feature, int>> emitted;
    for (const auto& v : visible) {
      if (dropout(rng)) continue;
      StereoMeasurement z = v.z;
      if (spec.noise.pixel_sigma > 0.0) {
        z.uL += spec.noise.pixel_sigma * gauss(rng);
        z.vL += spec.noise.pixel_sigma * gauss(rng);
        z.uR += spec.noise.pixel_sigma * gauss(rng);
      }
      if (!(z.disparity() > limits.disparity_min)) continue;
      Descriptor d = descriptors[static_cast<std::size_t>(v.landmark)];
      if (corrupt(rng)) {
        const Descriptor& other = descriptors[any_landmark(rng)];
        for (std::size_t b = 0; b < kDescriptorBits; ++b) {
          if (take_other_bit(rng)) d[b] = other[b];
        }
      }
      emitted.push_back({{z, d}, v.landmark});
    }
    std::shuffle(emitted.begin(), emitted.end(), rng);
    for (auto& [f, id] : emitted) {
      obs.features.push_back(f);
      frame_truth.feature_landmarks.push_back(id);
    }
    out.frames.push_back(std::move(obs));
  }

  occlusion_filter(out, spec.occluders);

  const bool anything = std::any_of(out.frames.begin(), out.frames.end(),
                                    [](const FrameObservations& f) { return !f.features.empty(); });
  if (!anything) throw SimulationError("EmptyWorld: no landmark is visible in any frame");
  return out;
}

void occlusion_filter(Dataset& dataset, const std::vector<OccluderSpec>& occluders) {
  const StereoIntrinsics& K = dataset.camera.intrinsics;
  for (std::size_t k = 0; k < dataset.frames.size(); ++k) {
    FrameObservations& obs = dataset.frames[k];
    FrameTruth& ft = dataset.truth.frames[k];
    for (const auto& occ : occluders) {
      if (!occ.active(obs.index)) continue;
      const SemanticBox rect{occ.min_corner, occ.max_corner, "", 1.0};

      std::vector<Feature> features;
      std::vector<int> provenance;
      for (std::size_t i = 0; i < obs.features.size(); ++i) {
        const StereoMeasurement& z = obs.features[i].z;
        const double depth = K.fx * K.baseline / z.disparity();
        if (rect.contains(z.uL, z.vL) && depth > occ.depth) continue;
        features.push_back(obs.features[i]);
        provenance.push_back(ft.feature_landmarks[i]);
      }
      obs.features = std::move(features);
      ft.feature_landmarks = std::move(provenance);

      std::vector<SemanticBox> boxes;
      std::vector<int> bodies;
      const Pose cam_from_world = ft.camera.inverse();
      for (std::size_t b = 0; b < obs.boxes.size(); ++b) {
        const SemanticBox& box = obs.boxes[b];
        const int body = ft.box_bodies[b];
        const double depth =
            (cam_from_world * ft.clusters[static_cast<std::size_t>(body - 1)].pose.translation()).z();
        const bool covered = rect.contains(box.min_corner.x(), box.min_corner.y()) &&
                             rect.contains(box.max_corner.x(), box.max_corner.y());
        if (covered && depth > occ.depth) continue;
        boxes.push_back(box);
        bodies.push_back(body);
      }
      obs.boxes = std::move(boxes);
      ft.box_bodies = std::move(bodies);
    }
  }
}

// ---------------------------------------------------------------------------
// World-spec text format.

namespace {

struct LineReader {
  std::istringstream in;
  int line;
  std::string key;

  double number() {
    double v;
    if (!(in >> v)) throw WorldSpecError(line, "'" + key + "' expects a number");
    return v;
  }
  long long integer() {
    std::string tok;
    if (!(in >> tok)) throw WorldSpecError(line, "'" + key + "' expects an integer");
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw WorldSpecError(line, "'" + key + "' expects an integer");
    return v;
  }
  std::string token() {
    std::string v;
    if (!(in >> v)) throw WorldSpecError(line, "'" + key + "' expects a label");
    return v;
  }
  Vec3 vec3() { return {number(), number(), number()}; }
  void done() {
    std::string extra;
    if (in >> extra) throw WorldSpecError(line, "unexpected trailing token '" + extra + "'");
  }
};

}  // namespace

WorldSpec parse_world_spec(std::istream& input) {
  WorldSpec spec;
  std::vector<Waypoint> camera_waypoints;
  std::vector<std::vector<Waypoint>> cluster_waypoints;
  std::string raw;
  int line_no = 0;
  while (std::getline(input, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    LineReader r{std::istringstream(raw), line_no, {}};
    if (!(r.in >> r.key)) continue;
    const std::string& key = r.key;
    if (key == "frames") {
      spec.frame_count = static_cast<int>(r.integer());
      if (spec.frame_count < 1) throw WorldSpecError(line_no, "frames must be >= 1");
    } else if (key == "frame_dt") {
      spec.frame_dt = r.number();
      if (!(spec.frame_dt > 0.0)) throw WorldSpecError(line_no, "frame_dt must be > 0");
    } else if (key == "seed") {
      spec.rng_seed = static_cast<std::uint64_t>(r.integer());
    } else if (key == "camera") {
      auto& K = spec.camera.intrinsics;
      K.fx = r.number();
      K.fy = r.number();
      K.cx = r.number();
      K.cy = r.number();
      K.baseline = r.number();
    } else if (key == "image") {
      spec.camera.width = static_cast<int>(r.integer());
      spec.camera.height = static_cast<int>(r.integer());
    } else if (key == "max_depth") {
      spec.max_depth = r.number();
    } else if (key == "pixel_sigma") {
      spec.noise.pixel_sigma = r.number();
    } else if (key == "descriptor_corruption") {
      spec.noise.descriptor_corruption_rate = r.number();
    } else if (key == "box_jitter") {
      spec.noise.box_jitter_sigma = r.number();
    } else if (key == "box_miss") {
      spec.noise.box_miss_rate = r.number();
    } else if (key == "feature_dropout") {
      spec.noise.feature_dropout_rate = r.number();
    } else if (key == "static_landmarks") {
      spec.static_landmark_count = static_cast<int>(r.integer());
    } else if (key == "static_box") {
      spec.static_box_min = r.vec3();
      spec.static_box_max = r.vec3();
    } else if (key == "static_clearance") {
      spec.static_clearance = r.number();
    } else if (key == "static_patch") {
      StaticPatch p;
      p.center = r.vec3();
      p.extent = r.vec3();
      p.count = static_cast<int>(r.integer());
      spec.static_patches.push_back(p);
    } else if (key == "camera_waypoint") {
      Waypoint w;
      w.time = r.number();
      w.position = r.vec3();
      w.rotation = r.vec3();
      camera_waypoints.push_back(w);
    } else if (key == "cluster") {
      ClusterSpec c;
      c.class_label = r.token();
      c.landmark_count = static_cast<int>(r.integer());
      c.extent = r.vec3();
      spec.clusters.push_back(c);
      cluster_waypoints.emplace_back();
    } else if (key == "waypoint") {
      if (cluster_waypoints.empty()) {
        throw WorldSpecError(line_no, "'waypoint' must follow a 'cluster' declaration");
      }
      Waypoint w;
      w.time = r.number();
      w.position = r.vec3();
      w.rotation = r.vec3();
      cluster_waypoints.back().push_back(w);
    } else if (key == "occluder") {
      OccluderSpec o;
      o.first_frame = static_cast<int>(r.integer());
      o.last_frame = static_cast<int>(r.integer());
      o.min_corner = {r.number(), r.number()};
      o.max_corner = {r.number(), r.number()};
      o.depth = r.number();
      spec.occluders.push_back(o);
    } else {
      throw WorldSpecError(line_no, "unknown key '" + key + "'");
    }
    r.done();
  }
  spec.camera_trajectory = Path(camera_waypoints);
  for (std::size_t c = 0; c < spec.clusters.size(); ++c) {
    spec.clusters[c].trajectory = Path(cluster_waypoints[c]);
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw WorldSpecError(line_no, e.what());
  }
  return spec;
}

WorldSpec load_world_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open world spec '" + path + "'");
  return parse_world_spec(in);
}

void write_world_spec(std::ostream& out, const WorldSpec& spec) {
  const auto old_precision = out.precision(17);
  auto vec = [&out](const Vec3& v) { out << v.x() << ' ' << v.y() << ' ' << v.z(); };
  auto waypoint = [&](const char* key, const Waypoint& w) {
    out << key << ' ' << w.time << ' ';
    vec(w.position);
    out << ' ';
    vec(w.rotation);
    out << '\n';
  };
  const auto& K = spec.camera.intrinsics;
  out << "frames " << spec.frame_count << '\n'
      << "frame_dt " << spec.frame_dt << '\n'
      << "seed " << spec.rng_seed << '\n'
      << "camera " << K.fx << ' ' << K.fy << ' ' << K.cx << ' ' << K.cy << ' ' << K.baseline
      << '\n'
      << "image " << spec.camera.width << ' ' << spec.camera.height << '\n'
      << "max_depth " << spec.max_depth << '\n'
      << "pixel_sigma " << spec.noise.pixel_sigma << '\n'
      << "descriptor_corruption " << spec.noise.descriptor_corruption_rate << '\n'
      << "box_jitter " << spec.noise.box_jitter_sigma << '\n'
      << "box_miss " << spec.noise.box_miss_rate << '\n'
      << "feature_dropout " << spec.noise.feature_dropout_rate << '\n'
      << "static_landmarks " << spec.static_landmark_count << '\n'
      << "static_box ";
  vec(spec.static_box_min);
  out << ' ';
  vec(spec.static_box_max);
  out << "\nstatic_clearance " << spec.static_clearance << '\n';
  for (const auto& p : spec.static_patches) {
    out << "static_patch ";
    vec(p.center);
    out << ' ';
    vec(p.extent);
    out << ' ' << p.count << '\n';
  }
  for (const auto& w : spec.camera_trajectory.waypoints()) waypoint("camera_waypoint", w);
  for (const auto& c : spec.clusters) {
    out << "cluster " << c.class_label << ' ' << c.landmark_count << ' ';
    vec(c.extent);
    out << '\n';
    for (const auto& w : c.trajectory.waypoints()) waypoint("waypoint", w);
  }
  for (const auto& o : spec.occluders) {
    out << "occluder " << o.first_frame << ' ' << o.last_frame << ' ' << o.min_corner.x() << ' '
        << o.min_corner.y() << ' ' << o.max_corner.x() << ' ' << o.max_corner.y() << ' '
        << o.depth << '\n';
  }
  out.precision(old_precision);
}

}  // namespace mbvo::sim
