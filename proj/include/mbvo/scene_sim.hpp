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

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "mbvo/geometry.hpp"
#include "mbvo/observations.hpp"

namespace mbvo::sim {

struct Waypoint {
  double time = 0.0;
  Vec3 position = Vec3::Zero();
  /// Rotation vector (axis * angle, radians).
  Vec3 rotation = Vec3::Zero();
};

/// Piecewise linear in translation, slerp in rotation. Clamped outside the
/// waypoint time range.
class Path {
 public:
  Path() = default;
  explicit Path(std::vector<Waypoint> waypoints);

  Pose at(double t) const;
  /// Linear velocity of the segment active at t (forward segment at a waypoint).
  Vec3 velocity(double t) const;

  const std::vector<Waypoint>& waypoints() const { return waypoints_; }
  bool empty() const { return waypoints_.empty(); }

 private:
  std::size_t segment(double t) const;
  std::vector<Waypoint> waypoints_;
};

struct NoiseSpec {
  double pixel_sigma = 0.0;
  double descriptor_corruption_rate = 0.0;
  double box_jitter_sigma = 0.0;
  double box_miss_rate = 0.0;
  double feature_dropout_rate = 0.0;

  void validate() const;
};

struct ClusterSpec {
  int landmark_count = 0;
  /// Half-dimensions of the body's point cloud (meters).
  Vec3 extent = Vec3::Ones();
  Path trajectory;
  std::string class_label = "object";

  void validate() const;
};

/// Extra static landmarks sampled uniformly in an axis-aligned box.
struct StaticPatch {
  Vec3 center = Vec3::Zero();
  Vec3 extent = Vec3::Ones();
  int count = 0;
};

/// Per-frame image-space rectangle in front of everything deeper than depth.
struct OccluderSpec {
  int first_frame = 0;
  int last_frame = 0;
  Vec2 min_corner = Vec2::Zero();
  Vec2 max_corner = Vec2::Zero();
  double depth = 0.0;

  bool active(int frame) const { return frame >= first_frame && frame <= last_frame; }
};

struct WorldSpec {
  int static_landmark_count = 0;
  /// Static points are drawn uniformly in this box, outside the camera-path
  /// bounding box grown by static_clearance.
  Vec3 static_box_min{-10.0, -4.0, 4.0};
  Vec3 static_box_max{10.0, 4.0, 20.0};
  double static_clearance = 2.0;
  std::vector<StaticPatch> static_patches;
  std::vector<ClusterSpec> clusters;
  int frame_count = 1;
  double frame_dt = 0.1;
  Path camera_trajectory;
  NoiseSpec noise;
  std::uint64_t rng_seed = 0;
  CameraModel camera{{520.0, 520.0, 320.0, 240.0, 0.5}, 640, 480};
  double max_depth = 40.0;
  std::vector<OccluderSpec> occluders;

  void validate() const;
};

struct ClusterTruth {
  Pose pose;
  Vec3 velocity = Vec3::Zero();
};

struct FrameTruth {
  int index = 0;
  double timestamp = 0.0;
  /// Camera-to-world.
  Pose camera;
  /// Indexed by cluster (0-based); body id of cluster c is c + 1.
  std::vector<ClusterTruth> clusters;
  /// True landmark id for every emitted feature, parallel to the frame's features.
  std::vector<int> feature_landmarks;
  /// True body id for every emitted box, parallel to the frame's boxes.
  std::vector<int> box_bodies;
};

struct LandmarkTruth {
  int id = 0;
  /// 0 = static scene, c + 1 = cluster c.
  int body = 0;
  /// World frame for static points, body frame for cluster points.
  Vec3 position = Vec3::Zero();
};

struct GroundTruth {
  std::vector<std::string> cluster_labels;
  std::vector<LandmarkTruth> landmarks;
  std::vector<FrameTruth> frames;

  /// World position of a landmark at a frame: cluster_pose * body point for dynamic ones.
  Vec3 world_position(int landmark_id, int frame) const;
};

struct Dataset {
  CameraModel camera;
  std::vector<FrameObservations> frames;
  GroundTruth truth;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic given spec.rng_seed. Throws SimulationError("EmptyWorld") when
/// no landmark is ever visible; std::invalid_argument on an invalid spec.
Dataset generate_world(const WorldSpec& spec);

/// Removes features and boxes hidden by per-frame occluders. A feature is hidden
/// when its left-image pixel lies in the rectangle and its depth exceeds the
/// occluder depth; a box is hidden when it lies entirely in the rectangle and its
/// body's true depth exceeds the occluder depth.
void occlusion_filter(Dataset& dataset, const std::vector<OccluderSpec>& occluders);

/// World-spec text format (see worlds/*.world). Errors carry the 1-based line.
class WorldSpecError : public std::runtime_error {
 public:
  WorldSpecError(int line, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

WorldSpec parse_world_spec(std::istream& in);
WorldSpec load_world_spec(const std::string& path);
void write_world_spec(std::ostream& out, const WorldSpec& spec);

}  // namespace mbvo::sim
