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

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mbvo/association.hpp"
#include "mbvo/clustering.hpp"
#include "mbvo/estimation.hpp"
#include "mbvo/landmark.hpp"
#include "mbvo/observations.hpp"
#include "mbvo/trajectory.hpp"
#include "mbvo/window.hpp"

namespace mbvo {

struct EngineConfig {
  AssociationParams association;

  // Clustering.
  double alpha = 5.0;
  double eta = 0.95;
  double bandwidth = 1.0;
  double log_p_out = -4.0;
  int mean_field_iterations = 10;
  bool label_restarts = true;
  int min_new_cluster_size = 8;
  int w_max = 100;
  UnaryTerms unary_terms = UnaryTerms::kFull;
  /// p_mot compares the current frame with this many frames back.
  int motion_offset = 5;
  /// Isotropic variance (m^2) added to the point covariance in the spatial term.
  double spatial_cov_floor = 1.0;
  double min_cluster_dimension = 0.05;
  /// A cluster is live while one of its landmarks was seen in this many frames.
  int live_frames = 15;

  WindowParams window;

  // Estimation.
  /// Stereo measurement noise, pixels (Sigma_z = sigma^2 I).
  double pixel_sigma = 1.0;
  /// Spectral density of the cluster motion prior (Q = q I).
  double q_spectral = 0.01;
  SolverOptions solver;
  double chi2_threshold = 7.815;
  int chi2_rounds = 2;
  int track_rounds = 3;
  int min_static_matches = 15;
  int min_cluster_frames = 2;
  int min_cluster_observations = 4;
  double anchor_information = 1e8;
  GeometryLimits limits;

  /// Worker threads for cluster optimization, 0 = hardware concurrency.
  /// CLUSTERVO_THREADS caps it.
  int threads = 0;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& message)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Flat "key = value" format; '#' starts a comment. Keys not present keep their
/// defaults, unknown keys and malformed values throw ConfigError.
EngineConfig parse_config(std::istream& in);
EngineConfig load_config(const std::filesystem::path& path);
/// Writes every field, so the output parses back to the same config.
void write_config(std::ostream& out, const EngineConfig& config);

struct ClusterOutput {
  int id = -1;
  Pose pose;
  Vec3 velocity = Vec3::Zero();
  /// Member landmarks observed in this frame.
  std::vector<int> members;
};

struct FrameOutput {
  int frame = -1;
  double timestamp = 0.0;
  Pose camera;
  bool tracking_lost = false;
  int static_inliers = 0;
  std::vector<ClusterOutput> clusters;
  /// Per feature of the frame: landmark id and cluster id (-1 when none).
  std::vector<int> feature_landmarks;
  std::vector<int> feature_clusters;
};

/// Accumulated wall time per stage, milliseconds. Reporting only.
struct StageTimings {
  double association = 0.0;
  double tracking = 0.0;
  double clustering = 0.0;
  double window = 0.0;
  double static_optimization = 0.0;
  double cluster_optimization = 0.0;
};

/// Per-frame state as currently estimated; entries still inside the window
/// keep being refined.
struct FrameRecord {
  int frame = -1;
  double timestamp = 0.0;
  Pose camera;
  bool tracking_lost = false;
  std::map<int, ClusterFrameState> clusters;
};

class Engine {
 public:
  Engine(EngineConfig config, CameraModel camera);

  /// Frames must arrive with increasing index and timestamp.
  FrameOutput process_frame(const FrameObservations& frame);

  const EngineConfig& config() const { return config_; }
  const std::vector<FrameRecord>& history() const { return history_; }
  Trajectory camera_trajectory() const;
  std::map<int, Trajectory> cluster_trajectories() const;
  const std::map<int, Landmark>& landmarks() const { return landmarks_; }
  const Window& window() const { return window_; }
  const InformationPrior& prior() const { return prior_; }
  const StageTimings& timings() const { return timings_; }
  /// Length of the current run of frames flagged tracking_lost.
  int consecutive_lost() const { return consecutive_lost_; }
  int worker_count() const { return workers_; }

 private:
  struct Cluster {
    int id = -1;
    std::string class_label;
    int last_seen = -1;
    bool alive = true;
  };

  struct Node;

  Pose predict_camera() const;
  Covariance3 sigma_z() const;
  void run_clustering(const FrameObservations& frame, const Pose& camera,
                      std::vector<int>& feature_landmark, std::map<int, ClusterFrameState>& states,
                      const std::vector<int>& box_to_cluster);
  void drop_frame_observations(const FrameEntry& entry);
  void handle_window_update(const WindowUpdate& update);
  StaticProblem build_static_problem(const std::optional<FrameEntry>& extra) const;
  void optimize_static_window();
  void optimize_clusters();
  std::set<int> cluster_members(int cluster) const;

  EngineConfig config_;
  CameraModel camera_;
  Window window_;
  InformationPrior prior_;
  std::map<int, Landmark> landmarks_;
  std::map<int, Cluster> clusters_;
  std::vector<FrameRecord> history_;
  StageTimings timings_;
  int next_landmark_id_ = 0;
  int next_cluster_id_ = 1;
  int consecutive_lost_ = 0;
  int workers_ = 1;
};

struct RunResult {
  Trajectory camera;
  std::map<int, Trajectory> clusters;
  /// Per-frame landmark and cluster ids of every feature.
  std::vector<FrameOutput> frames;
  StageTimings timings;
  /// Set when tracking stayed lost for more than max_lost_frames frames.
  bool aborted = false;
  int workers = 1;
};

/// Feeds every frame through one engine. Stops after a run of more than
/// max_lost_frames frames in TrackingLost.
RunResult run_sequence(const EngineConfig& config, const CameraModel& camera,
                       const std::vector<FrameObservations>& frames, int max_lost_frames = 30);

/// Worker count from the config value and the CLUSTERVO_THREADS cap.
int resolve_worker_count(int configured);

}  // namespace mbvo
