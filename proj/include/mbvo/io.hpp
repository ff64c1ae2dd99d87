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
#include <stdexcept>
#include <string>
#include <vector>

#include "mbvo/observations.hpp"
#include "mbvo/scene_sim.hpp"
#include "mbvo/trajectory.hpp"

// Text formats. Every record is one line, fields are space separated, '#'
// starts a comment, floats are written with 17 significant digits.
//
// observations.txt
//   camera <fx> <fy> <cx> <cy> <baseline> <width> <height>
//   frame <index> <timestamp> <n_features> <n_boxes>
//         {<uL> <vL> <uR> <descriptor_hex>} x n_features
//         {<umin> <vmin> <umax> <vmax> <label> <confidence>} x n_boxes
//
// groundtruth.txt
//   cluster <body> <label>
//   landmark <id> <body> <x> <y> <z>         (body 0: world frame, else body frame)
//   frame <index> <timestamp> <camera pose7> <n_clusters>
//         {<body> <pose7> <vx> <vy> <vz>} x n_clusters
//         <n_features> {<landmark id>} x n_features <n_boxes> {<body>} x n_boxes
//   where pose7 = tx ty tz qx qy qz qw (camera-to-world / body-to-world).
//
// Trajectory files use "timestamp tx ty tz qx qy qz qw".
namespace mbvo::io {

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& source, int line, const std::string& message)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + message), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

struct ObservationStream {
  CameraModel camera;
  std::vector<FrameObservations> frames;
};

void write_observations(std::ostream& out, const CameraModel& camera,
                        const std::vector<FrameObservations>& frames);
ObservationStream read_observations(std::istream& in, const std::string& source = "observations");

void write_ground_truth(std::ostream& out, const sim::GroundTruth& truth);
sim::GroundTruth read_ground_truth(std::istream& in, const std::string& source = "groundtruth");

void write_trajectory(std::ostream& out, const Trajectory& trajectory);
Trajectory read_trajectory(std::istream& in, const std::string& source = "trajectory");

inline constexpr const char* kObservationsFile = "observations.txt";
inline constexpr const char* kGroundTruthFile = "groundtruth.txt";
inline constexpr const char* kWorldSnapshotFile = "world.spec";

/// Writes observations, ground truth and the spec snapshot into dir.
void save_dataset(const std::filesystem::path& dir, const sim::Dataset& dataset,
                  const sim::WorldSpec& spec);
ObservationStream load_observations(const std::filesystem::path& dir);
sim::GroundTruth load_ground_truth(const std::filesystem::path& dir);
Trajectory load_trajectory(const std::filesystem::path& file);
void save_trajectory(const std::filesystem::path& file, const Trajectory& trajectory);

}  // namespace mbvo::io
