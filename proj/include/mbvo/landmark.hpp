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

#include <limits>
#include <map>

#include "mbvo/geometry.hpp"
#include "mbvo/observations.hpp"

namespace mbvo {

inline constexpr int kStaticCluster = 0;
inline constexpr int kOutlierCluster = -1;

struct Landmark {
  int id = -1;
  /// World frame for static landmarks, body frame of its cluster otherwise.
  Vec3 position = Vec3::Zero();
  int cluster_id = kStaticCluster;
  /// Cluster-assignment confidence, >= 1.
  int weight = 1;
  Descriptor descriptor;
  /// World-frame covariance from the least uncertain observation so far.
  Covariance3 best_cov = Covariance3::Identity();
  /// Determinant of the camera-frame covariance best_cov was built from.
  double best_det = std::numeric_limits<double>::infinity();
  int last_observed_frame = -1;
  /// Observations in frames that are still held by the window, keyed by frame id.
  std::map<int, StereoMeasurement> observations;

  bool has_covariance() const { return best_det < std::numeric_limits<double>::infinity(); }
  bool is_static() const { return cluster_id == kStaticCluster; }
  bool is_dynamic() const { return cluster_id > 0; }
};

}  // namespace mbvo
