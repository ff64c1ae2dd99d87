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

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "mbvo/geometry.hpp"

namespace mbvo {

struct ClusterFrameState {
  Pose pose;
  Vec3 velocity = Vec3::Zero();
};

struct FrameEntry {
  int id = -1;
  double timestamp = 0.0;
  /// Camera-to-world estimate.
  Pose camera;
  /// (feature index, landmark id) matches of this frame.
  std::vector<std::pair<int, int>> matches;
  /// Static landmarks observed in this frame, for the covisibility test.
  std::set<int> static_landmarks;
  /// Clusters with at least one matched member in this frame.
  std::set<int> observed_clusters;
  /// Cluster states, kept while the frame is in the temporal track.
  std::map<int, ClusterFrameState> clusters;
};

struct WindowParams {
  int temporal_size = 15;
  int spatial_size = 5;
  /// Promotion when the evicted frame is farther than this from the reference spatial frame.
  double promote_distance = 0.3;
  /// Promotion when the fraction of its static landmarks shared with the reference is below this.
  double covisibility_ratio = 0.6;
  /// Reference spatial frame: the first (oldest) one, or the newest if set.
  bool compare_newest = false;
};

struct WindowUpdate {
  /// Temporal tail evicted by this push, if any.
  std::optional<int> evicted;
  bool promoted = false;
  /// Oldest spatial frame removed on overflow; the caller marginalizes it.
  std::optional<FrameEntry> marginalize;
  /// Evicted frame dropped without marginalization.
  std::optional<FrameEntry> discarded;
};

/// Double-track frame bookkeeping: a temporal track holding the most recent
/// frames and a spatial track of older, well-separated keyframes.
class Window {
 public:
  explicit Window(WindowParams params = {}) : params_(params) {}

  /// Throws std::invalid_argument if ids are not strictly increasing.
  WindowUpdate push_frame(FrameEntry frame);

  const std::deque<FrameEntry>& temporal() const { return temporal_; }
  const std::deque<FrameEntry>& spatial() const { return spatial_; }
  const WindowParams& params() const { return params_; }

  /// Frame ids in both tracks, oldest first.
  std::vector<int> frame_ids() const;
  FrameEntry* find(int id);
  const FrameEntry* find(int id) const;
  const FrameEntry& newest() const { return temporal_.back(); }
  bool empty() const { return temporal_.empty() && spatial_.empty(); }

  /// Clusters observed in the last L temporal frames.
  std::set<int> live_clusters(int L) const;

 private:
  bool should_promote(const FrameEntry& tail) const;

  WindowParams params_;
  std::deque<FrameEntry> temporal_;
  std::deque<FrameEntry> spatial_;
};

}  // namespace mbvo
