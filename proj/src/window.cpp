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


#include "mbvo/window.hpp"

#include <stdexcept>
#include <string>

namespace mbvo {

WindowUpdate Window::push_frame(FrameEntry frame) {
  if (!temporal_.empty() && frame.id <= temporal_.back().id)
    throw std::invalid_argument("push_frame: frame id " + std::to_string(frame.id) +
                                " not after " + std::to_string(temporal_.back().id));
  WindowUpdate update;
  temporal_.push_back(std::move(frame));
  if (static_cast<int>(temporal_.size()) <= params_.temporal_size) return update;

  FrameEntry tail = std::move(temporal_.front());
  temporal_.pop_front();
  tail.clusters.clear();
  update.evicted = tail.id;
  if (!should_promote(tail)) {
    update.discarded = std::move(tail);
    return update;
  }
  update.promoted = true;
  spatial_.push_back(std::move(tail));
  if (static_cast<int>(spatial_.size()) > params_.spatial_size) {
    update.marginalize = std::move(spatial_.front());
    spatial_.pop_front();
  }
  return update;
}

bool Window::should_promote(const FrameEntry& tail) const {
  if (spatial_.empty()) return true;
  const FrameEntry& ref = params_.compare_newest ? spatial_.back() : spatial_.front();
  if ((tail.camera.translation() - ref.camera.translation()).norm() > params_.promote_distance)
    return true;
  if (tail.static_landmarks.empty()) return true;
  std::size_t shared = 0;
  for (int id : tail.static_landmarks) shared += ref.static_landmarks.count(id);
  const double ratio =
      static_cast<double>(shared) / static_cast<double>(tail.static_landmarks.size());
  return ratio < params_.covisibility_ratio;
}

std::vector<int> Window::frame_ids() const {
  std::vector<int> ids;
  for (const auto& f : spatial_) ids.push_back(f.id);
  for (const auto& f : temporal_) ids.push_back(f.id);
  return ids;
}

FrameEntry* Window::find(int id) {
  for (auto* track : {&spatial_, &temporal_})
    for (auto& f : *track)
      if (f.id == id) return &f;
  return nullptr;
}

const FrameEntry* Window::find(int id) const {
  return const_cast<Window*>(this)->find(id);
}

std::set<int> Window::live_clusters(int L) const {
  std::set<int> live;
  int seen = 0;
  for (auto it = temporal_.rbegin(); it != temporal_.rend() && seen < L; ++it, ++seen)
    live.insert(it->observed_clusters.begin(), it->observed_clusters.end());
  return live;
}

}  // namespace mbvo
