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

#include <bitset>
#include <string>
#include <vector>

#include "mbvo/geometry.hpp"

namespace mbvo {

inline constexpr std::size_t kDescriptorBits = 256;

/// Binary feature descriptor compared by normalized Hamming similarity.
using Descriptor = std::bitset<kDescriptorBits>;

/// 1 - hamming / bits, in [0, 1].
inline double descriptor_similarity(const Descriptor& a, const Descriptor& b) {
  return 1.0 - static_cast<double>((a ^ b).count()) / static_cast<double>(kDescriptorBits);
}

std::string descriptor_to_hex(const Descriptor& d);
/// Throws std::invalid_argument on malformed input.
Descriptor descriptor_from_hex(const std::string& hex);

struct Feature {
  StereoMeasurement z;
  Descriptor descriptor;
};

/// 2D detection in the left image.
struct SemanticBox {
  Vec2 min_corner = Vec2::Zero();
  Vec2 max_corner = Vec2::Zero();
  std::string class_label;
  double confidence = 1.0;

  bool contains(double u, double v) const {
    return u >= min_corner.x() && u <= max_corner.x() && v >= min_corner.y() &&
           v <= max_corner.y();
  }
  bool valid() const {
    return min_corner.x() < max_corner.x() && min_corner.y() < max_corner.y();
  }
};

struct FrameObservations {
  int index = 0;
  double timestamp = 0.0;
  std::vector<Feature> features;
  std::vector<SemanticBox> boxes;
};

struct CameraModel {
  StereoIntrinsics intrinsics;
  int width = 640;
  int height = 480;

  bool in_image(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u < static_cast<double>(width) &&
           v < static_cast<double>(height);
  }
};

}  // namespace mbvo
