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


#include "mbvo/io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace mbvo {

std::string descriptor_to_hex(const Descriptor& d) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(kDescriptorBits / 4);
  for (std::size_t nibble = 0; nibble < kDescriptorBits / 4; ++nibble) {
    unsigned v = 0;
    for (std::size_t b = 0; b < 4; ++b) {
      if (d[nibble * 4 + b]) v |= 1u << b;
    }
    out.push_back(kDigits[v]);
  }
  return out;
}

Descriptor descriptor_from_hex(const std::string& hex) {
  if (hex.size() != kDescriptorBits / 4) {
    throw std::invalid_argument("descriptor must have " + std::to_string(kDescriptorBits / 4) +
                                " hex digits");
  }
  Descriptor d;
  for (std::size_t nibble = 0; nibble < hex.size(); ++nibble) {
    const char c = hex[nibble];
    unsigned v = 0;
    if (c >= '0' && c <= '9') {
      v = static_cast<unsigned>(c - '0');
    } else if (c >= 'a' && c <= 'f') {
      v = static_cast<unsigned>(c - 'a' + 10);
    } else if (c >= 'A' && c <= 'F') {
      v = static_cast<unsigned>(c - 'A' + 10);
    } else {
      throw std::invalid_argument("invalid hex digit in descriptor");
    }
    for (std::size_t b = 0; b < 4; ++b) d[nibble * 4 + b] = ((v >> b) & 1u) != 0;
  }
  return d;
}

}  // namespace mbvo

namespace mbvo::io {

namespace {

void write_pose7(std::ostream& out, const Pose& P) {
  const auto q = P.quaternion();
  const Vec3& t = P.translation();
  out << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z()
      << ' ' << q.w();
}

class Tokens {
 public:
  Tokens(const std::string& line, const std::string& source, int line_no)
      : in_(line), source_(source), line_(line_no) {}

  bool next(std::string& tok) { return static_cast<bool>(in_ >> tok); }

  double number() {
    std::string tok = word("number");
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used == tok.size()) return v;
    } catch (const std::exception&) {
    }
    fail("expected a number, got '" + tok + "'");
  }
  long long integer() {
    std::string tok = word("integer");
    try {
      std::size_t used = 0;
      const long long v = std::stoll(tok, &used);
      if (used == tok.size()) return v;
    } catch (const std::exception&) {
    }
    fail("expected an integer, got '" + tok + "'");
  }
  std::size_t count() {
    const long long v = integer();
    if (v < 0) fail("negative count");
    return static_cast<std::size_t>(v);
  }
  std::string word(const char* what) {
    std::string tok;
    if (!(in_ >> tok)) fail(std::string("missing ") + what);
    return tok;
  }
  Pose pose7() {
    const Vec3 t{number(), number(), number()};
    const double qx = number();
    const double qy = number();
    const double qz = number();
    const double qw = number();
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    if (std::abs(q.norm() - 1.0) > 1e-6) fail("quaternion is not unit length");
    return Pose::from_quaternion(q, t);
  }
  void done() {
    std::string extra;
    if (in_ >> extra) fail("unexpected trailing token '" + extra + "'");
  }
  [[noreturn]] void fail(const std::string& message) const {
    throw FormatError(source_, line_, message);
  }

 private:
  std::istringstream in_;
  const std::string& source_;
  int line_;
};

template <typename Fn>
void for_each_record(std::istream& in, const std::string& source, Fn&& fn) {
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    Tokens t(raw, source, line_no);
    std::string key;
    if (!t.next(key)) continue;
    fn(key, t);
    t.done();
  }
}

}  // namespace

void write_observations(std::ostream& out, const CameraModel& camera,
                        const std::vector<FrameObservations>& frames) {
  const auto old = out.precision(17);
  const auto& K = camera.intrinsics;
  out << "# mbvo observation stream v1\n"
      << "# camera fx fy cx cy baseline width height\n"
      << "# frame index timestamp n_features n_boxes {uL vL uR descriptor}* "
         "{umin vmin umax vmax label confidence}*\n";
  out << "camera " << K.fx << ' ' << K.fy << ' ' << K.cx << ' ' << K.cy << ' ' << K.baseline
      << ' ' << camera.width << ' ' << camera.height << '\n';
  for (const auto& f : frames) {
    out << "frame " << f.index << ' ' << f.timestamp << ' ' << f.features.size() << ' '
        << f.boxes.size();
    for (const auto& feat : f.features) {
      out << ' ' << feat.z.uL << ' ' << feat.z.vL << ' ' << feat.z.uR << ' '
          << descriptor_to_hex(feat.descriptor);
    }
    for (const auto& b : f.boxes) {
      out << ' ' << b.min_corner.x() << ' ' << b.min_corner.y() << ' ' << b.max_corner.x() << ' '
          << b.max_corner.y() << ' ' << b.class_label << ' ' << b.confidence;
    }
    out << '\n';
  }
  out.precision(old);
}

ObservationStream read_observations(std::istream& in, const std::string& source) {
  ObservationStream s;
  bool have_camera = false;
  for_each_record(in, source, [&](const std::string& key, Tokens& t) {
    if (key == "camera") {
      auto& K = s.camera.intrinsics;
      K.fx = t.number();
      K.fy = t.number();
      K.cx = t.number();
      K.cy = t.number();
      K.baseline = t.number();
      s.camera.width = static_cast<int>(t.integer());
      s.camera.height = static_cast<int>(t.integer());
      try {
        K.validate();
      } catch (const std::invalid_argument& e) {
        t.fail(e.what());
      }
      have_camera = true;
    } else if (key == "frame") {
      if (!have_camera) t.fail("frame record before camera record");
      FrameObservations f;
      f.index = static_cast<int>(t.integer());
      f.timestamp = t.number();
      if (!s.frames.empty() && !(f.timestamp > s.frames.back().timestamp)) {
        t.fail("timestamps must be strictly increasing");
      }
      const std::size_t nf = t.count();
      const std::size_t nb = t.count();
      f.features.reserve(nf);
      for (std::size_t i = 0; i < nf; ++i) {
        Feature feat;
        feat.z.uL = t.number();
        feat.z.vL = t.number();
        feat.z.uR = t.number();
        try {
          feat.descriptor = descriptor_from_hex(t.word("descriptor"));
        } catch (const std::invalid_argument& e) {
          t.fail(e.what());
        }
        f.features.push_back(feat);
      }
      for (std::size_t i = 0; i < nb; ++i) {
        SemanticBox b;
        b.min_corner = {t.number(), t.number()};
        b.max_corner = {t.number(), t.number()};
        b.class_label = t.word("label");
        b.confidence = t.number();
        if (!b.valid()) t.fail("box min corner must be below max corner");
        f.boxes.push_back(b);
      }
      s.frames.push_back(std::move(f));
    } else {
      t.fail("unknown record '" + key + "'");
    }
  });
  if (!have_camera) throw FormatError(source, 0, "missing camera record");
  return s;
}

void write_ground_truth(std::ostream& out, const sim::GroundTruth& truth) {
  const auto old = out.precision(17);
  out << "# mbvo ground truth v1\n"
      << "# cluster body label\n"
      << "# landmark id body x y z\n"
      << "# frame index timestamp camera_pose7 n_clusters {body pose7 vx vy vz}* "
         "n_features {landmark}* n_boxes {body}*\n";
  for (std::size_t c = 0; c < truth.cluster_labels.size(); ++c) {
    out << "cluster " << c + 1 << ' ' << truth.cluster_labels[c] << '\n';
  }
  for (const auto& l : truth.landmarks) {
    out << "landmark " << l.id << ' ' << l.body << ' ' << l.position.x() << ' ' << l.position.y()
        << ' ' << l.position.z() << '\n';
  }
  for (const auto& f : truth.frames) {
    out << "frame " << f.index << ' ' << f.timestamp << ' ';
    write_pose7(out, f.camera);
    out << ' ' << f.clusters.size();
    for (std::size_t c = 0; c < f.clusters.size(); ++c) {
      out << ' ' << c + 1 << ' ';
      write_pose7(out, f.clusters[c].pose);
      const Vec3& v = f.clusters[c].velocity;
      out << ' ' << v.x() << ' ' << v.y() << ' ' << v.z();
    }
    out << ' ' << f.feature_landmarks.size();
    for (int id : f.feature_landmarks) out << ' ' << id;
    out << ' ' << f.box_bodies.size();
    for (int b : f.box_bodies) out << ' ' << b;
    out << '\n';
  }
  out.precision(old);
}

sim::GroundTruth read_ground_truth(std::istream& in, const std::string& source) {
  sim::GroundTruth gt;
  for_each_record(in, source, [&](const std::string& key, Tokens& t) {
    if (key == "cluster") {
      const long long body = t.integer();
      if (body != static_cast<long long>(gt.cluster_labels.size()) + 1) {
        t.fail("cluster bodies must be numbered 1..n in order");
      }
      gt.cluster_labels.push_back(t.word("label"));
    } else if (key == "landmark") {
      sim::LandmarkTruth l;
      l.id = static_cast<int>(t.integer());
      if (l.id != static_cast<int>(gt.landmarks.size())) t.fail("landmark ids must be 0..n-1");
      l.body = static_cast<int>(t.integer());
      l.position = {t.number(), t.number(), t.number()};
      gt.landmarks.push_back(l);
    } else if (key == "frame") {
      sim::FrameTruth f;
      f.index = static_cast<int>(t.integer());
      f.timestamp = t.number();
      f.camera = t.pose7();
      const std::size_t nc = t.count();
      for (std::size_t c = 0; c < nc; ++c) {
        if (t.integer() != static_cast<long long>(c) + 1) t.fail("cluster bodies out of order");
        sim::ClusterTruth ct;
        ct.pose = t.pose7();
        ct.velocity = {t.number(), t.number(), t.number()};
        f.clusters.push_back(ct);
      }
      const std::size_t nf = t.count();
      for (std::size_t i = 0; i < nf; ++i) f.feature_landmarks.push_back(static_cast<int>(t.integer()));
      const std::size_t nb = t.count();
      for (std::size_t i = 0; i < nb; ++i) f.box_bodies.push_back(static_cast<int>(t.integer()));
      gt.frames.push_back(std::move(f));
    } else {
      t.fail("unknown record '" + key + "'");
    }
  });
  return gt;
}

void write_trajectory(std::ostream& out, const Trajectory& trajectory) {
  const auto old = out.precision(17);
  out << "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto& sp : trajectory) {
    out << sp.timestamp << ' ';
    write_pose7(out, sp.pose);
    out << '\n';
  }
  out.precision(old);
}

Trajectory read_trajectory(std::istream& in, const std::string& source) {
  Trajectory out;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
    Tokens t(raw, source, line_no);
    StampedPose sp;
    sp.timestamp = t.number();
    sp.pose = t.pose7();
    t.done();
    if (!out.empty() && !(sp.timestamp > out.back().timestamp)) {
      t.fail("timestamps must be strictly increasing");
    }
    out.push_back(sp);
  }
  return out;
}

void save_dataset(const std::filesystem::path& dir, const sim::Dataset& dataset,
                  const sim::WorldSpec& spec) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream o(dir / kObservationsFile);
    write_observations(o, dataset.camera, dataset.frames);
  }
  {
    std::ofstream o(dir / kGroundTruthFile);
    write_ground_truth(o, dataset.truth);
  }
  std::ofstream o(dir / kWorldSnapshotFile);
  sim::write_world_spec(o, spec);
  if (!o) throw std::runtime_error("failed writing dataset to " + dir.string());
}

ObservationStream load_observations(const std::filesystem::path& dir) {
  const auto path = dir / kObservationsFile;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_observations(in, path.string());
}

sim::GroundTruth load_ground_truth(const std::filesystem::path& dir) {
  const auto path = dir / kGroundTruthFile;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_ground_truth(in, path.string());
}

Trajectory load_trajectory(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  return read_trajectory(in, file.string());
}

void save_trajectory(const std::filesystem::path& file, const Trajectory& trajectory) {
  std::ofstream o(file);
  write_trajectory(o, trajectory);
  if (!o) throw std::runtime_error("failed writing " + file.string());
}

}  // namespace mbvo::io
