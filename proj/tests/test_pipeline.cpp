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

#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <sstream>

#include "mbvo/evaluation.hpp"
#include "mbvo/scene_sim.hpp"

using namespace mbvo;

namespace {

const sim::Dataset& short_scene() {
  static const sim::Dataset d = [] {
    sim::WorldSpec w = sim::load_world_spec(std::string(MBVO_WORLDS_DIR) + "/two_blocks.world");
    w.frame_count = 40;
    return sim::generate_world(w);
  }();
  return d;
}

const RunResult& default_run() {
  static const RunResult r = run_sequence(EngineConfig{}, short_scene().camera, short_scene().frames);
  return r;
}

bool same_pose(const Pose& a, const Pose& b) {
  return a.rotation() == b.rotation() && a.translation() == b.translation();
}

bool same_trajectory(const Trajectory& a, const Trajectory& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].timestamp != b[i].timestamp || !same_pose(a[i].pose, b[i].pose)) return false;
  return true;
}

std::vector<FrameLabels> labels_of(const RunResult& r) {
  std::vector<FrameLabels> out;
  for (const auto& f : r.frames) out.push_back({f.frame, f.feature_clusters});
  return out;
}

}  // namespace

TEST(EngineConfig, DefaultsFollowThePaper) {
  const EngineConfig c;
  EXPECT_EQ(c.alpha, 5.0);
  EXPECT_EQ(c.eta, 0.95);
  EXPECT_EQ(c.q_spectral, 0.01);
  EXPECT_EQ(c.window.spatial_size, 5);
  EXPECT_EQ(c.window.temporal_size, 15);
  EXPECT_EQ(c.live_frames, 15);
  EXPECT_EQ(c.motion_offset, 5);
  EXPECT_EQ(c.association.gate, 4.0);
  EXPECT_EQ(c.association.entropy_threshold, 1.0);
  EXPECT_EQ(c.min_static_matches, 15);
}

TEST(EngineConfig, WriteParseRoundTrip) {
  EngineConfig c;
  c.alpha = 3.25;
  c.unary_terms = UnaryTerms::k2D3D;
  c.window.temporal_size = 9;
  c.label_restarts = false;
  std::stringstream s;
  write_config(s, c);
  const EngineConfig back = parse_config(s);
  std::stringstream a, b;
  write_config(a, c);
  write_config(b, back);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(back.alpha, 3.25);
  EXPECT_EQ(back.unary_terms, UnaryTerms::k2D3D);
  EXPECT_EQ(back.window.temporal_size, 9);
  EXPECT_FALSE(back.label_restarts);
}

TEST(EngineConfig, PartialFileKeepsDefaults) {
  std::istringstream s("# comment\n\nalpha = 2\n");
  const EngineConfig c = parse_config(s);
  EXPECT_EQ(c.alpha, 2.0);
  EXPECT_EQ(c.eta, 0.95);
}

TEST(EngineConfig, UnknownKeyReportsItsLine) {
  std::istringstream s("alpha = 5\nalhpa = 4\n");
  try {
    parse_config(s);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(EngineConfig, RejectsDuplicatesAndBadValues) {
  std::istringstream dup("alpha = 5\nalpha = 4\n");
  EXPECT_THROW(parse_config(dup), ConfigError);
  std::istringstream neg("eta = 1.5\n");
  EXPECT_THROW(parse_config(neg), ConfigError);
  std::istringstream junk("alpha = five\n");
  EXPECT_THROW(parse_config(junk), ConfigError);
  std::istringstream nokey("= 3\n");
  EXPECT_THROW(parse_config(nokey), ConfigError);
}

TEST(Engine, BootstrapFrameIsStaticAtIdentity) {
  const auto& d = short_scene();
  Engine e(EngineConfig{}, d.camera);
  const FrameOutput out = e.process_frame(d.frames[0]);
  EXPECT_TRUE(same_pose(out.camera, Pose{}));
  EXPECT_FALSE(out.tracking_lost);
  EXPECT_TRUE(out.clusters.empty());
  int landmarks = 0;
  for (std::size_t k = 0; k < out.feature_landmarks.size(); ++k) {
    if (out.feature_landmarks[k] < 0) continue;
    ++landmarks;
    EXPECT_EQ(out.feature_clusters[k], kStaticCluster);
  }
  EXPECT_GT(landmarks, static_cast<int>(0.9 * d.frames[0].features.size()));
  for (const auto& [id, lm] : e.landmarks()) EXPECT_TRUE(lm.is_static());
}

TEST(Engine, RejectsFramesOutOfOrder) {
  const auto& d = short_scene();
  Engine e(EngineConfig{}, d.camera);
  e.process_frame(d.frames[1]);
  EXPECT_THROW(e.process_frame(d.frames[0]), std::invalid_argument);
  EXPECT_THROW(e.process_frame(d.frames[1]), std::invalid_argument);
}

TEST(Engine, EmptyFrameIsTrackingLostAtThePrediction) {
  const auto& d = short_scene();
  Engine e(EngineConfig{}, d.camera);
  for (int k = 0; k < 6; ++k) e.process_frame(d.frames[k]);
  FrameObservations blank = d.frames[6];
  blank.features.clear();
  blank.boxes.clear();
  const Pose p0 = e.history()[4].camera;
  const Pose p1 = e.history()[5].camera;
  Pose expected = p1 * (p0.inverse() * p1);
  const FrameOutput out = e.process_frame(blank);
  EXPECT_TRUE(out.tracking_lost);
  EXPECT_EQ(e.consecutive_lost(), 1);
  EXPECT_LT((out.camera.translation() - expected.translation()).norm(), 1e-9);
  EXPECT_LT((out.camera.rotation() - expected.rotation()).norm(), 1e-9);
}

TEST(Engine, ReplayIsBitwiseIdentical) {
  const auto& d = short_scene();
  const RunResult& a = default_run();
  const RunResult b = run_sequence(EngineConfig{}, d.camera, d.frames);
  EXPECT_TRUE(same_trajectory(a.camera, b.camera));
  ASSERT_EQ(a.clusters.size(), b.clusters.size());
  for (const auto& [id, tr] : a.clusters) {
    ASSERT_TRUE(b.clusters.count(id));
    EXPECT_TRUE(same_trajectory(tr, b.clusters.at(id)));
  }
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t k = 0; k < a.frames.size(); ++k) {
    EXPECT_EQ(a.frames[k].feature_landmarks, b.frames[k].feature_landmarks);
    EXPECT_EQ(a.frames[k].feature_clusters, b.frames[k].feature_clusters);
  }
}

TEST(Engine, WorkerCountDoesNotChangeResults) {
  const auto& d = short_scene();
  EngineConfig four;
  four.threads = 4;
  const RunResult& a = default_run();
  const RunResult b = run_sequence(four, d.camera, d.frames);
  EXPECT_TRUE(same_trajectory(a.camera, b.camera));
  ASSERT_EQ(a.clusters.size(), b.clusters.size());
  for (const auto& [id, tr] : a.clusters) EXPECT_TRUE(same_trajectory(tr, b.clusters.at(id)));
}

TEST(Engine, OutputsNeverDependOnLaterFrames) {
  const auto& d = short_scene();
  Engine full(EngineConfig{}, d.camera), prefix(EngineConfig{}, d.camera);
  std::vector<FrameOutput> a, b;
  for (const auto& f : d.frames) a.push_back(full.process_frame(f));
  for (int k = 0; k < 20; ++k) b.push_back(prefix.process_frame(d.frames[k]));
  for (int k = 0; k < 20; ++k) {
    EXPECT_TRUE(same_pose(a[k].camera, b[k].camera)) << "frame " << k;
    EXPECT_EQ(a[k].feature_clusters, b[k].feature_clusters) << "frame " << k;
  }
}

TEST(Engine, ShortNoiselessSceneIsRecovered) {
  const auto& d = short_scene();
  const RunResult& r = default_run();
  ASSERT_FALSE(r.aborted);
  EXPECT_EQ(r.clusters.size(), 2u);

  // Ids are assigned once and every later frame reports the same set.
  std::set<int> first;
  for (const auto& f : r.frames) {
    std::set<int> ids;
    for (const auto& c : f.clusters) ids.insert(c.id);
    if (ids.empty()) continue;
    if (first.empty()) first = ids;
    EXPECT_EQ(ids, first) << "frame " << f.frame;
  }
  EXPECT_EQ(first, (std::set<int>{1, 2}));

  const SequenceEvaluation ev =
      evaluate_sequence(r.camera, r.clusters, labels_of(r), d.truth, 0.05);
  EXPECT_LT(ev.camera.ate_rmse, 1e-6);
  ASSERT_TRUE(ev.camera.segmentation_accuracy);
  EXPECT_EQ(*ev.camera.segmentation_accuracy, 1.0);
  for (const auto& b : ev.bodies) {
    ASSERT_TRUE(b.cluster) << "body " << b.body;
    EXPECT_LT(b.report.ate_rmse, 1e-2) << "body " << b.body;
  }
}

TEST(Engine, ReportedClustersAreLive) {
  const auto& d = short_scene();
  Engine e(EngineConfig{}, d.camera);
  for (const auto& f : d.frames) {
    const FrameOutput out = e.process_frame(f);
    for (const auto& c : out.clusters) {
      bool member_seen = false;
      for (const auto& [id, lm] : e.landmarks())
        if (lm.cluster_id == c.id && lm.last_observed_frame >= out.frame - e.config().live_frames)
          member_seen = true;
      EXPECT_TRUE(member_seen) << "cluster " << c.id << " at frame " << out.frame;
    }
  }
}

TEST(WorkerCount, EnvironmentCapsThePool) {
  ::setenv("CLUSTERVO_THREADS", "2", 1);
  EXPECT_EQ(resolve_worker_count(8), 2);
  EXPECT_EQ(resolve_worker_count(1), 1);
  ::setenv("CLUSTERVO_THREADS", "junk", 1);
  EXPECT_EQ(resolve_worker_count(3), 3);
  ::unsetenv("CLUSTERVO_THREADS");
  EXPECT_EQ(resolve_worker_count(5), 5);
  EXPECT_GE(resolve_worker_count(0), 1);
}
