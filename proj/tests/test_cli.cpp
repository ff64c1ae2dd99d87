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


#include "cli.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <unistd.h>

#include "mbvo/io.hpp"
#include "mbvo/scene_sim.hpp"

namespace fs = std::filesystem;
using namespace mbvo;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           ("mbvo_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // The bundled noiseless scene with selected keys overridden.
  std::string world(const std::string& name, const std::map<std::string, std::string>& set) const {
    std::ifstream in(std::string(MBVO_WORLDS_DIR) + "/two_blocks.world");
    std::ofstream out(path(name));
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream s(line);
      std::string key;
      s >> key;
      const auto it = set.find(key);
      out << (it == set.end() ? line : key + " " + it->second) << "\n";
    }
    return path(name);
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  static std::map<std::string, std::string> metrics(const fs::path& file) {
    std::map<std::string, std::string> m;
    std::ifstream in(file);
    std::string line;
    const std::regex kv("(\\S+) = (.*)");
    while (std::getline(in, line)) {
      std::smatch sm;
      if (std::regex_match(line, sm, kv)) m[sm[1]] = sm[2];
    }
    return m;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SimulateIsDeterministic) {
  const auto spec = world("w.world", {{"frames", "20"}});
  ASSERT_EQ(invoke({"simulate", spec, "-o", path("a")}).code, cli::kExitOk);
  ASSERT_EQ(invoke({"simulate", spec, "-o", path("b")}).code, cli::kExitOk);
  for (const char* f : {io::kObservationsFile, io::kGroundTruthFile, io::kWorldSnapshotFile})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  ASSERT_EQ(invoke({"simulate", spec, "--seed", "7", "-o", path("c")}).code, cli::kExitOk);
  EXPECT_NE(slurp(dir_ / "a" / io::kObservationsFile), slurp(dir_ / "c" / io::kObservationsFile));
}

TEST_F(Cli, SimulateWritesOneTrajectoryPerCluster) {
  const auto spec = world("w.world", {{"frames", "5"}});
  ASSERT_EQ(invoke({"simulate", spec, "-o", path("d")}).code, cli::kExitOk);
  const auto truth = io::load_ground_truth(dir_ / "d");
  EXPECT_EQ(truth.cluster_labels, (std::vector<std::string>{"car", "van"}));
  ASSERT_EQ(truth.frames.size(), 5u);
  for (const auto& f : truth.frames) EXPECT_EQ(f.clusters.size(), 2u);
}

TEST_F(Cli, SimulateRejectsZeroFrames) {
  const auto spec = world("w.world", {{"frames", "0"}});
  const Result r = invoke({"simulate", spec, "-o", path("d")});
  EXPECT_EQ(r.code, cli::kExitInput);
  EXPECT_NE(r.err.find("line 4"), std::string::npos) << r.err;
}

TEST_F(Cli, SimulateReportsTheLineOfAMalformedSpec) {
  const auto spec = world("w.world", {{"image", "640"}});
  const Result r = invoke({"simulate", spec, "-o", path("d")});
  EXPECT_EQ(r.code, cli::kExitInput);
  EXPECT_NE(r.err.find("line 8"), std::string::npos) << r.err;
  EXPECT_EQ(invoke({"simulate", path("missing.world"), "-o", path("d")}).code, cli::kExitInput);
}

TEST_F(Cli, UsageErrorsAreInputErrors) {
  EXPECT_EQ(invoke({}).code, cli::kExitInput);
  EXPECT_EQ(invoke({"frobnicate"}).code, cli::kExitInput);
  EXPECT_EQ(invoke({"run", path("x"), "-o", path("y"), "--ablation", "3d"}).code, cli::kExitInput);
  EXPECT_EQ(invoke({"--help"}).code, cli::kExitOk);
}

TEST_F(Cli, RunOnMissingDatasetIsAnInputError) {
  const Result r = invoke({"run", path("nope"), "-o", path("out")});
  EXPECT_EQ(r.code, cli::kExitInput);
  EXPECT_NE(r.err.find("dataset not found"), std::string::npos);
}

TEST_F(Cli, RunWithBadConfigIsAnInputError) {
  const auto spec = world("w.world", {{"frames", "3"}});
  ASSERT_EQ(invoke({"simulate", spec, "-o", path("d")}).code, cli::kExitOk);
  std::ofstream(path("bad.cfg")) << "alpha = 5\nbogus = 1\n";
  const Result r = invoke({"run", path("d"), "-c", path("bad.cfg"), "-o", path("out")});
  EXPECT_EQ(r.code, cli::kExitInput);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

TEST_F(Cli, RunEvalAndInspectOnAShortNoiselessScene) {
  const auto spec = world("w.world", {{"frames", "30"}});
  ASSERT_EQ(invoke({"simulate", spec, "-o", path("d")}).code, cli::kExitOk);
  ASSERT_EQ(invoke({"run", path("d"), "-o", path("r1")}).code, cli::kExitOk);
  ASSERT_EQ(invoke({"run", path("d"), "-o", path("r2")}).code, cli::kExitOk);

  // Outputs are byte-identical across runs apart from the manifest's timings.
  for (const char* f : {"camera.txt", "cluster_1.txt", "cluster_2.txt", "labels.txt", "config.txt"})
    EXPECT_EQ(slurp(dir_ / "r1" / f), slurp(dir_ / "r2" / f)) << f;
  auto m1 = nlohmann::json::parse(slurp(dir_ / "r1" / "manifest.json"));
  auto m2 = nlohmann::json::parse(slurp(dir_ / "r2" / "manifest.json"));
  EXPECT_TRUE(m1.contains("timings_ms"));
  EXPECT_EQ(m1["run_id"].get<std::string>().size(), 16u);
  m1.erase("timings_ms");
  m2.erase("timings_ms");
  m1["output"] = m2["output"];
  EXPECT_EQ(m1, m2);

  // The config snapshot is a complete, loadable config.
  EXPECT_EQ(invoke({"run", path("d"), "-c", path("r1/config.txt"), "-o", path("r3")}).code,
            cli::kExitOk);
  EXPECT_EQ(slurp(dir_ / "r1" / "camera.txt"), slurp(dir_ / "r3" / "camera.txt"));

  ASSERT_EQ(invoke({"eval", path("r1"), path("d")}).code, cli::kExitOk);
  const auto m = metrics(dir_ / "r1" / "metrics.txt");
  ASSERT_TRUE(m.count("ate_rmse"));
  EXPECT_LT(std::stod(m.at("ate_rmse")), 1e-3);
  EXPECT_EQ(m.at("body_1_status"), "tracked");
  EXPECT_TRUE(fs::exists(dir_ / "r1" / "metrics.json"));

  const Result ds = invoke({"inspect", path("d")});
  EXPECT_EQ(ds.code, cli::kExitOk);
  EXPECT_NE(ds.out.find("30"), std::string::npos);
  EXPECT_EQ(invoke({"inspect", path("r1")}).code, cli::kExitOk);
  EXPECT_EQ(invoke({"inspect", path("nothing")}).code, cli::kExitInput);
}

TEST_F(Cli, AblationFlagIsRecorded) {
  const auto spec = world("w.world", {{"frames", "3"}});
  ASSERT_EQ(invoke({"simulate", spec, "-o", path("d")}).code, cli::kExitOk);
  ASSERT_EQ(invoke({"run", path("d"), "--ablation", "2d", "-o", path("r")}).code, cli::kExitOk);
  const auto m = nlohmann::json::parse(slurp(dir_ / "r" / "manifest.json"));
  EXPECT_EQ(m["unary_terms"], "2d");
  EXPECT_NE(slurp(dir_ / "r" / "config.txt").find("unary_terms = 2d"), std::string::npos);
}

TEST_F(Cli, PersistentTrackingLossAbortsWithPartialOutput) {
  // Only moving bodies in view: no static landmarks to track against.
  std::ifstream in(std::string(MBVO_WORLDS_DIR) + "/two_blocks.world");
  std::ofstream out(path("w.world"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("static_", 0) == 0) continue;
    out << (line.rfind("frames ", 0) == 0 ? "frames 40" : line) << "\n";
  }
  out << "static_landmarks 0\n";
  out.close();
  ASSERT_EQ(invoke({"simulate", path("w.world"), "-o", path("d")}).code, cli::kExitOk);
  const Result r = invoke({"run", path("d"), "-o", path("r")});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_TRUE(fs::exists(dir_ / "r" / "camera.txt"));
  const auto m = nlohmann::json::parse(slurp(dir_ / "r" / "manifest.json"));
  EXPECT_TRUE(m["aborted"].get<bool>());
  EXPECT_LT(m["frames_processed"].get<int>(), 40);
}

TEST_F(Cli, EvalOfGroundTruthAsEstimateIsZero) {
  const auto spec = world("w.world", {{"frames", "25"}});
  ASSERT_EQ(invoke({"simulate", spec, "-o", path("d")}).code, cli::kExitOk);
  const auto truth = io::load_ground_truth(dir_ / "d");
  fs::create_directories(dir_ / "gt");
  Trajectory cam;
  std::vector<Trajectory> bodies(truth.cluster_labels.size());
  std::map<int, int> body_of;
  for (const auto& l : truth.landmarks) body_of[l.id] = l.body;
  std::ofstream labels(dir_ / "gt" / "labels.txt");
  for (const auto& f : truth.frames) {
    cam.push_back({f.timestamp, f.camera});
    for (std::size_t c = 0; c < f.clusters.size(); ++c) bodies[c].push_back({f.timestamp, f.clusters[c].pose});
    labels << "frame " << f.index << ' ' << f.feature_landmarks.size();
    for (int id : f.feature_landmarks) labels << ' ' << id << ' ' << body_of.at(id);
    labels << "\n";
  }
  labels.close();
  io::save_trajectory(dir_ / "gt" / "camera.txt", cam);
  for (std::size_t c = 0; c < bodies.size(); ++c)
    io::save_trajectory(dir_ / "gt" / ("cluster_" + std::to_string(c + 1) + ".txt"), bodies[c]);

  ASSERT_EQ(invoke({"eval", path("gt"), path("d"), "-o", path("rep")}).code, cli::kExitOk);
  const auto m = metrics(dir_ / "rep" / "metrics.txt");
  int checked = 0;
  for (const auto& [k, v] : m) {
    if (k.find("rmse") == std::string::npos && k.find("drift") == std::string::npos) continue;
    EXPECT_LT(std::abs(std::stod(v)), 1e-9) << k;
    ++checked;
  }
  EXPECT_EQ(checked, 3 * 7);
  EXPECT_EQ(std::stod(m.at("segmentation_accuracy")), 1.0);

  // Drop the second body's trajectory: reported as missing, still exit 0.
  fs::remove(dir_ / "gt" / "cluster_2.txt");
  ASSERT_EQ(invoke({"eval", path("gt"), path("d"), "-o", path("rep2")}).code, cli::kExitOk);
  const auto m2 = metrics(dir_ / "rep2" / "metrics.txt");
  EXPECT_EQ(m2.at("body_1_status"), "tracked");
  EXPECT_EQ(m2.at("body_2_status"), "missing");
}

TEST_F(Cli, EvalWithMissingFilesIsAnInputError) {
  const auto spec = world("w.world", {{"frames", "3"}});
  ASSERT_EQ(invoke({"simulate", spec, "-o", path("d")}).code, cli::kExitOk);
  fs::create_directories(dir_ / "empty");
  EXPECT_EQ(invoke({"eval", path("empty"), path("d")}).code, cli::kExitInput);
  EXPECT_EQ(invoke({"eval", path("d"), path("empty")}).code, cli::kExitInput);
}
