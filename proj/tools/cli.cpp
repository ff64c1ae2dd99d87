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

#include <CLI11.hpp>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <ostream>
#include <regex>
#include <sstream>

#include "mbvo/evaluation.hpp"
#include "mbvo/io.hpp"
#include "mbvo/pipeline.hpp"
#include "mbvo/scene_sim.hpp"

namespace fs = std::filesystem;

namespace mbvo::cli {

namespace {

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr const char* kCameraFile = "camera.txt";
constexpr const char* kLabelsFile = "labels.txt";
constexpr const char* kConfigSnapshot = "config.txt";
constexpr const char* kManifestFile = "manifest.json";

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// FNV-1a over the given blobs, printed as 16 hex digits.
std::string run_id(std::initializer_list<std::string_view> parts) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto part : parts) {
    for (unsigned char c : part) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

void write_labels(const fs::path& file, const std::vector<FrameOutput>& frames) {
  std::ofstream o(file);
  o << "# frame <index> <n_features> {<landmark> <cluster>} x n_features\n";
  for (const auto& f : frames) {
    o << "frame " << f.frame << ' ' << f.feature_landmarks.size();
    for (std::size_t k = 0; k < f.feature_landmarks.size(); ++k)
      o << ' ' << f.feature_landmarks[k] << ' ' << f.feature_clusters[k];
    o << '\n';
  }
  if (!o) throw std::runtime_error("failed writing " + file.string());
}

std::vector<FrameLabels> read_labels(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open " + file.string());
  std::vector<FrameLabels> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream s(line);
    std::string tag;
    FrameLabels fl;
    std::size_t count = 0;
    if (!(s >> tag >> fl.frame >> count) || tag != "frame")
      throw InputError(file.string() + ":" + std::to_string(n) + ": malformed frame record");
    for (std::size_t k = 0; k < count; ++k) {
      int lm = 0, c = 0;
      if (!(s >> lm >> c)) throw InputError(file.string() + ":" + std::to_string(n) + ": truncated");
      fl.feature_clusters.push_back(c);
    }
    out.push_back(std::move(fl));
  }
  return out;
}

int cmd_simulate(const std::string& spec_path, const std::string& out_dir,
                 const std::optional<std::uint64_t>& seed, std::ostream& out) {
  if (!fs::is_regular_file(spec_path)) throw InputError("world spec not found: " + spec_path);
  sim::WorldSpec spec = sim::load_world_spec(spec_path);
  if (seed) spec.rng_seed = *seed;
  const sim::Dataset d = sim::generate_world(spec);
  io::save_dataset(out_dir, d, spec);
  std::size_t features = 0;
  for (const auto& f : d.frames) features += f.features.size();
  out << "wrote " << d.frames.size() << " frames, " << features << " features, "
      << spec.clusters.size() << " clusters to " << out_dir << "\n";
  return kExitOk;
}

int cmd_run(const std::string& dataset, const std::string& config_path, const std::string& out_dir,
            const std::string& ablation, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(dataset)) throw InputError("dataset not found: " + dataset);
  EngineConfig config = config_path.empty() ? EngineConfig{} : load_config(config_path);
  if (!ablation.empty()) config.unary_terms = parse_unary_terms(ablation);
  const auto obs = io::load_observations(dataset);

  fs::create_directories(out_dir);
  std::ostringstream snapshot;
  write_config(snapshot, config);
  {
    std::ofstream o(fs::path(out_dir) / kConfigSnapshot);
    o << snapshot.str();
  }

  const RunResult r = run_sequence(config, obs.camera, obs.frames);
  io::save_trajectory(fs::path(out_dir) / kCameraFile, r.camera);
  for (const auto& [id, tr] : r.clusters)
    io::save_trajectory(fs::path(out_dir) / ("cluster_" + std::to_string(id) + ".txt"), tr);
  write_labels(fs::path(out_dir) / kLabelsFile, r.frames);

  nlohmann::ordered_json m;
  m["run_id"] = run_id({snapshot.str(), read_file(fs::path(dataset) / io::kObservationsFile)});
  m["input"] = dataset;
  m["config"] = config_path.empty() ? std::string("(defaults)") : config_path;
  m["output"] = out_dir;
  m["unary_terms"] = to_string(config.unary_terms);
  m["frames_processed"] = r.frames.size();
  m["frames_total"] = obs.frames.size();
  m["aborted"] = r.aborted;
  std::vector<std::string> files{kConfigSnapshot, kCameraFile, kLabelsFile};
  for (const auto& [id, tr] : r.clusters) files.push_back("cluster_" + std::to_string(id) + ".txt");
  m["files"] = files;
  m["timings_ms"] = {{"association", r.timings.association},
                     {"tracking", r.timings.tracking},
                     {"clustering", r.timings.clustering},
                     {"window", r.timings.window},
                     {"static_optimization", r.timings.static_optimization},
                     {"cluster_optimization", r.timings.cluster_optimization}};
  {
    std::ofstream o(fs::path(out_dir) / kManifestFile);
    o << m.dump(2) << "\n";
  }
  out << "processed " << r.frames.size() << "/" << obs.frames.size() << " frames, "
      << r.clusters.size() << " clusters, run " << m["run_id"].get<std::string>() << "\n";
  if (r.aborted) {
    err << "error: tracking lost for more than 30 frames at frame " << r.frames.back().frame
        << "; partial output kept\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_eval(const std::string& run_dir, const std::string& dataset, const std::string& out_dir,
             std::ostream& out) {
  const fs::path run(run_dir);
  if (!fs::exists(run / kCameraFile)) throw InputError("missing " + (run / kCameraFile).string());
  if (!fs::exists(fs::path(dataset) / io::kGroundTruthFile))
    throw InputError("missing " + (fs::path(dataset) / io::kGroundTruthFile).string());
  const sim::GroundTruth truth = io::load_ground_truth(dataset);
  const Trajectory camera = io::load_trajectory(run / kCameraFile);
  std::map<int, Trajectory> clusters;
  const std::regex name("cluster_([0-9]+)\\.txt");
  for (const auto& entry : fs::directory_iterator(run)) {
    std::smatch sm;
    const std::string fname = entry.path().filename().string();
    if (std::regex_match(fname, sm, name)) clusters[std::stoi(sm[1])] = io::load_trajectory(entry.path());
  }
  const auto labels = read_labels(run / kLabelsFile);
  double max_dt = 0.05;
  if (truth.frames.size() >= 2) max_dt = 0.5 * (truth.frames[1].timestamp - truth.frames[0].timestamp);
  const MetricReport report = flatten(evaluate_sequence(camera, clusters, labels, truth, max_dt));

  const fs::path dest = out_dir.empty() ? run : fs::path(out_dir);
  fs::create_directories(dest);
  {
    std::ofstream o(dest / "metrics.txt");
    write_report_text(o, report);
  }
  {
    std::ofstream o(dest / "metrics.json");
    write_report_json(o, report);
  }
  write_report_text(out, report);
  return kExitOk;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const fs::path p(path);
  if (fs::exists(p / io::kObservationsFile)) {
    const auto obs = io::load_observations(p);
    std::size_t features = 0, boxes = 0;
    for (const auto& f : obs.frames) {
      features += f.features.size();
      boxes += f.boxes.size();
    }
    const double n = std::max<double>(1.0, static_cast<double>(obs.frames.size()));
    out << "dataset " << path << "\n";
    out << "frames = " << obs.frames.size() << "\n";
    out << "features_per_frame = " << features / n << "\n";
    out << "boxes_per_frame = " << boxes / n << "\n";
    const auto& K = obs.camera.intrinsics;
    out << "camera = " << K.fx << ' ' << K.fy << ' ' << K.cx << ' ' << K.cy << ' ' << K.baseline
        << ' ' << obs.camera.width << 'x' << obs.camera.height << "\n";
    if (fs::exists(p / io::kGroundTruthFile)) {
      const auto gt = io::load_ground_truth(p);
      out << "landmarks = " << gt.landmarks.size() << "\n";
      for (std::size_t c = 0; c < gt.cluster_labels.size(); ++c)
        out << "body_" << c + 1 << " = " << gt.cluster_labels[c] << "\n";
    }
    return kExitOk;
  }
  if (fs::exists(p / kCameraFile)) {
    const auto cam = io::load_trajectory(p / kCameraFile);
    out << "run " << path << "\n";
    out << "camera_poses = " << cam.size() << "\n";
    if (!cam.empty()) {
      std::vector<Pose> poses;
      for (const auto& s : cam) poses.push_back(s.pose);
      out << "camera_path_length = " << path_length(poses) << "\n";
    }
    std::vector<std::pair<int, fs::path>> files;
    const std::regex name("cluster_([0-9]+)\\.txt");
    for (const auto& entry : fs::directory_iterator(p)) {
      std::smatch sm;
      const std::string fname = entry.path().filename().string();
      if (std::regex_match(fname, sm, name)) files.emplace_back(std::stoi(sm[1]), entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& [id, f] : files) {
      const auto tr = io::load_trajectory(f);
      out << "cluster_" << id << " = " << tr.size() << " poses";
      if (!tr.empty()) out << ", t = [" << tr.front().timestamp << ", " << tr.back().timestamp << "]";
      out << "\n";
    }
    if (fs::exists(p / kManifestFile)) {
      const auto m = nlohmann::json::parse(read_file(p / kManifestFile));
      out << "run_id = " << m.value("run_id", std::string("?")) << "\n";
    }
    return kExitOk;
  }
  throw InputError("not a dataset or run directory: " + path);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-body stereo visual odometry"};
  app.require_subcommand(1);

  std::string spec_path, sim_out;
  std::optional<std::uint64_t> seed;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset from a world spec");
  sim->add_option("spec", spec_path, "World spec file")->required();
  sim->add_option("-o,--out", sim_out, "Output dataset directory")->required();
  sim->add_option("--seed", seed, "Override the spec's rng seed");

  std::string dataset, config_path, run_out, ablation;
  auto* runc = app.add_subcommand("run", "Run the engine on a dataset");
  runc->add_option("dataset", dataset, "Dataset directory")->required();
  runc->add_option("-c,--config", config_path, "Engine config file");
  runc->add_option("-o,--out", run_out, "Output directory")->required();
  runc->add_option("--ablation", ablation, "Unary terms: 2d, 2d3d or full")
      ->check(CLI::IsMember({"2d", "2d3d", "full"}));

  std::string eval_run, eval_dataset, eval_out;
  auto* evalc = app.add_subcommand("eval", "Evaluate a run against ground truth");
  evalc->add_option("run", eval_run, "Run output directory")->required();
  evalc->add_option("dataset", eval_dataset, "Dataset directory")->required();
  evalc->add_option("-o,--out", eval_out, "Report directory (default: the run directory)");

  std::string inspect_path;
  auto* insp = app.add_subcommand("inspect", "Summarize a dataset or run directory");
  insp->add_option("path", inspect_path, "Dataset or run directory")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }

  try {
    if (sim->parsed()) return cmd_simulate(spec_path, sim_out, seed, out);
    if (runc->parsed()) return cmd_run(dataset, config_path, run_out, ablation, out, err);
    if (evalc->parsed()) return cmd_eval(eval_run, eval_dataset, eval_out, out);
    if (insp->parsed()) return cmd_inspect(inspect_path, out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const sim::WorldSpecError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ConfigError& e) {
    err << "error: config: " << e.what() << "\n";
    return kExitInput;
  } catch (const io::FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const sim::SimulationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitInput;
}

}  // namespace mbvo::cli
