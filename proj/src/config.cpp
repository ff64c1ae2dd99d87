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


#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "mbvo/pipeline.hpp"

namespace mbvo {

namespace {

struct Field {
  const char* key;
  std::function<std::string(const EngineConfig&)> get;
  std::function<void(EngineConfig&, const std::string&)> set;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters");
  return d;
}

int to_int(const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("not an integer");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false");
}

#define MBVO_DOUBLE(name, member)                                                   \
  Field {                                                                           \
    name, [](const EngineConfig& c) { return fmt(c.member); },                      \
        [](EngineConfig& c, const std::string& v) { c.member = to_double(v); }      \
  }
#define MBVO_INT(name, member)                                                      \
  Field {                                                                           \
    name, [](const EngineConfig& c) { return std::to_string(c.member); },           \
        [](EngineConfig& c, const std::string& v) { c.member = to_int(v); }         \
  }
#define MBVO_BOOL(name, member)                                                     \
  Field {                                                                           \
    name, [](const EngineConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](EngineConfig& c, const std::string& v) { c.member = to_bool(v); }        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      MBVO_DOUBLE("gate", association.gate),
      MBVO_DOUBLE("window_px", association.window_px),
      MBVO_DOUBLE("similarity_floor", association.similarity_floor),
      MBVO_DOUBLE("entropy_threshold", association.entropy_threshold),
      MBVO_DOUBLE("entropy_log_base", association.entropy_log_base),
      MBVO_DOUBLE("alpha", alpha),
      MBVO_DOUBLE("eta", eta),
      MBVO_DOUBLE("bandwidth", bandwidth),
      MBVO_DOUBLE("log_p_out", log_p_out),
      MBVO_INT("mean_field_iterations", mean_field_iterations),
      MBVO_BOOL("label_restarts", label_restarts),
      MBVO_INT("min_new_cluster_size", min_new_cluster_size),
      MBVO_INT("w_max", w_max),
      Field{"unary_terms", [](const EngineConfig& c) { return to_string(c.unary_terms); },
            [](EngineConfig& c, const std::string& v) { c.unary_terms = parse_unary_terms(v); }},
      MBVO_INT("motion_offset", motion_offset),
      MBVO_DOUBLE("spatial_cov_floor", spatial_cov_floor),
      MBVO_DOUBLE("min_cluster_dimension", min_cluster_dimension),
      MBVO_INT("live_frames", live_frames),
      MBVO_INT("temporal_size", window.temporal_size),
      MBVO_INT("spatial_size", window.spatial_size),
      MBVO_DOUBLE("promote_distance", window.promote_distance),
      MBVO_DOUBLE("covisibility_ratio", window.covisibility_ratio),
      MBVO_BOOL("covisibility_compare_newest", window.compare_newest),
      MBVO_DOUBLE("pixel_sigma", pixel_sigma),
      MBVO_DOUBLE("q_spectral", q_spectral),
      MBVO_INT("max_iterations", solver.max_iters),
      MBVO_DOUBLE("relative_tolerance", solver.relative_tolerance),
      MBVO_DOUBLE("initial_lambda", solver.initial_lambda),
      MBVO_INT("max_rejections", solver.max_rejections),
      MBVO_DOUBLE("huber_delta", solver.huber.delta),
      MBVO_DOUBLE("chi2_threshold", chi2_threshold),
      MBVO_INT("chi2_rounds", chi2_rounds),
      MBVO_INT("track_rounds", track_rounds),
      MBVO_INT("min_static_matches", min_static_matches),
      MBVO_INT("min_cluster_frames", min_cluster_frames),
      MBVO_INT("min_cluster_observations", min_cluster_observations),
      MBVO_DOUBLE("anchor_information", anchor_information),
      MBVO_DOUBLE("depth_min", limits.depth_min),
      MBVO_DOUBLE("disparity_min", limits.disparity_min),
      MBVO_INT("threads", threads),
  };
  return f;
}

#undef MBVO_DOUBLE
#undef MBVO_INT
#undef MBVO_BOOL

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void validate(const EngineConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(0, what);
  };
  require(c.association.gate > 0.0, "gate must be > 0");
  require(c.association.window_px > 0.0, "window_px must be > 0");
  require(c.eta > 0.0 && c.eta < 1.0, "eta must be in (0, 1)");
  require(c.alpha >= 0.0, "alpha must be >= 0");
  require(c.bandwidth > 0.0, "bandwidth must be > 0");
  require(c.mean_field_iterations >= 1, "mean_field_iterations must be >= 1");
  require(c.w_max >= 1, "w_max must be >= 1");
  require(c.motion_offset >= 1, "motion_offset must be >= 1");
  require(c.motion_offset < c.window.temporal_size, "motion_offset must be below temporal_size");
  require(c.spatial_cov_floor >= 0.0, "spatial_cov_floor must be >= 0");
  require(c.live_frames >= 1, "live_frames must be >= 1");
  require(c.window.temporal_size >= 2, "temporal_size must be >= 2");
  require(c.window.spatial_size >= 1, "spatial_size must be >= 1");
  require(c.pixel_sigma > 0.0, "pixel_sigma must be > 0");
  require(c.q_spectral > 0.0, "q_spectral must be > 0");
  require(c.solver.max_iters >= 1, "max_iterations must be >= 1");
  require(c.solver.huber.delta > 0.0, "huber_delta must be > 0");
  require(c.chi2_threshold > 0.0, "chi2_threshold must be > 0");
  require(c.min_static_matches >= 0, "min_static_matches must be >= 0");
  require(c.min_cluster_frames >= 2, "min_cluster_frames must be >= 2");
  require(c.anchor_information > 0.0, "anchor_information must be > 0");
  require(c.threads >= 0, "threads must be >= 0");
}

}  // namespace

EngineConfig parse_config(std::istream& in) {
  EngineConfig c;
  std::set<std::string> seen;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected 'key = value'");
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    const auto& f = fields();
    const auto it = std::find_if(f.begin(), f.end(), [&](const Field& x) { return key == x.key; });
    if (it == f.end()) throw ConfigError(line, "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(line, "duplicate key '" + key + "'");
    try {
      it->set(c, value);
    } catch (const std::exception& e) {
      throw ConfigError(line, "bad value for '" + key + "': " + value);
    }
  }
  try {
    validate(c);
  } catch (const ConfigError& e) {
    throw ConfigError(0, e.what());
  }
  return c;
}

EngineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open config " + path.string());
  return parse_config(in);
}

void write_config(std::ostream& out, const EngineConfig& config) {
  for (const auto& f : fields()) out << f.key << " = " << f.get(config) << "\n";
}

}  // namespace mbvo
