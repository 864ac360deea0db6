#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gsdm/denoiser.hpp"
#include "gsdm/guidance.hpp"
#include "gsdm/metrics.hpp"
#include "gsdm/sampler.hpp"
#include "gsdm/schedule.hpp"
#include "gsdm/synthdata.hpp"

namespace gsdm {

// Thrown for malformed configuration (maps to exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when stage ordering is violated (maps to exit code 3).
struct StageOrderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScheduleConfig {
  int T = 1000;
  double beta_min = 1e-4;
  double beta_max = 2e-2;

  NoiseSchedule build() const { return NoiseSchedule::linear(T, beta_min, beta_max); }
};

struct DatasetCounts {
  int train = 1024;
  int val = 32;
  int test = 100;
};

struct PathsConfig {
  std::string data_dir;
  std::string run_dir;
};

// One JSON document, flat sections per module; unknown keys are hard errors.
// All randomness flows from the root seed through named streams.
struct RunConfig {
  std::uint64_t seed = 1234;
  std::string profile = "floorplan";
  PathsConfig paths;
  ScheduleConfig schedule;
  EdmConfig edm;
  SamplerConfig sampler;
  SceneConfig scene;
  DatasetCounts counts;
  GuidanceLossConfig guidance_loss;
  GuidanceNetConfig guide_net;
  DenoiserConfig denoise_net;
  GuidanceTrainConfig guide_train;
  DenoiserTrainConfig denoise_train;
  MatchCriterion criterion;
  FloorplanCfg floorplan;

  std::string config_hash;  // FNV-1a of the canonical serialized form
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string canonical_config_json(const RunConfig& cfg);

std::uint64_t fnv1a64(const std::string& data);
std::string hex64(std::uint64_t value);

// Dataset layout under data_dir:
//   scenes/<id>.json        ground-truth PolySet
//   grids/<id>.pdgrid       rasterized condition
//   proposals/<id>.rough.json, proposals/<id>.detector.json
//   manifest.json           ids per split + generating config hash
struct DatasetManifest {
  std::string config_hash;
  std::string profile;
  std::map<std::string, std::vector<std::string>> splits;
};

std::string scene_path(const std::string& data_dir, const std::string& id);
std::string grid_path(const std::string& data_dir, const std::string& id);
std::string proposal_path(const std::string& data_dir, const std::string& id,
                          const std::string& kind);

void save_manifest(const DatasetManifest& m, const std::string& data_dir);
DatasetManifest load_manifest(const std::string& data_dir);

}  // namespace gsdm
