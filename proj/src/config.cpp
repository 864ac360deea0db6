#include "gsdm/config.hpp"

#include <filesystem>
#include <set>

#include <json.hpp>

#include "gsdm/io.hpp"

namespace gsdm {

using nlohmann::json;

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

namespace {

void require_known_keys(const json& obj, const std::string& section,
                        const std::set<std::string>& known) {
  for (const auto& [key, value] : obj.items())
    if (known.find(key) == known.end())
      throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void apply_profile_defaults(RunConfig& cfg) {
  if (cfg.profile == "floorplan") {
    cfg.scene.profile = SceneProfile::floorplan;
    cfg.edm.mode = PredictionMode::eps_pred;
    cfg.edm.sigma_min = 0.01;
    cfg.sampler.sigma_min = 0.01;
  } else if (cfg.profile == "map") {
    cfg.scene.profile = SceneProfile::map;
    cfg.scene.elements_min = 2;
    cfg.scene.elements_max = 5;
    cfg.edm.mode = PredictionMode::x0_pred;
    cfg.edm.sigma_min = 0.1;
    cfg.sampler.sigma_min = 0.1;
  } else {
    throw ConfigError("profile must be 'floorplan' or 'map'");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig cfg;
  require_known_keys(j, "(root)",
                     {"seed", "profile", "paths", "schedule", "edm", "sampler", "scene",
                      "counts", "guidance_loss", "guide_net", "denoise_net", "training",
                      "metrics"});
  if (!j.contains("seed")) throw ConfigError("config requires an explicit seed");
  cfg.seed = j.at("seed").get<std::uint64_t>();
  read(j, "profile", cfg.profile);
  apply_profile_defaults(cfg);

  if (j.contains("paths")) {
    const json& p = j.at("paths");
    require_known_keys(p, "paths", {"data_dir", "run_dir"});
    read(p, "data_dir", cfg.paths.data_dir);
    read(p, "run_dir", cfg.paths.run_dir);
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    require_known_keys(s, "schedule", {"T", "beta_min", "beta_max"});
    read(s, "T", cfg.schedule.T);
    read(s, "beta_min", cfg.schedule.beta_min);
    read(s, "beta_max", cfg.schedule.beta_max);
    if (cfg.schedule.T < 1) throw ConfigError("schedule.T must be >= 1");
  }
  if (j.contains("edm")) {
    const json& e = j.at("edm");
    require_known_keys(e, "edm",
                       {"sigma_data", "p_mean", "p_std", "sigma_min", "sigma_max", "mode"});
    read(e, "sigma_data", cfg.edm.sigma_data);
    read(e, "p_mean", cfg.edm.p_mean);
    read(e, "p_std", cfg.edm.p_std);
    read(e, "sigma_min", cfg.edm.sigma_min);
    read(e, "sigma_max", cfg.edm.sigma_max);
    if (e.contains("mode")) {
      const std::string m = e.at("mode").get<std::string>();
      if (m == "eps_pred")
        cfg.edm.mode = PredictionMode::eps_pred;
      else if (m == "x0_pred")
        cfg.edm.mode = PredictionMode::x0_pred;
      else
        throw ConfigError("edm.mode must be eps_pred or x0_pred");
    }
    try {
      cfg.edm.validate();
    } catch (const std::exception& e2) {
      throw ConfigError(e2.what());
    }
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    require_known_keys(
        s, "sampler",
        {"steps", "mode", "sigma_min", "sigma_max", "noise_rule", "nll_steps"});
    read(s, "steps", cfg.sampler.steps);
    read(s, "sigma_min", cfg.sampler.sigma_min);
    read(s, "sigma_max", cfg.sampler.sigma_max);
    read(s, "nll_steps", cfg.sampler.nll_steps);
    if (s.contains("mode")) {
      const std::string m = s.at("mode").get<std::string>();
      if (m == "ode")
        cfg.sampler.mode = SamplerMode::ode;
      else if (m == "ancestral")
        cfg.sampler.mode = SamplerMode::ancestral;
      else
        throw ConfigError("sampler.mode must be ode or ancestral");
    }
    if (s.contains("noise_rule")) {
      const std::string r = s.at("noise_rule").get<std::string>();
      if (r == "zero")
        cfg.sampler.noise_rule = ReverseNoiseRule::zero;
      else if (r == "beta")
        cfg.sampler.noise_rule = ReverseNoiseRule::beta;
      else if (r == "beta_tilde")
        cfg.sampler.noise_rule = ReverseNoiseRule::beta_tilde;
      else
        throw ConfigError("sampler.noise_rule must be zero, beta or beta_tilde");
    }
    try {
      cfg.sampler.validate();
    } catch (const std::exception& e2) {
      throw ConfigError(e2.what());
    }
  }
  if (j.contains("scene")) {
    const json& s = j.at("scene");
    require_known_keys(s, "scene",
                       {"elements_min", "elements_max", "grid_resolution", "noise_std",
                        "rough_radius", "map_vertices", "shapes", "raster_kernel_px"});
    read(s, "elements_min", cfg.scene.elements_min);
    read(s, "elements_max", cfg.scene.elements_max);
    read(s, "grid_resolution", cfg.scene.grid_resolution);
    read(s, "noise_std", cfg.scene.noise_std);
    read(s, "rough_radius", cfg.scene.rough_radius);
    read(s, "map_vertices", cfg.scene.map_vertices);
    read(s, "shapes", cfg.scene.shapes);
    read(s, "raster_kernel_px", cfg.scene.raster_kernel_px);
    try {
      cfg.scene.validate();
    } catch (const std::exception& e2) {
      throw ConfigError(e2.what());
    }
  }
  if (j.contains("counts")) {
    const json& c = j.at("counts");
    require_known_keys(c, "counts", {"train", "val", "test"});
    read(c, "train", cfg.counts.train);
    read(c, "val", cfg.counts.val);
    read(c, "test", cfg.counts.test);
    if (cfg.counts.train < 1 || cfg.counts.val < 0 || cfg.counts.test < 0)
      throw ConfigError("counts must be positive (train) / nonnegative");
  }
  if (j.contains("guidance_loss")) {
    const json& g = j.at("guidance_loss");
    require_known_keys(g, "guidance_loss", {"lambda1", "lambda2", "lambda3", "margin"});
    read(g, "lambda1", cfg.guidance_loss.lambda1);
    read(g, "lambda2", cfg.guidance_loss.lambda2);
    read(g, "lambda3", cfg.guidance_loss.lambda3);
    read(g, "margin", cfg.guidance_loss.margin);
    if (cfg.guidance_loss.margin <= 0.0) throw ConfigError("guidance_loss.margin > 0");
  }
  if (j.contains("guide_net")) {
    const json& g = j.at("guide_net");
    require_known_keys(g, "guide_net",
                       {"pe_dim", "width", "heads", "layers", "ffn", "sigma_floor"});
    read(g, "pe_dim", cfg.guide_net.pe_dim);
    read(g, "width", cfg.guide_net.width);
    read(g, "heads", cfg.guide_net.heads);
    read(g, "layers", cfg.guide_net.layers);
    read(g, "ffn", cfg.guide_net.ffn);
    read(g, "sigma_floor", cfg.guide_net.sigma_floor);
  }
  if (j.contains("denoise_net")) {
    const json& d = j.at("denoise_net");
    require_known_keys(d, "denoise_net",
                       {"pe_dim", "width", "heads", "layers", "ffn", "patch"});
    read(d, "pe_dim", cfg.denoise_net.pe_dim);
    read(d, "width", cfg.denoise_net.width);
    read(d, "heads", cfg.denoise_net.heads);
    read(d, "layers", cfg.denoise_net.layers);
    read(d, "ffn", cfg.denoise_net.ffn);
    read(d, "patch", cfg.denoise_net.patch);
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    require_known_keys(t, "training",
                       {"guide_iters", "guide_batch", "guide_lr", "guide_wd",
                        "denoise_iters", "denoise_batch", "denoise_lr", "denoise_wd",
                        "checkpoint_every", "drop_prob"});
    read(t, "guide_iters", cfg.guide_train.iterations);
    read(t, "guide_batch", cfg.guide_train.batch);
    read(t, "guide_lr", cfg.guide_train.lr);
    read(t, "guide_wd", cfg.guide_train.weight_decay);
    read(t, "denoise_iters", cfg.denoise_train.iterations);
    read(t, "denoise_batch", cfg.denoise_train.batch);
    read(t, "denoise_lr", cfg.denoise_train.lr);
    read(t, "denoise_wd", cfg.denoise_train.weight_decay);
    read(t, "checkpoint_every", cfg.denoise_train.checkpoint_every);
    read(t, "drop_prob", cfg.denoise_train.drop_prob);
  }
  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    require_known_keys(m, "metrics",
                       {"chamfer_thresholds", "oad_thresholds", "units_per_halfcanvas",
                        "oad_class_multiplier", "corner_tol", "angle_tol_deg", "room_iou",
                        "iou_samples"});
    read(m, "chamfer_thresholds", cfg.criterion.chamfer_thresholds);
    read(m, "oad_thresholds", cfg.criterion.oad_thresholds);
    read(m, "units_per_halfcanvas", cfg.criterion.units_per_halfcanvas);
    if (m.contains("oad_class_multiplier"))
      for (const auto& [key, value] : m.at("oad_class_multiplier").items())
        cfg.criterion.oad_class_multiplier[std::stoi(key)] = value.get<double>();
    read(m, "corner_tol", cfg.floorplan.corner_tol);
    read(m, "angle_tol_deg", cfg.floorplan.angle_tol_deg);
    read(m, "room_iou", cfg.floorplan.room_iou);
    read(m, "iou_samples", cfg.floorplan.iou_samples);
    try {
      cfg.criterion.validate();
    } catch (const std::exception& e2) {
      throw ConfigError(e2.what());
    }
  }

  cfg.config_hash = hex64(fnv1a64(canonical_config_json(cfg)));
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config not found: " + path);
  return parse_run_config(read_text_file(path));
}

std::string canonical_config_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["profile"] = cfg.profile;
  j["paths"] = {{"data_dir", cfg.paths.data_dir}, {"run_dir", cfg.paths.run_dir}};
  j["schedule"] = {{"T", cfg.schedule.T},
                   {"beta_min", cfg.schedule.beta_min},
                   {"beta_max", cfg.schedule.beta_max}};
  j["edm"] = {{"sigma_data", cfg.edm.sigma_data},
              {"p_mean", cfg.edm.p_mean},
              {"p_std", cfg.edm.p_std},
              {"sigma_min", cfg.edm.sigma_min},
              {"sigma_max", cfg.edm.sigma_max},
              {"mode", cfg.edm.mode == PredictionMode::x0_pred ? "x0_pred" : "eps_pred"}};
  const char* rule = cfg.sampler.noise_rule == ReverseNoiseRule::zero
                         ? "zero"
                         : (cfg.sampler.noise_rule == ReverseNoiseRule::beta ? "beta"
                                                                             : "beta_tilde");
  j["sampler"] = {{"steps", cfg.sampler.steps},
                  {"mode", cfg.sampler.mode == SamplerMode::ode ? "ode" : "ancestral"},
                  {"sigma_min", cfg.sampler.sigma_min},
                  {"sigma_max", cfg.sampler.sigma_max},
                  {"noise_rule", rule},
                  {"nll_steps", cfg.sampler.nll_steps}};
  j["scene"] = {{"elements_min", cfg.scene.elements_min},
                {"elements_max", cfg.scene.elements_max},
                {"grid_resolution", cfg.scene.grid_resolution},
                {"noise_std", cfg.scene.noise_std},
                {"rough_radius", cfg.scene.rough_radius},
                {"map_vertices", cfg.scene.map_vertices},
                {"shapes", cfg.scene.shapes},
                {"raster_kernel_px", cfg.scene.raster_kernel_px}};
  j["counts"] = {{"train", cfg.counts.train}, {"val", cfg.counts.val}, {"test", cfg.counts.test}};
  j["guidance_loss"] = {{"lambda1", cfg.guidance_loss.lambda1},
                        {"lambda2", cfg.guidance_loss.lambda2},
                        {"lambda3", cfg.guidance_loss.lambda3},
                        {"margin", cfg.guidance_loss.margin}};
  j["guide_net"] = {{"pe_dim", cfg.guide_net.pe_dim},   {"width", cfg.guide_net.width},
                    {"heads", cfg.guide_net.heads},     {"layers", cfg.guide_net.layers},
                    {"ffn", cfg.guide_net.ffn},         {"sigma_floor", cfg.guide_net.sigma_floor}};
  j["denoise_net"] = {{"pe_dim", cfg.denoise_net.pe_dim}, {"width", cfg.denoise_net.width},
                      {"heads", cfg.denoise_net.heads},   {"layers", cfg.denoise_net.layers},
                      {"ffn", cfg.denoise_net.ffn},       {"patch", cfg.denoise_net.patch}};
  j["training"] = {{"guide_iters", cfg.guide_train.iterations},
                   {"guide_batch", cfg.guide_train.batch},
                   {"guide_lr", cfg.guide_train.lr},
                   {"guide_wd", cfg.guide_train.weight_decay},
                   {"denoise_iters", cfg.denoise_train.iterations},
                   {"denoise_batch", cfg.denoise_train.batch},
                   {"denoise_lr", cfg.denoise_train.lr},
                   {"denoise_wd", cfg.denoise_train.weight_decay},
                   {"checkpoint_every", cfg.denoise_train.checkpoint_every},
                   {"drop_prob", cfg.denoise_train.drop_prob}};
  json mult = json::object();
  for (const auto& [cls, factor] : cfg.criterion.oad_class_multiplier)
    mult[std::to_string(cls)] = factor;
  j["metrics"] = {{"chamfer_thresholds", cfg.criterion.chamfer_thresholds},
                  {"oad_thresholds", cfg.criterion.oad_thresholds},
                  {"units_per_halfcanvas", cfg.criterion.units_per_halfcanvas},
                  {"oad_class_multiplier", mult},
                  {"corner_tol", cfg.floorplan.corner_tol},
                  {"angle_tol_deg", cfg.floorplan.angle_tol_deg},
                  {"room_iou", cfg.floorplan.room_iou},
                  {"iou_samples", cfg.floorplan.iou_samples}};
  return j.dump(2);
}

std::string scene_path(const std::string& data_dir, const std::string& id) {
  return data_dir + "/scenes/" + id + ".json";
}
std::string grid_path(const std::string& data_dir, const std::string& id) {
  return data_dir + "/grids/" + id + ".pdgrid";
}
std::string proposal_path(const std::string& data_dir, const std::string& id,
                          const std::string& kind) {
  return data_dir + "/proposals/" + id + "." + kind + ".json";
}

void save_manifest(const DatasetManifest& m, const std::string& data_dir) {
  json j;
  j["config_hash"] = m.config_hash;
  j["profile"] = m.profile;
  json splits = json::object();
  for (const auto& [name, ids] : m.splits) splits[name] = ids;
  j["splits"] = std::move(splits);
  write_text_file(data_dir + "/manifest.json", j.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::string& data_dir) {
  const std::string path = data_dir + "/manifest.json";
  if (!std::filesystem::exists(path))
    throw ConfigError("manifest not found under " + data_dir);
  const json j = json::parse(read_text_file(path));
  DatasetManifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  m.profile = j.at("profile").get<std::string>();
  for (const auto& [name, ids] : j.at("splits").items())
    m.splits[name] = ids.get<std::vector<std::string>>();
  return m;
}

}  // namespace gsdm
