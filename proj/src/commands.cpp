#include "gsdm/commands.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "gsdm/io.hpp"

namespace gsdm {

namespace fs = std::filesystem;
using nlohmann::json;

int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("GSDM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) hw = std::min(hw, cap);
  }
  return hw;
}

namespace {

void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(worker_count(), std::max(1, n));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// One command per output directory at a time.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) : path_(fs::path(dir) / ".gsdm.lock") {
    fs::create_directories(dir);
    if (fs::exists(path_))
      throw std::runtime_error("output directory is locked: " + dir);
    std::ofstream os(path_);
    os << "locked\n";
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

// Timestamps are confined to this sidecar; every other output is
// byte-deterministic under config + seed.
class RunLog {
 public:
  explicit RunLog(const std::string& dir) : os_(fs::path(dir) / "run.log", std::ios::app) {}
  void line(const std::string& msg) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%F %T", std::gmtime(&t));
    os_ << "[" << buf << "] " << msg << "\n";
    os_.flush();
  }

 private:
  std::ofstream os_;
};

std::string scene_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06d", index);
  return buf;
}

struct LoadedSplit {
  std::vector<std::string> ids;
  std::vector<PolySet> scenes;
  std::vector<DensityGrid> grids;
};

LoadedSplit load_split(const RunConfig& cfg, const std::string& split) {
  const DatasetManifest manifest = load_manifest(cfg.paths.data_dir);
  auto it = manifest.splits.find(split);
  if (it == manifest.splits.end()) throw ConfigError("unknown split: " + split);
  LoadedSplit out;
  out.ids = it->second;
  out.scenes.resize(out.ids.size());
  out.grids.resize(out.ids.size());
  parallel_for(static_cast<int>(out.ids.size()), [&](int i) {
    out.scenes[i] = load_polyset(scene_path(cfg.paths.data_dir, out.ids[i]));
    out.grids[i] = load_grid(grid_path(cfg.paths.data_dir, out.ids[i]));
  });
  return out;
}

Proposal proposal_for(const RunConfig& cfg, const std::string& kind,
                      const std::string& id, const PolySet& gt) {
  if (kind == "gt") return Proposal{gt, ProposalSource::ground_truth};
  if (kind == "rough" || kind == "detector")
    return load_proposal(proposal_path(cfg.paths.data_dir, id,
                                       kind == "rough" ? "rough" : "detector"));
  throw ConfigError("proposal must be rough, detector or gt");
}

std::string guide_ckpt(const RunConfig& cfg) { return cfg.paths.run_dir + "/guide.ckpt"; }
std::string denoise_ckpt(const RunConfig& cfg) {
  return cfg.paths.run_dir + "/denoise.ckpt";
}

void require_paths(const RunConfig& cfg, bool need_data, bool need_run) {
  if (need_data && cfg.paths.data_dir.empty())
    throw ConfigError("config paths.data_dir is required");
  if (need_run && cfg.paths.run_dir.empty())
    throw ConfigError("config paths.run_dir is required");
  if (need_data && !fs::exists(cfg.paths.data_dir))
    throw ConfigError("data_dir does not exist: " + cfg.paths.data_dir);
}

int map_exception(const std::exception& e) {
  const std::string what = e.what();
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) {
    std::cerr << "config error: " << what << "\n";
    return 2;
  }
  if (dynamic_cast<const StageOrderError*>(&e) != nullptr) {
    std::cerr << "stage-order error: " << what << "\n";
    return 3;
  }
  if (what.find("diverged") != std::string::npos) {
    std::cerr << "divergence: " << what << "\n";
    return 4;
  }
  std::cerr << "error: " << what << "\n";
  return 1;
}

}  // namespace

int cmd_synth(const RunConfig& cfg) {
  try {
    if (cfg.paths.data_dir.empty()) throw ConfigError("config paths.data_dir is required");
    DirLock lock(cfg.paths.data_dir);
    RunLog log(cfg.paths.data_dir);
    fs::create_directories(cfg.paths.data_dir + "/scenes");
    fs::create_directories(cfg.paths.data_dir + "/grids");
    fs::create_directories(cfg.paths.data_dir + "/proposals");

    const int total = cfg.counts.train + cfg.counts.val + cfg.counts.test;
    DatasetManifest manifest;
    manifest.config_hash = cfg.config_hash;
    manifest.profile = cfg.profile;
    std::vector<std::string> ids(total);
    for (int i = 0; i < total; ++i) ids[i] = scene_name(i);
    manifest.splits["train"] =
        std::vector<std::string>(ids.begin(), ids.begin() + cfg.counts.train);
    manifest.splits["val"] = std::vector<std::string>(
        ids.begin() + cfg.counts.train, ids.begin() + cfg.counts.train + cfg.counts.val);
    manifest.splits["test"] = std::vector<std::string>(
        ids.begin() + cfg.counts.train + cfg.counts.val, ids.end());

    parallel_for(total, [&](int i) {
      const std::string& id = ids[i];
      RngStream rng = make_stream(cfg.seed, "synth/scene/" + id);
      PolySet scene = gen_scene(cfg.scene, rng);
      scene.scene_id = id;
      save_polyset(scene, scene_path(cfg.paths.data_dir, id));
      const DensityGrid grid =
          rasterize(scene, cfg.scene.grid_resolution, cfg.scene.raster_kernel_px);
      save_grid(grid, grid_path(cfg.paths.data_dir, id));
      Proposal rough = rough_proposal(scene, cfg.scene.rough_radius);
      rough.elements.scene_id = id;
      save_proposal(rough, proposal_path(cfg.paths.data_dir, id, "rough"));
      RngStream prng = make_stream(cfg.seed, "synth/perturb/" + id);
      Proposal det = perturb_proposal(scene, cfg.scene.noise_std, prng);
      det.elements.scene_id = id;
      save_proposal(det, proposal_path(cfg.paths.data_dir, id, "detector"));
    });
    save_manifest(manifest, cfg.paths.data_dir);
    log.line("synth: wrote " + std::to_string(total) + " scenes");
    std::cout << "synth: " << total << " scenes under " << cfg.paths.data_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    return map_exception(e);
  }
}

namespace {

void write_loss_csv(const std::string& path, const std::vector<double>& trace,
                    std::int64_t first_step) {
  std::ofstream os(path);
  os << "iteration,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%lld,%.10g\n",
                  static_cast<long long>(first_step + 1 + static_cast<std::int64_t>(i)),
                  trace[i]);
    os << buf;
  }
}

}  // namespace

int cmd_train_guide(const RunConfig& cfg, bool resume) {
  try {
    require_paths(cfg, true, true);
    DirLock lock(cfg.paths.run_dir);
    RunLog log(cfg.paths.run_dir);
    const LoadedSplit train = load_split(cfg, "train");

    GuidanceNet<float> net(cfg.guide_net, cfg.seed);
    std::int64_t first_step = 0;
    if (resume) {
      if (!fs::exists(guide_ckpt(cfg)))
        throw ConfigError("resume requested but no checkpoint at " + guide_ckpt(cfg));
      nn::load_checkpoint(net.params, guide_ckpt(cfg));
      first_step = net.params.step();
    }
    const NoiseSchedule sched = cfg.schedule.build();
    RngStream rng = make_stream(cfg.seed, resume ? "guide-train/resume" : "guide-train");
    const auto trace =
        train_guidance(net, train.scenes, sched, cfg.guide_train, cfg.guidance_loss, rng);
    nn::save_checkpoint(net.params, guide_ckpt(cfg));
    write_loss_csv(cfg.paths.run_dir + "/guide_loss.csv", trace, first_step);
    log.line("train-guide: " + std::to_string(trace.size()) + " iterations");
    std::cout << "train-guide: " << trace.size() << " iterations, checkpoint "
              << guide_ckpt(cfg) << "\n";
    return 0;
  } catch (const std::exception& e) {
    return map_exception(e);
  }
}

int cmd_train_denoise(const RunConfig& cfg, bool resume) {
  try {
    require_paths(cfg, true, true);
    if (!fs::exists(guide_ckpt(cfg)))
      throw StageOrderError(
          "denoising training (stage 2) requires the frozen stage-1 guidance "
          "checkpoint at " +
          guide_ckpt(cfg) + "; run train-guide first");
    DirLock lock(cfg.paths.run_dir);
    RunLog log(cfg.paths.run_dir);
    const LoadedSplit train = load_split(cfg, "train");

    GuidanceNet<float> guide(cfg.guide_net, cfg.seed);
    nn::load_checkpoint(guide.params, guide_ckpt(cfg));
    DenoiserNet<float> net(cfg.denoise_net, cfg.seed);
    std::int64_t first_step = 0;
    if (resume) {
      if (!fs::exists(denoise_ckpt(cfg)))
        throw ConfigError("resume requested but no checkpoint at " + denoise_ckpt(cfg));
      nn::load_checkpoint(net.params, denoise_ckpt(cfg));
      first_step = net.params.step();
    }
    RngStream rng = make_stream(cfg.seed, resume ? "denoise-train/resume" : "denoise-train");
    const auto result = train_denoiser(
        net, guide, train.scenes, train.grids, cfg.edm, cfg.denoise_train, rng,
        [&](int iter) {
          nn::save_checkpoint(net.params,
                              cfg.paths.run_dir + "/denoise_iter" + std::to_string(iter) +
                                  ".ckpt");
        });
    for (const auto& w : result.warnings) {
      log.line("warning: " + w);
      std::cerr << "warning: " << w << "\n";
    }
    nn::save_checkpoint(net.params, denoise_ckpt(cfg));
    write_loss_csv(cfg.paths.run_dir + "/denoise_loss.csv", result.trace, first_step);
    log.line("train-denoise: " + std::to_string(result.trace.size()) + " iterations");
    std::cout << "train-denoise: " << result.trace.size() << " iterations, checkpoint "
              << denoise_ckpt(cfg) << "\n";
    return 0;
  } catch (const std::exception& e) {
    return map_exception(e);
  }
}

namespace {

struct LoadedNets {
  GuidanceNet<double> guide;
  DenoiserNet<double> denoiser;

  LoadedNets(const RunConfig& cfg)
      : guide(cfg.guide_net, cfg.seed), denoiser(cfg.denoise_net, cfg.seed) {
    if (!fs::exists(guide_ckpt(cfg)))
      throw ConfigError("missing guidance checkpoint: " + guide_ckpt(cfg));
    if (!fs::exists(denoise_ckpt(cfg)))
      throw ConfigError("missing denoiser checkpoint: " + denoise_ckpt(cfg));
    nn::load_checkpoint(guide.params, guide_ckpt(cfg));
    nn::load_checkpoint(denoiser.params, denoise_ckpt(cfg));
  }
};

}  // namespace

int cmd_reconstruct(const RunConfig& cfg, const ReconstructOptions& opt) {
  try {
    require_paths(cfg, true, true);
    if (opt.out_dir.empty()) throw ConfigError("reconstruct needs an output directory");
    DirLock lock(opt.out_dir);
    RunLog log(opt.out_dir);
    const LoadedSplit split = load_split(cfg, opt.split);
    LoadedNets nets(cfg);

    SamplerConfig scfg = cfg.sampler;
    if (opt.steps_override > 0) scfg.steps = opt.steps_override;
    if (opt.standard_dm) scfg = standard_dm_mode(scfg);

    parallel_for(static_cast<int>(split.ids.size()), [&](int i) {
      const std::string& id = split.ids[i];
      const Proposal prop = proposal_for(cfg, opt.proposal, id, split.scenes[i]);
      RngStream rng = make_stream(cfg.seed, "reconstruct/" + id);
      PolySet rec = reconstruct(nets.denoiser, nets.guide, prop, split.grids[i], scfg,
                                cfg.edm, rng);
      rec.scene_id = id;
      save_polyset(rec, opt.out_dir + "/" + id + ".json");
      json report;
      report["steps"] = scfg.steps;
      report["mode"] = scfg.mode == SamplerMode::ode ? "ode" : "ancestral";
      if (opt.with_nll)
        report["nll_per_dim"] =
            nll_per_dim(nets.denoiser, nets.guide, prop, rec, split.grids[i], scfg, cfg.edm);
      else
        report["nll_per_dim"] = nullptr;
      write_text_file(opt.out_dir + "/" + id + ".report.json", report.dump(2) + "\n");
    });
    log.line("reconstruct: " + std::to_string(split.ids.size()) + " scenes");
    std::cout << "reconstruct: " << split.ids.size() << " scenes -> " << opt.out_dir
              << "\n";
    return 0;
  } catch (const std::exception& e) {
    return map_exception(e);
  }
}

int cmd_evaluate(const RunConfig& cfg, const EvaluateOptions& opt) {
  try {
    require_paths(cfg, true, false);
    if (opt.pred_dir.empty()) throw ConfigError("evaluate needs --pred");
    const DatasetManifest manifest = load_manifest(cfg.paths.data_dir);
    auto it = manifest.splits.find(opt.split);
    if (it == manifest.splits.end()) throw ConfigError("unknown split: " + opt.split);

    std::vector<std::string> pred_files, gt_files;
    for (const auto& id : it->second) {
      pred_files.push_back(opt.pred_dir + "/" + id + ".json");
      gt_files.push_back(scene_path(cfg.paths.data_dir, id));
      if (!fs::exists(pred_files.back()))
        throw std::runtime_error("missing prediction file: " + pred_files.back());
    }
    const DatasetReport report =
        evaluate_dataset(pred_files, gt_files, cfg.criterion, cfg.floorplan);
    const std::string out =
        opt.out_file.empty() ? opt.pred_dir + "/metrics_report.json" : opt.out_file;
    write_text_file(out, report.json + "\n");
    std::cout << "evaluate: " << it->second.size() << " scenes\n"
              << "  corner F1 " << report.floorplan.corner.f1 << ", angle F1 "
              << report.floorplan.angle.f1 << ", room F1 " << report.floorplan.room.f1
              << "\n  mAP(chamfer) " << report.mean_ap_chamfer << ", mAP(+OAD) "
              << report.mean_ap_oad << "\n  report " << out << "\n";
    return 0;
  } catch (const std::exception& e) {
    return map_exception(e);
  }
}

int cmd_nll(const RunConfig& cfg, const NllOptions& opt) {
  try {
    require_paths(cfg, true, true);
    const LoadedSplit split = load_split(cfg, opt.split);
    LoadedNets nets(cfg);

    json rows = json::object();
    std::vector<double> values(split.ids.size());
    parallel_for(static_cast<int>(split.ids.size()), [&](int i) {
      const std::string& id = split.ids[i];
      const Proposal prop = proposal_for(cfg, opt.proposal, id, split.scenes[i]);
      const PolySet sample = opt.pred_dir.empty()
                                 ? split.scenes[i]
                                 : load_polyset(opt.pred_dir + "/" + id + ".json");
      values[i] = nll_per_dim(nets.denoiser, nets.guide, prop, sample, split.grids[i],
                              cfg.sampler, cfg.edm);
    });
    for (std::size_t i = 0; i < split.ids.size(); ++i) rows[split.ids[i]] = values[i];
    const std::string out = opt.out_file.empty()
                                ? (opt.pred_dir.empty() ? cfg.paths.run_dir : opt.pred_dir) +
                                      "/nll_report.json"
                                : opt.out_file;
    write_text_file(out, rows.dump(2) + "\n");
    std::cout << "nll: " << split.ids.size() << " scenes -> " << out << "\n";
    return 0;
  } catch (const std::exception& e) {
    return map_exception(e);
  }
}

int cmd_refine(const RunConfig& cfg, const RefineOptions& opt) {
  try {
    require_paths(cfg, true, true);
    if (opt.out_dir.empty()) throw ConfigError("refine needs an output directory");
    if (opt.flagged.empty()) throw ConfigError("refine needs --flag");
    if (opt.lo > opt.hi) throw ConfigError("refine range is empty");
    DirLock lock(opt.out_dir);
    RunLog log(opt.out_dir);
    const LoadedSplit split = load_split(cfg, opt.split);
    LoadedNets nets(cfg);

    json tables = json::object();
    for (std::size_t i = 0; i < split.ids.size(); ++i) {
      const std::string& id = split.ids[i];
      if (!opt.scene.empty() && id != opt.scene) continue;
      const Proposal prop = proposal_for(cfg, opt.proposal, id, split.scenes[i]);
      RngStream rng = make_stream(cfg.seed, "refine/" + id);
      const RefineResult res = refine(nets.denoiser, nets.guide, prop, split.grids[i],
                                      opt.flagged, opt.lo, opt.hi, cfg.sampler, cfg.edm,
                                      rng);
      save_polyset(res.best, opt.out_dir + "/" + id + ".json");
      json table = json::array();
      for (const auto& entry : res.table)
        table.push_back({{"counts", entry.counts}, {"nll_per_dim", entry.nll}});
      tables[id] = {{"best_counts", res.best_counts}, {"table", std::move(table)}};
    }
    write_text_file(opt.out_dir + "/refine_report.json", tables.dump(2) + "\n");
    log.line("refine done");
    std::cout << "refine -> " << opt.out_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    return map_exception(e);
  }
}

}  // namespace gsdm
