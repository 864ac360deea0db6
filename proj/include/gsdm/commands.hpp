#pragma once

#include <string>
#include <vector>

#include "gsdm/config.hpp"

namespace gsdm {

// Command implementations behind the CLI; they return process exit codes
// (0 ok, 2 config error, 3 stage-order error, 4 divergence) and are also
// invoked directly by the test suites.

int cmd_synth(const RunConfig& cfg);

int cmd_train_guide(const RunConfig& cfg, bool resume = false);
int cmd_train_denoise(const RunConfig& cfg, bool resume = false);

struct ReconstructOptions {
  std::string proposal = "detector";  // rough | detector | gt
  std::string split = "test";
  int steps_override = 0;             // 0 = use config
  bool standard_dm = false;           // identity-guidance ablation
  bool with_nll = true;
  std::string out_dir;
};
int cmd_reconstruct(const RunConfig& cfg, const ReconstructOptions& opt);

struct EvaluateOptions {
  std::string pred_dir;
  std::string split = "test";
  std::string out_file;  // defaults to <pred_dir>/metrics_report.json
};
int cmd_evaluate(const RunConfig& cfg, const EvaluateOptions& opt);

struct NllOptions {
  std::string pred_dir;  // empty = score the ground truth itself
  std::string proposal = "detector";
  std::string split = "test";
  std::string out_file;
};
int cmd_nll(const RunConfig& cfg, const NllOptions& opt);

struct RefineOptions {
  std::vector<int> flagged;
  int lo = 0, hi = 0;
  std::string proposal = "rough";
  std::string split = "test";
  std::string scene;  // empty = every scene in the split
  std::string out_dir;
};
int cmd_refine(const RunConfig& cfg, const RefineOptions& opt);

// Worker cap shared by scene-parallel loops (GSDM_THREADS).
int worker_count();

}  // namespace gsdm
