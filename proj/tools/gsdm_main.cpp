#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "gsdm/commands.hpp"
#include "gsdm/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"gsdm: guided set diffusion for polygon/polyline reconstruction"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "run configuration JSON")
      ->required()
      ->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");

  bool resume_guide = false;
  auto* train_guide =
      app.add_subcommand("train-guide", "stage 1: train the guidance networks");
  train_guide->add_flag("--resume", resume_guide,
                        "continue from the existing guidance checkpoint");

  bool resume_denoise = false;
  auto* train_denoise =
      app.add_subcommand("train-denoise", "stage 2: train the denoising network");
  train_denoise->add_flag("--resume", resume_denoise,
                          "continue from the existing denoiser checkpoint");

  gsdm::ReconstructOptions ropt;
  bool no_nll = false;
  auto* reconstruct = app.add_subcommand("reconstruct", "run the guided reverse process");
  reconstruct->add_option("--proposal", ropt.proposal, "rough | detector | gt")
      ->check(CLI::IsMember({"rough", "detector", "gt"}));
  reconstruct->add_option("--split", ropt.split, "dataset split (train/val/test)");
  reconstruct->add_option("--steps", ropt.steps_override, "override sampling step count");
  reconstruct->add_flag("--ablate-standard-dm", ropt.standard_dm,
                        "identity-guidance ablation (standard DM)");
  reconstruct->add_flag("--no-nll", no_nll, "skip the per-scene likelihood report entry");
  reconstruct->add_option("--out", ropt.out_dir, "output directory")->required();

  gsdm::EvaluateOptions eopt;
  auto* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
  evaluate->add_option("--pred", eopt.pred_dir, "prediction directory")->required();
  evaluate->add_option("--split", eopt.split, "dataset split");
  evaluate->add_option("--out", eopt.out_file, "report path");

  gsdm::NllOptions nopt;
  auto* nll = app.add_subcommand("nll", "likelihood of samples under the trained model");
  nll->add_option("--pred", nopt.pred_dir,
                  "directory of PolySet files to score (default: ground truth)");
  nll->add_option("--proposal", nopt.proposal, "rough | detector | gt")
      ->check(CLI::IsMember({"rough", "detector", "gt"}));
  nll->add_option("--split", nopt.split, "dataset split");
  nll->add_option("--out", nopt.out_file, "report path");

  gsdm::RefineOptions fopt;
  std::string range;
  auto* refine = app.add_subcommand("refine", "likelihood-guided vertex-count search");
  refine->add_option("--flag", fopt.flagged, "flagged element indices")->required();
  refine->add_option("--range", range, "vertex count range lo:hi")->required();
  refine->add_option("--proposal", fopt.proposal, "rough | detector | gt")
      ->check(CLI::IsMember({"rough", "detector", "gt"}));
  refine->add_option("--split", fopt.split, "dataset split");
  refine->add_option("--scene", fopt.scene, "restrict to one scene id");
  refine->add_option("--out", fopt.out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const gsdm::RunConfig cfg = gsdm::load_run_config(config_path);
    if (synth->parsed()) return gsdm::cmd_synth(cfg);
    if (train_guide->parsed()) return gsdm::cmd_train_guide(cfg, resume_guide);
    if (train_denoise->parsed()) return gsdm::cmd_train_denoise(cfg, resume_denoise);
    if (reconstruct->parsed()) {
      ropt.with_nll = !no_nll;
      return gsdm::cmd_reconstruct(cfg, ropt);
    }
    if (evaluate->parsed()) return gsdm::cmd_evaluate(cfg, eopt);
    if (nll->parsed()) return gsdm::cmd_nll(cfg, nopt);
    if (refine->parsed()) {
      const auto colon = range.find(':');
      if (colon == std::string::npos) {
        std::cerr << "config error: --range must be lo:hi\n";
        return 2;
      }
      fopt.lo = std::stoi(range.substr(0, colon));
      fopt.hi = std::stoi(range.substr(colon + 1));
      return gsdm::cmd_refine(cfg, fopt);
    }
  } catch (const gsdm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const gsdm::StageOrderError& e) {
    std::cerr << "stage-order error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
