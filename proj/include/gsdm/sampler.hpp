#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "gsdm/denoiser.hpp"
#include "gsdm/geometry.hpp"
#include "gsdm/guidance.hpp"
#include "gsdm/io.hpp"
#include "gsdm/rng.hpp"
#include "gsdm/schedule.hpp"

namespace gsdm {

enum class SamplerMode { ancestral, ode };
enum class ReverseNoiseRule { zero, beta, beta_tilde };

struct SamplerConfig {
  int steps = 10;
  SamplerMode mode = SamplerMode::ode;
  double sigma_min = 0.01;
  double sigma_max = 5.0;
  ReverseNoiseRule noise_rule = ReverseNoiseRule::zero;
  int nll_steps = 100;
  bool identity_guidance = false;  // standard-DM ablation switch

  void validate() const {
    if (steps < 1) throw std::invalid_argument("sampler: steps >= 1");
    if (!(sigma_min > 0.0 && sigma_min < sigma_max))
      throw std::invalid_argument("sampler: need 0 < sigma_min < sigma_max");
  }
};

// The ablation baseline: identity guidance (mu == 0, sigma_T == 1) forced
// everywhere in initialization and stepping; everything else untouched.
inline SamplerConfig standard_dm_mode(SamplerConfig cfg) {
  cfg.identity_guidance = true;
  return cfg;
}

using ElementCoords = std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>>;

// Noise-prediction source for the reverse process: the trained denoiser in
// production, closed-form oracles in tests.
class EpsModel {
 public:
  virtual ~EpsModel() = default;
  virtual ElementCoords eps(const PolySet& noisy, double sigma) = 0;
  // eps plus the exact diagonal of d(eps)/d(coords); needed by the
  // probability-flow likelihood.
  virtual void eps_and_diag(const PolySet& noisy, double sigma, ElementCoords& eps_out,
                            Eigen::VectorXd& diag_out) = 0;
};

// Wraps the denoiser behind the guided preconditioning contract. The
// condition features are encoded once and shared across all queries.
class DenoiserEpsModel : public EpsModel {
 public:
  DenoiserEpsModel(const DenoiserNet<double>& net,
                   const DenoiserNet<double>::CondForward& cond,
                   const GuidanceField& field, const EdmConfig& edm)
      : net_(net), cond_(cond), field_(field), edm_(edm) {}

  ElementCoords eps(const PolySet& noisy, double sigma) override;
  void eps_and_diag(const PolySet& noisy, double sigma, ElementCoords& eps_out,
                    Eigen::VectorXd& diag_out) override;

 private:
  DenoiserNet<double>::Forward run(const PolySet& noisy, double sigma,
                                   DenoiserNet<double>::Query& query) const;
  ElementCoords extract_eps(const PolySet& noisy, double sigma,
                            const DenoiserNet<double>::Forward& fwd) const;

  const DenoiserNet<double>& net_;
  const DenoiserNet<double>::CondForward& cond_;
  const GuidanceField& field_;
  EdmConfig edm_;
};

// x_T^i ~ N(mu_bar(x_hat_0, T, i), sigma_bar(x_hat_0, T, i)^2 I), with the
// field evaluated on the proposal and T the terminal ladder level.
PolySet init_noise(const GuidanceField& field, const PolySet& layout,
                   const NoiseSchedule& sched, RngStream& rng);

// One guided reverse step (t -> t-1) given the noise prediction:
//   x_{t-1} = (x_t - mu_bar_t - sigma_T (1-alpha_t)/sqrt(1-abar_t) eps)
//             / sqrt(alpha_t) + mu_bar_{t-1} + sigma_t z
// Reverse noise sigma_t follows the rule; the final step is always
// noise-free.
PolySet ancestral_step(const ElementCoords& eps_hat, const PolySet& x_t,
                       const GuidanceField& field, const NoiseSchedule& sched, int t,
                       ReverseNoiseRule rule, RngStream& rng);

// Deterministic first-order (DDIM-style) step t -> t-1 on the same schedule.
PolySet ode_step(const ElementCoords& eps_hat, const PolySet& x_t,
                 const GuidanceField& field, const NoiseSchedule& sched, int t);

// Full reverse pass over the geometric sigma ladder: init_noise then
// cfg.steps reverse steps; outputs are canonicalized where non-degenerate.
PolySet reconstruct_core(EpsModel& model, const GuidanceField& field,
                         const PolySet& layout, const SamplerConfig& cfg, RngStream& rng);

// Per-coordinate log density of the guided terminal prior at sigma.
double prior_log_density(const Eigen::VectorXd& coords, const PolySet& layout,
                         const GuidanceField& field, double sigma);

// Negative log likelihood per coordinate: integrates the probability-flow
// ODE from sigma_min to sigma_max with the exact divergence (one backward
// pass per coordinate) and adds the guided-prior density at sigma_max.
// Throws std::runtime_error("flow diverged") on non-finite states.
double nll_per_dim_core(EpsModel& model, const GuidanceField& field, const PolySet& sample,
                        const SamplerConfig& cfg);

// Trained-network front ends. The guidance field comes from the proposal;
// cfg.identity_guidance swaps it for the identity field.
PolySet reconstruct(const DenoiserNet<double>& net, const GuidanceNet<double>& guide,
                    const Proposal& proposal, const DensityGrid& grid,
                    const SamplerConfig& cfg, const EdmConfig& edm, RngStream& rng);

double nll_per_dim(const DenoiserNet<double>& net, const GuidanceNet<double>& guide,
                   const Proposal& proposal, const PolySet& sample, const DensityGrid& grid,
                   const SamplerConfig& cfg, const EdmConfig& edm);

struct RefineEntry {
  std::vector<int> counts;  // vertex counts assigned to the flagged elements
  double nll = 0.0;
};

struct RefineResult {
  PolySet best;
  std::vector<int> best_counts;
  std::vector<RefineEntry> table;
};

// Vertex-count search: for every count assignment to the flagged elements,
// rebuild the proposal by resampling, reconstruct, and score by NLL per
// dimension; returns the argmin plus the full table.
RefineResult refine(const DenoiserNet<double>& net, const GuidanceNet<double>& guide,
                    const Proposal& proposal, const DensityGrid& grid,
                    const std::vector<int>& flagged, int lo, int hi,
                    const SamplerConfig& cfg, const EdmConfig& edm, RngStream& rng);

}  // namespace gsdm
