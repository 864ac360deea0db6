#pragma once

#include <Eigen/Core>
#include <vector>

#include "gsdm/geometry.hpp"
#include "gsdm/rng.hpp"

namespace gsdm {

// Discrete noise schedule, index t = 0..T with alpha_bar[0] = 1. Arrays are
// derived from beta by the defining recurrences so that every consumer sees
// identical floating-point values.
struct NoiseSchedule {
  int T = 0;
  Eigen::VectorXd beta;        // beta[0] unused (= 0)
  Eigen::VectorXd alpha;       // alpha[t] = 1 - beta[t], alpha[0] = 1
  Eigen::VectorXd alpha_bar;   // alpha_bar[t] = alpha_bar[t-1] * alpha[t]
  Eigen::VectorXd sqrt_alpha_bar;
  Eigen::VectorXd sqrt_one_minus_alpha_bar;

  static NoiseSchedule linear(int T, double beta_min = 1e-4, double beta_max = 2e-2);
  static NoiseSchedule from_betas(const std::vector<double>& betas);
  void validate() const;
};

// Per-element terminal guidance: a 2-vector mean shift broadcast to every
// vertex of the element and a positive scalar scale.
struct GuidanceField {
  Eigen::Matrix<double, Eigen::Dynamic, 2> mu_T;   // N x 2
  Eigen::VectorXd sigma_T;                          // N

  int size() const { return static_cast<int>(sigma_T.size()); }
  static GuidanceField identity(int n);
  void validate() const;
};

struct GuidanceAt {
  Eigen::Matrix<double, Eigen::Dynamic, 2> mu_bar;  // N x 2
  Eigen::VectorXd sigma_bar;                         // N
};

// Time interpolation of the terminal field:
//   mu_bar_t(i) = (1 - sqrt(alpha_bar_t)) * mu_T(i)
//   sigma_bar_t(i) = sqrt(1 - alpha_bar_t) * sigma_T(i)
GuidanceAt guidance_at(const GuidanceField& g, const NoiseSchedule& sched, int t);

struct StepParams {
  Eigen::Matrix<double, Eigen::Dynamic, 2> mu;  // per-step mean shift
  Eigen::VectorXd sigma;                         // per-step scale multiplier
};

// Inverts the accumulation recursions to the per-step transition parameters:
//   mu_t = mu_bar_t - sqrt(alpha_t) * mu_bar_{t-1}
//   sigma_t^2 = (sigma_bar_t^2 - alpha_t * sigma_bar_{t-1}^2) / (1 - alpha_t)
// Throws std::runtime_error("inconsistent schedule") on negative variance.
StepParams implied_step_params(const GuidanceField& g, const NoiseSchedule& sched, int t);

// Raw variance inversion used by implied_step_params.
double implied_step_sigma(double sigma_bar_now, double sigma_bar_prev,
                          double alpha_t, double beta_t);

// Closed-form guided forward draw:
//   x_t = sqrt(alpha_bar_t) * x0 + mu_bar_t(i) + sigma_bar_t(i) * eps
// Noise draw order: elements in order, vertices in order, x before y.
PolySet forward_sample(const PolySet& x0, const GuidanceField& g,
                       const NoiseSchedule& sched, int t, RngStream& rng);

// Chains t single-step transitions
//   x_s = sqrt(alpha_s) * x_{s-1} + mu_s(i) + sqrt(beta_s) * sigma_s(i) * eps
// whose marginal law equals forward_sample's.
PolySet forward_sample_stepwise(const PolySet& x0, const GuidanceField& g,
                                const NoiseSchedule& sched, int t, RngStream& rng);

// Continuous noise level via the identification 1 - alpha_bar <-> s^2/(1+s^2):
//   alpha_bar(sigma) = 1/(1+sigma^2), sigma(t) = sqrt((1-abar_t)/abar_t).
double alpha_bar_of_sigma(double sigma);
double sigma_of_alpha_bar(double alpha_bar);

struct SigmaGuidanceAt {
  Eigen::Matrix<double, Eigen::Dynamic, 2> mu_bar;
  Eigen::VectorXd sigma_bar;
  double scale = 1.0;  // sqrt(alpha_bar(sigma)), the signal coefficient
};

SigmaGuidanceAt guidance_at_sigma(const GuidanceField& g, double sigma);

// Geometric ladder from sigma_max down to sigma_min with `steps` levels, and
// the discrete schedule it induces (level k corresponds to sigma_k, level 0
// is the clean endpoint).
std::vector<double> sigma_ladder(double sigma_max, double sigma_min, int steps);
NoiseSchedule schedule_from_sigma_ladder(const std::vector<double>& ladder);

}  // namespace gsdm
