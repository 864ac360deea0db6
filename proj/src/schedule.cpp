#include "gsdm/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace gsdm {

NoiseSchedule NoiseSchedule::linear(int T, double beta_min, double beta_max) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
  std::vector<double> betas(T);
  for (int t = 1; t <= T; ++t)
    betas[t - 1] = T == 1 ? beta_min
                          : beta_min + (beta_max - beta_min) * (t - 1) / double(T - 1);
  return from_betas(betas);
}

NoiseSchedule NoiseSchedule::from_betas(const std::vector<double>& betas) {
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.beta.resize(s.T + 1);
  s.alpha.resize(s.T + 1);
  s.alpha_bar.resize(s.T + 1);
  s.sqrt_alpha_bar.resize(s.T + 1);
  s.sqrt_one_minus_alpha_bar.resize(s.T + 1);
  s.beta[0] = 0.0;
  s.alpha[0] = 1.0;
  s.alpha_bar[0] = 1.0;
  s.sqrt_alpha_bar[0] = 1.0;
  s.sqrt_one_minus_alpha_bar[0] = 0.0;
  for (int t = 1; t <= s.T; ++t) {
    s.beta[t] = betas[t - 1];
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.sqrt_alpha_bar[t] = std::sqrt(s.alpha_bar[t]);
    s.sqrt_one_minus_alpha_bar[t] = std::sqrt(1.0 - s.alpha_bar[t]);
  }
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  for (int t = 1; t <= T; ++t) {
    if (!(beta[t] > 0.0 && beta[t] < 1.0))
      throw std::invalid_argument("beta out of (0,1)");
    if (!(alpha_bar[t] > 0.0 && alpha_bar[t] < alpha_bar[t - 1]))
      throw std::invalid_argument("alpha_bar must be strictly decreasing in (0,1]");
  }
}

GuidanceField GuidanceField::identity(int n) {
  GuidanceField g;
  g.mu_T = Eigen::Matrix<double, Eigen::Dynamic, 2>::Zero(n, 2);
  g.sigma_T = Eigen::VectorXd::Ones(n);
  return g;
}

void GuidanceField::validate() const {
  if (mu_T.rows() != sigma_T.size())
    throw std::invalid_argument("guidance field size mismatch");
  if (!mu_T.allFinite()) throw std::invalid_argument("guidance mu not finite");
  if (!(sigma_T.array() > 0.0).all())
    throw std::invalid_argument("guidance sigma must be positive");
}

static void check_t(const NoiseSchedule& sched, int t, int lo) {
  if (t < lo || t > sched.T) throw std::out_of_range("timestep out of range");
}

GuidanceAt guidance_at(const GuidanceField& g, const NoiseSchedule& sched, int t) {
  check_t(sched, t, 0);
  GuidanceAt out;
  out.mu_bar = (1.0 - sched.sqrt_alpha_bar[t]) * g.mu_T;
  out.sigma_bar = sched.sqrt_one_minus_alpha_bar[t] * g.sigma_T;
  return out;
}

double implied_step_sigma(double sigma_bar_now, double sigma_bar_prev,
                          double alpha_t, double beta_t) {
  // Extended precision keeps the cancellation in the variance inversion well
  // below the oracle tolerances even for beta ~ 1e-4.
  const long double now = static_cast<long double>(sigma_bar_now);
  const long double prev = static_cast<long double>(sigma_bar_prev);
  const long double var =
      (now * now - static_cast<long double>(alpha_t) * prev * prev) /
      static_cast<long double>(beta_t);
  if (var < 0.0L) throw std::runtime_error("inconsistent schedule");
  return static_cast<double>(std::sqrt(var));
}

StepParams implied_step_params(const GuidanceField& g, const NoiseSchedule& sched, int t) {
  check_t(sched, t, 1);
  const GuidanceAt now = guidance_at(g, sched, t);
  const GuidanceAt prev = guidance_at(g, sched, t - 1);
  StepParams p;
  p.mu = now.mu_bar - std::sqrt(sched.alpha[t]) * prev.mu_bar;
  const int n = g.size();
  p.sigma.resize(n);
  for (int i = 0; i < n; ++i)
    p.sigma[i] = implied_step_sigma(now.sigma_bar[i], prev.sigma_bar[i],
                                    sched.alpha[t], sched.beta[t]);
  return p;
}

PolySet forward_sample(const PolySet& x0, const GuidanceField& g,
                       const NoiseSchedule& sched, int t, RngStream& rng) {
  check_t(sched, t, 0);
  if (x0.size() != g.size()) throw std::invalid_argument("field/set size mismatch");
  const GuidanceAt at = guidance_at(g, sched, t);
  const double sab = sched.sqrt_alpha_bar[t];
  PolySet out = x0;
  for (int i = 0; i < x0.size(); ++i) {
    auto& v = out.elements[i].vertices;
    for (int k = 0; k < v.rows(); ++k)
      for (int c = 0; c < 2; ++c)
        v(k, c) = sab * v(k, c) + at.mu_bar(i, c) + at.sigma_bar[i] * rng.normal();
  }
  return out;
}

PolySet forward_sample_stepwise(const PolySet& x0, const GuidanceField& g,
                                const NoiseSchedule& sched, int t, RngStream& rng) {
  check_t(sched, t, 1);
  if (x0.size() != g.size()) throw std::invalid_argument("field/set size mismatch");
  PolySet out = x0;
  for (int s = 1; s <= t; ++s) {
    const StepParams p = implied_step_params(g, sched, s);
    const double sa = std::sqrt(sched.alpha[s]);
    const double sb = std::sqrt(sched.beta[s]);
    for (int i = 0; i < out.size(); ++i) {
      auto& v = out.elements[i].vertices;
      for (int k = 0; k < v.rows(); ++k)
        for (int c = 0; c < 2; ++c)
          v(k, c) = sa * v(k, c) + p.mu(i, c) + sb * p.sigma[i] * rng.normal();
    }
  }
  return out;
}

double alpha_bar_of_sigma(double sigma) { return 1.0 / (1.0 + sigma * sigma); }

double sigma_of_alpha_bar(double alpha_bar) {
  return std::sqrt((1.0 - alpha_bar) / alpha_bar);
}

SigmaGuidanceAt guidance_at_sigma(const GuidanceField& g, double sigma) {
  const double abar = alpha_bar_of_sigma(sigma);
  const double s = std::sqrt(abar);
  SigmaGuidanceAt out;
  out.scale = s;
  out.mu_bar = (1.0 - s) * g.mu_T;
  out.sigma_bar = std::sqrt(1.0 - abar) * g.sigma_T;
  return out;
}

std::vector<double> sigma_ladder(double sigma_max, double sigma_min, int steps) {
  if (steps < 1) throw std::invalid_argument("ladder needs steps >= 1");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max))
    throw std::invalid_argument("need 0 < sigma_min < sigma_max");
  std::vector<double> out(steps);
  if (steps == 1) {
    out[0] = sigma_max;
    return out;
  }
  const double ratio = std::pow(sigma_min / sigma_max, 1.0 / (steps - 1));
  out[0] = sigma_max;
  for (int k = 1; k < steps; ++k) out[k] = out[k - 1] * ratio;
  out[steps - 1] = sigma_min;
  return out;
}

NoiseSchedule schedule_from_sigma_ladder(const std::vector<double>& ladder) {
  // ladder is descending sigma_max..sigma_min; level k=1..K of the induced
  // schedule is ladder[K-k], level 0 is clean.
  const int K = static_cast<int>(ladder.size());
  std::vector<double> betas(K);
  double abar_prev = 1.0;
  for (int k = 1; k <= K; ++k) {
    const double abar_k = alpha_bar_of_sigma(ladder[K - k]);
    betas[k - 1] = 1.0 - abar_k / abar_prev;
    abar_prev = abar_k;
  }
  return NoiseSchedule::from_betas(betas);
}

}  // namespace gsdm
