#include "gsdm/sampler.hpp"

#include <cmath>
#include <stdexcept>

namespace gsdm {

namespace {

GuidanceField effective_field(const GuidanceField& field, const SamplerConfig& cfg) {
  if (!cfg.identity_guidance) return field;
  return GuidanceField::identity(field.size());
}

void check_layout(const PolySet& a, const GuidanceField& g) {
  if (a.size() != g.size()) throw std::invalid_argument("field/set size mismatch");
}

}  // namespace

DenoiserNet<double>::Forward DenoiserEpsModel::run(const PolySet& noisy, double sigma,
                                                   DenoiserNet<double>::Query& q) const {
  const PrecondCoeffs pc = edm_precond(sigma, edm_);
  const SigmaGuidanceAt at = guidance_at_sigma(field_, sigma);
  q.c_noise = pc.c_noise;
  q.cond = &cond_;
  q.coords.clear();
  for (int i = 0; i < noisy.size(); ++i) {
    Eigen::Matrix<double, Eigen::Dynamic, 2> m = pc.c_in * noisy.elements[i].vertices;
    m.col(0).array() += (1.0 - pc.c_in) * at.mu_bar(i, 0);
    m.col(1).array() += (1.0 - pc.c_in) * at.mu_bar(i, 1);
    q.coords.push_back(std::move(m));
  }
  return net_.forward(std::span<const DenoiserNet<double>::Query>(&q, 1));
}

ElementCoords DenoiserEpsModel::extract_eps(const PolySet& noisy, double sigma,
                                            const DenoiserNet<double>::Forward& fwd) const {
  const SigmaGuidanceAt at = guidance_at_sigma(field_, sigma);
  ElementCoords out;
  int row = 0;
  for (int i = 0; i < noisy.size(); ++i) {
    const auto& v = noisy.elements[i].vertices;
    Eigen::Matrix<double, Eigen::Dynamic, 2> e(v.rows(), 2);
    for (int r = 0; r < v.rows(); ++r, ++row)
      for (int c = 0; c < 2; ++c) {
        const double f = fwd.out(row, c);
        if (edm_.mode == PredictionMode::eps_pred) {
          e(r, c) = f;
        } else {
          // F is the x0 estimate; invert the guided marginal for eps.
          e(r, c) = (v(r, c) - at.mu_bar(i, c) - at.scale * f) / at.sigma_bar[i];
        }
      }
    out.push_back(std::move(e));
  }
  return out;
}

ElementCoords DenoiserEpsModel::eps(const PolySet& noisy, double sigma) {
  check_layout(noisy, field_);
  DenoiserNet<double>::Query q;
  const auto fwd = run(noisy, sigma, q);
  return extract_eps(noisy, sigma, fwd);
}

void DenoiserEpsModel::eps_and_diag(const PolySet& noisy, double sigma,
                                    ElementCoords& eps_out, Eigen::VectorXd& diag_out) {
  check_layout(noisy, field_);
  DenoiserNet<double>::Query q;
  const auto fwd = run(noisy, sigma, q);
  eps_out = extract_eps(noisy, sigma, fwd);

  const PrecondCoeffs pc = edm_precond(sigma, edm_);
  const SigmaGuidanceAt at = guidance_at_sigma(field_, sigma);
  diag_out.resize(2 * fwd.rows);
  nn::Mat<double> seed = nn::Mat<double>::Zero(fwd.rows, 2);
  int k = 0;
  for (int row = 0; row < fwd.rows; ++row)
    for (int c = 0; c < 2; ++c, ++k) {
      seed(row, c) = 1.0;
      const nn::Mat<double> dcoords = net_.backward_coords(fwd, seed);
      seed(row, c) = 0.0;
      const double jf = dcoords(row, c) * pc.c_in;  // dF_k/dx_k
      diag_out[k] = jf;
    }
  if (edm_.mode == PredictionMode::x0_pred) {
    // eps = (x - mu_bar - s F)/sigma_bar per element.
    int idx = 0;
    for (int i = 0; i < noisy.size(); ++i) {
      const int nc = 2 * noisy.elements[i].vertex_count();
      for (int c = 0; c < nc; ++c, ++idx)
        diag_out[idx] = (1.0 - at.scale * diag_out[idx]) / at.sigma_bar[i];
    }
  }
}

PolySet init_noise(const GuidanceField& field, const PolySet& layout,
                   const NoiseSchedule& sched, RngStream& rng) {
  check_layout(layout, field);
  const GuidanceAt at = guidance_at(field, sched, sched.T);
  PolySet out = layout;
  for (int i = 0; i < out.size(); ++i) {
    auto& v = out.elements[i].vertices;
    for (int r = 0; r < v.rows(); ++r)
      for (int c = 0; c < 2; ++c)
        v(r, c) = at.mu_bar(i, c) + at.sigma_bar[i] * rng.normal();
  }
  return out;
}

PolySet ancestral_step(const ElementCoords& eps_hat, const PolySet& x_t,
                       const GuidanceField& field, const NoiseSchedule& sched, int t,
                       ReverseNoiseRule rule, RngStream& rng) {
  check_layout(x_t, field);
  if (t < 1 || t > sched.T) throw std::out_of_range("ancestral_step: t out of range");
  const GuidanceAt now = guidance_at(field, sched, t);
  const GuidanceAt prev = guidance_at(field, sched, t - 1);
  const double inv_sa = 1.0 / std::sqrt(sched.alpha[t]);
  const double eps_scale = sched.beta[t] / sched.sqrt_one_minus_alpha_bar[t];

  double sigma_t = 0.0;
  if (t > 1) {
    switch (rule) {
      case ReverseNoiseRule::zero: sigma_t = 0.0; break;
      case ReverseNoiseRule::beta: sigma_t = std::sqrt(sched.beta[t]); break;
      case ReverseNoiseRule::beta_tilde:
        sigma_t = std::sqrt((1.0 - sched.alpha_bar[t - 1]) /
                            (1.0 - sched.alpha_bar[t]) * sched.beta[t]);
        break;
    }
  }

  PolySet out = x_t;
  for (int i = 0; i < out.size(); ++i) {
    auto& v = out.elements[i].vertices;
    const double coeff = field.sigma_T[i] * eps_scale;
    for (int r = 0; r < v.rows(); ++r)
      for (int c = 0; c < 2; ++c)
        v(r, c) = (v(r, c) - now.mu_bar(i, c) - coeff * eps_hat[i](r, c)) * inv_sa +
                  prev.mu_bar(i, c);
  }
  if (sigma_t > 0.0) {
    for (int i = 0; i < out.size(); ++i) {
      auto& v = out.elements[i].vertices;
      for (int r = 0; r < v.rows(); ++r)
        for (int c = 0; c < 2; ++c) v(r, c) += sigma_t * rng.normal();
    }
  }
  return out;
}

PolySet ode_step(const ElementCoords& eps_hat, const PolySet& x_t,
                 const GuidanceField& field, const NoiseSchedule& sched, int t) {
  check_layout(x_t, field);
  if (t < 1 || t > sched.T) throw std::out_of_range("ode_step: t out of range");
  const GuidanceAt now = guidance_at(field, sched, t);
  const GuidanceAt prev = guidance_at(field, sched, t - 1);
  PolySet out = x_t;
  for (int i = 0; i < out.size(); ++i) {
    auto& v = out.elements[i].vertices;
    for (int r = 0; r < v.rows(); ++r)
      for (int c = 0; c < 2; ++c) {
        const double x0_hat =
            (v(r, c) - now.mu_bar(i, c) - now.sigma_bar[i] * eps_hat[i](r, c)) /
            sched.sqrt_alpha_bar[t];
        v(r, c) = sched.sqrt_alpha_bar[t - 1] * x0_hat + prev.mu_bar(i, c) +
                  prev.sigma_bar[i] * eps_hat[i](r, c);
      }
  }
  return out;
}

PolySet reconstruct_core(EpsModel& model, const GuidanceField& field_in,
                         const PolySet& layout, const SamplerConfig& cfg, RngStream& rng) {
  cfg.validate();
  const GuidanceField field = effective_field(field_in, cfg);
  const std::vector<double> ladder = sigma_ladder(cfg.sigma_max, cfg.sigma_min, cfg.steps);
  const NoiseSchedule sched = schedule_from_sigma_ladder(ladder);

  PolySet x = init_noise(field, layout, sched, rng);
  for (int k = sched.T; k >= 1; --k) {
    const double sigma = sigma_of_alpha_bar(sched.alpha_bar[k]);
    const ElementCoords eps_hat = model.eps(x, sigma);
    x = cfg.mode == SamplerMode::ode
            ? ode_step(eps_hat, x, field, sched, k)
            : ancestral_step(eps_hat, x, field, sched, k, cfg.noise_rule, rng);
  }
  for (auto& e : x.elements) {
    try {
      e = canonicalize(e);
    } catch (const std::invalid_argument&) {
      // degenerate output geometry stays as-is
    }
  }
  return x;
}

double prior_log_density(const Eigen::VectorXd& coords, const PolySet& layout,
                         const GuidanceField& field, double sigma) {
  const SigmaGuidanceAt at = guidance_at_sigma(field, sigma);
  double logp = 0.0;
  int k = 0;
  for (int i = 0; i < layout.size(); ++i) {
    const double var = at.sigma_bar[i] * at.sigma_bar[i];
    for (int r = 0; r < layout.elements[i].vertex_count(); ++r)
      for (int c = 0; c < 2; ++c, ++k) {
        const double d = coords[k] - at.mu_bar(i, c);
        logp += -0.5 * std::log(2.0 * M_PI * var) - d * d / (2.0 * var);
      }
  }
  return logp;
}

namespace {

struct FlowEval {
  Eigen::VectorXd dx;
  double dlogp = 0.0;
};

// Probability-flow drift in the guided variance-preserving parameterization:
//   dx/dsigma = -sigma abar (x - mu_T) + sqrt(abar) C eps_hat
//   div       = sum_c [ -sigma abar + sqrt(abar) C d(eps_c)/dx_c ]
// evaluated here against tau = ln(sigma).
FlowEval flow_rhs(EpsModel& model, const GuidanceField& field, PolySet& scratch,
                  const Eigen::VectorXd& x, double tau) {
  const double sigma = std::exp(tau);
  const double abar = alpha_bar_of_sigma(sigma);
  const double s = std::sqrt(abar);
  unpack_coords(x, scratch);
  ElementCoords eps;
  Eigen::VectorXd diag;
  model.eps_and_diag(scratch, sigma, eps, diag);

  FlowEval out;
  out.dx.resize(x.size());
  int k = 0;
  for (int i = 0; i < scratch.size(); ++i) {
    const double c_i = field.sigma_T[i];
    for (int r = 0; r < scratch.elements[i].vertex_count(); ++r)
      for (int c = 0; c < 2; ++c, ++k) {
        const double f =
            -sigma * abar * (x[k] - field.mu_T(i, c)) + s * c_i * eps[i](r, c);
        out.dx[k] = sigma * f;  // d/dtau
        out.dlogp += sigma * (-sigma * abar + s * c_i * diag[k]);
      }
  }
  return out;
}

}  // namespace

double nll_per_dim_core(EpsModel& model, const GuidanceField& field, const PolySet& sample,
                        const SamplerConfig& cfg) {
  cfg.validate();
  check_layout(sample, field);
  const int dim = sample.total_coords();
  if (dim == 0) throw std::invalid_argument("nll: empty sample");

  Eigen::VectorXd x = pack_coords(sample);
  PolySet scratch = sample;
  double logdet = 0.0;

  const double tau0 = std::log(cfg.sigma_min);
  const double tau1 = std::log(cfg.sigma_max);
  const int n = cfg.nll_steps;
  const double h = (tau1 - tau0) / n;
  for (int step = 0; step < n; ++step) {
    const double tau = tau0 + step * h;
    const FlowEval k1 = flow_rhs(model, field, scratch, x, tau);
    const FlowEval k2 = flow_rhs(model, field, scratch, x + 0.5 * h * k1.dx, tau + 0.5 * h);
    const FlowEval k3 = flow_rhs(model, field, scratch, x + 0.5 * h * k2.dx, tau + 0.5 * h);
    const FlowEval k4 = flow_rhs(model, field, scratch, x + h * k3.dx, tau + h);
    x += h / 6.0 * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx);
    logdet += h / 6.0 * (k1.dlogp + 2.0 * k2.dlogp + 2.0 * k3.dlogp + k4.dlogp);
    if (!x.allFinite() || !std::isfinite(logdet))
      throw std::runtime_error("flow diverged");
  }

  const double logp = prior_log_density(x, sample, field, cfg.sigma_max) + logdet;
  return -logp / dim;
}

PolySet reconstruct(const DenoiserNet<double>& net, const GuidanceNet<double>& guide,
                    const Proposal& proposal, const DensityGrid& grid,
                    const SamplerConfig& cfg, const EdmConfig& edm, RngStream& rng) {
  if (proposal.elements.size() == 0) throw std::invalid_argument("empty proposal");
  GuidanceField field = encode_guidance(guide, proposal.elements);
  if (cfg.identity_guidance) field = GuidanceField::identity(field.size());
  const auto cond = net.encode_condition(grid);
  DenoiserEpsModel model(net, cond, field, edm);
  PolySet out = reconstruct_core(model, field, proposal.elements, cfg, rng);
  out.scene_id = proposal.elements.scene_id;
  return out;
}

double nll_per_dim(const DenoiserNet<double>& net, const GuidanceNet<double>& guide,
                   const Proposal& proposal, const PolySet& sample, const DensityGrid& grid,
                   const SamplerConfig& cfg, const EdmConfig& edm) {
  if (sample.size() != proposal.elements.size())
    throw std::invalid_argument("nll: sample/proposal layout mismatch");
  for (int i = 0; i < sample.size(); ++i)
    if (sample.elements[i].vertex_count() != proposal.elements.elements[i].vertex_count())
      throw std::invalid_argument("nll: sample/proposal layout mismatch");
  GuidanceField field = encode_guidance(guide, proposal.elements);
  if (cfg.identity_guidance) field = GuidanceField::identity(field.size());
  const auto cond = net.encode_condition(grid);
  DenoiserEpsModel model(net, cond, field, edm);
  return nll_per_dim_core(model, field, sample, cfg);
}

RefineResult refine(const DenoiserNet<double>& net, const GuidanceNet<double>& guide,
                    const Proposal& proposal, const DensityGrid& grid,
                    const std::vector<int>& flagged, int lo, int hi,
                    const SamplerConfig& cfg, const EdmConfig& edm, RngStream& rng) {
  if (flagged.empty()) throw std::invalid_argument("refine: no flagged elements");
  if (lo > hi) throw std::invalid_argument("refine: empty candidate set");
  for (int idx : flagged) {
    if (idx < 0 || idx >= proposal.elements.size())
      throw std::invalid_argument("refine: flagged index out of range");
    if (proposal.elements.elements[idx].kind == ElementKind::polygon && lo < 3)
      throw std::invalid_argument("refine: polygons need at least 3 vertices");
    if (proposal.elements.elements[idx].kind == ElementKind::polyline && lo < 2)
      throw std::invalid_argument("refine: polylines need at least 2 vertices");
  }

  const auto cond = net.encode_condition(grid);
  const int span = hi - lo + 1;
  const int combos = static_cast<int>(std::pow(span, flagged.size()));

  RefineResult result;
  double best_nll = std::numeric_limits<double>::infinity();
  for (int combo = 0; combo < combos; ++combo) {
    std::vector<int> counts(flagged.size());
    int rem = combo;
    for (std::size_t f = 0; f < flagged.size(); ++f) {
      counts[f] = lo + rem % span;
      rem /= span;
    }
    Proposal cand = proposal;
    for (std::size_t f = 0; f < flagged.size(); ++f)
      cand.elements.elements[flagged[f]] =
          resample(cand.elements.elements[flagged[f]], counts[f]);

    GuidanceField field = encode_guidance(guide, cand.elements);
    if (cfg.identity_guidance) field = GuidanceField::identity(field.size());
    DenoiserEpsModel model(net, cond, field, edm);
    PolySet rec = reconstruct_core(model, field, cand.elements, cfg, rng);
    rec.scene_id = proposal.elements.scene_id;
    const double nll = nll_per_dim_core(model, field, rec, cfg);
    result.table.push_back({counts, nll});
    if (nll < best_nll) {
      best_nll = nll;
      result.best = rec;
      result.best_counts = counts;
    }
  }
  return result;
}

}  // namespace gsdm
