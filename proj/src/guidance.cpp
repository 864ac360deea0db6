#include "gsdm/guidance.hpp"

#include <cmath>
#include <stdexcept>

namespace gsdm {

namespace {

// Distance from clean element `a` to noisy element `b` minimized over the
// order variants of `a`, with an optional gradient w.r.t. b's coordinates.
// Keeping the variant enumeration (and any count resampling) on the clean
// side keeps the gradient a plain sign pattern.
double pair_distance(const Element& a, const Element& b,
                     Eigen::Matrix<double, Eigen::Dynamic, 2>* grad_b) {
  const int vb = b.vertex_count();
  double best = std::numeric_limits<double>::infinity();
  Eigen::Matrix<double, Eigen::Dynamic, 2> best_ref;
  for (const auto& var : variants(a)) {
    const Element aligned = var.vertex_count() == vb ? var : resample(var, vb);
    const double d = (b.vertices - aligned.vertices).cwiseAbs().sum() / vb;
    if (d < best) {
      best = d;
      if (grad_b) best_ref = aligned.vertices;
    }
  }
  if (grad_b) {
    grad_b->resize(vb, 2);
    for (int v = 0; v < vb; ++v)
      for (int c = 0; c < 2; ++c) {
        const double diff = b.vertices(v, c) - best_ref(v, c);
        (*grad_b)(v, c) = diff > 0.0 ? 1.0 / vb : (diff < 0.0 ? -1.0 / vb : 0.0);
      }
  }
  return best;
}

}  // namespace

ProxyLossResult perm_loss_proxy_grad(const PolySet& x0, const PolySet& xt,
                                     const GuidanceLossConfig& cfg, bool with_grad) {
  if (x0.size() != xt.size())
    throw std::invalid_argument("perm_loss_proxy: element count mismatch");
  const int n = x0.size();
  ProxyLossResult out;
  if (with_grad) {
    out.grad_xt.resize(n);
    for (int i = 0; i < n; ++i)
      out.grad_xt[i].setZero(xt.elements[i].vertex_count(), 2);
  }
  if (n < 2) return out;  // no negatives exist

  // D(i,j) = distance(x0^i, xt^j); G(i,j) = dD(i,j)/d xt^j.
  Eigen::MatrixXd D(n, n);
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> G(
      with_grad ? n * n : 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      D(i, j) = pair_distance(x0.elements[i], xt.elements[j],
                              with_grad ? &G[i * n + j] : nullptr);
      ++out.distance_evaluations;
    }

  const double alpha = cfg.margin;
  for (int i = 0; i < n; ++i) {
    // anchor xt^i: positive x0^i at D(i,i), negatives x0^j at D(j,i)
    int row_arg = -1;
    double row_term = -std::numeric_limits<double>::infinity();
    // anchor x0^i: positive xt^i at D(i,i), negatives xt^j at D(i,j)
    int col_arg = -1;
    double col_term = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double r = alpha + D(i, i) - D(j, i);
      if (r > row_term) {
        row_term = r;
        row_arg = j;
      }
      const double c = alpha + D(i, i) - D(i, j);
      if (c > col_term) {
        col_term = c;
        col_arg = j;
      }
    }
    if (row_term > 0.0) {
      out.value += row_term;
      if (with_grad) {
        out.grad_xt[i] += G[i * n + i];          // +dD(i,i)/dxt^i
        out.grad_xt[i] -= G[row_arg * n + i];    // -dD(row_arg,i)/dxt^i
      }
    }
    if (col_term > 0.0) {
      out.value += col_term;
      if (with_grad) {
        out.grad_xt[i] += G[i * n + i];
        out.grad_xt[col_arg] -= G[i * n + col_arg];
      }
    }
  }
  return out;
}

double perm_loss_proxy(const PolySet& x0, const PolySet& xt,
                       const GuidanceLossConfig& cfg) {
  return perm_loss_proxy_grad(x0, xt, cfg, false).value;
}

double set_distance(const PolySet& a, const PolySet& b) {
  if (a.size() != b.size()) throw std::invalid_argument("set_distance: size mismatch");
  double total = 0.0;
  for (int i = 0; i < a.size(); ++i)
    total += pair_distance(a.elements[i], b.elements[i], nullptr);
  return total / a.size();
}

double perm_loss_exact(const PolySet& x0, const PolySet& xt,
                       const GuidanceLossConfig& cfg) {
  if (x0.size() != xt.size())
    throw std::invalid_argument("perm_loss_exact: element count mismatch");
  if (x0.size() > 4) throw std::invalid_argument("perm_loss_exact: oracle size");
  if (x0.size() < 2) return 0.0;

  const double alpha = cfg.margin;
  const double d_pos = set_distance(xt, x0);

  double loss = 0.0;
  // Hardest clean permutation against anchor xt.
  {
    double hardest = -std::numeric_limits<double>::infinity();
    bool first = true;
    for (const auto& perm : set_permutations(x0)) {
      if (first) {
        first = false;  // identity permutation is the positive
        continue;
      }
      hardest = std::max(hardest, alpha + d_pos - set_distance(xt, perm));
    }
    if (hardest > 0.0) loss += hardest;
  }
  // Hardest noisy permutation against anchor x0.
  {
    double hardest = -std::numeric_limits<double>::infinity();
    bool first = true;
    for (const auto& perm : set_permutations(xt)) {
      if (first) {
        first = false;
        continue;
      }
      hardest = std::max(hardest, alpha + d_pos - set_distance(x0, perm));
    }
    if (hardest > 0.0) loss += hardest;
  }
  return loss;
}

namespace detail {

GuideLossTerms guide_loss_terms(const PolySet& x0,
                                const Eigen::Matrix<double, Eigen::Dynamic, 2>& mu,
                                const Eigen::VectorXd& sigma, const NoiseSchedule& sched,
                                int t, RngStream& rng, const GuidanceLossConfig& cfg,
                                bool with_grad) {
  if (t < 1 || t > sched.T) throw std::out_of_range("guide_loss: t out of range");
  const int n = x0.size();
  GuideLossTerms out;
  out.dmu.setZero(n, 2);
  out.dsigma.setZero(n);

  const GuidedDraw draw = guided_forward_draw(x0, mu, sigma, sched, t, rng);
  const double s1m = draw.sqrt_one_minus_abar;
  const double m1s = draw.one_minus_sqrt_abar;

  for (int i = 0; i < n; ++i)
    if (s1m * sigma[i] < 1e-6) throw std::runtime_error("scale collapse");

  const ProxyLossResult proxy = perm_loss_proxy_grad(x0, draw.xt, cfg, with_grad);
  out.value = cfg.lambda1 * proxy.value;

  // Regularizers on the interpolated field.
  for (int i = 0; i < n; ++i) {
    const double sbar = s1m * sigma[i];
    out.value += cfg.lambda2 / (sbar * sbar);
    const double mx = m1s * mu(i, 0), my = m1s * mu(i, 1);
    out.value += cfg.lambda3 * (mx * mx + my * my);
    if (with_grad) {
      out.dsigma[i] += cfg.lambda2 * (-2.0) / (sbar * sbar * sbar) * s1m;
      out.dmu(i, 0) += cfg.lambda3 * 2.0 * mx * m1s;
      out.dmu(i, 1) += cfg.lambda3 * 2.0 * my * m1s;
    }
  }

  if (with_grad) {
    int k = 0;
    for (int i = 0; i < n; ++i) {
      const auto& g = proxy.grad_xt[i];
      for (int v = 0; v < g.rows(); ++v)
        for (int c = 0; c < 2; ++c, ++k) {
          const double gd = cfg.lambda1 * g(v, c);
          out.dmu(i, c) += gd * m1s;
          out.dsigma[i] += gd * s1m * draw.eps[k];
        }
    }
  }
  return out;
}

}  // namespace detail

}  // namespace gsdm
