#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include "gsdm/geometry.hpp"
#include "gsdm/nn/core.hpp"
#include "gsdm/nn/encoding.hpp"
#include "gsdm/nn/layers.hpp"
#include "gsdm/rng.hpp"
#include "gsdm/schedule.hpp"

namespace gsdm {

struct GuidanceNetConfig {
  int pe_dim = 128;
  int width = 256;
  int heads = 4;
  int layers = 2;
  int ffn = 512;
  double sigma_floor = 1e-3;
};

// Set decoder over per-vertex nodes. Each element contributes a summary
// (dummy) node followed by its vertex nodes; vertex features concatenate
// positional encodings of the x coordinate, y coordinate and vertex index.
// Two linear heads read the summary features: a 2-vector mean shift and a
// softplus-positive scalar scale per element.
template <class S>
class GuidanceNet {
 public:
  GuidanceNetConfig cfg;
  nn::ParamStore<S> params;

  GuidanceNet(const GuidanceNetConfig& cfg_, std::uint64_t init_seed)
      : cfg(cfg_), pe_(cfg_.pe_dim) {
    RngStream rng = make_stream(init_seed, "init/guide");
    input_.bind(params, "guide.input", 3 * cfg.pe_dim, cfg.width, rng);
    blocks_.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l)
      blocks_[l].bind(params, "guide.layer" + std::to_string(l), cfg.width, cfg.heads,
                      cfg.ffn, /*fused=*/true, rng);
    head_mu_.bind(params, "guide.head_mu", cfg.width, 2, rng);
    head_sigma_.bind(params, "guide.head_sigma", cfg.width, 1, rng);
    // Identity-like start: zero heads, softplus bias solving softplus(b) = 1.
    head_mu_.W->value.setZero();
    head_sigma_.W->value.setZero();
    head_sigma_.b->value(0, 0) = S(0.541324854612918);
    dummy_ = &params.add("guide.dummy", 1, 3 * cfg.pe_dim);
    nn::init_uniform(*dummy_, 0.5, rng);
    auto& meta = params.add("guide.meta.trained", 1, 1, /*trainable=*/false);
    meta.value(0, 0) = S(0);
  }

  bool trained_flag() const {
    return params.at("guide.meta.trained").value(0, 0) > S(0.5);
  }
  void set_trained_flag(bool v) {
    params.at("guide.meta.trained").value(0, 0) = v ? S(1) : S(0);
  }

  struct Forward {
    int total_elements = 0;
    std::vector<int> elem_sample;              // sample of each element
    std::vector<int> dummy_row;                // node row of each element summary
    nn::Mat<S> feat;                           // input node features
    nn::Mat<S> x0;                             // post input projection
    nn::AttnMask global, intra;
    std::vector<typename nn::AttentionBlock<S>::Cache> blocks;
    nn::Mat<S> summary;                        // dummy rows gathered
    nn::Mat<S> mu;                             // E x 2
    Eigen::Matrix<S, Eigen::Dynamic, 1> sigma_pre;  // head pre-activations
    Eigen::Matrix<S, Eigen::Dynamic, 1> sigma;      // E
  };

  Forward forward(std::span<const PolySet> batch) const {
    Forward f;
    int rows = 0;
    for (const auto& s : batch)
      for (const auto& e : s.elements) rows += 1 + e.vertex_count();
    f.feat.resize(rows, 3 * cfg.pe_dim);

    int row = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const int sample_begin = row;
      for (int i = 0; i < batch[b].size(); ++i) {
        const Element& e = batch[b].elements[i];
        const int elem_begin = row;
        f.elem_sample.push_back(static_cast<int>(b));
        f.dummy_row.push_back(row);
        f.feat.row(row) = dummy_->value.row(0);
        ++row;
        for (int v = 0; v < e.vertex_count(); ++v, ++row) {
          S* out = f.feat.row(row).data();
          pe_.encode(e.vertices(v, 0), out);
          pe_.encode(e.vertices(v, 1), out + cfg.pe_dim);
          pe_.encode(double(v + 1), out + 2 * cfg.pe_dim);
        }
        f.intra.push_back({elem_begin, row, elem_begin, row});
      }
      f.global.push_back({sample_begin, row, sample_begin, row});
    }
    f.total_elements = static_cast<int>(f.elem_sample.size());

    f.x0 = input_.forward(f.feat);
    f.blocks.resize(cfg.layers);
    nn::Mat<S> h = f.x0;
    for (int l = 0; l < cfg.layers; ++l)
      h = blocks_[l].forward(h, f.global, f.intra, f.blocks[l]);

    f.summary.resize(f.total_elements, cfg.width);
    for (int i = 0; i < f.total_elements; ++i)
      f.summary.row(i) = h.row(f.dummy_row[i]);
    f.mu = head_mu_.forward(f.summary);
    const nn::Mat<S> pre = head_sigma_.forward(f.summary);
    f.sigma_pre = pre.col(0);
    f.sigma.resize(f.total_elements);
    for (int i = 0; i < f.total_elements; ++i)
      f.sigma[i] = S(cfg.sigma_floor) + softplus(f.sigma_pre[i]);
    return f;
  }

  // Accumulates parameter gradients from upstream (dmu, dsigma).
  void backward(const Forward& f, const nn::Mat<S>& dmu,
                const Eigen::Matrix<S, Eigen::Dynamic, 1>& dsigma) {
    nn::Mat<S> dsummary = head_mu_.backward(f.summary, dmu);
    nn::Mat<S> dpre(f.total_elements, 1);
    for (int i = 0; i < f.total_elements; ++i)
      dpre(i, 0) = dsigma[i] * sigmoid(f.sigma_pre[i]);
    dsummary += head_sigma_.backward(f.summary, dpre);

    nn::Mat<S> dh = nn::Mat<S>::Zero(f.feat.rows(), cfg.width);
    for (int i = 0; i < f.total_elements; ++i)
      dh.row(f.dummy_row[i]) = dsummary.row(i);
    for (int l = cfg.layers - 1; l >= 0; --l)
      dh = blocks_[l].backward(f.blocks[l], dh);
    const nn::Mat<S> dfeat = input_.backward(f.feat, dh);
    for (int i = 0; i < f.total_elements; ++i)
      dummy_->grad.row(0) += dfeat.row(f.dummy_row[i]);
  }

  GuidanceField encode(const PolySet& s) const {
    const Forward f = forward(std::span<const PolySet>(&s, 1));
    GuidanceField g;
    g.mu_T.resize(f.total_elements, 2);
    g.sigma_T.resize(f.total_elements);
    for (int i = 0; i < f.total_elements; ++i) {
      g.mu_T(i, 0) = static_cast<double>(f.mu(i, 0));
      g.mu_T(i, 1) = static_cast<double>(f.mu(i, 1));
      g.sigma_T[i] = static_cast<double>(f.sigma[i]);
    }
    return g;
  }

  static S softplus(S z) {
    if (z > S(30)) return z;
    return std::log1p(std::exp(z));
  }
  static S sigmoid(S z) { return S(1) / (S(1) + std::exp(-z)); }

 private:
  nn::PosEnc<S> pe_;
  nn::Linear<S> input_;
  std::vector<nn::AttentionBlock<S>> blocks_;
  nn::Linear<S> head_mu_, head_sigma_;
  nn::Param<S>* dummy_ = nullptr;
};

template <class S>
GuidanceField encode_guidance(const GuidanceNet<S>& net, const PolySet& s) {
  return net.encode(s);
}

struct GuidanceLossConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.05;
  double lambda3 = 0.1;
  double margin = 0.1;  // triplet margin alpha
};

// Element-level proxy of the factorial permutation loss. D(i,j) is the
// variant-minimizing mean-L1 distance between clean element i and noisy
// element j; per element the hardest same-set negatives enter hinge terms
//   hinge(alpha + D(i,i) - D(j,i)) and hinge(alpha + D(i,i) - D(i,j)).
struct ProxyLossResult {
  double value = 0.0;
  // d(value)/d(xt coordinates), element layout of xt. Only filled on demand.
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> grad_xt;
  long distance_evaluations = 0;  // N^2, for cost instrumentation
};

ProxyLossResult perm_loss_proxy_grad(const PolySet& x0, const PolySet& xt,
                                     const GuidanceLossConfig& cfg, bool with_grad);

double perm_loss_proxy(const PolySet& x0, const PolySet& xt, const GuidanceLossConfig& cfg);

// Sample-level triplet loss over all N! permutation variants (test oracle,
// N <= 4). The whole-set distance is the mean of aligned element distances.
double perm_loss_exact(const PolySet& x0, const PolySet& xt, const GuidanceLossConfig& cfg);

double set_distance(const PolySet& a, const PolySet& b);

// Full guidance loss for one sample at timestep t:
//   lambda1 * perm_loss_proxy(x0, x_t)
//   + lambda2 * sum_i (1 / sigma_bar_t(i))^2
//   + lambda3 * sum_i |mu_bar_t(i)|^2
// where x_t is a guided forward draw under the network's field. Throws
// std::runtime_error("scale collapse") if any sigma_bar_t < 1e-6.
template <class S>
double guide_loss(const GuidanceNet<S>& net, const NoiseSchedule& sched,
                  const PolySet& x0, int t, RngStream& rng,
                  const GuidanceLossConfig& cfg);

struct GuidanceTrainConfig {
  int iterations = 3125;
  int batch = 32;
  double lr = 2e-4;
  double weight_decay = 1e-4;
};

// Algorithm: repeat { draw x0, t ~ U{1..T}, eps; descend grad of the guide
// loss }. Returns the per-iteration loss trace. Throws
// std::runtime_error("diverged") on a non-finite loss.
template <class S>
std::vector<double> train_guidance(GuidanceNet<S>& net, const std::vector<PolySet>& dataset,
                                   const NoiseSchedule& sched, const GuidanceTrainConfig& tcfg,
                                   const GuidanceLossConfig& lcfg, RngStream& rng);

// --- implementation of the templated pieces ---

namespace detail {

struct GuidedDraw {
  PolySet xt;
  Eigen::VectorXd eps;     // coordinate order of pack_coords
  double sqrt_abar = 1.0;
  double one_minus_sqrt_abar = 0.0;
  double sqrt_one_minus_abar = 0.0;
};

// x_t = sqrt(abar_t) x0 + (1-sqrt(abar_t)) mu + sqrt(1-abar_t) sigma * eps,
// recording eps for the sigma gradient path.
inline GuidedDraw guided_forward_draw(const PolySet& x0,
                                      const Eigen::Matrix<double, Eigen::Dynamic, 2>& mu,
                                      const Eigen::VectorXd& sigma,
                                      const NoiseSchedule& sched, int t, RngStream& rng) {
  GuidedDraw d;
  d.xt = x0;
  d.sqrt_abar = sched.sqrt_alpha_bar[t];
  d.one_minus_sqrt_abar = 1.0 - d.sqrt_abar;
  d.sqrt_one_minus_abar = sched.sqrt_one_minus_alpha_bar[t];
  d.eps.resize(x0.total_coords());
  int k = 0;
  for (int i = 0; i < x0.size(); ++i) {
    auto& v = d.xt.elements[i].vertices;
    for (int r = 0; r < v.rows(); ++r)
      for (int c = 0; c < 2; ++c, ++k) {
        d.eps[k] = rng.normal();
        v(r, c) = d.sqrt_abar * v(r, c) + d.one_minus_sqrt_abar * mu(i, c) +
                  d.sqrt_one_minus_abar * sigma[i] * d.eps[k];
      }
  }
  return d;
}

struct GuideLossTerms {
  double value = 0.0;
  Eigen::Matrix<double, Eigen::Dynamic, 2> dmu;  // d value / d mu_T
  Eigen::VectorXd dsigma;                         // d value / d sigma_T
};

GuideLossTerms guide_loss_terms(const PolySet& x0,
                                const Eigen::Matrix<double, Eigen::Dynamic, 2>& mu,
                                const Eigen::VectorXd& sigma, const NoiseSchedule& sched,
                                int t, RngStream& rng, const GuidanceLossConfig& cfg,
                                bool with_grad);

}  // namespace detail

template <class S>
double guide_loss(const GuidanceNet<S>& net, const NoiseSchedule& sched,
                  const PolySet& x0, int t, RngStream& rng,
                  const GuidanceLossConfig& cfg) {
  const GuidanceField g = net.encode(x0);
  return detail::guide_loss_terms(x0, g.mu_T, g.sigma_T, sched, t, rng, cfg, false).value;
}

template <class S>
std::vector<double> train_guidance(GuidanceNet<S>& net, const std::vector<PolySet>& dataset,
                                   const NoiseSchedule& sched, const GuidanceTrainConfig& tcfg,
                                   const GuidanceLossConfig& lcfg, RngStream& rng) {
  if (dataset.empty()) throw std::invalid_argument("train_guidance: empty dataset");
  std::vector<double> trace;
  trace.reserve(tcfg.iterations);
  std::vector<PolySet> batch(tcfg.batch);
  for (int it = 0; it < tcfg.iterations; ++it) {
    std::vector<int> ts(tcfg.batch);
    for (int b = 0; b < tcfg.batch; ++b) {
      batch[b] = dataset[rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1)];
      ts[b] = static_cast<int>(rng.uniform_int(1, sched.T));
    }
    auto fwd = net.forward(std::span<const PolySet>(batch.data(), batch.size()));

    nn::Mat<S> dmu = nn::Mat<S>::Zero(fwd.total_elements, 2);
    Eigen::Matrix<S, Eigen::Dynamic, 1> dsigma =
        Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(fwd.total_elements);
    double loss = 0.0;
    int elem_offset = 0;
    const double inv_b = 1.0 / tcfg.batch;
    for (int b = 0; b < tcfg.batch; ++b) {
      const int n = batch[b].size();
      Eigen::Matrix<double, Eigen::Dynamic, 2> mu(n, 2);
      Eigen::VectorXd sigma(n);
      for (int i = 0; i < n; ++i) {
        mu(i, 0) = static_cast<double>(fwd.mu(elem_offset + i, 0));
        mu(i, 1) = static_cast<double>(fwd.mu(elem_offset + i, 1));
        sigma[i] = static_cast<double>(fwd.sigma[elem_offset + i]);
      }
      const auto terms =
          detail::guide_loss_terms(batch[b], mu, sigma, sched, ts[b], rng, lcfg, true);
      loss += terms.value * inv_b;
      for (int i = 0; i < n; ++i) {
        dmu(elem_offset + i, 0) += S(terms.dmu(i, 0) * inv_b);
        dmu(elem_offset + i, 1) += S(terms.dmu(i, 1) * inv_b);
        dsigma[elem_offset + i] += S(terms.dsigma[i] * inv_b);
      }
      elem_offset += n;
    }
    if (!std::isfinite(loss)) throw std::runtime_error("diverged");

    net.params.zero_grad();
    net.backward(fwd, dmu, dsigma);
    net.params.adam_step(tcfg.lr, tcfg.weight_decay);
    trace.push_back(loss);
  }
  if (tcfg.iterations > 0) net.set_trained_flag(true);
  return trace;
}

}  // namespace gsdm
