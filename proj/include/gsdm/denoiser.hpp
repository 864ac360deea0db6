#pragma once

#include <Eigen/Core>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gsdm/geometry.hpp"
#include "gsdm/guidance.hpp"
#include "gsdm/io.hpp"
#include "gsdm/nn/core.hpp"
#include "gsdm/nn/encoding.hpp"
#include "gsdm/nn/layers.hpp"
#include "gsdm/rng.hpp"
#include "gsdm/schedule.hpp"

namespace gsdm {

enum class PredictionMode { eps_pred, x0_pred };

struct EdmConfig {
  double sigma_data = 1.0;
  double p_mean = -0.5;   // log-normal sigma sampling for training
  double p_std = 1.5;
  double sigma_min = 0.01;
  double sigma_max = 5.0;
  PredictionMode mode = PredictionMode::eps_pred;

  void validate() const {
    if (!(sigma_min > 0.0 && sigma_min < sigma_max))
      throw std::invalid_argument("edm: need 0 < sigma_min < sigma_max");
  }
};

struct PrecondCoeffs {
  double c_in = 1.0, c_skip = 0.0, c_out = 1.0, c_noise = 0.0;
};

// Standard preconditioning factors of the continuous framework; x0_pred mode
// pins c_skip = 0 and c_out = 1 so the network estimates the sample directly.
inline PrecondCoeffs edm_precond(double sigma, const EdmConfig& edm) {
  PrecondCoeffs c;
  const double sd = edm.sigma_data;
  const double denom = sigma * sigma + sd * sd;
  c.c_in = 1.0 / std::sqrt(denom);
  c.c_noise = 0.25 * std::log(sigma);
  if (edm.mode == PredictionMode::x0_pred) {
    c.c_skip = 0.0;
    c.c_out = 1.0;
  } else {
    c.c_skip = sd * sd / denom;
    c.c_out = sigma * sd / std::sqrt(denom);
  }
  return c;
}

struct DenoiserConfig {
  int pe_dim = 128;
  int width = 128;
  int heads = 4;
  int layers = 2;
  int ffn = 256;
  int patch = 8;  // condition grid tile size in pixels
};

// Permutation-equivariant conditional denoiser. The condition encoder
// patchifies the density grid once per scene; the decoder runs over vertex
// nodes whose features concatenate positional encodings of the x coordinate,
// y coordinate and vertex index, with the noise-level embedding added to
// every decoder block and cross-attention into the condition tokens.
template <class S>
class DenoiserNet {
 public:
  DenoiserConfig cfg;
  nn::ParamStore<S> params;

  struct DecoderLayer {
    nn::MultiHeadAttention<S> intra, global, cross;
    nn::LayerNorm<S> ln1, ln2, ln3;
    nn::FeedForward<S> ffn;

    void bind(nn::ParamStore<S>& ps, const std::string& prefix, const DenoiserConfig& cfg,
              RngStream& rng) {
      intra.bind(ps, prefix + ".intra", cfg.width, cfg.heads, rng);
      global.bind(ps, prefix + ".global", cfg.width, cfg.heads, rng);
      cross.bind(ps, prefix + ".cross", cfg.width, cfg.heads, rng);
      ln1.bind(ps, prefix + ".ln1", cfg.width);
      ln2.bind(ps, prefix + ".ln2", cfg.width);
      ln3.bind(ps, prefix + ".ln3", cfg.width);
      ffn.bind(ps, prefix + ".ffn", cfg.width, cfg.ffn, rng);
    }
  };

  DenoiserNet(const DenoiserConfig& cfg_, std::uint64_t init_seed)
      : cfg(cfg_), pe_(cfg_.pe_dim) {
    RngStream rng = make_stream(init_seed, "init/denoise");
    patch_embed_.bind(params, "denoise.cond.patch", cfg.patch * cfg.patch, cfg.width, rng);
    patch_pos_.bind(params, "denoise.cond.pos", 2 * cfg.pe_dim, cfg.width, rng);
    cond_block_.bind(params, "denoise.cond.block", cfg.width, cfg.heads, cfg.ffn,
                     /*fused=*/false, rng);
    temb_.bind(params, "denoise.temb", cfg.pe_dim, cfg.width, rng);
    input_.bind(params, "denoise.input", 3 * cfg.pe_dim, cfg.width, rng);
    layers_.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l)
      layers_[l].bind(params, "denoise.layer" + std::to_string(l), cfg, rng);
    head_.bind(params, "denoise.head", cfg.width, 2, rng);
    head_.W->value *= S(0.1);  // small start keeps early eps estimates tame
  }

  struct CondForward {
    nn::Mat<S> patches;   // raw tile pixels
    nn::Mat<S> posfeat;   // tile-center encodings
    nn::Mat<S> embedded;  // block input
    typename nn::AttentionBlock<S>::Cache block;
    nn::Mat<S> tokens;    // final condition features
  };

  // Deterministic; run once per scene and reuse across all sampling steps.
  CondForward encode_condition(const DensityGrid& grid) const {
    if (grid.width % cfg.patch != 0 || grid.height % cfg.patch != 0)
      throw std::invalid_argument("grid extents must be multiples of the patch size");
    const int px = grid.width / cfg.patch;
    const int py = grid.height / cfg.patch;
    const int n = px * py;
    CondForward c;
    c.patches.resize(n, cfg.patch * cfg.patch);
    c.posfeat.resize(n, 2 * cfg.pe_dim);
    int tok = 0;
    for (int ty = 0; ty < py; ++ty)
      for (int tx = 0; tx < px; ++tx, ++tok) {
        int k = 0;
        for (int r = 0; r < cfg.patch; ++r)
          for (int col = 0; col < cfg.patch; ++col, ++k)
            c.patches(tok, k) =
                static_cast<S>(grid.values(ty * cfg.patch + r, tx * cfg.patch + col));
        // Tile center in scene coordinates (grid rows run from y = +1 down).
        const double cx = -1.0 + (tx + 0.5) * 2.0 * cfg.patch / grid.width;
        const double cy = 1.0 - (ty + 0.5) * 2.0 * cfg.patch / grid.height;
        S* out = c.posfeat.row(tok).data();
        pe_.encode(cx, out);
        pe_.encode(cy, out + cfg.pe_dim);
      }
    c.embedded = patch_embed_.forward(c.patches) + patch_pos_.forward(c.posfeat);
    c.tokens = cond_block_.forward(c.embedded, {{0, n, 0, n}}, c.block);
    return c;
  }

  // One decoder query: preconditioned input coordinates in the element layout
  // plus the noise-level channel and the scene's condition features.
  struct Query {
    std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> coords;
    double c_noise = 0.0;
    const CondForward* cond = nullptr;
  };

  struct Forward {
    int rows = 0;
    std::vector<int> sample_of_row;
    std::vector<std::pair<int, int>> sample_span;  // node rows per sample
    nn::Mat<S> coords;                              // rows x 2 raw inputs
    nn::Mat<S> feat;
    nn::Mat<S> temb_in;                             // per-sample pe(c_noise)
    nn::Mat<S> temb;                                // per-sample width vector
    nn::Mat<S> cond_all;                            // stacked condition tokens
    std::vector<std::pair<int, int>> cond_span;
    nn::AttnMask global, intra, cross;
    struct LayerCache {
      nn::Mat<S> in, with_temb, n1, n2;
      typename nn::MultiHeadAttention<S>::Cache intra, global, cross;
      typename nn::LayerNorm<S>::Cache ln1, ln2, ln3;
      typename nn::FeedForward<S>::Cache ffn;
    };
    std::vector<LayerCache> layers;
    nn::Mat<S> final_state;
    nn::Mat<S> out;  // rows x 2
    std::vector<const CondForward*> cond_ptrs;
  };

  Forward forward(std::span<const Query> batch) const {
    Forward f;
    int rows = 0, cond_rows = 0;
    for (const auto& q : batch) {
      for (const auto& m : q.coords) rows += static_cast<int>(m.rows());
      cond_rows += static_cast<int>(q.cond->tokens.rows());
    }
    f.rows = rows;
    f.coords.resize(rows, 2);
    f.feat.resize(rows, 3 * cfg.pe_dim);
    f.temb_in.resize(static_cast<int>(batch.size()), cfg.pe_dim);
    f.cond_all.resize(cond_rows, cfg.width);

    int row = 0, crow = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Query& q = batch[b];
      const int sample_begin = row;
      for (const auto& elem : q.coords) {
        const int elem_begin = row;
        for (int v = 0; v < elem.rows(); ++v, ++row) {
          f.sample_of_row.push_back(static_cast<int>(b));
          f.coords(row, 0) = static_cast<S>(elem(v, 0));
          f.coords(row, 1) = static_cast<S>(elem(v, 1));
          S* out = f.feat.row(row).data();
          pe_.encode(elem(v, 0), out);
          pe_.encode(elem(v, 1), out + cfg.pe_dim);
          pe_.encode(double(v + 1), out + 2 * cfg.pe_dim);
        }
        f.intra.push_back({elem_begin, row, elem_begin, row});
      }
      f.sample_span.emplace_back(sample_begin, row);
      f.global.push_back({sample_begin, row, sample_begin, row});

      const int ct = static_cast<int>(q.cond->tokens.rows());
      f.cond_all.middleRows(crow, ct) = q.cond->tokens;
      f.cond_span.emplace_back(crow, crow + ct);
      f.cross.push_back({sample_begin, row, crow, crow + ct});
      crow += ct;

      Eigen::VectorXd enc = nn::PosEnc<double>(cfg.pe_dim).encode(q.c_noise);
      for (int k = 0; k < cfg.pe_dim; ++k) f.temb_in(static_cast<int>(b), k) = S(enc[k]);
      f.cond_ptrs.push_back(q.cond);
    }

    f.temb = temb_.forward(f.temb_in);
    nn::Mat<S> h = input_.forward(f.feat);
    f.layers.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
      auto& lc = f.layers[l];
      const DecoderLayer& L = layers_[l];
      lc.in = h;
      lc.with_temb = h;
      for (int r = 0; r < f.rows; ++r)
        lc.with_temb.row(r) += f.temb.row(f.sample_of_row[r]);
      nn::Mat<S> a = lc.with_temb + L.intra.forward(lc.with_temb, lc.with_temb, f.intra, lc.intra) +
                     L.global.forward(lc.with_temb, lc.with_temb, f.global, lc.global);
      lc.n1 = L.ln1.forward(a, lc.ln1);
      nn::Mat<S> bmat = lc.n1 + L.cross.forward(lc.n1, f.cond_all, f.cross, lc.cross);
      lc.n2 = L.ln2.forward(bmat, lc.ln2);
      const nn::Mat<S> fout = L.ffn.forward(lc.n2, lc.ffn);
      h = L.ln3.forward(lc.n2 + fout, lc.ln3);
    }
    f.final_state = h;
    f.out = head_.forward(h);
    return f;
  }

  // Training backward: accumulates parameter gradients, including through
  // each sample's condition encoding.
  void backward(const Forward& f, const nn::Mat<S>& dout) {
    nn::Mat<S> dcond = nn::Mat<S>::Zero(f.cond_all.rows(), cfg.width);
    const nn::Mat<S> dfeat = backward_core(f, dout, /*params=*/true, &dcond);
    accumulate_input_grads(f, dfeat, nullptr);
    for (std::size_t b = 0; b < f.cond_ptrs.size(); ++b) {
      const auto [c0, c1] = f.cond_span[b];
      backward_condition(*f.cond_ptrs[b], dcond.middleRows(c0, c1 - c0));
    }
  }

  // d(out_seeded)/d(input coordinates); parameter and condition paths are
  // skipped. Used by the likelihood trace.
  nn::Mat<S> backward_coords(const Forward& f, const nn::Mat<S>& dout) const {
    const nn::Mat<S> dfeat = backward_core(f, dout, /*params=*/false, nullptr);
    nn::Mat<S> dcoords = nn::Mat<S>::Zero(f.rows, 2);
    accumulate_input_grads(f, dfeat, &dcoords);
    return dcoords;
  }

 private:
  nn::Mat<S> backward_core(const Forward& f, const nn::Mat<S>& dout, bool params,
                           nn::Mat<S>* dcond) const {
    nn::Mat<S> dh = head_.backward(f.final_state, dout, params);
    nn::Mat<S> dtemb = nn::Mat<S>::Zero(f.temb.rows(), cfg.width);
    for (int l = cfg.layers - 1; l >= 0; --l) {
      const auto& lc = f.layers[l];
      const DecoderLayer& L = layers_[l];
      const nn::Mat<S> dn2f = L.ln3.backward(lc.ln3, dh, params);
      nn::Mat<S> dn2 = L.ffn.backward(lc.n2, lc.ffn, dn2f, params);
      dn2 += dn2f;
      const nn::Mat<S> dbmat = L.ln2.backward(lc.ln2, dn2, params);
      nn::Mat<S> dn1 = dbmat;
      nn::Mat<S> dcond_local = nn::Mat<S>::Zero(f.cond_all.rows(), cfg.width);
      L.cross.backward(lc.n1, f.cond_all, lc.cross, dbmat, dn1,
                       dcond != nullptr ? *dcond : dcond_local, dcond != nullptr && params);
      const nn::Mat<S> da = L.ln1.backward(lc.ln1, dn1, params);
      nn::Mat<S> dwt = da;
      nn::Mat<S> dkv1 = nn::Mat<S>::Zero(f.rows, cfg.width);
      L.intra.backward(lc.with_temb, lc.with_temb, lc.intra, da, dwt, dkv1, params);
      nn::Mat<S> dkv2 = nn::Mat<S>::Zero(f.rows, cfg.width);
      L.global.backward(lc.with_temb, lc.with_temb, lc.global, da, dwt, dkv2, params);
      dwt += dkv1 + dkv2;
      for (int r = 0; r < f.rows; ++r) dtemb.row(f.sample_of_row[r]) += dwt.row(r);
      dh = dwt;
    }
    if (params) temb_.backward(f.temb_in, dtemb, true);
    return input_.backward(f.feat, dh, params);
  }

  void accumulate_input_grads(const Forward& f, const nn::Mat<S>& dfeat,
                              nn::Mat<S>* dcoords) const {
    if (!dcoords) return;
    for (int r = 0; r < f.rows; ++r) {
      (*dcoords)(r, 0) = S(pe_.backward(static_cast<double>(f.coords(r, 0)),
                                        dfeat.row(r).data()));
      (*dcoords)(r, 1) = S(pe_.backward(static_cast<double>(f.coords(r, 1)),
                                        dfeat.row(r).data() + cfg.pe_dim));
    }
  }

  void backward_condition(const CondForward& c, const nn::Mat<S>& dtokens) {
    const nn::Mat<S> dembedded = cond_block_.backward(c.block, dtokens);
    patch_embed_.backward(c.patches, dembedded);
    patch_pos_.backward(c.posfeat, dembedded);
  }

 private:
  nn::PosEnc<S> pe_;
  nn::Linear<S> patch_embed_, patch_pos_;
  nn::AttentionBlock<S> cond_block_;
  nn::Linear<S> temb_, input_;
  std::vector<DecoderLayer> layers_;
  nn::Linear<S> head_;
};

// Raw network evaluation F_theta on the given coordinates at a noise level.
template <class S>
std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> denoise_raw(
    const DenoiserNet<S>& net, const PolySet& noisy, double noise_level,
    const typename DenoiserNet<S>::CondForward& cond) {
  typename DenoiserNet<S>::Query q;
  q.c_noise = 0.25 * std::log(noise_level);
  q.cond = &cond;
  for (const auto& e : noisy.elements) q.coords.push_back(e.vertices);
  const auto fwd = net.forward(std::span<const typename DenoiserNet<S>::Query>(&q, 1));
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> out;
  int row = 0;
  for (const auto& e : noisy.elements) {
    Eigen::Matrix<double, Eigen::Dynamic, 2> m(e.vertex_count(), 2);
    for (int v = 0; v < e.vertex_count(); ++v, ++row) {
      m(v, 0) = static_cast<double>(fwd.out(row, 0));
      m(v, 1) = static_cast<double>(fwd.out(row, 1));
    }
    out.push_back(std::move(m));
  }
  return out;
}

// D_theta(x; sigma) = c_skip x + c_out F_theta({c_in x + (1-c_in) mu_bar};
// c_noise). The guidance mean enters only through the network input shift.
template <class S>
PolySet precondition(const DenoiserNet<S>& net, const PolySet& noisy, double sigma,
                     const typename DenoiserNet<S>::CondForward& cond,
                     const GuidanceField& g, const EdmConfig& edm) {
  const PrecondCoeffs pc = edm_precond(sigma, edm);
  const SigmaGuidanceAt at = guidance_at_sigma(g, sigma);
  typename DenoiserNet<S>::Query q;
  q.c_noise = pc.c_noise;
  q.cond = &cond;
  for (int i = 0; i < noisy.size(); ++i) {
    Eigen::Matrix<double, Eigen::Dynamic, 2> m = pc.c_in * noisy.elements[i].vertices;
    m.col(0).array() += (1.0 - pc.c_in) * at.mu_bar(i, 0);
    m.col(1).array() += (1.0 - pc.c_in) * at.mu_bar(i, 1);
    q.coords.push_back(std::move(m));
  }
  const auto fwd = net.forward(std::span<const typename DenoiserNet<S>::Query>(&q, 1));
  PolySet out = noisy;
  int row = 0;
  for (int i = 0; i < out.size(); ++i) {
    auto& v = out.elements[i].vertices;
    for (int k = 0; k < v.rows(); ++k, ++row)
      for (int c = 0; c < 2; ++c)
        v(k, c) = pc.c_skip * noisy.elements[i].vertices(k, c) +
                  pc.c_out * static_cast<double>(fwd.out(row, c));
  }
  return out;
}

struct DenoiseTrainItem {
  const PolySet* x0 = nullptr;
  const DensityGrid* grid = nullptr;
  const GuidanceField* field = nullptr;  // optional precomputed guide output
};

// One batch of the denoising objective: draw sigma log-normally (clamped to
// the configured range), inject guided noise
//   x = sqrt(abar) x0 + mu_bar + sigma_bar * eps,
// precondition the network input and regress eps (or x0). Squared error is
// summed over elements and averaged over the batch. When with_grad is set,
// parameter gradients accumulate into net.params.
template <class S>
double denoise_loss(DenoiserNet<S>& net, const GuidanceNet<S>& guide,
                    std::span<const DenoiseTrainItem> batch, const EdmConfig& edm,
                    RngStream& rng, bool with_grad = false) {
  edm.validate();
  const int bsz = static_cast<int>(batch.size());
  if (bsz == 0) throw std::invalid_argument("denoise_loss: empty batch");

  std::vector<typename DenoiserNet<S>::CondForward> conds(bsz);
  std::vector<typename DenoiserNet<S>::Query> queries(bsz);
  std::vector<Eigen::VectorXd> targets(bsz);
  for (int b = 0; b < bsz; ++b) {
    const PolySet& x0 = *batch[b].x0;
    const GuidanceField field =
        batch[b].field != nullptr ? *batch[b].field : guide.encode(x0);
    const double sigma = std::clamp(std::exp(edm.p_mean + edm.p_std * rng.normal()),
                                    edm.sigma_min, edm.sigma_max);
    const SigmaGuidanceAt at = guidance_at_sigma(field, sigma);
    const PrecondCoeffs pc = edm_precond(sigma, edm);

    typename DenoiserNet<S>::Query& q = queries[b];
    q.c_noise = pc.c_noise;
    conds[b] = net.encode_condition(*batch[b].grid);
    q.cond = &conds[b];
    Eigen::VectorXd& target = targets[b];
    target.resize(x0.total_coords());
    int k = 0;
    for (int i = 0; i < x0.size(); ++i) {
      const auto& v = x0.elements[i].vertices;
      Eigen::Matrix<double, Eigen::Dynamic, 2> in(v.rows(), 2);
      for (int r = 0; r < v.rows(); ++r)
        for (int c = 0; c < 2; ++c, ++k) {
          const double eps = rng.normal();
          const double noisy =
              at.scale * v(r, c) + at.mu_bar(i, c) + at.sigma_bar[i] * eps;
          in(r, c) = pc.c_in * noisy + (1.0 - pc.c_in) * at.mu_bar(i, c);
          target[k] = edm.mode == PredictionMode::x0_pred ? v(r, c) : eps;
        }
      q.coords.push_back(std::move(in));
    }
  }

  const auto fwd =
      net.forward(std::span<const typename DenoiserNet<S>::Query>(queries.data(), bsz));
  double loss = 0.0;
  nn::Mat<S> dout(fwd.rows, 2);
  int row = 0;
  for (int b = 0; b < bsz; ++b) {
    int k = 0;
    for (const auto& elem : queries[b].coords)
      for (int v = 0; v < elem.rows(); ++v, ++row)
        for (int c = 0; c < 2; ++c, ++k) {
          const double diff = static_cast<double>(fwd.out(row, c)) - targets[b][k];
          loss += diff * diff / bsz;
          dout(row, c) = S(2.0 * diff / bsz);
        }
  }
  if (!std::isfinite(loss)) throw std::runtime_error("diverged");
  if (with_grad) net.backward(fwd, dout);
  return loss;
}

struct DenoiserTrainConfig {
  int iterations = 20000;
  int batch = 16;
  double lr = 2e-4;
  double weight_decay = 1e-4;
  double lr_final_frac = 0.2;  // tail fraction trained at lr/10
  double drop_prob = 0.0;      // random element-dropping augmentation
  int checkpoint_every = 5000;
};

struct DenoiserTrainResult {
  std::vector<double> trace;
  std::vector<std::string> warnings;
};

// Stage 2: Adam descent on the denoising objective with the guidance network
// frozen. Guide fields are precomputed per scene unless element dropping
// perturbs the sets.
template <class S>
DenoiserTrainResult train_denoiser(DenoiserNet<S>& net, const GuidanceNet<S>& guide,
                                   const std::vector<PolySet>& scenes,
                                   const std::vector<DensityGrid>& grids,
                                   const EdmConfig& edm, const DenoiserTrainConfig& cfg,
                                   RngStream& rng,
                                   const std::function<void(int)>& checkpoint_cb = {}) {
  if (scenes.empty() || scenes.size() != grids.size())
    throw std::invalid_argument("train_denoiser: bad dataset");
  DenoiserTrainResult result;
  if (!guide.trained_flag())
    result.warnings.push_back(
        "stage order: guidance checkpoint is not flagged as trained; stage-2 "
        "training expects a frozen stage-1 guide");

  std::vector<GuidanceField> fields;
  if (cfg.drop_prob == 0.0) {
    fields.reserve(scenes.size());
    for (const auto& s : scenes) fields.push_back(guide.encode(s));
  }

  std::vector<PolySet> dropped(cfg.batch);
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<DenoiseTrainItem> batch(cfg.batch);
    for (int b = 0; b < cfg.batch; ++b) {
      const int idx =
          static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(scenes.size()) - 1));
      batch[b] = {&scenes[idx], &grids[idx],
                  cfg.drop_prob == 0.0 ? &fields[idx] : nullptr};
      if (cfg.drop_prob > 0.0) {
        PolySet& d = dropped[b];
        d.scene_id = scenes[idx].scene_id;
        d.elements.clear();
        for (const auto& e : scenes[idx].elements)
          if (rng.uniform() >= cfg.drop_prob) d.elements.push_back(e);
        if (d.elements.empty()) d.elements.push_back(scenes[idx].elements[0]);
        batch[b].x0 = &d;
      }
    }
    net.params.zero_grad();
    const double loss = denoise_loss(net, guide,
                                     std::span<const DenoiseTrainItem>(batch.data(), cfg.batch),
                                     edm, rng, /*with_grad=*/true);
    const bool tail = it >= cfg.iterations - int(cfg.lr_final_frac * cfg.iterations);
    net.params.adam_step(tail ? cfg.lr * 0.1 : cfg.lr, cfg.weight_decay);
    result.trace.push_back(loss);
    if (checkpoint_cb && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0)
      checkpoint_cb(it + 1);
  }
  return result;
}

}  // namespace gsdm
