#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "gsdm/nn/core.hpp"

namespace gsdm::nn {

// Attention visibility: query rows [q0,q1) may attend to key rows [k0,k1).
// Query ranges must be disjoint within one attention call; this block
// structure realizes the intra-element / global / cross-sample masks without
// dense node-pair matrices.
struct AttnSeg {
  int q0 = 0, q1 = 0, k0 = 0, k1 = 0;
};

using AttnMask = std::vector<AttnSeg>;

template <class S>
struct Linear {
  Param<S>* W = nullptr;
  Param<S>* b = nullptr;
  int din = 0, dout = 0;

  void bind(ParamStore<S>& ps, const std::string& prefix, int din_, int dout_,
            RngStream& rng) {
    din = din_;
    dout = dout_;
    W = &ps.add(prefix + ".W", din, dout);
    b = &ps.add(prefix + ".b", 1, dout);
    init_xavier(*W, rng);
  }

  void attach(ParamStore<S>& ps, const std::string& prefix) {
    W = &ps.at(prefix + ".W");
    b = &ps.at(prefix + ".b");
    din = static_cast<int>(W->value.rows());
    dout = static_cast<int>(W->value.cols());
  }

  Mat<S> forward(const Mat<S>& x) const {
    return (x * W->value).rowwise() + b->value.row(0);
  }

  // Returns dX; accumulates parameter grads unless params == false.
  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy, bool params = true) const {
    if (params) {
      W->grad.noalias() += x.transpose() * dy;
      b->grad.row(0) += dy.colwise().sum();
    }
    return dy * W->value.transpose();
  }
};

template <class S>
struct LayerNorm {
  Param<S>* gamma = nullptr;
  Param<S>* beta = nullptr;
  int dim = 0;
  static constexpr double kEps = 1e-5;

  void bind(ParamStore<S>& ps, const std::string& prefix, int dim_) {
    dim = dim_;
    gamma = &ps.add(prefix + ".gamma", 1, dim);
    beta = &ps.add(prefix + ".beta", 1, dim);
    gamma->value.setOnes();
  }

  struct Cache {
    Mat<S> xhat;
    Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std;
  };

  Mat<S> forward(const Mat<S>& x, Cache& c) const {
    const int n = static_cast<int>(x.rows());
    c.xhat.resize(n, dim);
    c.inv_std.resize(n);
    Mat<S> y(n, dim);
    for (int r = 0; r < n; ++r) {
      const S mu = x.row(r).mean();
      const auto centered = x.row(r).array() - mu;
      const S var = centered.square().mean();
      const S is = S(1) / std::sqrt(var + S(kEps));
      c.inv_std[r] = is;
      c.xhat.row(r) = centered * is;
      y.row(r) = c.xhat.row(r).array() * gamma->value.row(0).array() +
                 beta->value.row(0).array();
    }
    return y;
  }

  Mat<S> backward(const Cache& c, const Mat<S>& dy, bool params = true) const {
    const int n = static_cast<int>(dy.rows());
    Mat<S> dx(n, dim);
    for (int r = 0; r < n; ++r) {
      const auto g = dy.row(r).array() * gamma->value.row(0).array();
      const S mean_g = g.mean();
      const S mean_gx = (g * c.xhat.row(r).array()).mean();
      dx.row(r) =
          c.inv_std[r] * (g - mean_g - c.xhat.row(r).array() * mean_gx);
      if (params) {
        gamma->grad.row(0).array() += dy.row(r).array() * c.xhat.row(r).array();
        beta->grad.row(0) += dy.row(r);
      }
    }
    return dx;
  }
};

// Multi-head attention over block-structured visibility. Self-attention
// passes the same matrix for queries and keys/values; cross-attention passes
// distinct ones.
template <class S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;
  int width = 0, heads = 0, dh = 0;

  void bind(ParamStore<S>& ps, const std::string& prefix, int width_, int heads_,
            RngStream& rng) {
    width = width_;
    heads = heads_;
    if (width % heads != 0) throw std::invalid_argument("width % heads != 0");
    dh = width / heads;
    wq.bind(ps, prefix + ".q", width, width, rng);
    wk.bind(ps, prefix + ".k", width, width, rng);
    wv.bind(ps, prefix + ".v", width, width, rng);
    wo.bind(ps, prefix + ".o", width, width, rng);
  }

  struct Cache {
    Mat<S> q, k, v, ctx;
    std::vector<Mat<S>> attn;  // per segment*head softmax weights
    AttnMask mask;
  };

  Mat<S> forward(const Mat<S>& xq, const Mat<S>& xkv, const AttnMask& mask,
                 Cache& c) const {
    c.q = wq.forward(xq);
    c.k = wk.forward(xkv);
    c.v = wv.forward(xkv);
    c.mask = mask;
    c.ctx = Mat<S>::Zero(xq.rows(), width);
    c.attn.assign(mask.size() * heads, {});
    const S scale = S(1) / std::sqrt(S(dh));
    for (std::size_t si = 0; si < mask.size(); ++si) {
      const AttnSeg& seg = mask[si];
      const int nq = seg.q1 - seg.q0, nk = seg.k1 - seg.k0;
      if (nq <= 0 || nk <= 0) continue;
      for (int h = 0; h < heads; ++h) {
        const auto qh = c.q.block(seg.q0, h * dh, nq, dh);
        const auto kh = c.k.block(seg.k0, h * dh, nk, dh);
        const auto vh = c.v.block(seg.k0, h * dh, nk, dh);
        Mat<S> scores = (qh * kh.transpose()) * scale;
        for (int r = 0; r < nq; ++r) {
          const S mx = scores.row(r).maxCoeff();
          scores.row(r) = (scores.row(r).array() - mx).exp();
          scores.row(r) /= scores.row(r).sum();
        }
        c.ctx.block(seg.q0, h * dh, nq, dh).noalias() = scores * vh;
        c.attn[si * heads + h] = std::move(scores);
      }
    }
    return wo.forward(c.ctx);
  }

  // Returns (dXq, dXkv) contributions; accumulates parameter grads unless
  // params == false.
  void backward(const Mat<S>& xq, const Mat<S>& xkv, const Cache& c,
                const Mat<S>& dy, Mat<S>& dxq, Mat<S>& dxkv,
                bool params = true) const {
    const Mat<S> dctx = wo.backward(c.ctx, dy, params);
    Mat<S> dq = Mat<S>::Zero(c.q.rows(), width);
    Mat<S> dk = Mat<S>::Zero(c.k.rows(), width);
    Mat<S> dv = Mat<S>::Zero(c.v.rows(), width);
    const S scale = S(1) / std::sqrt(S(dh));
    for (std::size_t si = 0; si < c.mask.size(); ++si) {
      const AttnSeg& seg = c.mask[si];
      const int nq = seg.q1 - seg.q0, nk = seg.k1 - seg.k0;
      if (nq <= 0 || nk <= 0) continue;
      for (int h = 0; h < heads; ++h) {
        const Mat<S>& attn = c.attn[si * heads + h];
        const auto qh = c.q.block(seg.q0, h * dh, nq, dh);
        const auto kh = c.k.block(seg.k0, h * dh, nk, dh);
        const auto vh = c.v.block(seg.k0, h * dh, nk, dh);
        const auto dctxh = dctx.block(seg.q0, h * dh, nq, dh);
        Mat<S> dattn = dctxh * vh.transpose();
        dv.block(seg.k0, h * dh, nk, dh).noalias() += attn.transpose() * dctxh;
        // softmax backward per row
        Mat<S> dscores(nq, nk);
        for (int r = 0; r < nq; ++r) {
          const S dot = (dattn.row(r).array() * attn.row(r).array()).sum();
          dscores.row(r) =
              attn.row(r).array() * (dattn.row(r).array() - dot) * scale;
        }
        dq.block(seg.q0, h * dh, nq, dh).noalias() += dscores * kh;
        dk.block(seg.k0, h * dh, nk, dh).noalias() += dscores.transpose() * qh;
      }
    }
    dxq += wq.backward(xq, dq, params);
    dxkv += wk.backward(xkv, dk, params);
    dxkv += wv.backward(xkv, dv, params);
  }
};

template <class S>
struct FeedForward {
  Linear<S> up, down;
  int width = 0, hidden = 0;

  void bind(ParamStore<S>& ps, const std::string& prefix, int width_, int hidden_,
            RngStream& rng) {
    width = width_;
    hidden = hidden_;
    up.bind(ps, prefix + ".up", width, hidden, rng);
    down.bind(ps, prefix + ".down", hidden, width, rng);
  }

  struct Cache {
    Mat<S> pre, act;
  };

  Mat<S> forward(const Mat<S>& x, Cache& c) const {
    c.pre = up.forward(x);
    c.act = c.pre.cwiseMax(S(0));
    return down.forward(c.act);
  }

  Mat<S> backward(const Mat<S>& x, const Cache& c, const Mat<S>& dy,
                  bool params = true) const {
    Mat<S> dact = down.backward(c.act, dy, params);
    dact.array() *= (c.pre.array() > S(0)).template cast<S>();
    return up.backward(x, dact, params);
  }
};

// Self-attention + feed-forward with residual connections (post-norm). The
// fused variant runs an intra-element and a global attention over the same
// input and adds their outputs before the residual.
template <class S>
struct AttentionBlock {
  MultiHeadAttention<S> attn;       // global (or the only) attention
  MultiHeadAttention<S> attn_intra; // fused variant only
  LayerNorm<S> ln1, ln2;
  FeedForward<S> ffn;
  bool fused = false;
  int width = 0;

  void bind(ParamStore<S>& ps, const std::string& prefix, int width_, int heads,
            int ffn_hidden, bool fused_, RngStream& rng) {
    width = width_;
    fused = fused_;
    attn.bind(ps, prefix + ".attn", width, heads, rng);
    if (fused) attn_intra.bind(ps, prefix + ".intra", width, heads, rng);
    ln1.bind(ps, prefix + ".ln1", width);
    ln2.bind(ps, prefix + ".ln2", width);
    ffn.bind(ps, prefix + ".ffn", width, ffn_hidden, rng);
  }

  struct Cache {
    Mat<S> x;
    typename MultiHeadAttention<S>::Cache attn, intra;
    typename LayerNorm<S>::Cache ln1, ln2;
    typename FeedForward<S>::Cache ffn;
    Mat<S> n1;
  };

  // `mask` drives the main attention; `intra_mask` (fused variant) restricts
  // the second attention to same-element node pairs.
  Mat<S> forward(const Mat<S>& x, const AttnMask& mask, const AttnMask& intra_mask,
                 Cache& c) const {
    c.x = x;
    Mat<S> h = x + attn.forward(x, x, mask, c.attn);
    if (fused) h += attn_intra.forward(x, x, intra_mask, c.intra);
    c.n1 = ln1.forward(h, c.ln1);
    const Mat<S> f = ffn.forward(c.n1, c.ffn);
    return ln2.forward(c.n1 + f, c.ln2);
  }

  Mat<S> forward(const Mat<S>& x, const AttnMask& mask, Cache& c) const {
    return forward(x, mask, {}, c);
  }

  Mat<S> backward(const Cache& c, const Mat<S>& dy, bool params = true) const {
    const Mat<S> dh2 = ln2.backward(c.ln2, dy, params);
    Mat<S> dn1 = ffn.backward(c.n1, c.ffn, dh2, params);
    dn1 += dh2;
    const Mat<S> dh1 = ln1.backward(c.ln1, dn1, params);
    Mat<S> dx = dh1;
    Mat<S> dkv = Mat<S>::Zero(c.x.rows(), width);
    attn.backward(c.x, c.x, c.attn, dh1, dx, dkv, params);
    dx += dkv;
    if (fused) {
      Mat<S> dxi = Mat<S>::Zero(c.x.rows(), width);
      Mat<S> dkvi = Mat<S>::Zero(c.x.rows(), width);
      attn_intra.backward(c.x, c.x, c.intra, dh1, dxi, dkvi, params);
      dx += dxi + dkvi;
    }
    return dx;
  }
};

}  // namespace gsdm::nn
