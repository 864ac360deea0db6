#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsdm/rng.hpp"

namespace gsdm::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
struct Param {
  Mat<S> value;
  Mat<S> grad;
  Mat<S> adam_m;
  Mat<S> adam_v;
  bool trainable = true;
};

// Named tensors plus Adam state. Parameter names are stable keys; iteration
// order (and thus checkpoint layout) is lexicographic.
template <class S>
class ParamStore {
 public:
  Param<S>& add(const std::string& name, int rows, int cols, bool trainable = true) {
    auto [it, fresh] = params_.try_emplace(name);
    if (!fresh) throw std::invalid_argument("duplicate param: " + name);
    Param<S>& p = it->second;
    p.value = Mat<S>::Zero(rows, cols);
    p.grad = Mat<S>::Zero(rows, cols);
    p.trainable = trainable;
    if (trainable) {
      p.adam_m = Mat<S>::Zero(rows, cols);
      p.adam_v = Mat<S>::Zero(rows, cols);
    }
    return p;
  }

  Param<S>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no param: " + name);
    return it->second;
  }
  const Param<S>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no param: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.grad.setZero();
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params_)
      if (p.trainable) n += p.value.size();
    return n;
  }

  // Adam with decoupled weight decay. Throws std::runtime_error("diverged")
  // on non-finite gradients.
  void adam_step(double lr, double wd, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1, double(step_));
    const double bc2 = 1.0 - std::pow(beta2, double(step_));
    for (auto& [name, p] : params_) {
      if (!p.trainable) continue;
      if (!p.grad.allFinite()) throw std::runtime_error("diverged");
      p.adam_m = S(beta1) * p.adam_m + S(1.0 - beta1) * p.grad;
      p.adam_v.array() =
          S(beta2) * p.adam_v.array() + S(1.0 - beta2) * p.grad.array().square();
      const Mat<S> mhat = p.adam_m / S(bc1);
      const Mat<S> vhat = p.adam_v / S(bc2);
      p.value.array() -=
          S(lr) * (mhat.array() / (vhat.array().sqrt() + S(eps)) +
                   S(wd) * p.value.array());
    }
  }

 private:
  std::map<std::string, Param<S>> params_;
  std::int64_t step_ = 0;
};

namespace detail {

inline void ckpt_put_u16(std::ostream& os, std::uint16_t x) {
  unsigned char b[2] = {static_cast<unsigned char>(x & 0xff),
                        static_cast<unsigned char>(x >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}
inline void ckpt_put_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint16_t ckpt_get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
inline std::uint32_t ckpt_get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

template <class S>
void ckpt_write_tensor(std::ostream& os, const std::string& name, const Mat<S>& m) {
  if (name.size() > 0xffff) throw std::invalid_argument("tensor name too long");
  ckpt_put_u16(os, static_cast<std::uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  os.put(static_cast<char>(2));  // rank
  ckpt_put_u32(os, static_cast<std::uint32_t>(m.rows()));
  ckpt_put_u32(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float f = static_cast<float>(m(r, c));
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      ckpt_put_u32(os, u);
    }
}

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "GSDM-CKPT1";

// Checkpoint format: magic "GSDM-CKPT1"; then per tensor: u16 name length,
// UTF-8 name, u8 rank, u32 extents, f32 row-major data (little-endian).
// Adam moments ride along under ".adam_m"/".adam_v" suffixes, the step
// counter under "adam.step".
template <class S>
void save_checkpoint(const ParamStore<S>& store, const std::string& path,
                     bool with_moments = true) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write(kCheckpointMagic, 10);
  for (const auto& [name, p] : store) {
    detail::ckpt_write_tensor(os, name, p.value);
    if (with_moments && p.trainable) {
      detail::ckpt_write_tensor(os, name + ".adam_m", p.adam_m);
      detail::ckpt_write_tensor(os, name + ".adam_v", p.adam_v);
    }
  }
  if (with_moments) {
    Mat<S> step(1, 1);
    step(0, 0) = static_cast<S>(store.step());
    detail::ckpt_write_tensor(os, "adam.step", step);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

// Raw checkpoint contents, keyed by stored tensor name.
template <class S>
std::map<std::string, Mat<S>> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[10];
  is.read(magic, 10);
  if (!is || std::memcmp(magic, kCheckpointMagic, 10) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  std::map<std::string, Mat<S>> out;
  while (true) {
    const int peek = is.peek();
    if (peek == EOF) break;
    const std::uint16_t len = detail::ckpt_get_u16(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const int rank = is.get();
    if (rank < 1 || rank > 2) throw std::runtime_error("unsupported tensor rank");
    std::uint32_t rows = detail::ckpt_get_u32(is);
    std::uint32_t cols = rank == 2 ? detail::ckpt_get_u32(is) : 1;
    Mat<S> m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) {
        const std::uint32_t u = detail::ckpt_get_u32(is);
        float f;
        std::memcpy(&f, &u, 4);
        m(r, c) = static_cast<S>(f);
      }
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

// Fills an already-shaped store from a checkpoint. Every store tensor must be
// present with matching extents; moments are restored when available.
template <class S>
void load_checkpoint(ParamStore<S>& store, const std::string& path) {
  auto tensors = read_checkpoint<S>(path);
  for (auto& [name, p] : store) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint misses: " + name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw std::runtime_error("checkpoint shape mismatch: " + name);
    p.value = it->second;
    if (p.trainable) {
      auto im = tensors.find(name + ".adam_m");
      auto iv = tensors.find(name + ".adam_v");
      if (im != tensors.end() && iv != tensors.end()) {
        p.adam_m = im->second;
        p.adam_v = iv->second;
      }
    }
  }
  auto is = tensors.find("adam.step");
  if (is != tensors.end()) store.set_step(static_cast<std::int64_t>(is->second(0, 0)));
}

template <class S>
void init_uniform(Param<S>& p, double a, RngStream& rng) {
  for (Eigen::Index r = 0; r < p.value.rows(); ++r)
    for (Eigen::Index c = 0; c < p.value.cols(); ++c)
      p.value(r, c) = static_cast<S>(rng.uniform(-a, a));
}

template <class S>
void init_xavier(Param<S>& p, RngStream& rng) {
  const double a = std::sqrt(6.0 / double(p.value.rows() + p.value.cols()));
  init_uniform(p, a, rng);
}

// Central finite differences against the analytic gradients produced by
// `loss_with_grads` (which must zero + refill store grads and return the
// loss). Returns the max relative error over a random coordinate subset.
template <class S, class F>
double grad_check(ParamStore<S>& store, F&& loss_with_grads, double eps,
                  RngStream& rng, int probes_per_tensor = 4) {
  if (eps < 1e-6 || eps > 1e-3) throw std::invalid_argument("grad_check eps range");
  loss_with_grads();
  std::map<std::string, Mat<S>> analytic;
  for (auto& [name, p] : store)
    if (p.trainable) analytic[name] = p.grad;

  double worst = 0.0;
  for (auto& [name, p] : store) {
    if (!p.trainable) continue;
    for (int probe = 0; probe < probes_per_tensor; ++probe) {
      const int r = static_cast<int>(rng.uniform_int(0, p.value.rows() - 1));
      const int c = static_cast<int>(rng.uniform_int(0, p.value.cols() - 1));
      const S saved = p.value(r, c);
      p.value(r, c) = saved + S(eps);
      const double up = static_cast<double>(loss_with_grads());
      p.value(r, c) = saved - S(eps);
      const double dn = static_cast<double>(loss_with_grads());
      p.value(r, c) = saved;
      const double fd = (up - dn) / (2.0 * eps);
      const double an = static_cast<double>(analytic[name](r, c));
      // The floor absorbs central-difference roundoff on structurally zero
      // gradients (e.g. key biases under softmax shift invariance).
      const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-2});
      worst = std::max(worst, err);
    }
  }
  loss_with_grads();  // leave grads in a consistent state
  return worst;
}

}  // namespace gsdm::nn
