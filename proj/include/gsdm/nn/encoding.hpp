#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

#include "gsdm/nn/core.hpp"

namespace gsdm::nn {

// Sinusoidal positional encoding: interleaved (sin(v*w_k), cos(v*w_k)) pairs
// over geometrically spaced frequencies. The top frequency is high enough to
// separate coordinates 1e-3 apart on the [-1,1] canvas.
template <class S>
struct PosEnc {
  int dim = 0;
  Eigen::VectorXd omega;

  explicit PosEnc(int dim_, double omega_min = 1.0, double omega_max = 1000.0)
      : dim(dim_) {
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("encoding dim must be even");
    const int k = dim / 2;
    omega.resize(k);
    for (int i = 0; i < k; ++i)
      omega[i] = k == 1 ? omega_min
                        : omega_min * std::pow(omega_max / omega_min, double(i) / (k - 1));
  }

  void encode(double value, S* out) const {
    for (int i = 0; i < dim / 2; ++i) {
      const double a = value * omega[i];
      out[2 * i] = static_cast<S>(std::sin(a));
      out[2 * i + 1] = static_cast<S>(std::cos(a));
    }
  }

  Eigen::VectorXd encode(double value) const {
    Eigen::VectorXd out(dim);
    for (int i = 0; i < dim / 2; ++i) {
      const double a = value * omega[i];
      out[2 * i] = std::sin(a);
      out[2 * i + 1] = std::cos(a);
    }
    return out;
  }

  // d(encoding)/d(value) contracted with an upstream gradient row.
  double backward(double value, const S* grad) const {
    double dv = 0.0;
    for (int i = 0; i < dim / 2; ++i) {
      const double a = value * omega[i];
      dv += omega[i] * (std::cos(a) * static_cast<double>(grad[2 * i]) -
                        std::sin(a) * static_cast<double>(grad[2 * i + 1]));
    }
    return dv;
  }
};

inline Eigen::VectorXd positional_encoding(double value, int dim) {
  return PosEnc<double>(dim).encode(value);
}

}  // namespace gsdm::nn
