#pragma once

#include <string>
#include <vector>

#include "probex/errors.hpp"
#include "probex/expert.hpp"
#include "probex/linalg.hpp"
#include "probex/rng.hpp"

namespace probex {

// The dense linear expert: y_k = sum_ij W[i,j,k] X[i,j].
struct DenseExpertParams {
  Tensor3 w;  // d_w x d_h x d_y

  std::size_t param_count() const { return w.size(); }
};

inline DenseExpertParams dense_init(std::size_t d_w, std::size_t d_h, std::size_t d_y, Rng& rng) {
  if (d_w == 0 || d_h == 0 || d_y == 0) throw ConfigError("dense expert dims must be >= 1");
  DenseExpertParams p;
  p.w = Tensor3(d_w, d_h, d_y);
  const double a = 1.0 / std::sqrt(static_cast<double>(d_w * d_h));
  for (double& v : p.w.data) v = rng.uniform(-a, a);
  return p;
}

inline Vec dense_forward(const DenseExpertParams& p, const Matrix& x) {
  return contract3(p.w, x);
}

// General linear probing network with full per-probe encoders; the proof
// construction this mirrors uses U = I, T = I and E[l]_{ki} = W[i,l,k].
struct GeneralProbeNet {
  Matrix u;                    // d_h x d_h
  std::vector<Matrix> probes;  // per probe, d_y x d_w
  Matrix t;                    // d_y x d_y
};

inline Vec general_probe_forward(const GeneralProbeNet& net, const Matrix& x) {
  Vec e;
  for (std::size_t l = 0; l < net.probes.size(); ++l) {
    Vec u_l(net.u.rows);
    for (std::size_t j = 0; j < net.u.rows; ++j) u_l[j] = net.u(j, l);
    const Vec z = matvec(x, u_l);
    const Vec el = matvec(net.probes[l], z);
    if (e.empty())
      e = el;
    else
      for (std::size_t k = 0; k < e.size(); ++k) e[k] += el[k];
  }
  return matvec(net.t, e);
}

// Builds the linear probing network that reproduces a dense expert exactly.
// The per-probe matrices are only materialized at toy sizes; the construction
// is a proof device, not a practical model.
inline GeneralProbeNet prop1_construct(const DenseExpertParams& p) {
  const std::size_t d_w = p.w.dim0, d_h = p.w.dim1, d_y = p.w.dim2;
  if (d_w * d_h * d_y > 1000000) {
    throw ConfigError("prop1_construct: refusing to materialize " +
                      std::to_string(d_w * d_h * d_y) + " parameters (limit 1e6)");
  }
  GeneralProbeNet net;
  net.u = Matrix::identity(d_h);
  net.t = Matrix::identity(d_y);
  net.probes.reserve(d_h);
  for (std::size_t l = 0; l < d_h; ++l) {
    Matrix el(d_y, d_w);
    for (std::size_t k = 0; k < d_y; ++k)
      for (std::size_t i = 0; i < d_w; ++i) el(k, i) = p.w(i, l, k);
    net.probes.push_back(std::move(el));
  }
  return net;
}

// Expands a linear probing expert into the dense tensor it is equivalent to:
// W[i,j,k] = sum_{n,m,l} T[k,n] M_l[n,m] V[i,m] U[j,l].
inline DenseExpertParams prop2_tucker_expand(const ProbeXParams& p) {
  if (p.activation() != Activation::identity) {
    throw UnsupportedError("tucker expansion requires the identity activation");
  }
  if (p.dims().encoder_depth != 1) {
    throw UnsupportedError("tucker expansion requires encoder depth 1");
  }
  const ProbeXDims& d = p.dims();
  DenseExpertParams out;
  out.w = Tensor3(d.d_w, d.d_h, d.d_y);
  // Contract M with T and V first: S_l[k,m] = sum_n T[k,n] M_l[n,m];
  // then W[i,j,k] = sum_{l,m} S_l[k,m] V[i,m] U[j,l].
  for (std::size_t l = 0; l < d.r_u; ++l) {
    Matrix s(d.d_y, d.r_v);
    for (std::size_t k = 0; k < d.d_y; ++k)
      for (std::size_t n = 0; n < d.r_t; ++n) {
        const double t_kn = p.t(k, n);
        const double* m_row = &p.enc.m.data[(l * d.r_t + n) * d.r_v];
        for (std::size_t m = 0; m < d.r_v; ++m) s(k, m) += t_kn * m_row[m];
      }
    const Matrix vs = matmul_nt(p.enc.v, s);  // d_w x d_y, (VS^T)[i,k]
    for (std::size_t i = 0; i < d.d_w; ++i)
      for (std::size_t j = 0; j < d.d_h; ++j) {
        const double u_jl = p.enc.u(j, l);
        if (u_jl == 0.0) continue;
        for (std::size_t k = 0; k < d.d_y; ++k) out.w(i, j, k) += vs(i, k) * u_jl;
      }
  }
  return out;
}

struct DenseGrads {
  Tensor3 w;
};

inline DenseGrads dense_grads_like(const DenseExpertParams& p) {
  return DenseGrads{Tensor3(p.w.dim0, p.w.dim1, p.w.dim2)};
}

// Gradient of y = <W, X> w.r.t. W is the outer product X (x) dL/dy.
inline void dense_backward(const DenseExpertParams& p, const Matrix& x, const Vec& dl_dy,
                           DenseGrads& g) {
  if (x.rows != p.w.dim0 || x.cols != p.w.dim1 || dl_dy.size() != p.w.dim2) {
    throw DimensionError("dense backward: shape mismatch");
  }
  const std::size_t plane = x.rows * x.cols;
  for (std::size_t ij = 0; ij < plane; ++ij) {
    const double xij = x.data[ij];
    if (xij == 0.0) continue;
    double* grow = &g.w.data[ij * p.w.dim2];
    for (std::size_t k = 0; k < dl_dy.size(); ++k) grow[k] += xij * dl_dy[k];
  }
}

}  // namespace probex
