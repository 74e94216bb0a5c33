#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "probex/errors.hpp"
#include "probex/linalg.hpp"
#include "probex/rng.hpp"
#include "probex/tensor_io.hpp"

namespace probex {

enum class Activation { identity, relu };

inline std::string to_string(Activation a) {
  return a == Activation::relu ? "relu" : "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity" || s == "linear" || s == "none") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "' (want identity|relu)");
}

struct ProbeXDims {
  std::size_t d_w = 0, d_h = 0, d_y = 0;
  std::size_t r_u = 0, r_v = 0, r_t = 0;
  std::size_t encoder_depth = 1;  // extra hidden layers beyond V are depth-1

  void validate() const {
    if (d_w == 0 || d_h == 0 || d_y == 0 || r_u == 0 || r_v == 0 || r_t == 0)
      throw ConfigError("probe expert dims must all be >= 1");
    if (encoder_depth == 0) throw ConfigError("encoder depth must be >= 1");
  }
};

// Per-layer encoder half of the probing expert: probes U (columns u_l), the
// shared projection V, optional extra square hidden layers, and the per-probe
// encoder slices M_l. Encoding of X is e = sum_l M_l sigma(V^T X u_l).
struct ProbeEncoder {
  ProbeXDims dims;
  Activation activation = Activation::relu;
  Matrix u;                    // d_h x r_u
  Matrix v;                    // d_w x r_v
  std::vector<Matrix> hidden;  // (depth-1) x (r_v x r_v)
  Tensor3 m;                   // r_u x r_t x r_v, slice l is M_l

  std::size_t param_count() const {
    std::size_t extra = 0;
    for (const auto& h : hidden) extra += h.size();
    return dims.d_h * dims.r_u + dims.d_w * dims.r_v + extra + dims.r_u * dims.r_v * dims.r_t;
  }
};

// The full single-layer probing expert: encoder plus head, y = T e.
struct ProbeXParams {
  ProbeEncoder enc;
  Matrix t;  // d_y x r_t

  const ProbeXDims& dims() const { return enc.dims; }
  Activation activation() const { return enc.activation; }
  std::size_t param_count() const { return enc.param_count() + t.size(); }
};

// Closed form for the default (depth 1) configuration.
inline std::size_t probex_param_count(const ProbeXDims& d) {
  return d.d_h * d.r_u + d.d_w * d.r_v + d.r_u * d.r_v * d.r_t + d.r_t * d.d_y;
}

inline std::size_t dense_param_count(std::size_t d_w, std::size_t d_h, std::size_t d_y) {
  return d_w * d_h * d_y;
}

namespace detail {

inline void fill_uniform_fanin(Matrix& m, std::size_t fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : m.data) v = rng.uniform(-a, a);
}

}  // namespace detail

// Entries i.i.d. uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per tensor.
inline ProbeEncoder probe_encoder_init(const ProbeXDims& dims, Activation act, Rng& rng) {
  dims.validate();
  ProbeEncoder enc;
  enc.dims = dims;
  enc.activation = act;
  enc.u = Matrix(dims.d_h, dims.r_u);
  detail::fill_uniform_fanin(enc.u, dims.d_h, rng);
  enc.v = Matrix(dims.d_w, dims.r_v);
  detail::fill_uniform_fanin(enc.v, dims.d_w, rng);
  for (std::size_t i = 1; i < dims.encoder_depth; ++i) {
    Matrix h(dims.r_v, dims.r_v);
    detail::fill_uniform_fanin(h, dims.r_v, rng);
    enc.hidden.push_back(std::move(h));
  }
  enc.m = Tensor3(dims.r_u, dims.r_t, dims.r_v);
  {
    const double a = 1.0 / std::sqrt(static_cast<double>(dims.r_v));
    for (double& v : enc.m.data) v = rng.uniform(-a, a);
  }
  return enc;
}

inline ProbeXParams probex_init(const ProbeXDims& dims, Activation act, Rng& rng) {
  ProbeXParams p;
  p.enc = probe_encoder_init(dims, act, rng);
  p.t = Matrix(dims.d_y, dims.r_t);
  detail::fill_uniform_fanin(p.t, dims.r_t, rng);
  return p;
}

struct Encoding {
  Vec e;                       // r_t
  std::vector<Vec> per_probe;  // optional e_l; e equals their sum when kept
};

// Forward intermediates, reused by the backward pass.
struct EncoderCache {
  Matrix z;                 // d_w x r_u, column l = X u_l
  std::vector<Matrix> pre;  // pre-activations per stage, each r_v x r_u
  Matrix q;                 // r_v x r_u, activations feeding M
};

namespace detail {

inline void apply_activation(Matrix& m, Activation act) {
  if (act == Activation::relu)
    for (double& v : m.data) v = v > 0.0 ? v : 0.0;
}

}  // namespace detail

inline Encoding probe_encode(const ProbeEncoder& enc, const Matrix& x, EncoderCache* cache = nullptr,
                             bool keep_per_probe = false) {
  const ProbeXDims& d = enc.dims;
  if (x.rows != d.d_w || x.cols != d.d_h) {
    throw DimensionError("probe expert expects " + detail::shape_str(d.d_w, d.d_h) +
                         " input, got " + detail::shape_str(x.rows, x.cols));
  }
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;

  c.z = matmul(x, enc.u);        // d_w x r_u
  c.pre.clear();
  c.pre.push_back(matmul_tn(enc.v, c.z));  // r_v x r_u
  for (const auto& h : enc.hidden) {
    Matrix act_prev = c.pre.back();
    detail::apply_activation(act_prev, enc.activation);
    c.pre.push_back(matmul(h, act_prev));
  }
  c.q = c.pre.back();
  detail::apply_activation(c.q, enc.activation);

  Encoding out;
  out.e.assign(d.r_t, 0.0);
  if (keep_per_probe) out.per_probe.assign(d.r_u, Vec(d.r_t, 0.0));
  for (std::size_t l = 0; l < d.r_u; ++l) {
    for (std::size_t n = 0; n < d.r_t; ++n) {
      const double* m_row = &enc.m.data[(l * d.r_t + n) * d.r_v];
      double acc = 0.0;
      for (std::size_t mi = 0; mi < d.r_v; ++mi) acc += m_row[mi] * c.q(mi, l);
      out.e[n] += acc;
      if (keep_per_probe) out.per_probe[l][n] = acc;
    }
  }
  return out;
}

struct ProbeXOutput {
  Encoding enc;
  Vec y;
};

inline ProbeXOutput probex_forward(const ProbeXParams& p, const Matrix& x,
                                   EncoderCache* cache = nullptr, bool keep_per_probe = false) {
  ProbeXOutput out;
  out.enc = probe_encode(p.enc, x, cache, keep_per_probe);
  out.y = matvec(p.t, out.enc.e);
  return out;
}

struct EncoderGrads {
  Matrix u, v;
  std::vector<Matrix> hidden;
  Tensor3 m;
};

inline EncoderGrads encoder_grads_like(const ProbeEncoder& enc) {
  EncoderGrads g;
  g.u = Matrix(enc.u.rows, enc.u.cols);
  g.v = Matrix(enc.v.rows, enc.v.cols);
  for (const auto& h : enc.hidden) g.hidden.emplace_back(h.rows, h.cols);
  g.m = Tensor3(enc.m.dim0, enc.m.dim1, enc.m.dim2);
  return g;
}

struct ProbeXGrads {
  EncoderGrads enc;
  Matrix t;
};

inline ProbeXGrads probex_grads_like(const ProbeXParams& p) {
  return ProbeXGrads{encoder_grads_like(p.enc), Matrix(p.t.rows, p.t.cols)};
}

// Accumulates encoder gradients for upstream dL/de. relu'(0) is taken as 0.
inline void probe_encode_backward(const ProbeEncoder& enc, const Matrix& x, const EncoderCache& c,
                                  const Vec& dl_de, EncoderGrads& g) {
  const ProbeXDims& d = enc.dims;
  if (dl_de.size() != d.r_t) {
    throw DimensionError("encoder backward: upstream has length " + std::to_string(dl_de.size()) +
                         ", expected " + std::to_string(d.r_t));
  }

  // dM_l = dl_de q_l^T ; dq_l = M_l^T dl_de
  Matrix dq(d.r_v, d.r_u);
  for (std::size_t l = 0; l < d.r_u; ++l) {
    for (std::size_t n = 0; n < d.r_t; ++n) {
      const double g_n = dl_de[n];
      double* gm_row = &g.m.data[(l * d.r_t + n) * d.r_v];
      const double* m_row = &enc.m.data[(l * d.r_t + n) * d.r_v];
      for (std::size_t mi = 0; mi < d.r_v; ++mi) {
        gm_row[mi] += g_n * c.q(mi, l);
        dq(mi, l) += m_row[mi] * g_n;
      }
    }
  }

  // back through the extra hidden stages
  for (std::size_t s = enc.hidden.size(); s-- > 0;) {
    const Matrix& pre_out = c.pre[s + 1];
    if (enc.activation == Activation::relu) {
      for (std::size_t i = 0; i < dq.data.size(); ++i)
        if (pre_out.data[i] <= 0.0) dq.data[i] = 0.0;
    }
    Matrix act_in = c.pre[s];
    detail::apply_activation(act_in, enc.activation);
    const Matrix gh = matmul_nt(dq, act_in);  // dq * act_in^T, r_v x r_v
    for (std::size_t i = 0; i < g.hidden[s].data.size(); ++i) g.hidden[s].data[i] += gh.data[i];
    dq = matmul_tn(enc.hidden[s], dq);
  }

  // through the first activation into V and U
  if (enc.activation == Activation::relu) {
    const Matrix& pre0 = c.pre.front();
    for (std::size_t i = 0; i < dq.data.size(); ++i)
      if (pre0.data[i] <= 0.0) dq.data[i] = 0.0;
  }
  // dV += Z dP^T ; dZ = V dP ; dU += X^T dZ
  const Matrix dv = matmul_nt(c.z, dq);
  for (std::size_t i = 0; i < g.v.data.size(); ++i) g.v.data[i] += dv.data[i];
  const Matrix dz = matmul(enc.v, dq);
  const Matrix du = matmul_tn(x, dz);
  for (std::size_t i = 0; i < g.u.data.size(); ++i) g.u.data[i] += du.data[i];
}

inline void probex_backward(const ProbeXParams& p, const Matrix& x, const EncoderCache& cache,
                            const Vec& e, const Vec& dl_dy, ProbeXGrads& g) {
  if (dl_dy.size() != p.t.rows) {
    throw DimensionError("probex backward: upstream has length " + std::to_string(dl_dy.size()) +
                         ", expected " + std::to_string(p.t.rows));
  }
  // dT = g e^T (exact for the linear head)
  for (std::size_t i = 0; i < p.t.rows; ++i)
    for (std::size_t j = 0; j < p.t.cols; ++j) g.t(i, j) += dl_dy[i] * e[j];
  const Vec dl_de = matvec_t(p.t, dl_dy);
  probe_encode_backward(p.enc, x, cache, dl_de, g.enc);
}

// ---------------------------------------------------------------------------
// Multi-layer variant: one encoder per selected layer, encodings concatenated
// under a single shared head.
// ---------------------------------------------------------------------------

struct MultiProbeX {
  std::vector<std::string> layer_names;
  std::vector<ProbeEncoder> encoders;
  Matrix t;  // d_y x sum(r_t)

  std::size_t encoding_dim() const {
    std::size_t n = 0;
    for (const auto& e : encoders) n += e.dims.r_t;
    return n;
  }
  std::size_t param_count() const {
    std::size_t n = t.size();
    for (const auto& e : encoders) n += e.param_count();
    return n;
  }
};

struct MultiProbeXGrads {
  std::vector<EncoderGrads> encoders;
  Matrix t;
};

inline MultiProbeXGrads multi_grads_like(const MultiProbeX& p) {
  MultiProbeXGrads g;
  for (const auto& e : p.encoders) g.encoders.push_back(encoder_grads_like(e));
  g.t = Matrix(p.t.rows, p.t.cols);
  return g;
}

struct MultiForward {
  Vec e_concat;
  Vec y;
  std::vector<EncoderCache> caches;
};

template <class LayerLookup>
MultiForward multi_forward(const MultiProbeX& p, LayerLookup&& layer_for,
                           bool want_cache = false) {
  MultiForward out;
  out.e_concat.reserve(p.encoding_dim());
  if (want_cache) out.caches.resize(p.encoders.size());
  for (std::size_t i = 0; i < p.encoders.size(); ++i) {
    const Matrix& x = layer_for(i);
    Encoding enc = probe_encode(p.encoders[i], x, want_cache ? &out.caches[i] : nullptr);
    out.e_concat.insert(out.e_concat.end(), enc.e.begin(), enc.e.end());
  }
  if (out.e_concat.size() != p.t.cols) {
    throw DimensionError("multi-layer head expects encoding of length " +
                         std::to_string(p.t.cols) + ", got " +
                         std::to_string(out.e_concat.size()));
  }
  out.y = matvec(p.t, out.e_concat);
  return out;
}

template <class LayerLookup>
void multi_backward(const MultiProbeX& p, LayerLookup&& layer_for, const MultiForward& fwd,
                    const Vec& dl_dy, MultiProbeXGrads& g) {
  for (std::size_t i = 0; i < p.t.rows; ++i)
    for (std::size_t j = 0; j < p.t.cols; ++j) g.t(i, j) += dl_dy[i] * fwd.e_concat[j];
  const Vec dl_de = matvec_t(p.t, dl_dy);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < p.encoders.size(); ++i) {
    const std::size_t r_t = p.encoders[i].dims.r_t;
    const Vec part(dl_de.begin() + static_cast<std::ptrdiff_t>(offset),
                   dl_de.begin() + static_cast<std::ptrdiff_t>(offset + r_t));
    probe_encode_backward(p.encoders[i], layer_for(i), fwd.caches[i], part, g.encoders[i]);
    offset += r_t;
  }
}

// ---------------------------------------------------------------------------
// Serialization: tensors in the shared binary format + a JSON sidecar.
// ---------------------------------------------------------------------------

inline void save_probex(const ProbeXParams& p, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_matrix((fs::path(dir) / "u.wzt").string(), p.enc.u);
  write_matrix((fs::path(dir) / "v.wzt").string(), p.enc.v);
  write_tensor3((fs::path(dir) / "m.wzt").string(), p.enc.m);
  write_matrix((fs::path(dir) / "t.wzt").string(), p.t);
  for (std::size_t i = 0; i < p.enc.hidden.size(); ++i) {
    write_matrix((fs::path(dir) / ("hidden" + std::to_string(i) + ".wzt")).string(),
                 p.enc.hidden[i]);
  }
  nlohmann::json j;
  j["kind"] = "probex";
  j["activation"] = to_string(p.enc.activation);
  j["dims"] = {{"d_w", p.dims().d_w}, {"d_h", p.dims().d_h}, {"d_y", p.dims().d_y},
               {"r_u", p.dims().r_u}, {"r_v", p.dims().r_v}, {"r_t", p.dims().r_t},
               {"encoder_depth", p.dims().encoder_depth}};
  std::ofstream os(fs::path(dir) / "params.json");
  if (!os) throw FormatError("cannot write params sidecar in " + dir);
  os << j.dump(2) << "\n";
}

inline ProbeXParams load_probex(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "params.json");
  if (!is) throw FormatError("cannot open params sidecar in " + dir);
  nlohmann::json j;
  is >> j;
  ProbeXParams p;
  const auto& d = j.at("dims");
  p.enc.dims = ProbeXDims{d.at("d_w").get<std::size_t>(), d.at("d_h").get<std::size_t>(),
                          d.at("d_y").get<std::size_t>(), d.at("r_u").get<std::size_t>(),
                          d.at("r_v").get<std::size_t>(), d.at("r_t").get<std::size_t>(),
                          d.value("encoder_depth", std::size_t{1})};
  p.enc.activation = activation_from_string(j.at("activation").get<std::string>());
  p.enc.u = read_matrix((fs::path(dir) / "u.wzt").string());
  p.enc.v = read_matrix((fs::path(dir) / "v.wzt").string());
  p.enc.m = read_tensor3((fs::path(dir) / "m.wzt").string());
  p.t = read_matrix((fs::path(dir) / "t.wzt").string());
  for (std::size_t i = 1; i < p.enc.dims.encoder_depth; ++i) {
    p.enc.hidden.push_back(
        read_matrix((fs::path(dir) / ("hidden" + std::to_string(i - 1) + ".wzt")).string()));
  }
  return p;
}

}  // namespace probex
