#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "todnet/core.hpp"
#include "todnet/errors.hpp"

namespace todnet {

// ---------------------------------------------------------------------------
// Conditioner MLP
// ---------------------------------------------------------------------------

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // row-major, out x in
  std::vector<double> bias;    // out
};

/// Feed-forward network: ReLU on hidden layers, linear output layer.
struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_width() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t output_width() const { return layers.empty() ? 0 : layers.back().out; }
};

/// Layer inputs saved during a forward pass; xs[0] is the network input and
/// xs[i] the activated output of layer i-1. xs.back() is the network output.
struct MlpTrace {
  std::vector<Vec> xs;
};

inline Vec mlp_apply(const MlpParams& p, const Vec& input, MlpTrace* trace = nullptr) {
  if (p.layers.empty()) throw UsageError("mlp_apply: empty network");
  if (input.size() != p.input_width()) {
    throw UsageError("mlp_apply: input width " + std::to_string(input.size()) + " != expected " +
                     std::to_string(p.input_width()));
  }
  Vec x = input;
  if (trace) trace->xs.assign(1, x);
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const DenseLayer& l = p.layers[li];
    if (x.size() != l.in) throw UsageError("mlp_apply: layer shape chain broken");
    Vec y(l.out);
    for (std::size_t r = 0; r < l.out; ++r) {
      const double* wr = l.weight.data() + r * l.in;
      double acc = l.bias[r];
      for (std::size_t k = 0; k < l.in; ++k) acc += wr[k] * x[k];
      y[r] = acc;
    }
    const bool hidden = li + 1 < p.layers.size();
    if (hidden) {
      for (double& v : y)
        if (v < 0.0) v = 0.0;
    }
    x = std::move(y);
    if (trace) trace->xs.push_back(x);
  }
  return x;
}

/// Reverse-mode pass. Accumulates parameter gradients into `grad` (which must
/// be shape-congruent with `p`, zero-filled by the caller on first use) and
/// returns the gradient with respect to the network input.
inline Vec mlp_backward(const MlpParams& p, const MlpTrace& trace, const Vec& dout,
                        MlpParams& grad) {
  if (dout.size() != p.output_width()) throw UsageError("mlp_backward: bad upstream width");
  Vec dy = dout;
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const DenseLayer& l = p.layers[li];
    DenseLayer& g = grad.layers[li];
    const Vec& x = trace.xs[li];
    const bool hidden = li + 1 < p.layers.size();
    if (hidden) {
      // ReLU: activated output was saved, gradient flows where it is > 0
      const Vec& act = trace.xs[li + 1];
      for (std::size_t r = 0; r < l.out; ++r)
        if (act[r] <= 0.0) dy[r] = 0.0;
    }
    Vec dx(l.in, 0.0);
    for (std::size_t r = 0; r < l.out; ++r) {
      const double d = dy[r];
      g.bias[r] += d;
      double* gw = g.weight.data() + r * l.in;
      const double* wr = l.weight.data() + r * l.in;
      for (std::size_t k = 0; k < l.in; ++k) {
        gw[k] += d * x[k];
        dx[k] += d * wr[k];
      }
    }
    dy = std::move(dx);
  }
  return dy;
}

inline MlpParams zeros_like(const MlpParams& p) {
  MlpParams g;
  g.layers.reserve(p.layers.size());
  for (const DenseLayer& l : p.layers) {
    g.layers.push_back(DenseLayer{l.in, l.out, std::vector<double>(l.weight.size(), 0.0),
                                  std::vector<double>(l.bias.size(), 0.0)});
  }
  return g;
}

// ---------------------------------------------------------------------------
// Coupling layers
// ---------------------------------------------------------------------------

enum class Half : std::uint8_t { First = 0, Second = 1 };

struct CouplingLayerParams {
  MlpParams conditioner;      // input d/2 + d, output d (s then t)
  Half transformed_half = Half::Second;
};

struct FlowParams {
  std::size_t dimension = 0;
  std::vector<CouplingLayerParams> layers;
  bool condition_normalized = true;
};

/// Gradients shaped like FlowParams plus input/condition gradients.
struct FlowGradients {
  std::vector<MlpParams> layer_grads;
  Vec d_input;
  Vec d_condition;
};

inline FlowGradients zeros_like(const FlowParams& f) {
  FlowGradients g;
  g.layer_grads.reserve(f.layers.size());
  for (const auto& l : f.layers) g.layer_grads.push_back(zeros_like(l.conditioner));
  g.d_input.assign(f.dimension, 0.0);
  g.d_condition.assign(f.dimension, 0.0);
  return g;
}

namespace detail {

inline void split_indices(Half transformed, std::size_t d, std::size_t& u_begin,
                          std::size_t& t_begin) {
  const std::size_t h = d / 2;
  if (transformed == Half::Second) {
    u_begin = 0;
    t_begin = h;
  } else {
    u_begin = h;
    t_begin = 0;
  }
}

}  // namespace detail

inline void check_vec_dim(const Vec& v, std::size_t d, const char* what) {
  if (v.size() != d)
    throw UsageError(std::string(what) + ": dimension " + std::to_string(v.size()) +
                     " != " + std::to_string(d));
}

/// z1 = v1; z2 = v2 * exp(s(v1,c)) + t(v1,c). `c` is fed raw; condition
/// normalization happens once at flow level.
inline Vec coupling_forward(const CouplingLayerParams& layer, const Vec& v, const Vec& c,
                            MlpTrace* trace = nullptr) {
  const std::size_t d = v.size();
  if (d < 2 || d % 2 != 0) throw UsageError("coupling_forward: dimension must be even and >= 2");
  check_vec_dim(c, d, "coupling_forward: condition");
  const std::size_t h = d / 2;
  std::size_t ub, tb;
  detail::split_indices(layer.transformed_half, d, ub, tb);

  Vec mlp_in(h + d);
  for (std::size_t i = 0; i < h; ++i) mlp_in[i] = v[ub + i];
  for (std::size_t i = 0; i < d; ++i) mlp_in[h + i] = c[i];
  Vec st = mlp_apply(layer.conditioner, mlp_in, trace);
  if (st.size() != d) throw UsageError("coupling_forward: conditioner output width != d");
  check_finite(st, "coupling_forward: conditioner output");

  Vec z = v;
  for (std::size_t i = 0; i < h; ++i) {
    const double zi = v[tb + i] * std::exp(st[i]) + st[h + i];
    if (!std::isfinite(zi)) throw NumericOverflowError("coupling_forward: non-finite output");
    z[tb + i] = zi;
  }
  return z;
}

/// v1 = z1; v2 = (z2 - t(z1,c)) * exp(-s(z1,c)).
inline Vec coupling_inverse(const CouplingLayerParams& layer, const Vec& z, const Vec& c) {
  const std::size_t d = z.size();
  if (d < 2 || d % 2 != 0) throw UsageError("coupling_inverse: dimension must be even and >= 2");
  check_vec_dim(c, d, "coupling_inverse: condition");
  const std::size_t h = d / 2;
  std::size_t ub, tb;
  detail::split_indices(layer.transformed_half, d, ub, tb);

  Vec mlp_in(h + d);
  for (std::size_t i = 0; i < h; ++i) mlp_in[i] = z[ub + i];
  for (std::size_t i = 0; i < d; ++i) mlp_in[h + i] = c[i];
  Vec st = mlp_apply(layer.conditioner, mlp_in);
  if (st.size() != d) throw UsageError("coupling_inverse: conditioner output width != d");
  check_finite(st, "coupling_inverse: conditioner output");

  Vec v = z;
  for (std::size_t i = 0; i < h; ++i) {
    const double vi = (z[tb + i] - st[h + i]) * std::exp(-st[i]);
    if (!std::isfinite(vi)) throw NumericOverflowError("coupling_inverse: non-finite output");
    v[tb + i] = vi;
  }
  return v;
}

namespace detail {

/// The condition as seen by the conditioners: L2-normalized when the flag is
/// set, except that an all-zero condition (the "no condition" mode) passes
/// through unchanged.
inline Vec effective_condition(const FlowParams& flow, const Vec& c) {
  if (!flow.condition_normalized) return c;
  const double n = norm(c);
  if (n == 0.0) return c;
  Vec out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i] / n;
  return out;
}

}  // namespace detail

struct FlowTrace {
  Vec cond;                      // condition after optional normalization
  std::vector<Vec> layer_inputs; // input to each coupling layer
  std::vector<MlpTrace> mlp_traces;
  Vec output;
};

inline Vec flow_forward(const FlowParams& flow, const Vec& v, const Vec& c,
                        FlowTrace* trace = nullptr) {
  check_vec_dim(v, flow.dimension, "flow_forward: input");
  check_vec_dim(c, flow.dimension, "flow_forward: condition");
  if (flow.layers.empty()) throw UsageError("flow_forward: flow has no layers");
  Vec cn = detail::effective_condition(flow, c);
  if (trace) {
    trace->cond = cn;
    trace->layer_inputs.clear();
    trace->mlp_traces.assign(flow.layers.size(), MlpTrace{});
  }
  Vec x = v;
  for (std::size_t li = 0; li < flow.layers.size(); ++li) {
    if (trace) trace->layer_inputs.push_back(x);
    x = coupling_forward(flow.layers[li], x, cn, trace ? &trace->mlp_traces[li] : nullptr);
  }
  if (trace) trace->output = x;
  return x;
}

inline Vec flow_inverse(const FlowParams& flow, const Vec& z, const Vec& c) {
  check_vec_dim(z, flow.dimension, "flow_inverse: input");
  check_vec_dim(c, flow.dimension, "flow_inverse: condition");
  if (flow.layers.empty()) throw UsageError("flow_inverse: flow has no layers");
  Vec cn = detail::effective_condition(flow, c);
  Vec x = z;
  for (std::size_t li = flow.layers.size(); li-- > 0;) {
    x = coupling_inverse(flow.layers[li], x, cn);
  }
  return x;
}

/// Cosine similarity after deforming both vectors under one condition.
inline double deformed_similarity(const FlowParams& flow, const Vec& query, const Vec& target,
                                  const Vec& condition) {
  Vec fq = flow_forward(flow, query, condition);
  Vec ft = flow_forward(flow, target, condition);
  return cosine_similarity(fq, ft);
}

/// Reverse-mode pass over a saved forward trace. Parameter gradients are
/// accumulated into `acc`; the input/condition gradients are accumulated too.
inline void flow_backward_accum(const FlowParams& flow, const FlowTrace& trace,
                                const Vec& upstream, FlowGradients& acc, const Vec& raw_condition) {
  check_vec_dim(upstream, flow.dimension, "flow_backward: upstream");
  const std::size_t d = flow.dimension;
  const std::size_t h = d / 2;
  Vec dz = upstream;
  Vec dc_norm(d, 0.0);
  for (std::size_t li = flow.layers.size(); li-- > 0;) {
    const CouplingLayerParams& layer = flow.layers[li];
    const Vec& x = trace.layer_inputs[li];
    const MlpTrace& mt = trace.mlp_traces[li];
    const Vec& st = mt.xs.back();
    std::size_t ub, tb;
    detail::split_indices(layer.transformed_half, d, ub, tb);

    Vec dst(d, 0.0);
    Vec dx(d, 0.0);
    for (std::size_t i = 0; i < h; ++i) {
      const double es = std::exp(st[i]);
      const double dzt = dz[tb + i];
      dst[i] += dzt * x[tb + i] * es;  // ds
      dst[h + i] += dzt;               // dt
      dx[tb + i] += dzt * es;
    }
    Vec d_mlp_in = mlp_backward(layer.conditioner, mt, dst, acc.layer_grads[li]);
    for (std::size_t i = 0; i < h; ++i) dx[ub + i] += dz[ub + i] + d_mlp_in[i];
    for (std::size_t i = 0; i < d; ++i) dc_norm[i] += d_mlp_in[h + i];
    dz = std::move(dx);
  }
  for (std::size_t i = 0; i < d; ++i) acc.d_input[i] += dz[i];

  // pull the condition gradient back through the optional normalization
  const double n = norm(raw_condition);
  if (flow.condition_normalized && n > 0.0) {
    const double proj = dot(trace.cond, dc_norm);
    for (std::size_t i = 0; i < d; ++i)
      acc.d_condition[i] += (dc_norm[i] - proj * trace.cond[i]) / n;
  } else {
    for (std::size_t i = 0; i < d; ++i) acc.d_condition[i] += dc_norm[i];
  }
}

inline FlowGradients flow_backward(const FlowParams& flow, const Vec& v, const Vec& c,
                                   const Vec& upstream) {
  FlowTrace trace;
  flow_forward(flow, v, c, &trace);
  FlowGradients g = zeros_like(flow);
  flow_backward_accum(flow, trace, upstream, g, c);
  return g;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

inline DenseLayer random_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  DenseLayer l{in, out, std::vector<double>(in * out), std::vector<double>(out, 0.0)};
  const double a = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-a, a);
  for (double& w : l.weight) w = u(rng);
  return l;
}

inline DenseLayer zero_dense(std::size_t in, std::size_t out) {
  return DenseLayer{in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
}

}  // namespace detail

/// Conditioner hidden layers get fan-in-scaled uniform weights; the output
/// layer starts at exactly zero so the whole flow begins as the identity map.
inline FlowParams init_flow(std::size_t d, std::size_t n_layers, std::size_t n_hidden_layers,
                            std::size_t hidden_units, std::uint64_t seed) {
  if (d < 2 || d % 2 != 0) throw UsageError("init_flow: dimension must be even and >= 2");
  if (n_layers < 1 || n_hidden_layers < 1 || hidden_units < 1)
    throw UsageError("init_flow: all counts must be >= 1");
  std::mt19937_64 rng(seed);
  FlowParams flow;
  flow.dimension = d;
  const std::size_t h = d / 2;
  for (std::size_t li = 0; li < n_layers; ++li) {
    CouplingLayerParams layer;
    layer.transformed_half = (li % 2 == 0) ? Half::Second : Half::First;
    std::size_t in = h + d;
    for (std::size_t hi = 0; hi < n_hidden_layers; ++hi) {
      layer.conditioner.layers.push_back(detail::random_dense(in, hidden_units, rng));
      in = hidden_units;
    }
    layer.conditioner.layers.push_back(detail::zero_dense(in, d));
    flow.layers.push_back(std::move(layer));
  }
  return flow;
}

// ---------------------------------------------------------------------------
// Conditional MLP deformer (ablation variant; not bijective)
// ---------------------------------------------------------------------------

/// Plain conditional MLP on concat(v, c): input 2d, output d.
inline MlpParams init_mlp_deformer(std::size_t d, std::size_t n_hidden_layers,
                                   std::size_t hidden_units, std::uint64_t seed) {
  if (d < 2 || d % 2 != 0) throw UsageError("init_mlp_deformer: dimension must be even and >= 2");
  if (n_hidden_layers < 1 || hidden_units < 1)
    throw UsageError("init_mlp_deformer: all counts must be >= 1");
  std::mt19937_64 rng(seed);
  MlpParams p;
  std::size_t in = 2 * d;
  for (std::size_t hi = 0; hi < n_hidden_layers; ++hi) {
    p.layers.push_back(detail::random_dense(in, hidden_units, rng));
    in = hidden_units;
  }
  p.layers.push_back(detail::random_dense(in, d, rng));
  // nonzero biases keep the output away from the exact zero vector even when
  // every ReLU unit is dead for some input
  for (DenseLayer& l : p.layers) {
    const double a = 1.0 / std::sqrt(static_cast<double>(l.in));
    std::uniform_real_distribution<double> u(-a, a);
    for (double& b : l.bias) b = u(rng);
  }
  return p;
}

inline Vec mlp_deformer_forward(const MlpParams& p, const Vec& v, const Vec& c,
                                MlpTrace* trace = nullptr) {
  if (v.size() != c.size()) throw UsageError("mlp_deformer_forward: v/c dimension mismatch");
  if (p.input_width() != 2 * v.size())
    throw UsageError("mlp_deformer_forward: network input width != 2d");
  if (p.output_width() != v.size())
    throw UsageError("mlp_deformer_forward: network output width != d");
  Vec in(2 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i) in[i] = v[i];
  for (std::size_t i = 0; i < c.size(); ++i) in[v.size() + i] = c[i];
  return mlp_apply(p, in, trace);
}

}  // namespace todnet
