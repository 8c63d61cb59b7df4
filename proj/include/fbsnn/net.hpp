// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fbsnn/errors.hpp"
#include "fbsnn/random.hpp"
#include "fbsnn/tape.hpp"
#include "fbsnn/tensor.hpp"

namespace fbsnn {

/// Optional affine map applied to the raw (t, x) input:
/// t' = (t - t_shift) * t_scale, x' = (x - x_shift) * x_scale.
struct InputScaling {
  double t_shift = 0.0;
  double t_scale = 1.0;
  double x_shift = 0.0;
  double x_scale = 1.0;

  bool is_identity() const {
    return t_shift == 0.0 && t_scale == 1.0 && x_shift == 0.0 && x_scale == 1.0;
  }
  friend bool operator==(const InputScaling&, const InputScaling&) = default;
};

/// Trainable parameters of the fully connected network u(t, x).
/// layer_sizes = {1 + d, hidden..., 1}; weights[k] is sizes[k] x sizes[k+1].
/// Hidden layers apply `activation`, the output layer is affine.
struct NetParams {
  std::vector<std::size_t> layer_sizes;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  Activation activation = Activation::Sine;
  InputScaling scaling;

  std::size_t dim() const { return layer_sizes.front() - 1; }
  std::size_t layers() const { return weights.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      n += weights[k].size() + biases[k].size();
    }
    return n;
  }

  /// Weights and biases interleaved: W0, b0, W1, b1, ...
  std::vector<Tensor*> flat() {
    std::vector<Tensor*> out;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      out.push_back(&weights[k]);
      out.push_back(&biases[k]);
    }
    return out;
  }
  std::vector<const Tensor*> flat() const {
    std::vector<const Tensor*> out;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      out.push_back(&weights[k]);
      out.push_back(&biases[k]);
    }
    return out;
  }

  /// Throws ShapeError unless every tensor matches layer_sizes.
  void check_shapes() const {
    if (layer_sizes.size() < 2 || weights.size() != layer_sizes.size() - 1 ||
        biases.size() != weights.size()) {
      throw ShapeError("network has inconsistent layer count");
    }
    for (std::size_t k = 0; k < weights.size(); ++k) {
      const auto& w = weights[k];
      const auto& b = biases[k];
      if (w.rows() != layer_sizes[k] || w.cols() != layer_sizes[k + 1]) {
        throw ShapeError("weight " + std::to_string(k) + " is " +
                         w.shape_string() + ", expected " +
                         std::to_string(layer_sizes[k]) + "x" +
                         std::to_string(layer_sizes[k + 1]));
      }
      if (b.rows() != 1 || b.cols() != layer_sizes[k + 1]) {
        throw ShapeError("bias " + std::to_string(k) + " is " +
                         b.shape_string() + ", expected 1x" +
                         std::to_string(layer_sizes[k + 1]));
      }
    }
  }

  friend bool operator==(const NetParams&, const NetParams&) = default;
};

inline void validate_layer_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) {
    throw ConfigError("layer list needs at least an input and an output size");
  }
  for (std::size_t s : sizes) {
    if (s == 0) throw ConfigError("layer sizes must be >= 1");
  }
  if (sizes.front() < 2) {
    throw ConfigError("input layer must be 1 + d with d >= 1");
  }
  if (sizes.back() != 1) throw ConfigError("output layer must have size 1");
}

/// Glorot-uniform weights, zero biases. Layer k draws from its own stream
/// keyed by (seed, k), so results depend only on the seed.
inline NetParams init_params(const std::vector<std::size_t>& layer_sizes,
                             Activation activation, std::uint64_t seed) {
  validate_layer_sizes(layer_sizes);
  NetParams p;
  p.layer_sizes = layer_sizes;
  p.activation = activation;
  for (std::size_t k = 0; k + 1 < layer_sizes.size(); ++k) {
    const std::size_t fan_in = layer_sizes[k];
    const std::size_t fan_out = layer_sizes[k + 1];
    const double bound =
        std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    CounterRng rng(stream_key(seed, 0x696e6974ULL, k));
    Tensor w(fan_in, fan_out);
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(1, fan_out);
  }
  return p;
}

/// Network parameters lifted into Vars, either as tape leaves (training) or
/// as untracked constants (inference).
struct NetVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
  Activation activation = Activation::Sine;
  InputScaling scaling;
  std::size_t dim = 0;
};

inline NetVars bind(Tape& tape, const NetParams& p) {
  p.check_shapes();
  NetVars v;
  v.activation = p.activation;
  v.scaling = p.scaling;
  v.dim = p.dim();
  for (std::size_t k = 0; k < p.layers(); ++k) {
    v.weights.push_back(tape.leaf(p.weights[k]));
    v.biases.push_back(tape.leaf(p.biases[k]));
  }
  return v;
}

inline NetVars freeze(const NetParams& p) {
  p.check_shapes();
  NetVars v;
  v.activation = p.activation;
  v.scaling = p.scaling;
  v.dim = p.dim();
  for (std::size_t k = 0; k < p.layers(); ++k) {
    v.weights.push_back(constant(p.weights[k]));
    v.biases.push_back(constant(p.biases[k]));
  }
  return v;
}

/// Parameter gradients with the same layout as NetParams.
struct ParamGrads {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

inline ParamGrads gather(const NetVars& net, const Gradients& g) {
  ParamGrads out;
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    out.weights.push_back(g[net.weights[k]]);
    out.biases.push_back(g[net.biases[k]]);
  }
  return out;
}

namespace detail {

inline void check_inputs(const NetVars& net, const Var& t, const Var& x) {
  if (t.cols() != 1 || t.rows() != x.rows() || x.cols() != net.dim) {
    throw ShapeError("network input: t " + t.value().shape_string() +
                     ", x " + x.value().shape_string() + " for d = " +
                     std::to_string(net.dim));
  }
}

inline Var network_input(const NetVars& net, const Var& t, const Var& x) {
  const InputScaling& s = net.scaling;
  Var ts = t;
  Var xs = x;
  if (s.t_shift != 0.0) ts = add_scalar(ts, -s.t_shift);
  if (s.t_scale != 1.0) ts = scale(ts, s.t_scale);
  if (s.x_shift != 0.0) xs = add_scalar(xs, -s.x_shift);
  if (s.x_scale != 1.0) xs = scale(xs, s.x_scale);
  return concat_cols(ts, xs);
}

}  // namespace detail

/// u(t, x) for a batch: t is M x 1, x is M x d, result M x 1.
inline Var forward_u(const NetVars& net, const Var& t, const Var& x) {
  detail::check_inputs(net, t, x);
  Var h = detail::network_input(net, t, x);
  const std::size_t last = net.weights.size() - 1;
  for (std::size_t k = 0; k < last; ++k) {
    h = activate(add_row(matmul(h, net.weights[k]), net.biases[k]),
                 net.activation);
  }
  return add_row(matmul(h, net.weights[last]), net.biases[last]);
}

struct NetGraphOutput {
  Var u;   // M x 1
  Var du;  // M x d
};

/// u and its spatial gradient Du in one pass.
///
/// The input Jacobian of each sample is a d x width block; the blocks of all
/// M samples are stacked into an (M*d) x width matrix J. The first layer
/// seeds J with the spatial rows of W0, and each hidden layer applies
/// J <- (J W) * act'(z) with act'(z) repeated over the d rows of its sample.
/// Everything is recorded on the tape, so the loss may depend on du.
inline NetGraphOutput forward_u_grad(const NetVars& net, const Var& t,
                                     const Var& x) {
  detail::check_inputs(net, t, x);
  const std::size_t m = x.rows();
  const std::size_t d = net.dim;
  const std::size_t last = net.weights.size() - 1;

  Var h = detail::network_input(net, t, x);
  Var jac_seed = slice_rows(net.weights[0], 1, d);
  if (net.scaling.x_scale != 1.0) {
    jac_seed = scale(jac_seed, net.scaling.x_scale);
  }
  if (last == 0) {
    Var u = add_row(matmul(h, net.weights[0]), net.biases[0]);
    return {u, tile_rows(reshape(jac_seed, 1, d), m)};
  }

  Var z = add_row(matmul(h, net.weights[0]), net.biases[0]);
  Var jac = hadamard(tile_rows(jac_seed, m),
                     repeat_rows(activate_grad(z, net.activation), d));
  h = activate(z, net.activation);
  for (std::size_t k = 1; k < last; ++k) {
    z = add_row(matmul(h, net.weights[k]), net.biases[k]);
    jac = hadamard(matmul(jac, net.weights[k]),
                   repeat_rows(activate_grad(z, net.activation), d));
    h = activate(z, net.activation);
  }
  Var u = add_row(matmul(h, net.weights[last]), net.biases[last]);
  Var du = reshape(matmul(jac, net.weights[last]), m, d);
  return {u, du};
}

/// Plain-tensor results for inference.
struct NetOutput {
  Tensor u;
  Tensor du;
};

inline Tensor forward_u(const NetParams& p, const Tensor& t, const Tensor& x) {
  return forward_u(freeze(p), constant(t), constant(x)).value();
}

inline NetOutput forward_u_grad(const NetParams& p, const Tensor& t,
                                const Tensor& x) {
  auto out = forward_u_grad(freeze(p), constant(t), constant(x));
  return {out.u.value(), out.du.value()};
}

}  // namespace fbsnn
