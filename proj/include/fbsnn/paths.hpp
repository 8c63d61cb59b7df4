// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fbsnn/errors.hpp"
#include "fbsnn/net.hpp"
#include "fbsnn/problems.hpp"
#include "fbsnn/random.hpp"
#include "fbsnn/tape.hpp"
#include "fbsnn/tensor.hpp"

namespace fbsnn {

/// Time points t_0 = 0 < ... < t_N = T and their step sizes.
struct TimeGrid {
  std::size_t steps = 0;
  double horizon = 0.0;
  std::vector<double> t;   // N + 1
  std::vector<double> dt;  // N
};

inline TimeGrid uniform_grid(double horizon, std::size_t steps) {
  if (steps < 1) throw ConfigError("time grid needs at least one step");
  if (!(horizon > 0.0)) throw ConfigError("time grid horizon must be > 0");
  TimeGrid g{steps, horizon, {}, {}};
  const double h = horizon / static_cast<double>(steps);
  g.t.resize(steps + 1);
  for (std::size_t n = 0; n <= steps; ++n) {
    g.t[n] = static_cast<double>(n) * h;
  }
  g.t[steps] = horizon;
  g.dt.assign(steps, h);
  return g;
}

/// Brownian increments for M paths over N steps in d dimensions, stored as
/// one M x d tensor per step.
struct BrownianBatch {
  std::size_t samples = 0;
  std::size_t steps = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::vector<Tensor> dw;

  double at(std::size_t m, std::size_t n, std::size_t i) const {
    return dw[n](m, i);
  }

  /// Rows [begin, begin + count) of every step.
  BrownianBatch block(std::size_t begin, std::size_t count) const {
    if (begin + count > samples) {
      throw ContractError("Brownian block exceeds batch");
    }
    BrownianBatch out{count, steps, dim, seed, {}};
    for (const auto& step : dw) {
      out.dw.emplace_back(Matrix(step.mat().middleRows(
          static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count))));
    }
    return out;
  }
};

/// I.i.d. N(0, dt) increments. The d draws of path m at step n come from a
/// stream keyed by (seed, m, n).
inline BrownianBatch sample_brownian(std::size_t samples, std::size_t steps,
                                     std::size_t dim, double dt,
                                     std::uint64_t seed) {
  if (samples < 1 || steps < 1 || dim < 1) {
    throw ContractError("sample_brownian: counts must be >= 1");
  }
  if (!(dt > 0.0)) throw ContractError("sample_brownian: dt must be > 0");
  const double sd = std::sqrt(dt);
  BrownianBatch b{samples, steps, dim, seed, {}};
  b.dw.assign(steps, Tensor(samples, dim));
  for (std::size_t m = 0; m < samples; ++m) {
    for (std::size_t n = 0; n < steps; ++n) {
      CounterRng rng(stream_key(seed, m, n));
      for (std::size_t i = 0; i < dim; ++i) b.dw[n](m, i) = sd * rng.normal();
    }
  }
  return b;
}

inline BrownianBatch sample_brownian(std::size_t samples, const TimeGrid& grid,
                                     std::size_t dim, std::uint64_t seed) {
  return sample_brownian(samples, grid.steps, dim, grid.dt.front(), seed);
}

/// One coupled Euler-Maruyama rollout. x, y, z hold N + 1 entries; sigma_dw
/// holds sigma(t_n, X_n, Y_n) dW_n for the N steps.
struct TrajectoryBatch {
  TimeGrid grid;
  std::vector<Var> x;  // M x d each
  std::vector<Var> y;  // M x 1 each
  std::vector<Var> z;  // M x d each
  std::vector<Var> sigma_dw;
  std::shared_ptr<const BrownianBatch> dw;

  std::size_t samples() const { return x.empty() ? 0 : x.front().rows(); }
};

namespace detail {

inline void guard_finite(const Var& v, std::size_t step, const char* what) {
  if (!v.value().all_finite()) {
    throw DivergenceError(step, std::string("non-finite ") + what +
                                    " at step " + std::to_string(step));
  }
}

}  // namespace detail

/// X^0 = xi; for each step evaluate (Y^n, Z^n) = (u, Du)(t^n, X^n) and
/// advance X^{n+1} = X^n + mu dt + sigma dW. The rollout is recorded on the
/// tape of `net` (if any), so gradients flow through the X recursion when
/// mu or sigma depend on Y or Z.
inline TrajectoryBatch roll_forward(const NetVars& net, const ProblemSpec& prob,
                                    std::shared_ptr<const BrownianBatch> dw,
                                    const TimeGrid& grid) {
  if (net.dim != prob.dim || dw->dim != prob.dim) {
    throw ShapeError("roll_forward: network d = " + std::to_string(net.dim) +
                     ", problem d = " + std::to_string(prob.dim) +
                     ", increments d = " + std::to_string(dw->dim));
  }
  if (dw->steps != grid.steps) {
    throw ShapeError("roll_forward: increments have " +
                     std::to_string(dw->steps) + " steps, grid has " +
                     std::to_string(grid.steps));
  }
  const std::size_t m = dw->samples;
  const std::size_t n_steps = grid.steps;

  TrajectoryBatch tr;
  tr.grid = grid;
  tr.dw = dw;
  tr.x.reserve(n_steps + 1);
  tr.y.reserve(n_steps + 1);
  tr.z.reserve(n_steps + 1);
  tr.sigma_dw.reserve(n_steps);

  tr.x.push_back(constant(Tensor(Matrix(prob.xi.mat().replicate(
      static_cast<Eigen::Index>(m), 1)))));
  for (std::size_t n = 0;; ++n) {
    const Var& x = tr.x.back();
    auto out = forward_u_grad(net, constant(Tensor(m, 1, grid.t[n])), x);
    detail::guard_finite(out.u, n, "Y");
    detail::guard_finite(out.du, n, "Z");
    tr.y.push_back(out.u);
    tr.z.push_back(out.du);
    if (n == n_steps) break;

    Var sdw = prob.diffusion(grid.t[n], x, out.u).apply(constant(dw->dw[n]));
    Var next = x;
    if (prob.drift) {
      next = add(next, scale(prob.drift(grid.t[n], x, out.u, out.du),
                             grid.dt[n]));
    }
    next = add(next, sdw);
    detail::guard_finite(next, n + 1, "X");
    tr.sigma_dw.push_back(std::move(sdw));
    tr.x.push_back(std::move(next));
  }
  return tr;
}

/// Inference rollout with untracked parameters.
inline TrajectoryBatch roll_forward(const NetParams& net,
                                    const ProblemSpec& prob,
                                    std::shared_ptr<const BrownianBatch> dw,
                                    const TimeGrid& grid) {
  return roll_forward(freeze(net), prob, std::move(dw), grid);
}

}  // namespace fbsnn
