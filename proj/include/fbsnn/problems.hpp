// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fbsnn/errors.hpp"
#include "fbsnn/random.hpp"
#include "fbsnn/tape.hpp"
#include "fbsnn/tensor.hpp"

namespace fbsnn {

/// Per-sample diffusion matrices sigma(t, X, Y), stored in the cheapest
/// form that represents them.
struct Diffusion {
  enum class Kind : std::uint8_t { Isotropic, Diagonal, Full };

  Kind kind = Kind::Isotropic;
  double scale = 1.0;  // Isotropic: sigma = scale * I
  Var values;          // Diagonal: M x d, Full: M x (d*d) row-major

  static Diffusion isotropic(double s) { return {Kind::Isotropic, s, {}}; }
  static Diffusion diagonal(Var diag) {
    return {Kind::Diagonal, 1.0, std::move(diag)};
  }
  static Diffusion full(Var mats) { return {Kind::Full, 1.0, std::move(mats)}; }

  /// sigma * dW for each sample, M x d.
  Var apply(const Var& dw) const {
    switch (kind) {
      case Kind::Isotropic:
        return scale == 1.0 ? dw : fbsnn::scale(dw, scale);
      case Kind::Diagonal:
        return hadamard(values, dw);
      case Kind::Full:
        return batched_matvec(values, dw);
    }
    throw ContractError("unknown diffusion kind");
  }

  /// Dense d x d matrix of one sample.
  Tensor matrix(std::size_t sample, std::size_t d) const {
    Tensor out(d, d);
    switch (kind) {
      case Kind::Isotropic:
        for (std::size_t i = 0; i < d; ++i) out(i, i) = scale;
        break;
      case Kind::Diagonal:
        for (std::size_t i = 0; i < d; ++i) out(i, i) = values.value()(sample, i);
        break;
      case Kind::Full:
        for (std::size_t i = 0; i < d; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            out(i, j) = values.value()(sample, i * d + j);
          }
        }
        break;
    }
    return out;
  }
};

/// Exact solution values, with Monte-Carlo standard errors when the oracle
/// is statistical.
struct ExactValue {
  Tensor value;                  // M x 1
  std::optional<Tensor> std_error;  // M x 1
};

using DriftFn = std::function<Var(double t, const Var& x, const Var& y, const Var& z)>;
using DiffusionFn = std::function<Diffusion(double t, const Var& x, const Var& y)>;
using GeneratorFn = std::function<Var(double t, const Var& x, const Var& y, const Var& z)>;
using TerminalFn = std::function<Var(const Var& x)>;
using ExactFn = std::function<ExactValue(double t, const Tensor& x)>;

/// A coupled forward-backward SDE
///   dX = mu(t,X,Y,Z) dt + sigma(t,X,Y) dW,  X_0 = xi
///   dY = phi(t,X,Y,Z) dt + Z' sigma(t,X,Y) dW,  Y_T = g(X_T).
/// An empty `drift` means mu = 0; an empty `exact` means no oracle.
struct ProblemSpec {
  std::string name;
  std::size_t dim = 0;
  double horizon = 1.0;
  Tensor xi;  // 1 x d
  DriftFn drift;
  DiffusionFn diffusion;
  GeneratorFn generator;
  TerminalFn terminal;
  ExactFn exact;
  std::optional<double> reference_y0;

  bool has_exact() const { return static_cast<bool>(exact); }

  void validate() const {
    if (dim < 1) throw ConfigError(name + ": dimension must be >= 1");
    if (!(horizon > 0.0)) throw ConfigError(name + ": horizon must be > 0");
    if (xi.rows() != 1 || xi.cols() != dim) {
      throw ShapeError(name + ": start point is " + xi.shape_string() +
                       ", expected 1x" + std::to_string(dim));
    }
    if (!diffusion || !generator || !terminal) {
      throw ConfigError(name + ": diffusion, generator and terminal required");
    }
  }
};

namespace detail {

inline Var squared_norm(const Var& x) { return row_sum(hadamard(x, x)); }

inline void check_time(double t, double horizon) {
  if (!(t >= 0.0 && t <= horizon)) {
    throw DomainError("time " + std::to_string(t) + " outside [0, " +
                      std::to_string(horizon) + "]");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Black-Scholes-Barenblatt

struct BsbConstants {
  static constexpr double horizon = 1.0;
  static constexpr double volatility = 0.4;
  static constexpr double rate = 0.05;
};

/// u(t, x) = exp((r + sigma^2)(T - t)) * |x|^2, rowwise.
inline Tensor bsb_exact(double t, const Tensor& x) {
  using C = BsbConstants;
  detail::check_time(t, C::horizon);
  const double growth =
      std::exp((C::rate + C::volatility * C::volatility) * (C::horizon - t));
  Tensor out(Matrix(x.mat().rowwise().squaredNorm()));
  out.mat() *= growth;
  return out;
}

inline ProblemSpec make_bsb(std::size_t d) {
  using C = BsbConstants;
  if (d < 2 || d % 2 != 0) {
    throw ConfigError("bsb: dimension must be even and >= 2, got " +
                      std::to_string(d));
  }
  ProblemSpec p;
  p.name = "bsb";
  p.dim = d;
  p.horizon = C::horizon;
  p.xi = Tensor(1, d);
  for (std::size_t i = 0; i < d; ++i) p.xi(0, i) = i % 2 == 0 ? 1.0 : 0.5;
  p.diffusion = [](double, const Var& x, const Var&) {
    return Diffusion::diagonal(scale(x, C::volatility));
  };
  p.generator = [](double, const Var& x, const Var& y, const Var& z) {
    return scale(sub(y, row_sum(hadamard(z, x))), C::rate);
  };
  p.terminal = [](const Var& x) { return detail::squared_norm(x); };
  p.exact = [](double t, const Tensor& x) {
    return ExactValue{bsb_exact(t, x), std::nullopt};
  };
  return p;
}

// ---------------------------------------------------------------------------
// Hamilton-Jacobi-Bellman

struct HjbConstants {
  static constexpr double horizon = 1.0;
  static constexpr double volatility = 1.4142135623730951;  // sqrt(2)
};

/// Monte-Carlo estimate of -ln E[exp(-g(x + s * W_tau))] with its
/// delta-method standard error.
struct McEstimate {
  Tensor value;   // M x 1
  Tensor std_error;  // M x 1
};

/// Evaluates -ln E[exp(-g(x + noise_scale * W_{horizon - t}))] row by row.
/// Row r draws from a stream keyed by (seed, bits of t, r), so a query is
/// reproducible without storing samples. Log-sum-exp keeps the mean stable.
inline McEstimate log_expectation_mc(const TerminalFn& g, double t,
                                     const Tensor& x, double horizon,
                                     double noise_scale, std::size_t samples,
                                     std::uint64_t seed) {
  if (samples < 1) throw ContractError("Monte-Carlo needs at least 1 sample");
  if (t > horizon) {
    throw DomainError("time " + std::to_string(t) + " beyond horizon " +
                      std::to_string(horizon));
  }
  if (t < 0.0) throw DomainError("negative time " + std::to_string(t));

  const std::size_t d = x.cols();
  const double tau = horizon - t;
  const double step = noise_scale * std::sqrt(tau);
  McEstimate out{Tensor(x.rows(), 1), Tensor(x.rows(), 1)};
  if (tau == 0.0) {
    out.value = g(constant(x)).value();
    return out;
  }

  constexpr std::size_t kChunk = 4096;
  std::vector<double> neg_g(samples);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    CounterRng rng(stream_key(seed, std::bit_cast<std::uint64_t>(t), r));
    for (std::size_t begin = 0; begin < samples; begin += kChunk) {
      const std::size_t n = std::min(kChunk, samples - begin);
      Tensor pts(n, d);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t i = 0; i < d; ++i) {
          pts(s, i) = x(r, i) + step * rng.normal();
        }
      }
      const Tensor gv = g(constant(std::move(pts))).value();
      for (std::size_t s = 0; s < n; ++s) neg_g[begin + s] = -gv(s, 0);
    }
    const double shift = *std::max_element(neg_g.begin(), neg_g.end());
    double mean = 0.0;
    for (double v : neg_g) mean += std::exp(v - shift);
    mean /= static_cast<double>(samples);
    double var = 0.0;
    for (double v : neg_g) {
      const double e = std::exp(v - shift) - mean;
      var += e * e;
    }
    var = samples > 1 ? var / static_cast<double>(samples - 1) : 0.0;
    out.value(r, 0) = -(shift + std::log(mean));
    out.std_error(r, 0) = std::sqrt(var / static_cast<double>(samples)) / mean;
  }
  return out;
}

inline Var hjb_terminal(const Var& x) {
  return log(scale(add_scalar(detail::squared_norm(x), 1.0), 0.5));
}

inline McEstimate hjb_exact_mc(double t, const Tensor& x, std::size_t samples,
                               std::uint64_t seed) {
  return log_expectation_mc(hjb_terminal, t, x, HjbConstants::horizon,
                            HjbConstants::volatility, samples, seed);
}

inline ProblemSpec make_hjb(std::size_t d, std::size_t oracle_samples = 10000,
                            std::uint64_t oracle_seed = 0x48a7b3c1ULL) {
  using C = HjbConstants;
  if (d < 1) throw ConfigError("hjb: dimension must be >= 1");
  ProblemSpec p;
  p.name = "hjb";
  p.dim = d;
  p.horizon = C::horizon;
  p.xi = Tensor(1, d);
  p.diffusion = [](double, const Var&, const Var&) {
    return Diffusion::isotropic(C::volatility);
  };
  p.generator = [](double, const Var&, const Var&, const Var& z) {
    return detail::squared_norm(z);
  };
  p.terminal = hjb_terminal;
  p.exact = [oracle_samples, oracle_seed](double t, const Tensor& x) {
    auto mc = hjb_exact_mc(t, x, oracle_samples, oracle_seed);
    return ExactValue{std::move(mc.value), std::move(mc.std_error)};
  };
  return p;
}

// ---------------------------------------------------------------------------
// Allen-Cahn

struct AcConstants {
  static constexpr double horizon = 0.3;
  static constexpr std::size_t reference_dim = 20;
  static constexpr double reference_y0 = 0.30879;
};

inline ProblemSpec make_ac(std::size_t d) {
  using C = AcConstants;
  if (d < 1) throw ConfigError("ac: dimension must be >= 1");
  ProblemSpec p;
  p.name = "ac";
  p.dim = d;
  p.horizon = C::horizon;
  p.xi = Tensor(1, d);
  p.diffusion = [](double, const Var&, const Var&) {
    return Diffusion::isotropic(1.0);
  };
  p.generator = [](double, const Var&, const Var& y, const Var&) {
    return sub(hadamard(y, hadamard(y, y)), y);
  };
  p.terminal = [](const Var& x) {
    return reciprocal(add_scalar(scale(detail::squared_norm(x), 0.4), 2.0));
  };
  if (d == C::reference_dim) p.reference_y0 = C::reference_y0;
  return p;
}

/// Built-in problem by CLI name: "bsb", "hjb" or "ac".
inline ProblemSpec make_problem(const std::string& name, std::size_t d,
                                std::size_t oracle_samples = 10000) {
  if (name == "bsb") return make_bsb(d);
  if (name == "hjb") return make_hjb(d, oracle_samples);
  if (name == "ac") return make_ac(d);
  throw ConfigError("unknown problem '" + name + "' (expected bsb, hjb or ac)");
}

}  // namespace fbsnn
