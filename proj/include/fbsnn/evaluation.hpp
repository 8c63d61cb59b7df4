// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "fbsnn/errors.hpp"
#include "fbsnn/net.hpp"
#include "fbsnn/paths.hpp"
#include "fbsnn/problems.hpp"
#include "fbsnn/tensor.hpp"

namespace fbsnn {

/// Per-time statistics of pointwise relative errors across test paths.
struct ErrorCurves {
  std::vector<double> times;
  std::vector<double> mean_rel_err;
  std::vector<double> mean_plus_2std;
  /// Points whose absolute error is within 3 Monte-Carlo standard errors of
  /// the reference; those count as zero error.
  std::vector<std::size_t> indistinguishable;
  std::size_t paths = 0;
};

inline constexpr double kRelativeErrorFloor = 1e-12;
inline constexpr double kIndistinguishableSigmas = 3.0;

/// Fresh rollout with untracked parameters on increments keyed by `seed`.
inline TrajectoryBatch predict_trajectories(const NetParams& net,
                                            const ProblemSpec& prob,
                                            std::size_t paths,
                                            std::size_t steps,
                                            std::uint64_t seed) {
  const TimeGrid grid = uniform_grid(prob.horizon, steps);
  auto dw = std::make_shared<const BrownianBatch>(
      sample_brownian(paths, grid, prob.dim, seed));
  return roll_forward(net, prob, std::move(dw), grid);
}

/// Reference solution along every path: values[n] and (for statistical
/// oracles) std_errors[n] are M x 1.
struct ReferenceValues {
  std::vector<Tensor> values;
  std::vector<std::optional<Tensor>> std_errors;
};

inline ReferenceValues reference_along(const TrajectoryBatch& tr,
                                       const ProblemSpec& prob) {
  if (!prob.has_exact()) {
    throw CapabilityError("problem '" + prob.name + "' has no exact solution");
  }
  ReferenceValues ref;
  for (std::size_t n = 0; n < tr.x.size(); ++n) {
    ExactValue e = prob.exact(tr.grid.t[n], tr.x[n].value());
    ref.values.push_back(std::move(e.value));
    ref.std_errors.push_back(std::move(e.std_error));
  }
  return ref;
}

/// Aggregates predicted vs reference values (one M x 1 tensor per time).
/// Standard deviation is the population form.
inline ErrorCurves error_curves(const std::vector<double>& times,
                                const std::vector<Tensor>& predicted,
                                const ReferenceValues& ref,
                                double floor = kRelativeErrorFloor) {
  if (predicted.size() != times.size() || ref.values.size() != times.size()) {
    throw ContractError("error_curves: time dimension mismatch");
  }
  ErrorCurves c;
  c.times = times;
  c.paths = predicted.empty() ? 0 : predicted.front().rows();
  for (std::size_t n = 0; n < times.size(); ++n) {
    const Tensor& y = predicted[n];
    const Tensor& u = ref.values[n];
    if (!y.same_shape(u)) throw ShapeError("error_curves: prediction/reference shape");
    const auto& se = n < ref.std_errors.size() ? ref.std_errors[n] : std::nullopt;
    std::vector<double> e(y.rows());
    std::size_t flagged = 0;
    for (std::size_t m = 0; m < y.rows(); ++m) {
      const double abs_err = std::abs(y(m, 0) - u(m, 0));
      if (se && abs_err < kIndistinguishableSigmas * (*se)(m, 0)) {
        e[m] = 0.0;
        ++flagged;
      } else {
        e[m] = abs_err / std::max(std::abs(u(m, 0)), floor);
      }
    }
    double mean = 0.0;
    for (double v : e) mean += v;
    mean /= static_cast<double>(e.size());
    double var = 0.0;
    for (double v : e) var += (v - mean) * (v - mean);
    var /= static_cast<double>(e.size());
    c.mean_rel_err.push_back(mean);
    c.mean_plus_2std.push_back(mean + 2.0 * std::sqrt(var));
    c.indistinguishable.push_back(flagged);
  }
  return c;
}

inline std::vector<Tensor> predicted_values(const TrajectoryBatch& tr) {
  std::vector<Tensor> out;
  for (const auto& y : tr.y) out.push_back(y.value());
  return out;
}

inline ErrorCurves relative_error_curves(const TrajectoryBatch& tr,
                                         const ProblemSpec& prob) {
  return error_curves(tr.grid.t, predicted_values(tr), reference_along(tr, prob));
}

struct Y0Summary {
  double y0_pred = 0.0;
  std::optional<double> y0_ref;
  std::optional<double> rel_err;
  std::optional<double> ref_std_error;
};

/// Network value at (0, xi) against the exact oracle, or the problem's
/// fixed reference value when there is no oracle.
inline Y0Summary y0_summary(const NetParams& net, const ProblemSpec& prob) {
  Y0Summary s;
  s.y0_pred = forward_u(net, Tensor(1, 1), prob.xi)(0, 0);
  if (prob.has_exact()) {
    ExactValue e = prob.exact(0.0, prob.xi);
    s.y0_ref = e.value(0, 0);
    if (e.std_error) s.ref_std_error = (*e.std_error)(0, 0);
  } else if (prob.reference_y0) {
    s.y0_ref = *prob.reference_y0;
  }
  if (s.y0_ref) {
    s.rel_err = std::abs(s.y0_pred - *s.y0_ref) /
                std::max(std::abs(*s.y0_ref), kRelativeErrorFloor);
  }
  return s;
}

}  // namespace fbsnn
