// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fbsnn/errors.hpp"
#include "fbsnn/net.hpp"
#include "fbsnn/tensor.hpp"

namespace fbsnn {

/// Adam moment estimates, one pair per parameter tensor in NetParams::flat()
/// order.
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  static AdamState zeros_like(const NetParams& p) {
    AdamState s;
    for (const Tensor* t : p.flat()) {
      s.first_moment.emplace_back(t->rows(), t->cols());
      s.second_moment.emplace_back(t->rows(), t->cols());
    }
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamUpdate {
  NetParams params;
  AdamState state;
};

/// One bias-corrected Adam step. Pure: inputs are left untouched.
inline AdamUpdate adam_step(const NetParams& params, const ParamGrads& grads,
                            const AdamState& state, double lr) {
  const std::size_t layers = params.weights.size();
  if (grads.weights.size() != layers || grads.biases.size() != layers) {
    throw ContractError("adam_step: gradients cover " +
                        std::to_string(grads.weights.size()) + " of " +
                        std::to_string(layers) + " layers");
  }
  if (state.first_moment.size() != 2 * layers ||
      state.second_moment.size() != 2 * layers) {
    throw ContractError("adam_step: optimizer state does not match network");
  }

  AdamUpdate out{params, state};
  out.state.step = state.step + 1;
  const double t = static_cast<double>(out.state.step);
  const double c1 = 1.0 - std::pow(AdamState::beta1, t);
  const double c2 = 1.0 - std::pow(AdamState::beta2, t);

  std::vector<Tensor*> p = out.params.flat();
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Tensor& g = k % 2 == 0 ? grads.weights[k / 2] : grads.biases[k / 2];
    if (!g.same_shape(*p[k])) {
      throw ContractError("adam_step: gradient " + std::to_string(k) + " is " +
                          g.shape_string() + ", parameter is " +
                          p[k]->shape_string());
    }
    Tensor& m = out.state.first_moment[k];
    Tensor& v = out.state.second_moment[k];
    double* pv = p[k]->data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g.data()[i];
      m.data()[i] = AdamState::beta1 * m.data()[i] + (1.0 - AdamState::beta1) * gi;
      v.data()[i] =
          AdamState::beta2 * v.data()[i] + (1.0 - AdamState::beta2) * gi * gi;
      const double m_hat = m.data()[i] / c1;
      const double v_hat = v.data()[i] / c2;
      pv[i] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::epsilon);
    }
  }
  return out;
}

}  // namespace fbsnn
