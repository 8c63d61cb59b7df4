// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fbsnn/tape.hpp"
#include "oracles.hpp"

namespace fbsnn {
namespace {

using testing::central_difference;
using testing::random_tensor;
using testing::scaled_error;

TEST(MatMul, IdentityLeavesOperandUnchanged) {
  CounterRng rng(1);
  const Tensor b = random_tensor(3, 4, rng);
  const Var out = matmul(constant(Tensor::identity(3)), constant(b));
  EXPECT_EQ(out.value(), b);
}

TEST(MatMul, HandComputedProduct) {
  const Var out = matmul(constant(Tensor::from_rows({{1, 2}, {3, 4}})),
                         constant(Tensor::from_rows({{1}, {1}})));
  EXPECT_EQ(out.value(), Tensor::from_rows({{3}, {7}}));
}

TEST(MatMul, ShapeErrorNamesBothShapes) {
  try {
    matmul(constant(Tensor(2, 3)), constant(Tensor(2, 3)));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3 x 2x3"), std::string::npos) << e.what();
  }
}

TEST(Activation, ValuesAtReferencePoints) {
  EXPECT_EQ(activate(constant(Tensor(1, 1, 0.0)), Activation::Tanh).value()(0, 0), 0.0);
  EXPECT_EQ(activate(constant(Tensor(1, 1, 0.0)), Activation::Sine).value()(0, 0), 0.0);
  EXPECT_NEAR(map_activation(constant(Tensor(1, 1, 1.0)), "tanh").value()(0, 0),
              0.7615941559557649, 1e-15);
}

TEST(Activation, UnknownTagIsConfigError) {
  EXPECT_THROW(map_activation(constant(Tensor(1, 1)), "relu"), ConfigError);
}

TEST(Backward, SquareHasDerivativeTwoX) {
  Tape tape;
  Var x = tape.leaf(Tensor(1, 1, 3.0));
  Var loss = hadamard(x, x);
  EXPECT_EQ(tape.backward(loss)[x](0, 0), 6.0);
}

TEST(Backward, ConstantLossGivesZeroGradients) {
  Tape tape;
  Var w = tape.leaf(Tensor(2, 2, 1.5));
  Var loss = sum(constant(Tensor(3, 3, 2.0)));
  const Gradients g = tape.backward(loss);
  EXPECT_EQ(g[w], Tensor(2, 2));
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape tape;
  Var w = tape.leaf(Tensor(2, 2, 1.0));
  EXPECT_THROW(tape.backward(w), ContractError);
}

TEST(Backward, SumTanhMatVecAgainstFiniteDifferences) {
  CounterRng rng(7);
  Tensor w = random_tensor(4, 4, rng);
  const Tensor v = random_tensor(4, 1, rng);
  Tape tape;
  Var wl = tape.leaf(w);
  const Tensor grad =
      tape.backward(sum(activate(matmul(wl, constant(v)), Activation::Tanh)))[wl];
  const Tensor fd = central_difference(w, [&] {
    return sum(activate(matmul(constant(w), constant(v)), Activation::Tanh))
        .value()
        .scalar();
  });
  EXPECT_LT(scaled_error(grad, fd), 1e-6);
}

// Every registered operation against central differences: the output is
// contracted with a fixed random weight so all output entries contribute.
struct OpCase {
  std::string name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::function<Var(const std::vector<Var>&)> build;
  double lo = -1.0;
  double hi = 1.0;
};

double op_gradient_error(const OpCase& c, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<Tensor> inputs;
  for (auto [r, k] : c.shapes) inputs.push_back(random_tensor(r, k, rng, c.lo, c.hi));

  auto evaluate = [&](const std::vector<Var>& in, const Tensor& weight) {
    return sum(hadamard(c.build(in), constant(weight)));
  };
  std::vector<Var> consts;
  for (const auto& t : inputs) consts.push_back(constant(t));
  const Tensor out = c.build(consts).value();
  const Tensor weight = random_tensor(out.rows(), out.cols(), rng);

  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const Gradients g = tape.backward(evaluate(leaves, weight));

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor fd = central_difference(inputs[i], [&] {
      std::vector<Var> in;
      for (const auto& t : inputs) in.push_back(constant(t));
      return evaluate(in, weight).value().scalar();
    });
    worst = std::max(worst, scaled_error(g[leaves[i]], fd));
  }
  return worst;
}

std::vector<OpCase> all_ops() {
  using V = std::vector<Var>;
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](const V& v) { return matmul(v[0], v[1]); }},
      {"add", {{3, 2}, {3, 2}}, [](const V& v) { return add(v[0], v[1]); }},
      {"sub", {{3, 2}, {3, 2}}, [](const V& v) { return sub(v[0], v[1]); }},
      {"hadamard", {{3, 2}, {3, 2}}, [](const V& v) { return hadamard(v[0], v[1]); }},
      {"hadamard_self", {{3, 2}}, [](const V& v) { return hadamard(v[0], v[0]); }},
      {"add_row", {{3, 4}, {1, 4}}, [](const V& v) { return add_row(v[0], v[1]); }},
      {"scale", {{2, 3}}, [](const V& v) { return scale(v[0], -1.7); }},
      {"add_scalar", {{2, 3}}, [](const V& v) { return add_scalar(v[0], 0.3); }},
      {"tanh", {{3, 3}}, [](const V& v) { return activate(v[0], Activation::Tanh); }},
      {"sine", {{3, 3}}, [](const V& v) { return activate(v[0], Activation::Sine); }},
      {"tanh_grad", {{3, 3}},
       [](const V& v) { return activate_grad(v[0], Activation::Tanh); }},
      {"sine_grad", {{3, 3}},
       [](const V& v) { return activate_grad(v[0], Activation::Sine); }},
      {"log", {{2, 3}}, [](const V& v) { return log(v[0]); }, 0.5, 2.0},
      {"exp", {{2, 3}}, [](const V& v) { return exp(v[0]); }},
      {"reciprocal", {{2, 3}}, [](const V& v) { return reciprocal(v[0]); }, 0.5, 2.0},
      {"sum", {{3, 2}}, [](const V& v) { return sum(v[0]); }},
      {"row_sum", {{3, 4}}, [](const V& v) { return row_sum(v[0]); }},
      {"repeat_rows", {{2, 3}}, [](const V& v) { return repeat_rows(v[0], 3); }},
      {"tile_rows", {{2, 3}}, [](const V& v) { return tile_rows(v[0], 4); }},
      {"expand_cols", {{3, 1}}, [](const V& v) { return expand_cols(v[0], 5); }},
      {"reshape", {{2, 6}}, [](const V& v) { return reshape(v[0], 4, 3); }},
      {"concat_cols", {{3, 1}, {3, 2}}, [](const V& v) { return concat_cols(v[0], v[1]); }},
      {"slice_rows", {{5, 2}}, [](const V& v) { return slice_rows(v[0], 1, 3); }},
      {"batched_matvec", {{3, 9}, {3, 3}},
       [](const V& v) { return batched_matvec(v[0], v[1]); }},
  };
}

TEST(Backward, EveryOperationMatchesFiniteDifferences) {
  for (const auto& c : all_ops()) {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
      EXPECT_LT(op_gradient_error(c, seed), 1e-6) << c.name << " seed " << seed;
    }
  }
}

TEST(Backward, IsLinearInTheLoss) {
  CounterRng rng(3);
  const Tensor w0 = random_tensor(3, 3, rng);
  const Tensor v = random_tensor(3, 2, rng);
  const double a = 0.75;
  const double b = -2.5;
  auto f = [&](const Var& w) { return sum(activate(matmul(w, constant(v)), Activation::Sine)); };
  auto g = [&](const Var& w) { return sum(exp(scale(w, 0.5))); };

  Tape t1, t2, t3;
  Var w1 = t1.leaf(w0), w2 = t2.leaf(w0), w3 = t3.leaf(w0);
  const Tensor gf = t1.backward(f(w1))[w1];
  const Tensor gg = t2.backward(g(w2))[w2];
  const Tensor gc = t3.backward(add(scale(f(w3), a), scale(g(w3), b)))[w3];
  const Tensor expected(Matrix(a * gf.mat() + b * gg.mat()));
  EXPECT_LT(max_abs_diff(gc, expected), 1e-13);
}

TEST(Backward, ReplayIsBitIdentical) {
  CounterRng rng(5);
  const Tensor w = random_tensor(6, 6, rng);
  const Tensor x = random_tensor(8, 6, rng);
  Tape tape;
  Var wl = tape.leaf(w);
  Var loss = sum(hadamard(activate(matmul(constant(x), wl), Activation::Tanh),
                          matmul(constant(x), wl)));
  const Tensor first = tape.backward(loss)[wl];
  const Tensor second = tape.backward(loss)[wl];
  EXPECT_EQ(first, second);
}

TEST(Tape, InputsPrecedeConsumers) {
  Tape tape;
  Var a = tape.leaf(Tensor(2, 2, 1.0));
  Var b = add(a, a);
  Var c = matmul(b, a);
  for (NodeId id = 0; id < tape.size(); ++id) {
    for (NodeId in : tape.node(id).inputs) {
      if (in != kNoNode) {
        EXPECT_LT(in, id);
      }
    }
  }
  EXPECT_EQ(c.node(), 2u);
}

TEST(Tape, UntrackedOperandsStayUntracked) {
  Var a = constant(Tensor(2, 2, 1.0));
  Var b = add(a, a);
  EXPECT_FALSE(b.tracked());
}

TEST(Tape, PausedTapeRecordsNothing) {
  Tape tape;
  Var a = tape.leaf(Tensor(2, 2, 1.0));
  tape.set_recording(false);
  Var b = add(a, a);
  EXPECT_FALSE(b.tracked());
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Tape, MixingTapesIsAContractError) {
  Tape t1, t2;
  Var a = t1.leaf(Tensor(1, 1, 1.0));
  Var b = t2.leaf(Tensor(1, 1, 1.0));
  EXPECT_THROW(add(a, b), ContractError);
}

TEST(Broadcast, OnlyRowBiasIsAccepted) {
  EXPECT_THROW(add(constant(Tensor(3, 2)), constant(Tensor(1, 2))), ShapeError);
  EXPECT_THROW(add_row(constant(Tensor(3, 2)), constant(Tensor(1, 3))), ShapeError);
  EXPECT_NO_THROW(add_row(constant(Tensor(3, 2)), constant(Tensor(1, 2))));
}

TEST(Ops, FiniteInputsGiveFiniteOutputs) {
  CounterRng rng(9);
  for (const auto& c : all_ops()) {
    std::vector<Var> in;
    for (auto [r, k] : c.shapes) in.push_back(constant(random_tensor(r, k, rng, c.lo, c.hi)));
    EXPECT_TRUE(c.build(in).value().all_finite()) << c.name;
  }
}

}  // namespace
}  // namespace fbsnn
