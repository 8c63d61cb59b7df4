// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "fbsnn/evaluation.hpp"
#include "oracles.hpp"

namespace fbsnn {
namespace {

ReferenceValues exact_only(std::vector<Tensor> values) {
  ReferenceValues r;
  r.std_errors.resize(values.size());
  r.values = std::move(values);
  return r;
}

TEST(ErrorCurves, HandArithmeticWithPopulationStd) {
  // |pred - ref| / |ref| = 0.01 and 0.03.
  const std::vector<Tensor> pred{Tensor::from_rows({{1.01}, {2.06}})};
  const ReferenceValues ref = exact_only({Tensor::from_rows({{1.0}, {2.0}})});
  const ErrorCurves c = error_curves({0.0}, pred, ref);
  EXPECT_NEAR(c.mean_rel_err[0], 0.02, 1e-12);
  EXPECT_NEAR(c.mean_plus_2std[0], 0.04, 1e-12);
  EXPECT_EQ(c.paths, 2u);
}

TEST(ErrorCurves, ExactAgainstItselfIsZero) {
  const ProblemSpec p = make_bsb(4);
  const NetParams net = init_params({5, 8, 1}, Activation::Sine, 1);
  const TrajectoryBatch tr = predict_trajectories(net, p, 6, 5, 11);
  const ReferenceValues ref = reference_along(tr, p);
  const ErrorCurves c = error_curves(tr.grid.t, ref.values, ref);
  ASSERT_EQ(c.times.size(), 6u);
  for (std::size_t n = 0; n < 6; ++n) {
    EXPECT_EQ(c.mean_rel_err[n], 0.0);
    EXPECT_EQ(c.mean_plus_2std[n], 0.0);
  }
}

TEST(ErrorCurves, DoubledPredictorHasUnitError) {
  const ProblemSpec p = make_bsb(2);
  const TrajectoryBatch tr = predict_trajectories(init_params({3, 1}, Activation::Sine, 1), p, 5, 4, 2);
  const ReferenceValues ref = reference_along(tr, p);
  std::vector<Tensor> doubled;
  for (const Tensor& v : ref.values) doubled.emplace_back(Matrix(2.0 * v.mat()));
  const ErrorCurves c = error_curves(tr.grid.t, doubled, ref);
  for (std::size_t n = 0; n < c.times.size(); ++n) {
    EXPECT_NEAR(c.mean_rel_err[n], 1.0, 1e-15);
    EXPECT_NEAR(c.mean_plus_2std[n], 1.0, 1e-7);
  }
}

TEST(ErrorCurves, SinglePathHasZeroSpread) {
  const ProblemSpec p = make_bsb(2);
  const NetParams net = init_params({3, 6, 1}, Activation::Sine, 4);
  const ErrorCurves c = relative_error_curves(predict_trajectories(net, p, 1, 6, 3), p);
  for (std::size_t n = 0; n < c.times.size(); ++n) {
    EXPECT_EQ(c.mean_plus_2std[n], c.mean_rel_err[n]);
  }
}

TEST(ErrorCurves, NonNegativeAndOrdered) {
  const ProblemSpec p = make_bsb(4);
  const NetParams net = init_params({5, 8, 8, 1}, Activation::Tanh, 5);
  const ErrorCurves c = relative_error_curves(predict_trajectories(net, p, 20, 8, 3), p);
  for (std::size_t n = 0; n < c.times.size(); ++n) {
    EXPECT_GE(c.mean_rel_err[n], 0.0);
    EXPECT_GE(c.mean_plus_2std[n], c.mean_rel_err[n]);
  }
}

TEST(ErrorCurves, InvariantUnderPathPermutation) {
  CounterRng rng(8);
  const Tensor pred = testing::random_tensor(5, 1, rng, 1, 2);
  const Tensor ref = testing::random_tensor(5, 1, rng, 1, 2);
  const std::vector<std::size_t> perm{2, 4, 0, 1, 3};
  Tensor pred_p(5, 1), ref_p(5, 1);
  for (std::size_t m = 0; m < 5; ++m) {
    pred_p(m, 0) = pred(perm[m], 0);
    ref_p(m, 0) = ref(perm[m], 0);
  }
  const ErrorCurves a = error_curves({0.0}, {pred}, exact_only({ref}));
  const ErrorCurves b = error_curves({0.0}, {pred_p}, exact_only({ref_p}));
  EXPECT_NEAR(a.mean_rel_err[0], b.mean_rel_err[0], 1e-15);
  EXPECT_NEAR(a.mean_plus_2std[0], b.mean_plus_2std[0], 1e-15);
}

TEST(ErrorCurves, FloorGuardsZeroReference) {
  const ErrorCurves c = error_curves({0.0}, {Tensor(1, 1, 1e-13)}, exact_only({Tensor(1, 1)}));
  EXPECT_NEAR(c.mean_rel_err[0], 0.1, 1e-12);
}

TEST(ErrorCurves, StatisticalTiesAreFlaggedNotCounted) {
  ReferenceValues ref;
  ref.values = {Tensor::from_rows({{1.0}, {1.0}})};
  ref.std_errors = {Tensor::from_rows({{0.01}, {0.01}})};
  // 0.02 < 3 * 0.01 is a tie; 0.5 is a genuine error.
  const ErrorCurves c = error_curves({0.0}, {Tensor::from_rows({{1.02}, {1.5}})}, ref);
  EXPECT_EQ(c.indistinguishable[0], 1u);
  EXPECT_NEAR(c.mean_rel_err[0], 0.25, 1e-12);
}

TEST(ErrorCurves, HjbReferenceCarriesStandardErrors) {
  const ProblemSpec p = make_hjb(3, 2000);
  const TrajectoryBatch tr = predict_trajectories(init_params({4, 6, 1}, Activation::Sine, 1), p, 3, 4, 5);
  const ReferenceValues ref = reference_along(tr, p);
  for (std::size_t n = 0; n + 1 < ref.values.size(); ++n) {
    ASSERT_TRUE(ref.std_errors[n].has_value());
    for (std::size_t m = 0; m < 3; ++m) EXPECT_GT((*ref.std_errors[n])(m, 0), 0.0);
  }
  // The oracle against itself: every point ties.
  const ErrorCurves c = error_curves(tr.grid.t, ref.values, ref);
  for (std::size_t n = 0; n + 1 < c.times.size(); ++n) EXPECT_EQ(c.indistinguishable[n], 3u);
}

TEST(ErrorCurves, MissingOracleIsCapabilityError) {
  const ProblemSpec p = make_ac(2);
  const TrajectoryBatch tr = predict_trajectories(init_params({3, 1}, Activation::Sine, 1), p, 2, 3, 1);
  EXPECT_THROW(relative_error_curves(tr, p), CapabilityError);
}

TEST(PredictTrajectories, SameSeedIsIdentical) {
  const ProblemSpec p = make_hjb(2, 10);
  const NetParams net = init_params({3, 6, 1}, Activation::Sine, 1);
  const auto a = predict_trajectories(net, p, 4, 5, 99);
  const auto b = predict_trajectories(net, p, 4, 5, 99);
  for (std::size_t n = 0; n <= 5; ++n) {
    EXPECT_EQ(a.x[n].value(), b.x[n].value());
    EXPECT_EQ(a.y[n].value(), b.y[n].value());
  }
  EXPECT_FALSE(a.y[0].tracked());
}

TEST(PredictTrajectories, FrozenDynamicsStayAtStart) {
  ProblemSpec p = make_bsb(2);
  p.xi = Tensor(1, 2);  // sigma = 0.4 diag(X) vanishes at the origin
  const auto tr = predict_trajectories(init_params({3, 4, 1}, Activation::Sine, 1), p, 3, 4, 1);
  for (const Var& x : tr.x) EXPECT_EQ(x.value(), Tensor(3, 2));
}

TEST(Y0Summary, BsbReference) {
  const Y0Summary s = y0_summary(init_params({101, 8, 1}, Activation::Sine, 1), make_bsb(100));
  ASSERT_TRUE(s.y0_ref.has_value());
  EXPECT_NEAR(*s.y0_ref, 77.1049, 1e-4);
  EXPECT_FALSE(s.ref_std_error.has_value());
}

TEST(Y0Summary, AllenCahnReferenceAndZeroNetwork) {
  // xi = 0 and t = 0 make every pre-activation zero, and sin(0) = 0.
  const Y0Summary s = y0_summary(init_params({21, 16, 16, 1}, Activation::Sine, 3), make_ac(20));
  EXPECT_EQ(s.y0_pred, 0.0);
  ASSERT_TRUE(s.y0_ref.has_value());
  EXPECT_EQ(*s.y0_ref, 0.30879);
  EXPECT_EQ(*s.rel_err, 1.0);
}

TEST(Y0Summary, NoReferenceMeansNoError) {
  const Y0Summary s = y0_summary(init_params({4, 1}, Activation::Sine, 1), make_ac(3));
  EXPECT_FALSE(s.y0_ref.has_value());
  EXPECT_FALSE(s.rel_err.has_value());
}

TEST(Y0Summary, HjbReferenceHasStandardError) {
  const Y0Summary s = y0_summary(init_params({3, 4, 1}, Activation::Sine, 1), make_hjb(2, 5000));
  ASSERT_TRUE(s.ref_std_error.has_value());
  EXPECT_GT(*s.ref_std_error, 0.0);
}

}  // namespace
}  // namespace fbsnn
