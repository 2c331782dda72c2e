/**
 * Copyright 2026 The fedmoe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fedmoe/autodiff.h"
#include "fedmoe/ops.h"
#include "fedmoe/optim.h"

namespace fedmoe {
namespace {

// Reduces any KxC value to a scalar sum so Backward can seed it.
Var SumAll(const Var& x) {
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  Var flat = Reshape(x, {rows * cols, 1});
  Var ones = Var::Constant(Tensor({1, rows * cols}, 1.0));
  return Affine(ones, flat, Var::Constant(Tensor({1}, 0.0)));
}

TEST(Tensor, ShapeChecksAndArithmetic) {
  Tensor a = Tensor::Matrix(2, 2, {1, 2, 3, 4});
  Tensor b({2, 2}, 1.0);
  EXPECT_EQ((a + b), Tensor::Matrix(2, 2, {2, 3, 4, 5}));
  EXPECT_DOUBLE_EQ(Dot(a, b), 10.0);
  EXPECT_DOUBLE_EQ(SquaredNorm(a), 30.0);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ContractViolation);
  EXPECT_THROW(a += Tensor({4}, 0.0), ContractViolation);
  EXPECT_EQ(a.Reshaped({4}).shape(), (Shape{4}));
}

TEST(Autodiff, AffineValueAndWeightGradient) {
  Parameter w("w", Tensor::Matrix(2, 2, {2, 0, 0, 3}));
  Parameter b("b", Tensor::Vector({1, 1}));
  Var y = Affine(Var::Constant(Tensor::Matrix(1, 2, {1, 1})), w.var(), b.var());
  EXPECT_EQ(y.value(), Tensor::Matrix(1, 2, {3, 4}));

  // x = [[1, 2]] under a sum loss: dW = x^T * ones.
  Var y2 = Affine(Var::Constant(Tensor::Matrix(1, 2, {1, 2})), w.var(), b.var());
  Backward(SumAll(y2));
  EXPECT_EQ(w.grad(), Tensor::Matrix(2, 2, {1, 1, 2, 2}));
  EXPECT_EQ(b.grad(), Tensor::Vector({1, 1}));
}

TEST(Autodiff, GradientsAccumulateOverSharedUse) {
  Parameter p("p", Tensor::Matrix(1, 1, {3.0}));
  Backward(SumAll(Mul(p.var(), p.var())));  // d(p^2)/dp = 2p
  EXPECT_DOUBLE_EQ(p.grad()[0], 6.0);
  p.ZeroGrad();
  EXPECT_DOUBLE_EQ(p.grad()[0], 0.0);
}

TEST(Autodiff, NonScalarRootRejected) {
  Parameter p("p", Tensor::Vector({1, 2}));
  EXPECT_THROW(Backward(p.var()), ContractViolation);
}

TEST(Ops, SigmoidOfLogThree) {
  Var s = Sigmoid(Var::Constant(Tensor::Scalar(std::log(3.0))));
  EXPECT_NEAR(s.value()[0], 0.75, 1e-15);
}

TEST(Ops, ReluSubgradientAtZeroIsZero) {
  Parameter x("x", Tensor::Matrix(1, 3, {-1, 0, 2}));
  Backward(SumAll(Relu(x.var())));
  EXPECT_EQ(x.grad(), Tensor::Matrix(1, 3, {0, 0, 1}));
}

TEST(Ops, ThreeWayHadamard) {
  Var r = Mul(Var::Constant(Tensor::Vector({2, 3})), Var::Constant(Tensor::Vector({4, 5})),
              Var::Constant(Tensor::Vector({1, 0})));
  EXPECT_EQ(r.value(), Tensor::Vector({8, 0}));
  EXPECT_THROW(Mul(Var::Constant(Tensor::Vector({1})), Var::Constant(Tensor::Vector({1, 2}))),
               ContractViolation);
}

TEST(Ops, SoftmaxValuesAndShiftInvariance) {
  Var s = Softmax(Var::Constant(Tensor::Matrix(1, 2, {0.0, std::log(3.0)})));
  EXPECT_NEAR(s.value()[0], 0.25, 1e-15);
  EXPECT_NEAR(s.value()[1], 0.75, 1e-15);
  Var big = Softmax(Var::Constant(Tensor::Matrix(1, 2, {1000.0, 1000.0 + std::log(3.0)})));
  EXPECT_NEAR(big.value()[0], 0.25, 1e-12);
  EXPECT_TRUE(big.value().AllFinite());
}

TEST(Ops, BatchNormTrainAndConstantBatch) {
  BNState bn = BNState::Create("bn", 1, 1e-12);
  Var y = BatchNorm(Var::Constant(Tensor::Matrix(2, 1, {1, 3})), bn, Mode::kTrain);
  EXPECT_NEAR(y.value()[0], -1.0, 1e-12);
  EXPECT_NEAR(y.value()[1], 1.0, 1e-12);

  BNState bn2 = BNState::Create("bn2", 1, 1e-5);
  bn2.beta.mutable_value()[0] = 0.7;
  Var c = BatchNorm(Var::Constant(Tensor::Matrix(3, 1, {5, 5, 5})), bn2, Mode::kTrain);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(c.value()[i], 0.7);
  EXPECT_THROW(BatchNorm(Var::Constant(Tensor::Matrix(1, 1, {5})), bn2, Mode::kTrain),
               ContractViolation);
}

TEST(Ops, BatchNormRunningStatsUsedInEval) {
  BNState bn = BNState::Create("bn", 1, 1e-5, 0.5);
  bn.gamma.mutable_value()[0] = 2.0;
  bn.beta.mutable_value()[0] = -1.0;
  BatchNorm(Var::Constant(Tensor::Matrix(2, 1, {1, 3})), bn, Mode::kTrain);
  EXPECT_NE(bn.running_mean[0], 0.0);
  Var y = BatchNorm(Var::Constant(Tensor::Matrix(1, 1, {3})), bn, Mode::kEval);
  const double expect =
      2.0 * (3.0 - bn.running_mean[0]) / std::sqrt(bn.running_var[0] + 1e-5) - 1.0;
  EXPECT_NEAR(y.value()[0], expect, 1e-12);
}

TEST(Ops, DropoutPreservesExpectation) {
  Rng rng(11);
  Var d = Dropout(Var::Constant(Tensor({1000, 1000}, 1.0)), 0.2, Mode::kTrain, rng);
  const auto v = d.value().values();
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  EXPECT_GE(mean, 0.995);
  EXPECT_LE(mean, 1.005);
  Var e = Dropout(Var::Constant(Tensor({2, 2}, 1.0)), 0.5, Mode::kEval, rng);
  EXPECT_EQ(e.value(), Tensor({2, 2}, 1.0));
  EXPECT_THROW(Dropout(e, 1.0, Mode::kTrain, rng), ContractViolation);
}

TEST(Ops, BceValueAndGradient) {
  Var half = Bce(Var::Constant(Tensor::Vector({0.5, 0.5})), Tensor::Vector({1, 0}));
  EXPECT_NEAR(half.value()[0], std::log(2.0), 1e-15);

  Parameter p("p", Tensor::Vector({0.25}));
  Backward(Bce(p.var(), Tensor::Vector({1})));
  EXPECT_NEAR(p.grad()[0], -4.0, 1e-12);

  EXPECT_THROW(Bce(p.var(), Tensor::Vector({0.5})), ContractViolation);
  Var clamped = Bce(Var::Constant(Tensor::Vector({0.0})), Tensor::Vector({1}));
  EXPECT_TRUE(std::isfinite(clamped.value()[0]));
}

TEST(Ops, SquaredDistanceScalarCase) {
  Parameter w("w", Tensor::Scalar(1.0));
  Var d = SquaredDistance(w.var(), Tensor::Scalar(3.0));
  EXPECT_DOUBLE_EQ(d.value()[0], 4.0);
  Backward(d);
  EXPECT_DOUBLE_EQ(w.grad()[0], -4.0);
}

TEST(Optim, AdamFirstStepIsSignedLearningRate) {
  Parameter a("a", Tensor::Vector({0.0, 0.0, 0.0}));
  a.mutable_grad() = Tensor::Vector({3.0, -0.01, 250.0});
  AdamState st;
  st.learning_rate = 0.1;
  Parameter* ps[] = {&a};
  AdamStep(ps, st);
  EXPECT_NEAR(a.value()[0], -0.1, 1e-6);
  EXPECT_NEAR(a.value()[1], 0.1, 1e-4);
  EXPECT_NEAR(a.value()[2], -0.1, 1e-6);
}

TEST(Optim, AdamZeroGradientIsNoOp) {
  Parameter a("a", Tensor::Vector({1.0, 2.0}));
  AdamState st;
  Parameter* ps[] = {&a};
  AdamStep(ps, st);
  EXPECT_EQ(a.value(), Tensor::Vector({1.0, 2.0}));
  EXPECT_TRUE(st.moments.empty() || st.moments.begin()->second.step == 0);
}

TEST(Optim, GradCheckAgreesOnSmoothGraph) {
  Rng rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  auto rand = [&](Shape s) {
    Tensor t(s);
    for (auto& v : t.values()) v = n(rng);
    return t;
  };
  Parameter w("w", rand({4, 3})), b("b", rand({3}));
  const Tensor x = rand({5, 4});
  const Tensor y = Tensor::Vector({1, 0, 1, 1, 0});
  auto f = [&] {
    Var h = Softmax(Affine(Var::Constant(x), w.var(), b.var()));
    return Bce(Reshape(SelectColumn(h, 1), {5}), y);
  };
  Parameter* ps[] = {&w, &b};
  EXPECT_LT(GradCheck(f, ps), 1e-6);
}

}  // namespace
}  // namespace fedmoe
