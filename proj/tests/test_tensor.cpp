#include <gtest/gtest.h>

#include <cmath>

#include "afldm/error.hpp"
#include "afldm/parallel.hpp"
#include "afldm/tensor.hpp"
#include "support/suites.hpp"

namespace afldm {
namespace {

using testing::Gen;

Tensor vec(std::vector<double> v, Shape shape = {}) {
  if (shape.empty()) shape = {static_cast<std::int64_t>(v.size())};
  return Tensor::from_vector(shape, std::move(v), DType::kF64);
}

void expect_values(const Tensor& t, const std::vector<double>& want, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), static_cast<std::int64_t>(want.size()));
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.data()[i], want[i], tol) << "index " << i;
}

TEST(Tensor, ShapeAndFactories) {
  const Tensor z = Tensor::zeros({2, 3});
  EXPECT_EQ(z.numel(), 6);
  EXPECT_EQ(z.rank(), 2);
  EXPECT_EQ(z.dim(-1), 3);
  EXPECT_EQ(Tensor::full({2}, 1.5).data()[1], 1.5);
  EXPECT_THROW(Tensor::from_vector({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::zeros({2, 0}), ShapeError);
  EXPECT_THROW(z.item(), ShapeError);
  EXPECT_THROW(z.dim(2), ShapeError);
}

TEST(Tensor, F32TensorsHoldFloatValues) {
  const Tensor t = Tensor::from_vector({1}, {0.1}, DType::kF32);
  const Tensor u = t * 3.0;
  EXPECT_EQ(u.data()[0], static_cast<double>(static_cast<float>(u.data()[0])));
  EXPECT_EQ(t.to(DType::kF64).dtype(), DType::kF64);
}

TEST(Tensor, DefaultDtypeGuardRestores) {
  const DType before = default_dtype();
  {
    DTypeGuard g(DType::kF64);
    EXPECT_EQ(default_dtype(), DType::kF64);
    EXPECT_EQ(Tensor::zeros({1}).dtype(), DType::kF64);
  }
  EXPECT_EQ(default_dtype(), before);
}

TEST(Tensor, ParallelWorkersInheritDefaultDtype) {
  DTypeGuard g(DType::kF64);
  std::vector<int> seen(8, -1);
  parallel_for(seen.size(), [&](std::size_t i) { seen[i] = static_cast<int>(default_dtype()); });
  for (int s : seen) EXPECT_EQ(s, static_cast<int>(DType::kF64));
}

TEST(Elementwise, Examples) {
  expect_values(vec({1, 2}) + vec({3, 4}), {4, 6});
  expect_values(silu(vec({0.0})), {0.0});
  // x * sigmoid(x) at x = 10.
  expect_values(silu(vec({10.0})), {10.0 / (1.0 + std::exp(-10.0))});
  EXPECT_NEAR(silu(vec({10.0})).item(), 9.99955, 1e-5);
  expect_values(relu(vec({-1.0, 2.0})), {0.0, 2.0});
  expect_values(clamp(vec({-3.0, 0.5, 3.0}), -1.0, 1.0), {-1.0, 0.5, 1.0});
}

TEST(Elementwise, MulByZeroHasZeroGradient) {
  DTypeGuard g(DType::kF64);
  Tensor x = vec({1.0, -2.0, 3.0}).set_requires_grad(true);
  GradTape tape;
  const Tensor y = x * 0.0;
  expect_values(y, {0, 0, 0});
  tape.backward(sum(y));
  expect_values(x.grad_tensor(), {0, 0, 0});
}

TEST(Elementwise, OnlyScalarOrExactBroadcast) {
  EXPECT_THROW(vec({1, 2}) + vec({1, 2, 3}), ShapeError);
  EXPECT_THROW(vec({1, 2, 3, 4}, {2, 2}) + vec({1, 2}), ShapeError);
  expect_values(vec({1, 2}) + vec({10}), {11, 12});
}

TEST(Elementwise, NanTripwire) {
  ASSERT_TRUE(debug_checks());
  EXPECT_THROW(vec({-1.0}) / vec({0.0}) * vec({0.0}), NumericalError);
  EXPECT_THROW(unary(UnaryOp::kSqrt, vec({-1.0})), NumericalError);
}

TEST(Matmul, Examples) {
  const Tensor a = vec({1, 2, 3, 4}, {2, 2});
  expect_values(matmul(a, vec({1, 1}, {2, 1})), {3, 7});
  expect_values(matmul(vec({1, 0, 0, 1}, {2, 2}), a), {1, 2, 3, 4});
  EXPECT_THROW(matmul(a, vec({1, 2, 3}, {3, 1})), ShapeError);
}

TEST(Matmul, GradientMatchesFormula) {
  DTypeGuard g(DType::kF64);
  Gen gen(3);
  Tensor a = gen.normal_tensor({5, 4}).set_requires_grad(true);
  Tensor b = gen.normal_tensor({4, 3}).set_requires_grad(true);
  const Tensor gout = gen.normal_tensor({5, 3});
  GradTape tape;
  tape.backward(sum(matmul(a, b) * gout));
  // dA = G B^T, dB = A^T G, evaluated by direct summation.
  for (int i = 0; i < 5; ++i) {
    for (int k = 0; k < 4; ++k) {
      double want = 0.0;
      for (int j = 0; j < 3; ++j) want += gout.at({i, j}) * b.at({k, j});
      EXPECT_NEAR(a.grad()[static_cast<std::size_t>(i * 4 + k)], want, 1e-12);
    }
  }
  for (int k = 0; k < 4; ++k) {
    for (int j = 0; j < 3; ++j) {
      double want = 0.0;
      for (int i = 0; i < 5; ++i) want += a.at({i, k}) * gout.at({i, j});
      EXPECT_NEAR(b.grad()[static_cast<std::size_t>(k * 3 + j)], want, 1e-12);
    }
  }
}

TEST(Conv2d, IdentityKernel) {
  Gen gen(4);
  const Tensor x = gen.normal_tensor({2, 1, 5, 6});
  const Tensor y = conv2d(x, vec({1.0}, {1, 1, 1, 1}));
  EXPECT_EQ(testing::max_abs_diff(x, y), 0.0);
}

TEST(Conv2d, CircularPaddingCommutesWithRoll) {
  Gen gen(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = gen.normal_tensor({1, 2, 6, 7});
    const Tensor w = gen.normal_tensor({3, 2, 3, 3});
    const auto dx = gen.integer(-3, 3), dy = gen.integer(-3, 3);
    EXPECT_LT(testing::max_abs_diff(conv2d(testing::roll_oracle(x, dx, dy), w),
                                    testing::roll_oracle(conv2d(x, w), dx, dy)),
              1e-6);
  }
}

TEST(Conv2d, AveragingKernelStampsImpulse) {
  std::vector<double> img(49, 0.0);
  img[3 * 7 + 2] = 1.0;
  const Tensor x = vec(img, {1, 1, 7, 7});
  std::vector<double> k(9);
  for (int i = 0; i < 9; ++i) k[static_cast<std::size_t>(i)] = (i + 1) / 45.0;
  const Tensor y = conv2d(x, vec(k, {1, 1, 3, 3}), {}, Padding::kZero);
  // Cross-correlation: y(p) = sum_q k(q) x(p + q - 1), so the impulse at
  // (3, 2) shows up flipped around it.
  for (int y0 = 0; y0 < 7; ++y0) {
    for (int x0 = 0; x0 < 7; ++x0) {
      double want = 0.0;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int sy = y0 + ky - 1, sx = x0 + kx - 1;
          if (sy == 3 && sx == 2) want += k[static_cast<std::size_t>(ky * 3 + kx)];
        }
      }
      EXPECT_NEAR(y.at({0, 0, y0, x0}), want, 1e-12);
    }
  }
}

TEST(Conv2d, RejectsEvenKernel) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 2, 2})), ShapeError);
}

TEST(Softmax, Examples) {
  expect_values(softmax_rows(vec({3, 3, 3, 3}, {1, 4})), {0.25, 0.25, 0.25, 0.25});
  const Tensor s = softmax_rows(vec({1000, 0}, {1, 2}));
  EXPECT_NEAR(s.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(s.data()[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAndPermuteWithInput) {
  Gen gen(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = gen.integer(2, 6), d = gen.integer(1, 7);
    const Tensor x = gen.normal_tensor({n, d}) * 5.0;
    const Tensor s = softmax_rows(x);
    for (std::int64_t r = 0; r < n; ++r) {
      double total = 0.0;
      for (std::int64_t c = 0; c < d; ++c) total += s.at({r, c});
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
    const Tensor swapped = concat({slice(x, 0, 1, n), slice(x, 0, 0, 1)}, 0);
    const Tensor expected = concat({slice(s, 0, 1, n), slice(s, 0, 0, 1)}, 0);
    EXPECT_EQ(testing::max_abs_diff(softmax_rows(swapped), expected), 0.0);
  }
}

TEST(Backward, SumGivesOnes) {
  DTypeGuard g(DType::kF64);
  Tensor x = Tensor::zeros({2, 3}).set_requires_grad(true);
  GradTape tape;
  tape.backward(sum(x));
  expect_values(x.grad_tensor(), {1, 1, 1, 1, 1, 1});
}

TEST(Backward, StopGradientBlocksEveryElement) {
  DTypeGuard g(DType::kF64);
  Gen gen(7);
  Tensor x = gen.normal_tensor({3, 4}).set_requires_grad(true);
  GradTape tape;
  const Tensor y = stop_gradient(x);
  EXPECT_EQ(testing::max_abs_diff(x, y), 0.0);
  tape.backward(sum(square(y)) + sum(x) * 0.0);
  for (double v : x.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, Errors) {
  DTypeGuard g(DType::kF64);
  Tensor x = Tensor::ones({2}).set_requires_grad(true);
  GradTape tape;
  const Tensor y = x * 2.0;
  EXPECT_THROW(tape.backward(y), AutogradError);
  tape.backward(sum(y));
  EXPECT_THROW(tape.backward(sum(y)), AutogradError);
}

TEST(Backward, VisitsInReverseOrder) {
  DTypeGuard g(DType::kF64);
  Tensor x = vec({2.0}).set_requires_grad(true);
  GradTape tape;
  // x appears at two depths; the closure order must accumulate both.
  const Tensor a = x * x;
  const Tensor b = a * x + a;
  tape.backward(b);
  // d/dx (x^3 + x^2) = 3x^2 + 2x
  EXPECT_NEAR(x.grad()[0], 3 * 4.0 + 4.0, 1e-12);
}

TEST(Backward, NoGradGuardStopsRecording) {
  Tensor x = Tensor::ones({2}).set_requires_grad(true);
  GradTape tape;
  {
    NoGradGuard ng;
    const Tensor y = x * 2.0;
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(tape.size(), 0u);
}

// Finite-difference property over the tensor-engine ops; the Fourier and
// network ops are covered in their own suites.
class EngineGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(EngineGradient, MatchesCentralDifferences) {
  for (const auto& c : testing::gradient_cases()) {
    if (c.name != GetParam()) continue;
    const auto r = testing::run_gradient_case(c, 20, 11);
    EXPECT_LT(r.worst_rel_error, 1e-6) << r.worst;
    return;
  }
  FAIL() << "no gradient case " << GetParam();
}

INSTANTIATE_TEST_SUITE_P(Ops, EngineGradient,
                         ::testing::Values("add", "sub", "mul", "div", "scalar_broadcast", "scalar_ops", "neg",
                                           "square", "exp", "sqrt", "silu", "relu", "sigmoid", "tanh", "clamp", "sum",
                                           "mean", "matmul", "matmul_batched", "transpose", "permute", "reshape",
                                           "concat", "slice", "softmax_rows", "add_channel_bias", "conv2d_circular",
                                           "conv2d_zero"));

TEST(Determinism, SameInputsSameBits) {
  Gen a(9), b(9);
  const Tensor x = a.normal_tensor({2, 3, 8, 8}), y = b.normal_tensor({2, 3, 8, 8});
  const Tensor w = Gen(10).normal_tensor({4, 3, 3, 3});
  const Tensor ox = softmax_rows(reshape(conv2d(x, w), {8, 64}));
  const Tensor oy = softmax_rows(reshape(conv2d(y, w), {8, 64}));
  EXPECT_EQ(testing::max_abs_diff(ox, oy), 0.0);
}

}  // namespace
}  // namespace afldm
