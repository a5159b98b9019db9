#include <gtest/gtest.h>

#include <cmath>

#include "metaseg/autodiff/adam.hpp"
#include "metaseg/autodiff/grad_check.hpp"
#include "metaseg/autodiff/ops.hpp"
#include "metaseg/common/error.hpp"
#include "metaseg/verify/battery.hpp"
#include "metaseg/verify/oracles.hpp"

using namespace metaseg;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor<double> filled(Shape s, std::vector<double> v) { return Tensor<double>(std::move(s), std::move(v)); }

}  // namespace

TEST(Tensor, RejectsDataOfWrongLength) {
  EXPECT_THROW(Tensor<double>(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  Tensor<float> t(Shape{2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.reshaped(Shape{3, 2}).shape(), (Shape{3, 2}));
}

TEST(Tape, ConstantsNeverReceiveGradient) {
  Tape<double> tape;
  const Var<double> a = tape.leaf(filled({2}, {1, 2}));
  const Var<double> c = tape.constant(filled({2}, {3, 4}));
  tape.backward(ad::sum(ad::mul(a, c)));
  EXPECT_EQ(tape.grad(a)[0], 3.0);
  EXPECT_EQ(tape.grad(c)[0], 0.0);
  EXPECT_EQ(tape.grad(c)[1], 0.0);
}

TEST(Tape, UnusedLeafGetsZeroGradient) {
  Tape<double> tape;
  const Var<double> a = tape.leaf(filled({2}, {1, 2}));
  const Var<double> unused = tape.leaf(filled({3}, {1, 2, 3}));
  tape.backward(ad::sum(a));
  const Tensor<double> g = tape.grad(unused);
  for (const double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tape, BackwardOnEmptyTapeIsNoOp) {
  Tape<double> tape;
  EXPECT_NO_THROW(tape.backward(Var<double>()));
}

TEST(Tape, BackwardNeedsScalarLoss) {
  Tape<double> tape;
  const Var<double> a = tape.leaf(filled({2}, {1, 2}));
  EXPECT_THROW(tape.backward(ad::scale(a, 2.0)), ShapeError);
}

TEST(Tape, RejectsMixingTapes) {
  Tape<double> t1, t2;
  const Var<double> a = t1.leaf(filled({1}, {1}));
  const Var<double> b = t2.leaf(filled({1}, {2}));
  EXPECT_THROW(ad::add(a, b), ValidationError);
}

TEST(Conv2d, AllOnesCountsOverlap) {
  Tape<double> tape;
  const Var<double> x = tape.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
  const Var<double> k = tape.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
  const Tensor<double> y = ad::conv2d(x, k, Var<double>(), ad::Conv2dOptions{1, 1, 1}).value();
  EXPECT_EQ(y[4], 9.0);
  EXPECT_EQ(y[0], 4.0);
  EXPECT_EQ(y[2], 4.0);
  EXPECT_EQ(y[6], 4.0);
  EXPECT_EQ(y[8], 4.0);
}

TEST(Conv2d, UnitPointwiseKernelIsIdentity) {
  Rng rng(1);
  const Tensor<double> in = verify::random_tensor(Shape{2, 1, 4, 5}, rng);
  Tape<double> tape;
  const Tensor<double> y = ad::conv2d(tape.constant(in), tape.constant(Tensor<double>(Shape{1, 1, 1, 1}, 1.0)),
                                      tape.constant(Tensor<double>(Shape{1}, 0.0)), ad::Conv2dOptions{})
                               .value();
  EXPECT_EQ(y, in);
}

TEST(Conv2d, DilationMatchesZeroInflatedKernel) {
  Rng rng(2);
  const Tensor<double> in = verify::random_tensor(Shape{1, 2, 9, 9}, rng);
  const Tensor<double> k = verify::random_tensor(Shape{3, 2, 3, 3}, rng);
  Tape<double> tape;
  const Tensor<double> dilated =
      ad::conv2d(tape.constant(in), tape.constant(k), Var<double>(), ad::Conv2dOptions{1, 2, 2}).value();
  const Tensor<double> inflated = ad::conv2d(tape.constant(in), tape.constant(verify::zero_inflate(k, 2)),
                                             Var<double>(), ad::Conv2dOptions{1, 2, 1})
                                      .value();
  EXPECT_LE(verify::max_abs_diff(dilated, inflated), 1e-12);
  EXPECT_LE(verify::max_abs_diff(dilated, verify::naive_conv2d(in, k, nullptr, 1, 2, 2)), 1e-12);
}

TEST(Conv2d, StridedMatchesDirectLoops) {
  Rng rng(3);
  const Tensor<double> in = verify::random_tensor(Shape{2, 3, 7, 6}, rng);
  const Tensor<double> k = verify::random_tensor(Shape{4, 3, 3, 3}, rng);
  const Tensor<double> b = verify::random_tensor(Shape{4}, rng);
  Tape<double> tape;
  const Tensor<double> y =
      ad::conv2d(tape.constant(in), tape.constant(k), tape.constant(b), ad::Conv2dOptions{2, 1, 1}).value();
  const Tensor<double> ref = verify::naive_conv2d(in, k, &b, 2, 1, 1);
  ASSERT_EQ(y.shape(), ref.shape());
  EXPECT_LE(verify::max_abs_diff(y, ref), 1e-12);
}

TEST(Conv2d, RejectsBadArguments) {
  Tape<double> tape;
  const Var<double> x = tape.constant(Tensor<double>(Shape{1, 2, 4, 4}));
  EXPECT_THROW(ad::conv2d(x, tape.constant(Tensor<double>(Shape{1, 3, 3, 3})), Var<double>(), {}), ShapeError);
  EXPECT_THROW(ad::conv2d(x, tape.constant(Tensor<double>(Shape{1, 2, 3, 3})), Var<double>(),
                          ad::Conv2dOptions{1, 1, 0}),
               ShapeError);
}

TEST(Pool2d, MaxAndItsGradient) {
  Tape<double> tape;
  const Var<double> x = tape.leaf(filled({1, 1, 2, 2}, {1, 2, 3, 4}));
  const Var<double> y = ad::pool2d(x, ad::PoolMode::max2x2);
  EXPECT_EQ(y.value().item(), 4.0);
  tape.backward(ad::sum(y));
  EXPECT_EQ(tape.grad(x), filled({1, 1, 2, 2}, {0, 0, 0, 1}));
}

TEST(Pool2d, MaxTiesGoToFirstIndex) {
  Tape<double> tape;
  const Var<double> x = tape.leaf(filled({1, 1, 2, 2}, {5, 5, 5, 5}));
  tape.backward(ad::sum(ad::pool2d(x, ad::PoolMode::max2x2)));
  EXPECT_EQ(tape.grad(x), filled({1, 1, 2, 2}, {1, 0, 0, 0}));
}

TEST(Pool2d, OddExtentsPadWithNegativeInfinity) {
  Tape<double> tape;
  const Var<double> x = tape.constant(filled({1, 1, 3, 3}, {-1, -2, -3, -4, -5, -6, -7, -8, -9}));
  const Tensor<double> y = ad::pool2d(x, ad::PoolMode::max2x2).value();
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y, filled({1, 1, 2, 2}, {-1, -3, -7, -9}));
}

TEST(Pool2d, GlobalAverageOfConstant) {
  Tape<double> tape;
  const Var<double> x = tape.constant(Tensor<double>(Shape{2, 3, 4, 5}, 1.75));
  const Tensor<double> y = ad::pool2d(x, ad::PoolMode::global_avg).value();
  EXPECT_EQ(y.shape(), (Shape{2, 3, 1, 1}));
  for (const double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.75);
}

TEST(Pool2d, RejectsEmptyExtent) {
  Tape<double> tape;
  EXPECT_THROW(ad::pool2d(tape.constant(Tensor<double>(Shape{1, 1, 0, 2})), ad::PoolMode::max2x2), ShapeError);
}

TEST(ReplicateUpsample, ReplicatesAndSumsBack) {
  Tape<double> tape;
  const Var<double> x = tape.leaf(filled({1, 1, 1, 1}, {2.5}));
  const Var<double> y = ad::replicate_upsample(x, 3, 3);
  EXPECT_EQ(y.value(), Tensor<double>(Shape{1, 1, 3, 3}, 2.5));
  tape.backward(ad::sum(y));
  EXPECT_EQ(tape.grad(x).item(), 9.0);
  EXPECT_EQ(ad::replicate_upsample(x, 1, 1).value(), x.value());
  EXPECT_THROW(ad::replicate_upsample(x, 0, 2), ShapeError);
}

TEST(BatchNorm, ConstantChannelNormalizesToZero) {
  Tape<double> tape;
  Tensor<double> in(Shape{2, 2, 3, 3});
  for (std::size_t i = 0; i < in.size(); ++i) in[i] = (i / 9) % 2 == 0 ? 3.0 : -7.0;
  const Tensor<double> rm(Shape{2}), rv(Shape{2}, 1.0);
  const Tensor<double> y = ad::batchnorm2d(tape.constant(in), tape.constant(Tensor<double>(Shape{2}, 1.0)),
                                           tape.constant(Tensor<double>(Shape{2})), rm, rv, ad::Mode::train)
                               .value();
  for (const double v : y.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(4);
  Tape<double> tape;
  const Tensor<double> rm(Shape{2}), rv(Shape{2}, 1.0);
  const Tensor<double> y =
      ad::batchnorm2d(tape.constant(verify::random_tensor(Shape{3, 2, 2, 2}, rng)),
                      tape.constant(Tensor<double>(Shape{2})), tape.constant(filled({2}, {0.5, -1.5})), rm, rv,
                      ad::Mode::train)
          .value();
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], (i / 4) % 2 == 0 ? 0.5 : -1.5);
}

TEST(BatchNorm, TrainModeStandardizesEachChannel) {
  Rng rng(5);
  Tape<double> tape;
  const Tensor<double> in = verify::random_tensor(Shape{4, 3, 5, 5}, rng, 3.0);
  const Tensor<double> rm(Shape{3}), rv(Shape{3}, 1.0);
  ad::BatchStats<double> stats;
  const Tensor<double> y = ad::batchnorm2d(tape.constant(in), tape.constant(Tensor<double>(Shape{3}, 1.0)),
                                           tape.constant(Tensor<double>(Shape{3})), rm, rv, ad::Mode::train, &stats)
                               .value();
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, sq = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t p = 0; p < 25; ++p) mean += y[(n * 3 + c) * 25 + p];
    mean /= 100;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t p = 0; p < 25; ++p) sq += std::pow(y[(n * 3 + c) * 25 + p] - mean, 2);
    EXPECT_LT(std::abs(mean), 1e-4);
    EXPECT_LT(std::abs(sq / 100 - 1.0), 1e-4);
  }
  EXPECT_EQ(stats.mean.size(), 3u);
}

TEST(BatchNorm, EvalModeUsesRunningStatistics) {
  Tape<double> tape;
  const Tensor<double> rm = filled({1}, {2.0}), rv = filled({1}, {4.0});
  const Tensor<double> y = ad::batchnorm2d(tape.constant(filled({1, 1, 1, 2}, {4.0, 0.0})),
                                           tape.constant(filled({1}, {1.0})), tape.constant(filled({1}, {0.0})),
                                           rm, rv, ad::Mode::eval)
                               .value();
  EXPECT_NEAR(y[0], 2.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_NEAR(y[1], -2.0 / std::sqrt(4.0 + 1e-5), 1e-12);
}

TEST(BatchNorm, RejectsChannelMismatch) {
  Tape<double> tape;
  const Tensor<double> rm(Shape{3}), rv(Shape{3}, 1.0);
  EXPECT_THROW(ad::batchnorm2d(tape.constant(Tensor<double>(Shape{2, 2, 2, 2})),
                               tape.constant(Tensor<double>(Shape{3}, 1.0)), tape.constant(Tensor<double>(Shape{3})),
                               rm, rv, ad::Mode::train),
               ShapeError);
}

TEST(LeakyRelu, ValuesAndGradientAtZero) {
  Tape<double> tape;
  const Var<double> x = tape.leaf(filled({3}, {2.0, -1.0, 0.0}));
  const Var<double> y = ad::leaky_relu(x, 0.1);
  EXPECT_EQ(y.value(), filled({3}, {2.0, -0.1, 0.0}));
  tape.backward(ad::sum(y));
  EXPECT_EQ(tape.grad(x), filled({3}, {1.0, 0.1, 1.0}));
}

TEST(L2Normalize, ThreeFourFive) {
  Tape<double> tape;
  const Tensor<double> y = ad::l2_normalize_channels(tape.constant(filled({1, 1, 1, 2}, {3, 4})), 1e-8).value();
  EXPECT_NEAR(y[0], 0.6, 1e-9);
  EXPECT_NEAR(y[1], 0.8, 1e-9);
}

TEST(L2Normalize, ZeroChannelStaysZeroAndOthersHaveUnitNorm) {
  Rng rng(6);
  Tensor<double> in = verify::random_tensor(Shape{2, 3, 4, 4}, rng);
  for (std::size_t p = 0; p < 16; ++p) in[16 + p] = 0.0;  // image 0, channel 1
  Tape<double> tape;
  const Tensor<double> y = ad::l2_normalize_channels(tape.constant(in), 1e-8).value();
  for (std::size_t map = 0; map < 6; ++map) {
    double sq = 0;
    for (std::size_t p = 0; p < 16; ++p) sq += y[map * 16 + p] * y[map * 16 + p];
    if (map == 1) {
      EXPECT_EQ(sq, 0.0);
    } else {
      EXPECT_GE(std::sqrt(sq), 1 - 1e-3);
      EXPECT_LE(std::sqrt(sq), 1.0);
    }
  }
}

TEST(SpdSolve, DiagonalAndIdentitySystems) {
  Tape<double> tape;
  const Tensor<double> x = ad::spd_solve(tape.constant(filled({2, 2}, {2, 0, 0, 2})),
                                         tape.constant(filled({2, 2}, {1, 0, 0, 1})))
                               .value();
  EXPECT_LE(verify::max_abs_diff(x, filled({2, 2}, {0.5, 0, 0, 0.5})), 1e-15);
  Rng rng(7);
  const Tensor<double> b = verify::random_tensor(Shape{3, 2}, rng);
  Tensor<double> eye(Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 4] = 1.0;
  EXPECT_LE(verify::max_abs_diff(ad::spd_solve(tape.constant(eye), tape.constant(b)).value(), b), 1e-15);
}

TEST(SpdSolve, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  // A = S S^T + I: symmetric perturbations only, as the solver reads one triangle
  const std::vector<Tensor<double>> inputs{verify::random_tensor(Shape{5, 5}, rng, 0.6),
                                           verify::random_tensor(Shape{5, 3}, rng)};
  const ad::TapeFunction fn = [](Tape<double>& t, std::span<const Var<double>> v) {
    const Var<double> a = ad::add_diag(ad::matmul(v[0], ad::transpose(v[0])), t.constant(Tensor<double>::scalar(1.0)));
    return ad::sum(ad::spd_solve(a, v[1]));
  };
  ad::GradCheckOptions options;
  options.rtol = 1e-5;
  options.h = 1e-6;
  const auto report = ad::grad_check(fn, inputs, options);
  EXPECT_TRUE(report.passed) << report.summary();
}

TEST(SpdSolve, BackwardRuleForMatrixInput) {
  // direct check of grad_A = -sym(A^{-1} G X^T) against differences taken
  // along symmetric directions E_ij + E_ji
  Rng rng(9);
  const std::size_t m = 4;
  const Tensor<double> s = verify::random_tensor(Shape{m, m}, rng, 0.5);
  Tensor<double> a(Shape{m, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t k = 0; k < m; ++k) a[i * m + j] += s[i * m + k] * s[j * m + k];
      if (i == j) a[i * m + j] += 1.0;
    }
  const Tensor<double> b = verify::random_tensor(Shape{m, 2}, rng);
  Tape<double> tape;
  const Var<double> av = tape.leaf(a);
  tape.backward(ad::sum(ad::spd_solve(av, tape.constant(b))));
  const Tensor<double> ga = tape.grad(av);
  auto f = [&](const Tensor<double>& mat) {
    Tape<double> t;
    return ad::sum(ad::spd_solve(t.constant(mat), t.constant(b))).value().item();
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i; j < m; ++j) {
      Tensor<double> p = a, q = a;
      p[i * m + j] += h;
      q[i * m + j] -= h;
      if (i != j) {
        p[j * m + i] += h;
        q[j * m + i] -= h;
      }
      const double numeric = (f(p) - f(q)) / (2 * h);
      const double analytic = i == j ? ga[i * m + j] : ga[i * m + j] + ga[j * m + i];
      EXPECT_NEAR(analytic, numeric, 1e-6 * std::max(1.0, std::abs(numeric)));
    }
}

TEST(SpdSolve, NonPositiveDefiniteNamesPivot) {
  Tape<double> tape;
  try {
    ad::spd_solve(tape.constant(filled({2, 2}, {1, 2, 2, 1})), tape.constant(filled({2, 1}, {1, 1})));
    FAIL() << "expected a numerical error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("pivot 1"), std::string::npos) << e.what();
  }
}

TEST(SoftmaxCrossEntropy, UniformAndSaturated) {
  Tape<double> tape;
  const std::vector<int> labels{2};
  EXPECT_NEAR(ad::softmax_cross_entropy(tape.constant(Tensor<double>(Shape{1, 3}, 0.7)), labels).value().item(),
              std::log(3.0), 1e-12);
  EXPECT_LT(ad::softmax_cross_entropy(tape.constant(filled({1, 3}, {0, 0, 20})), labels).value().item(), 1e-8);
}

TEST(SoftmaxCrossEntropy, GradientIsSoftmaxMinusOnehotOverRows) {
  Rng rng(10);
  const Tensor<double> logits = verify::random_tensor(Shape{4, 3}, rng, 2.0);
  const std::vector<int> labels{0, 2, 1, 1};
  Tape<double> tape;
  const Var<double> x = tape.leaf(logits);
  tape.backward(ad::softmax_cross_entropy(x, labels));
  const Tensor<double> g = tape.grad(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double z = 0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits[r * 3 + k]);
    for (std::size_t k = 0; k < 3; ++k) {
      const double expect = (std::exp(logits[r * 3 + k]) / z - (labels[r] == static_cast<int>(k) ? 1.0 : 0.0)) / 4.0;
      EXPECT_NEAR(g[r * 3 + k], expect, 1e-14);
    }
  }
  const ad::TapeFunction fn = [&labels](Tape<double>&, std::span<const Var<double>> v) {
    return ad::softmax_cross_entropy(v[0], labels);
  };
  ad::GradCheckOptions options;
  options.rtol = 1e-5;
  EXPECT_TRUE(ad::grad_check(fn, std::vector<Tensor<double>>{logits}, options).passed);
}

TEST(SoftmaxCrossEntropy, RejectsOutOfRangeLabel) {
  Tape<double> tape;
  const std::vector<int> labels{3};
  EXPECT_THROW(ad::softmax_cross_entropy(tape.constant(Tensor<double>(Shape{1, 3})), labels), ValidationError);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  Tensor<double> p = filled({3}, {1.0, -2.0, 0.5});
  const std::vector<Tensor<double>> g{filled({3}, {0.3, -4.0, 1e-3})};
  ad::AdamState<double> state;
  std::vector<Tensor<double>*> params{&p};
  ad::adam_step<double>(params, g, state);
  EXPECT_EQ(state.step, 1u);
  EXPECT_NEAR(p[0], 1.0 - 1e-3 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 1e-3 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[2], 0.5 - 1e-3 * 1e-3 / (1e-3 + 1e-8), 1e-15);
  ad::adam_step<double>(params, g, state);
  EXPECT_EQ(state.step, 2u);
  EXPECT_EQ(state.first_moment[0].shape(), p.shape());
}

TEST(Adam, SecondStepMatchesBiasCorrectedFormula) {
  Tensor<double> p = filled({1}, {0.0});
  std::vector<Tensor<double>*> params{&p};
  ad::AdamState<double> state;
  ad::adam_step<double>(params, std::vector<Tensor<double>>{filled({1}, {1.0})}, state);
  ad::adam_step<double>(params, std::vector<Tensor<double>>{filled({1}, {-2.0})}, state);
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0, v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  const double expect = -1e-3 * 1.0 / (1.0 + 1e-8) - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);
  EXPECT_NEAR(p[0], expect, 1e-15);
}

TEST(Adam, RejectsShapeMismatch) {
  Tensor<double> p(Shape{2});
  std::vector<Tensor<double>*> params{&p};
  ad::AdamState<double> state;
  EXPECT_THROW(ad::adam_step<double>(params, std::vector<Tensor<double>>{Tensor<double>(Shape{3})}, state), ShapeError);
}

TEST(GradCheck, EveryOpPasses) {
  for (const auto& r : verify::check_op_gradients(11)) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}

TEST(GradCheck, CatchesAWrongBackwardRule) {
  bool caught = false;
  for (const auto& r : verify::check_op_gradients(11, true)) {
    if (r.name == "grad leaky_relu") caught = !r.passed;
  }
  EXPECT_TRUE(caught);
}
