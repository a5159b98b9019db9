#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "metaseg/autodiff/grad_check.hpp"
#include "metaseg/common/error.hpp"
#include "metaseg/ridge/heads.hpp"
#include "metaseg/verify/battery.hpp"
#include "metaseg/verify/oracles.hpp"

using namespace metaseg;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor<double> eye(std::size_t n) {
  Tensor<double> t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
  return t;
}

Tensor<double> fit(const Tensor<double>& x, const Tensor<double>& y, double lambda,
                   ridge::SolveForm form = ridge::SolveForm::automatic) {
  Tape<double> tape;
  return ridge::ridge_fit(tape.constant(x), y, tape.constant(Tensor<double>::scalar(lambda)), form).value();
}

Tensor<double> random_onehot(std::size_t n, std::size_t m, Rng& rng) {
  Tensor<double> y(Shape{n, m});
  for (std::size_t r = 0; r < n; ++r) y[r * m + rng.below(m)] = 1.0;
  return y;
}

double frobenius(const Tensor<double>& t) {
  double s = 0;
  for (const double v : t.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST(EpisodeTargets, OnehotRowsSumToOne) {
  const std::vector<int> labels{0, 2, 1, 2};
  const auto targets = ridge::make_targets(labels, 3);
  const Tensor<double> y = targets.onehot<double>();
  ASSERT_EQ(y.shape(), (Shape{4, 3}));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 3; ++k) s += y[r * 3 + k];
    EXPECT_EQ(s, 1.0);
    EXPECT_EQ(y[r * 3 + static_cast<std::size_t>(labels[r])], 1.0);
  }
  const std::vector<int> bad{0, 3};
  EXPECT_THROW(ridge::make_targets(bad, 3), ValidationError);
}

TEST(RidgeFit, IdentityDesignHalvesTargets) {
  EXPECT_LE(verify::max_abs_diff(fit(eye(2), eye(2), 1.0), Tensor<double>(Shape{2, 2}, std::vector<double>{0.5, 0, 0, 0.5})),
            1e-15);
}

TEST(RidgeFit, TinyLambdaRecoversTargets) {
  Rng rng(1);
  const Tensor<double> y = random_onehot(4, 3, rng);
  EXPECT_LE(verify::max_abs_diff(fit(eye(4), y, 1e-12), y), 1e-10);
}

TEST(RidgeFit, MatchesGradientDescentOracle) {
  Rng rng(2);
  const Tensor<double> x = verify::random_tensor(Shape{6, 3}, rng);
  const Tensor<double> y = random_onehot(6, 2, rng);
  const verify::GdResult gd = verify::ridge_gd_oracle(x, y, 0.5, 100000, 1e-2);
  EXPECT_LE(verify::max_abs_diff(fit(x, y, 0.5), gd.w), 1e-6);
}

TEST(RidgeFit, PrimalAndDualAgreeAcrossShapes) {
  Rng rng(3);
  for (const std::size_t n : {3u, 7u, 25u, 40u})
    for (const std::size_t c : {3u, 12u, 40u})
      for (const double lambda : {0.1, 1.0, 10.0}) {
        const Tensor<double> x = verify::random_tensor(Shape{n, c}, rng);
        const Tensor<double> y = random_onehot(n, 3, rng);
        EXPECT_LE(verify::max_abs_diff(fit(x, y, lambda, ridge::SolveForm::primal),
                                       fit(x, y, lambda, ridge::SolveForm::dual)),
                  1e-8)
            << n << "x" << c << " lambda " << lambda;
      }
}

TEST(RidgeFit, ShrinksAsLambdaGrows) {
  Rng rng(4);
  const Tensor<double> x = verify::random_tensor(Shape{10, 6}, rng);
  const Tensor<double> y = random_onehot(10, 3, rng);
  double previous = INFINITY;
  for (const double lambda : {1e-3, 0.1, 1.0, 5.0, 50.0}) {
    const double norm = frobenius(fit(x, y, lambda));
    EXPECT_LE(norm, previous);
    previous = norm;
  }
}

TEST(RidgeFit, ColumnPermutationIsEquivariant) {
  Rng rng(5);
  const Tensor<double> x = verify::random_tensor(Shape{9, 4}, rng);
  const Tensor<double> y = random_onehot(9, 3, rng);
  const std::size_t perm[3] = {2, 0, 1};
  Tensor<double> yp(y.shape());
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t k = 0; k < 3; ++k) yp[r * 3 + k] = y[r * 3 + perm[k]];
  const Tensor<double> w = fit(x, y, 0.7), wp = fit(x, yp, 0.7);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(wp[a * 3 + k], w[a * 3 + perm[k]], 1e-13);
}

TEST(RidgeFit, ClosedFormBatteryPasses) {
  for (const auto& r : verify::check_ridge_closed_form(50, 6)) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}

TEST(RidgeFit, RejectsNonPositiveLambdaAndMismatchedRows) {
  Rng rng(7);
  const Tensor<double> x = verify::random_tensor(Shape{4, 2}, rng);
  EXPECT_THROW(fit(x, random_onehot(4, 2, rng), 0.0), ValidationError);
  EXPECT_THROW(fit(x, random_onehot(5, 2, rng), 1.0), ShapeError);
}

TEST(RidgePredict, AffineAdjustment) {
  Tape<double> tape;
  const Var<double> xq = tape.constant(Tensor<double>(Shape{1, 1}, std::vector<double>{0.5}));
  const Var<double> w = tape.constant(Tensor<double>(Shape{1, 2}, std::vector<double>{1.0, 3.0}));
  auto s = [&tape](double v) { return tape.constant(Tensor<double>::scalar(v)); };
  const Tensor<double> plain = ridge::ridge_predict(xq, w, s(1.0), s(0.0)).value();
  EXPECT_EQ(plain, Tensor<double>(Shape{1, 2}, std::vector<double>{0.5, 1.5}));
  const Tensor<double> adjusted = ridge::ridge_predict(xq, w, s(2.0), s(-1.0)).value();
  EXPECT_EQ(adjusted[0], 0.0);
  EXPECT_EQ(adjusted[1], 2.0);
}

TEST(RidgePredict, ZeroAlphaGivesUniformLoss) {
  Rng rng(8);
  Tape<double> tape;
  const Var<double> xq = tape.constant(verify::random_tensor(Shape{6, 4}, rng));
  const Var<double> w = tape.constant(verify::random_tensor(Shape{4, 3}, rng));
  const Var<double> logits = ridge::ridge_predict(xq, w, tape.constant(Tensor<double>::scalar(0.0)),
                                                  tape.constant(Tensor<double>::scalar(0.3)));
  for (const double v : logits.value().data()) EXPECT_EQ(v, 0.3);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  EXPECT_NEAR(ad::softmax_cross_entropy(logits, labels).value().item(), std::log(3.0), 1e-12);
}

TEST(RidgePredict, RejectsShapeMismatch) {
  Tape<double> tape;
  EXPECT_THROW(ridge::ridge_predict(tape.constant(Tensor<double>(Shape{2, 3})), tape.constant(Tensor<double>(Shape{4, 2})),
                                    tape.constant(Tensor<double>::scalar(1.0)),
                                    tape.constant(Tensor<double>::scalar(0.0))),
               ShapeError);
}

TEST(RidgeHead, LossGradientMatchesFiniteDifferences) {
  Rng rng(9);
  const std::vector<int> labels{0, 1, 2, 1, 0, 2, 2};
  const std::vector<int> query_labels{2, 0, 1};
  const Tensor<double> y = ridge::make_targets(labels, 3).onehot<double>();
  const std::vector<Tensor<double>> inputs{verify::random_tensor(Shape{7, 5}, rng),
                                           verify::random_tensor(Shape{3, 5}, rng), Tensor<double>::scalar(-0.4),
                                           Tensor<double>::scalar(1.6), Tensor<double>::scalar(0.2)};
  const ad::TapeFunction fn = [&](Tape<double>&, std::span<const Var<double>> v) {
    const Var<double> w = ridge::ridge_fit(v[0], y, ad::exp(v[2]));
    return ad::softmax_cross_entropy(ridge::ridge_predict(v[1], w, v[3], v[4]), query_labels);
  };
  ad::GradCheckOptions options;
  options.h = 1e-6;
  const auto report = ad::grad_check(fn, inputs, options);
  EXPECT_TRUE(report.passed) << report.summary();
  // all three head scalars carry gradient
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  tape.backward(fn(tape, vars));
  for (std::size_t k = 2; k < 5; ++k) EXPECT_NE(tape.grad(vars[k]).item(), 0.0);
}

TEST(PrototypeHead, HandExamples) {
  Tape<double> tape;
  const Var<double> xs = tape.constant(Tensor<double>(Shape{4, 1}, std::vector<double>{0, 0, 2, 2}));
  const std::vector<int> labels{0, 0, 1, 1};
  const Tensor<double> mid =
      ridge::prototype_predict(xs, labels, 2, tape.constant(Tensor<double>(Shape{1, 1}, std::vector<double>{0.5}))).value();
  EXPECT_DOUBLE_EQ(mid[0], -0.25);
  EXPECT_DOUBLE_EQ(mid[1], -2.25);
  const Tensor<double> at = ridge::prototype_predict(xs, labels, 2, tape.constant(Tensor<double>(Shape{1, 1}, std::vector<double>{2.0}))).value();
  EXPECT_EQ(at[1], 0.0);
  EXPECT_LT(at[0], 0.0);
  const Tensor<double> tie = ridge::prototype_predict(xs, labels, 2, tape.constant(Tensor<double>(Shape{1, 1}, std::vector<double>{1.0}))).value();
  EXPECT_EQ(tie[0], tie[1]);
}

TEST(PrototypeHead, RejectsEmptyClass) {
  Tape<double> tape;
  const std::vector<int> labels{0, 0};
  EXPECT_THROW(ridge::prototype_predict(tape.constant(Tensor<double>(Shape{2, 1})), labels, 2,
                                        tape.constant(Tensor<double>(Shape{1, 1}))),
               ValidationError);
}

TEST(ConvstepHead, ZeroFeaturesGiveZeroLogits) {
  Rng rng(10);
  Tape<double> tape;
  const Tensor<double> y = random_onehot(5, 3, rng);
  const Tensor<double> out = ridge::convstep_predict(tape.constant(Tensor<double>(Shape{5, 4})), y,
                                                     tape.constant(verify::random_tensor(Shape{6, 4}, rng)))
                                 .value();
  EXPECT_EQ(out.shape(), (Shape{6, 3}));
  for (const double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConvstepHead, MatchesIndependentAdamStep) {
  Rng rng(11);
  const Tensor<double> x = verify::random_tensor(Shape{8, 5}, rng), xq = verify::random_tensor(Shape{4, 5}, rng);
  const Tensor<double> y = random_onehot(8, 3, rng);
  Tape<double> tape;
  const Tensor<double> got = ridge::convstep_predict(tape.constant(x), y, tape.constant(xq), 1e-3, 1e-8).value();
  EXPECT_LE(verify::max_abs_diff(got, verify::convstep_oracle(x, y, xq, 1e-3, 1e-8)), 1e-12);
}

TEST(SupportSubsample, CapsRowsAndKeepsEveryClass) {
  std::vector<int> labels(400, 0);
  for (std::size_t i = 0; i < 30; ++i) labels[i * 10] = 1;
  labels[7] = 2;
  const auto rows = ridge::subsample_support(labels, 3, 50, 12);
  EXPECT_LE(rows.size(), 50u);
  std::set<int> seen;
  for (const std::size_t r : rows) seen.insert(labels[r]);
  EXPECT_EQ(seen, (std::set<int>{0, 1, 2}));
  EXPECT_EQ(rows, ridge::subsample_support(labels, 3, 50, 12));
  EXPECT_EQ(ridge::subsample_support(labels, 3, 0, 12).size(), 400u);
}
