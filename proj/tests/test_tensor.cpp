#include <gtest/gtest.h>

#include <cmath>

#include "pifold/tensor.hpp"
#include "test_util.hpp"

namespace pifold {
namespace {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using testing::probe;
using testing::random_matrix;
using testing::random_segments;

constexpr double kStep = 1e-4;
constexpr double kTol = 1e-4;

TEST(SegmentSoftmax, SingleElementIsOne) {
  Tape<double> t;
  Matrix<double> x(1, 1);
  x << 3.7;
  auto y = ad::segment_softmax(t.constant(x), ad::make_indices({0}), 1);
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 1.0);
}

TEST(SegmentSoftmax, EqualLogitsAreUniform) {
  Tape<double> t;
  auto y = ad::segment_softmax(t.constant(Matrix<double>::Zero(3, 1)), ad::make_indices({0, 0, 0}), 1);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y.value()(i, 0), 1.0 / 3.0, 1e-15);
}

TEST(SegmentSoftmax, MatchesLiteralFormula) {
  Tape<double> t;
  Matrix<double> x(3, 1);
  x << 1, 2, 3;
  auto y = ad::segment_softmax(t.constant(x), ad::make_indices({0, 0, 1}), 2);
  const double z = std::exp(1.0) + std::exp(2.0);
  EXPECT_NEAR(y.value()(0, 0), std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(y.value()(1, 0), std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(y.value()(2, 0), 1.0, 1e-15);
}

TEST(SegmentSoftmax, SumsToOneAndIgnoresShift) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(30));
    const int s = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
    const auto seg = random_segments(rng, m, s);
    Matrix<double> x = random_matrix(rng, m, 3, 50.0);
    Tape<double> t;
    auto y = ad::segment_softmax(t.constant(x), ad::make_indices(seg), s);
    Matrix<double> sums = Matrix<double>::Zero(s, 3);
    for (int r = 0; r < m; ++r) sums.row(seg[r]) += y.value().row(r);
    EXPECT_LT((sums.array() - 1.0).abs().maxCoeff(), 1e-9);
    EXPECT_GT(y.value().minCoeff(), 0.0 - 1e-300);
    // Shift every logit of segment 0 by a constant.
    Matrix<double> shifted = x;
    for (int r = 0; r < m; ++r)
      if (seg[r] == 0) shifted.row(r).array() += 123.0;
    auto y2 = ad::segment_softmax(t.constant(shifted), ad::make_indices(seg), s);
    EXPECT_LT((y.value() - y2.value()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(SegmentSoftmax, LargeLogitsStayFinite) {
  Tape<double> t;
  Matrix<double> x(2, 1);
  x << 1000.0, 999.0;
  auto y = ad::segment_softmax(t.constant(x), ad::make_indices({0, 0}), 1);
  EXPECT_TRUE(y.value().allFinite());
  EXPECT_NEAR(y.value()(0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(SegmentSoftmax, Errors) {
  Tape<double> t;
  EXPECT_THROW(ad::segment_softmax(t.constant(Matrix<double>(0, 1)), ad::make_indices({}), 0), Error);
  Matrix<double> x(2, 1);
  x << 0.0, std::nan("");
  try {
    ad::segment_softmax(t.constant(x), ad::make_indices({0, 0}), 1);
    FAIL() << "NaN logits accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
  EXPECT_THROW(ad::segment_softmax(t.constant(Matrix<double>::Zero(2, 1)), ad::make_indices({0, 2}), 2), Error);
}

TEST(SegmentWeightedSum, Identity) {
  Tape<double> t;
  Matrix<double> w(1, 1), v(1, 2);
  w << 1.0;
  v << 2.5, -1.0;
  auto y = ad::segment_weighted_sum(t.constant(w), t.constant(v), ad::make_indices({0}), 1);
  EXPECT_EQ(y.value(), v);
}

TEST(SegmentWeightedSum, Mean) {
  Tape<double> t;
  Matrix<double> w(2, 1), v(2, 1);
  w << 0.5, 0.5;
  v << 2, 4;
  auto y = ad::segment_weighted_sum(t.constant(w), t.constant(v), ad::make_indices({0, 0}), 1);
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 3.0);
}

TEST(SegmentWeightedSum, MatchesLoopOracle) {
  Rng rng(9);
  for (int heads : {1, 3}) {
    const int m = 7, d = 3 * heads, s = 2;
    const auto seg = random_segments(rng, m, s);
    Matrix<double> w = random_matrix(rng, m, heads), v = random_matrix(rng, m, d);
    Tape<double> t;
    auto y = ad::segment_weighted_sum(t.constant(w), t.constant(v), ad::make_indices(seg), s);
    Matrix<double> expect = Matrix<double>::Zero(s, d);
    for (int j = 0; j < m; ++j)
      for (int c = 0; c < d; ++c) expect(seg[j], c) += w(j, c / (d / heads)) * v(j, c);
    EXPECT_LT((y.value() - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SegmentWeightedSum, ShapeMismatch) {
  Tape<double> t;
  EXPECT_THROW(ad::segment_weighted_sum(t.constant(Matrix<double>::Ones(2, 1)), t.constant(Matrix<double>::Ones(3, 2)),
                                        ad::make_indices({0, 0}), 1),
               Error);
  EXPECT_THROW(ad::segment_weighted_sum(t.constant(Matrix<double>::Ones(2, 2)), t.constant(Matrix<double>::Ones(2, 3)),
                                        ad::make_indices({0, 0}), 1),
               Error);
}

TEST(SegmentOps, SumMeanPrefixMeanMatchLoops) {
  Rng rng(11);
  const int m = 9, s = 3, d = 2;
  const auto seg = random_segments(rng, m, s);
  Matrix<double> x = random_matrix(rng, m, d);
  Tape<double> t;
  auto xs = t.constant(x);
  auto ids = ad::make_indices(seg);
  Matrix<double> sum = Matrix<double>::Zero(s, d), cnt = Matrix<double>::Zero(s, 1);
  Matrix<double> running(m, d);
  for (int r = 0; r < m; ++r) {
    sum.row(seg[r]) += x.row(r);
    cnt(seg[r], 0) += 1;
    running.row(r) = sum.row(seg[r]) / cnt(seg[r], 0);
  }
  EXPECT_LT((ad::segment_sum(xs, ids, s).value() - sum).cwiseAbs().maxCoeff(), 1e-12);
  Matrix<double> mean = sum.array().colwise() / cnt.col(0).array();
  EXPECT_LT((ad::segment_mean(xs, ids, s).value() - mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((ad::prefix_mean(xs, ids, s).value() - running).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SegmentOps, MeanOfEmptySegmentThrows) {
  Tape<double> t;
  EXPECT_THROW(ad::segment_mean(t.constant(Matrix<double>::Ones(2, 1)), ad::make_indices({0, 0}), 2), Error);
}

// --- gradient checks -----------------------------------------------------------

TEST(GradCheck, QuadraticIsExact) {
  Matrix<double> x(1, 2);
  x << 1, 2;
  auto r = ad::grad_check([](Tape<double>&, Var<double> v) { return ad::sum(ad::mul(v, v)); }, x, kStep);
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_NEAR(r.analytic(0, 0), 2.0, 1e-15);
  EXPECT_NEAR(r.analytic(0, 1), 4.0, 1e-15);
}

TEST(GradCheck, ConstantFunction) {
  Matrix<double> x = Matrix<double>::Ones(2, 2);
  auto r = ad::grad_check(
      [](Tape<double>& t, Var<double>) { return t.constant(Matrix<double>::Constant(1, 1, 4.0)); }, x, kStep);
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.analytic.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GradCheck, NonFiniteProbeThrows) {
  Matrix<double> x = Matrix<double>::Constant(1, 1, 1.0);
  EXPECT_THROW(ad::grad_check(
                   [](Tape<double>& t, Var<double> v) {
                     // Finite at x, infinite once probed.
                     const double y = v.value()(0, 0) == 1.0 ? 1.0 : INFINITY;
                     return ad::add(ad::sum(v), t.constant(Matrix<double>::Constant(1, 1, y)));
                   },
                   x, kStep),
               Error);
}

struct OpCase {
  const char* name;
  ad::Index rows, cols;
  std::function<Var<double>(Tape<double>&, Var<double>)> f;
};

class OpGradients : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
  Rng rng(21);
  const auto seg = random_segments(rng, 8, 3);
  auto ids = ad::make_indices(seg);
  auto gather = ad::make_indices({3, 0, 0, 7, 2});
  Matrix<double> w = random_matrix(rng, 4, 5), b = random_matrix(rng, 1, 5), other = random_matrix(rng, 8, 4);
  Matrix<double> gamma = random_matrix(rng, 1, 4), beta = random_matrix(rng, 1, 4), wts = random_matrix(rng, 8, 2);
  std::vector<std::int32_t> labels = {0, 3, 1, 2, 2, 0, 1, 3};
  std::vector<double> rw = {1, 0.5, 0, 1, 2, 1, 1, 0.25};
  return {
      {"matmul", 8, 4, [=](Tape<double>& t, Var<double> x) { return probe(ad::matmul(x, t.constant(w)), 1); }},
      {"matmul_rhs", 4, 5,
       [=](Tape<double>& t, Var<double> x) { return probe(ad::matmul(t.constant(other), x), 1); }},
      {"affine", 8, 4,
       [=](Tape<double>& t, Var<double> x) { return probe(ad::affine(x, t.constant(w), t.constant(b)), 2); }},
      {"affine_weights", 4, 5,
       [=](Tape<double>& t, Var<double> x) { return probe(ad::affine(t.constant(other), x, t.constant(b)), 2); }},
      {"add_sub_mul", 8, 4,
       [=](Tape<double>& t, Var<double> x) {
         auto o = t.constant(other);
         return probe(ad::mul(ad::sub(x, o), ad::add(x, ad::scale(o, 0.5))), 3);
       }},
      {"concat_cols", 8, 4,
       [=](Tape<double>& t, Var<double> x) { return probe(ad::concat_cols({x, t.constant(other), x}), 4); }},
      {"concat_rows", 8, 4,
       [=](Tape<double>&, Var<double> x) { return probe(ad::concat_rows(x, ad::scale(x, 2.0)), 4); }},
      {"gather_rows", 8, 4, [=](Tape<double>&, Var<double> x) { return probe(ad::gather_rows(x, gather), 5); }},
      {"segment_softmax", 8, 2, [=](Tape<double>&, Var<double> x) { return probe(ad::segment_softmax(x, ids, 3), 6); }},
      {"segment_sum", 8, 4, [=](Tape<double>&, Var<double> x) { return probe(ad::segment_sum(x, ids, 3), 7); }},
      {"segment_mean", 8, 4, [=](Tape<double>&, Var<double> x) { return probe(ad::segment_mean(x, ids, 3), 8); }},
      {"prefix_mean", 8, 4, [=](Tape<double>&, Var<double> x) { return probe(ad::prefix_mean(x, ids, 3), 8); }},
      {"segment_weighted_sum_values", 8, 4,
       [=](Tape<double>& t, Var<double> x) {
         return probe(ad::segment_weighted_sum(t.constant(wts), x, ids, 3), 9);
       }},
      {"segment_weighted_sum_weights", 8, 2,
       [=](Tape<double>& t, Var<double> x) {
         return probe(ad::segment_weighted_sum(x, t.constant(other), ids, 3), 9);
       }},
      {"sigmoid", 8, 4, [=](Tape<double>&, Var<double> x) { return probe(ad::sigmoid(x), 10); }},
      {"gelu", 8, 4, [=](Tape<double>&, Var<double> x) { return probe(ad::gelu(ad::scale(x, 3.0)), 11); }},
      {"layer_norm", 8, 4,
       [=](Tape<double>& t, Var<double> x) {
         return probe(ad::layer_norm(x, t.constant(gamma), t.constant(beta)), 12);
       }},
      {"layer_norm_affine", 1, 4,
       [=](Tape<double>& t, Var<double> x) {
         return probe(ad::layer_norm(t.constant(other), x, ad::scale(x, -1.0)), 12);
       }},
      {"nll_loss", 8, 4,
       [=](Tape<double>&, Var<double> x) {
         return ad::nll_loss(ad::scale(x, 3.0), std::span<const std::int32_t>(labels), std::span<const double>(rw));
       }},
      {"mean", 8, 4, [=](Tape<double>&, Var<double> x) { return ad::mean(ad::mul(x, x)); }},
  };
}

TEST_P(OpGradients, MatchCentralDifferences) {
  const auto cases = op_cases();
  const auto& c = cases[static_cast<std::size_t>(GetParam())];
  Rng rng(100 + static_cast<std::uint64_t>(GetParam()));
  Matrix<double> x = random_matrix(rng, c.rows, c.cols);
  auto r = ad::grad_check(c.f, x, kStep);
  EXPECT_LT(r.max_rel_error, kTol) << c.name << " worst index " << r.worst_index;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradients, ::testing::Range(0, static_cast<int>(op_cases().size())),
                         [](const ::testing::TestParamInfo<int>& info) {
                           return std::string(op_cases()[static_cast<std::size_t>(info.param)].name);
                         });

// --- tape contract ------------------------------------------------------------------

TEST(Tape, BackwardRunsInReverseOrder) {
  Tape<double> t;
  auto x = t.variable(Matrix<double>::Ones(2, 2));
  auto a = ad::sigmoid(x);
  auto b = ad::mul(a, x);
  auto c = ad::sum(b);
  t.backward(c);
  const std::vector<std::size_t> expect = {c.id(), b.id(), a.id()};
  EXPECT_EQ(t.backward_trace(), expect);
}

TEST(Tape, SecondBackwardIsAnError) {
  Tape<double> t;
  auto x = t.variable(Matrix<double>::Ones(1, 1));
  auto y = ad::sum(ad::mul(x, x));
  t.backward(y);
  try {
    t.backward(y);
    FAIL() << "second backward accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kState);
  }
}

TEST(Tape, GradientsShareValueShape) {
  Tape<double> t;
  auto x = t.variable(Matrix<double>::Ones(3, 2));
  auto unused = t.variable(Matrix<double>::Ones(4, 5));
  t.backward(ad::sum(x));
  EXPECT_EQ(x.grad().rows(), 3);
  EXPECT_EQ(x.grad().cols(), 2);
  EXPECT_EQ(unused.grad().rows(), 4);
  EXPECT_EQ(unused.grad().cols(), 5);
  EXPECT_EQ(unused.grad().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Tape, ConstantsNeedNoGradient) {
  Tape<double> t;
  auto c = t.constant(Matrix<double>::Ones(2, 2));
  auto y = ad::sigmoid(c);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tape, RewindDropsLaterNodes) {
  Tape<float> t;
  auto x = t.constant(Matrix<float>::Ones(2, 2));
  const auto mark = t.size();
  ad::sigmoid(ad::gelu(x));
  EXPECT_GT(t.size(), mark);
  t.rewind(mark);
  EXPECT_EQ(t.size(), mark);
  EXPECT_THROW(t.rewind(mark + 5), Error);
}

TEST(Tape, ForwardIsBitDeterministic) {
  Rng rng(3);
  Matrix<double> x = random_matrix(rng, 6, 4);
  auto run = [&] {
    Tape<double> t;
    auto v = t.constant(x);
    return ad::layer_norm(ad::gelu(v), t.constant(Matrix<double>::Ones(1, 4)), t.constant(Matrix<double>::Zero(1, 4)))
        .value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, MixedTapesRejected) {
  Tape<double> a, b;
  EXPECT_THROW(ad::add(a.constant(Matrix<double>::Ones(1, 1)), b.constant(Matrix<double>::Ones(1, 1))), Error);
}

TEST(Tape, ShapeErrors) {
  Tape<double> t;
  EXPECT_THROW(ad::matmul(t.constant(Matrix<double>::Ones(2, 3)), t.constant(Matrix<double>::Ones(2, 3))), Error);
  EXPECT_THROW(ad::add(t.constant(Matrix<double>::Ones(2, 3)), t.constant(Matrix<double>::Ones(3, 2))), Error);
  EXPECT_THROW(ad::gather_rows(t.constant(Matrix<double>::Ones(2, 3)), ad::make_indices({2})), Error);
}

TEST(Gelu, ExactErfForm) {
  Tape<double> t;
  Matrix<double> x(1, 3);
  x << -1.5, 0.0, 2.0;
  auto y = ad::gelu(t.constant(x));
  for (int i = 0; i < 3; ++i)
    EXPECT_NEAR(y.value()(0, i), 0.5 * x(0, i) * (1.0 + std::erf(x(0, i) / std::sqrt(2.0))), 1e-15);
}

TEST(NllLoss, UniformLogitsGiveLn20) {
  Tape<double> t;
  std::vector<std::int32_t> labels = {0, 5, 19};
  std::vector<double> w = {1, 1, 1};
  auto l = ad::nll_loss(t.constant(Matrix<double>::Zero(3, 20)), std::span<const std::int32_t>(labels),
                        std::span<const double>(w));
  EXPECT_NEAR(l.value()(0, 0), std::log(20.0), 1e-12);
}

TEST(Float32, OpsMatchDoubleClosely) {
  Rng rng(4);
  Matrix<double> x = random_matrix(rng, 5, 4);
  Tape<double> td;
  Tape<float> tf;
  auto yd = ad::gelu(ad::sigmoid(td.constant(x))).value();
  auto yf = ad::gelu(ad::sigmoid(tf.constant(x.cast<float>()))).value();
  EXPECT_LT((yd - yf.cast<double>()).cwiseAbs().maxCoeff(), 1e-6);
}

}  // namespace
}  // namespace pifold
