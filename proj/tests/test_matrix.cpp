#include <gtest/gtest.h>

#include <random>

#include "comportal/matrix.hpp"

using namespace comportal;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  std::vector<std::vector<double>> v;
  for (auto row : r) v.emplace_back(row);
  return SquareMatrix::from_rows(v).matrix();
}

const Matrix kF1 = rows({{-1, 0}, {1, -1}});
const Matrix kF2 = rows({{-1, 1}, {0, -1}});

}  // namespace

TEST(SquareMatrix, RejectsRaggedAndNonFinite) {
  EXPECT_THROW(SquareMatrix::from_rows({{1, 2}, {3}}), InvalidArgument);
  Matrix m = Matrix::Zero(2, 2);
  m(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(SquareMatrix{m}, InvalidArgument);
  EXPECT_THROW(SquareMatrix{Matrix(2, 3)}, InvalidArgument);
}

TEST(Validation, AcceptsCompartmentalExamples) {
  EXPECT_TRUE(validate_compartmental(kF1).accepted());
  EXPECT_TRUE(validate_compartmental(kF2).accepted());
  EXPECT_TRUE(validate_compartmental(Matrix::Zero(3, 3)).accepted());
}

TEST(Validation, ReportsPositiveColumnSum) {
  const auto r = validate_compartmental(rows({{-1, 2}, {1, -1}}));
  ASSERT_FALSE(r.accepted());
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].kind, Violation::Kind::PositiveColumnSum);
  EXPECT_EQ(r.violations[0].col, 2);
  EXPECT_DOUBLE_EQ(r.violations[0].value, 1.0);
}

TEST(Validation, ReportsNegativeOffDiagonalOneBased) {
  const auto r = validate_compartmental(rows({{-1, -0.5}, {0, -1}}));
  ASSERT_FALSE(r.accepted());
  EXPECT_EQ(r.violations[0].kind, Violation::Kind::NegativeOffDiagonal);
  EXPECT_EQ(r.violations[0].row, 1);
  EXPECT_EQ(r.violations[0].col, 2);
  EXPECT_THROW(CompartmentalMatrix::from(rows({{-1, -0.5}, {0, -1}})), InvalidArgument);
}

TEST(Validation, ClampsInsideTolerance) {
  const auto F = CompartmentalMatrix::from(rows({{-1, -1e-14}, {1 + 1e-14, 0}}));
  EXPECT_EQ(F(0, 1), 0.0);
  EXPECT_LE(F.colsums()(0), 0.0);
}

TEST(FlowParams, ExtractsOutflowAndRoundTrips) {
  const auto F = CompartmentalMatrix::from(kF1);
  const auto p = to_flow_params(F);
  EXPECT_DOUBLE_EQ(p.f0(0), 0.0);
  EXPECT_DOUBLE_EQ(p.f0(1), 1.0);
  EXPECT_DOUBLE_EQ(p.f(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.f(0, 0), 0.0);
  EXPECT_TRUE(p.to_matrix().isApprox(kF1));
}

TEST(FlowParams, RandomRoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 5;
    FlowParams p{Vector(n), Matrix::Zero(n, n)};
    for (int i = 0; i < n; ++i) {
      p.f0(i) = u(rng);
      for (int j = 0; j < n; ++j)
        if (i != j) p.f(i, j) = u(rng);
    }
    const auto F = CompartmentalMatrix::from(p.to_matrix());
    const auto q = to_flow_params(F);
    EXPECT_LT((q.f0 - p.f0).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((q.f - p.f).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Permutation, RejectsNonBijections) {
  EXPECT_THROW(Permutation({0, 0}), InvalidArgument);
  EXPECT_THROW(Permutation({0, 2}), InvalidArgument);
  EXPECT_EQ(Permutation::from_one_based({2, 1}).image(), (std::vector<int>{1, 0}));
}

TEST(Conjugation, SwapTakesF2ToF1) {
  const auto F2 = CompartmentalMatrix::from(kF2);
  const auto A = conjugate_by_permutation(F2, Permutation::from_one_based({2, 1}));
  EXPECT_TRUE(A.matrix().isApprox(kF1));
  const Matrix P = Permutation::from_one_based({2, 1}).matrix();
  EXPECT_TRUE((P * kF2 * P.transpose()).isApprox(A.matrix()));
}

TEST(Conjugation, GroupActionAndInverse) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  const int n = 5;
  FlowParams p{Vector(n), Matrix::Zero(n, n)};
  for (int i = 0; i < n; ++i) {
    p.f0(i) = u(rng);
    for (int j = 0; j < n; ++j)
      if (i != j) p.f(i, j) = u(rng);
  }
  const auto F = CompartmentalMatrix::from(p.to_matrix());
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> a(n), b(n);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    std::shuffle(a.begin(), a.end(), rng);
    std::shuffle(b.begin(), b.end(), rng);
    const Permutation r(a), s(b);
    const auto twice = conjugate_by_permutation(conjugate_by_permutation(F, r), s);
    EXPECT_EQ(twice.matrix(), conjugate_by_permutation(F, r.then(s)).matrix());
    EXPECT_EQ(conjugate_by_permutation(conjugate_by_permutation(F, r), r.inverse()).matrix(), F.matrix());
    const auto A = conjugate_by_permutation(F, r);
    for (int j = 0; j < n; ++j) EXPECT_EQ(A.colsums()(j), F.colsums()(r(j)));
  }
  EXPECT_TRUE(Permutation::identity(4).is_identity());
}
