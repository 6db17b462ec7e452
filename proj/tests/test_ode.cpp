#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "comportal/ode.hpp"

using namespace comportal;

namespace {

const Matrix kF1 = (Matrix(2, 2) << -1, 0, 1, -1).finished();

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

IntegratorOptions step(double h) {
  IntegratorOptions o;
  o.step = h;
  return o;
}

}  // namespace

TEST(Integrate, F1ClosedForm) {
  const auto tr = integrate(SystemSpec::linear(kF1), v2(1, 1), 0, 1, step(1e-3));
  const Vector x = tr.final_state();
  EXPECT_NEAR(x(0), std::exp(-1.0), 1e-6);
  EXPECT_NEAR(x(1), 2 * std::exp(-1.0), 1e-6);
  EXPECT_DOUBLE_EQ(tr.t1(), 1.0);
  // Hermite output between grid points.
  const Vector mid = tr.at(0.5005);
  EXPECT_NEAR(mid(0), std::exp(-0.5005), 1e-8);
  EXPECT_NEAR(mid(1), 1.5005 * std::exp(-0.5005), 1e-8);
}

TEST(Integrate, AdaptiveMatchesClosedForm) {
  IntegratorOptions o;
  o.method = Method::DormandPrince45;
  const auto tr = integrate(SystemSpec::linear(kF1), v2(1, 1), 0, 3, o);
  EXPECT_NEAR(tr.final_state()(1), 4 * std::exp(-3.0), 1e-7);
  EXPECT_LT(tr.meta.accepted_steps, 300u);
}

TEST(Integrate, ZeroFieldIsConstant) {
  const auto tr = integrate(SystemSpec::linear(Matrix::Zero(2, 2)), v2(0.3, 0.7), 0, 2);
  for (const auto& x : tr.states) EXPECT_EQ(x, v2(0.3, 0.7));
}

TEST(Integrate, StepHalvingIsFourthOrder) {
  auto err = [](double h) {
    const auto tr = integrate(SystemSpec::linear(kF1), v2(1, 1), 0, 1, step(h));
    return std::abs(tr.final_state()(1) - 2 * std::exp(-1.0));
  };
  const double ratio = err(0.1) / err(0.05);
  EXPECT_GT(ratio, 12);
  EXPECT_LT(ratio, 20);
}

TEST(Integrate, RejectsBadInput) {
  const auto sys = SystemSpec::linear(kF1, BoxSpace::unit(2));
  EXPECT_THROW(integrate(sys, v2(1, 1), 1, 1), InvalidArgument);
  EXPECT_THROW(integrate(sys, v2(2, 1), 0, 1), InvalidArgument);
  EXPECT_THROW(integrate(sys, Vector::Ones(3), 0, 1), InvalidArgument);
}

TEST(Integrate, LeavingTheBoxUnderflows) {
  const Rhs push = [](double, const Vector& x) { return Vector(Vector::Ones(x.size())); };
  try {
    integrate(push, BoxSpace::unit(2), v2(0.5, 0.5), 0, 2, step(0.1));
    FAIL();
  } catch (const StepUnderflowError& e) {
    EXPECT_GE(e.component(), 1);
    EXPECT_NEAR(e.time(), 0.5, 0.11);
  }
}

TEST(Integrate, MassBalanceWithClosedColumns) {
  const Matrix F = (Matrix(3, 3) << -1, 0.5, 0, 1, -1, 2, 0, 0.5, -2).finished();
  const auto tr = integrate(SystemSpec::linear(F), (Vector(3) << 1, 2, 3).finished(), 0, 5);
  for (const auto& x : tr.states) EXPECT_NEAR(x.sum(), 6.0, 1e-8 * 5);
}

TEST(Integrate, RecordEveryThinsOutput) {
  IntegratorOptions o;
  o.record_every = 10;
  const auto tr = integrate(SystemSpec::linear(kF1), v2(1, 1), 0, 1, o);
  EXPECT_EQ(tr.size(), 11u);
  EXPECT_EQ(tr.meta.accepted_steps, 100u);
}

TEST(Ensemble, MatchesSequentialRuns) {
  const auto sys = SystemSpec::linear(kF1);
  const Rhs f = [&](double t, const Vector& x) { return sys.rhs(t, x); };
  const std::vector<Vector> init{v2(1, 0), v2(0, 1), v2(2, 3)};
  const auto all = integrate_ensemble(f, sys.space, init, 0, 1);
  for (std::size_t k = 0; k < init.size(); ++k)
    EXPECT_EQ(all[k].final_state(), integrate(sys, init[k], 0, 1).final_state());
}

TEST(Decay, SyntheticExponential) {
  std::vector<double> t, y;
  for (int k = 0; k <= 100; ++k) {
    t.push_back(0.05 * k);
    y.push_back(3 * std::exp(-2 * t.back()));
  }
  const auto fit = fit_exponential(t, y, 0, 5);
  EXPECT_NEAR(fit.lambda_hat, 2.0, 1e-6);
  EXPECT_NEAR(fit.gamma_hat, 3.0, 1e-6);
  EXPECT_LT(fit.residual, 1e-9);
}

TEST(Decay, F1WeightedRateBoundsObservedDecay) {
  const auto tr = integrate(SystemSpec::linear(kF1), v2(1, 1), 0, 10);
  const auto fit = measure_norm_decay(tr, v2(2, 1));
  EXPECT_GE(fit.lambda_hat, 0.45);
  EXPECT_DOUBLE_EQ(fit.window_begin, 2.0);
}

TEST(Decay, ZeroTrajectoryIsExactZero) {
  const auto tr = integrate(SystemSpec::linear(kF1), v2(0, 0), 0, 1);
  const auto fit = measure_norm_decay(tr);
  EXPECT_TRUE(fit.exact_zero);
  EXPECT_TRUE(fit.degenerate);
}

TEST(Distance, IdenticalAndClosedForm) {
  const auto sys = SystemSpec::linear(kF1);
  const auto a = integrate(sys, v2(1, 0), 0, 3, step(1e-3));
  const auto b = integrate(sys, v2(0, 1), 0, 3, step(1e-3));
  const auto same = pairwise_distance(a, a);
  for (double d : same) EXPECT_EQ(d, 0.0);
  const auto d = pairwise_distance(a, b);
  for (std::size_t k = 0; k < a.size(); k += 100) {
    const double t = a.times[k];
    EXPECT_NEAR(d[k], std::exp(-t) * (1 + std::abs(t - 1)), 1e-9);
  }
}

TEST(Ordering, CooperativePassesFlippedFails) {
  const auto sys = SystemSpec::linear(kF1);
  const auto lo = integrate(sys, v2(0.2, 0.1), 0, 3);
  const auto hi = integrate(sys, v2(0.5, 0.1), 0, 3);
  EXPECT_TRUE(check_ordering(lo, hi).passed);
  EXPECT_TRUE(check_ordering(lo, lo).passed);

  const Rhs flipped = [](double, const Vector& x) { return v2(-x(0), -x(0) - x(1)); };
  const auto box = BoxSpace{Vector::Constant(2, -10), Vector::Constant(2, 10)};
  const auto a = integrate(flipped, box, v2(0.2, 0.1), 0, 3);
  const auto b = integrate(flipped, box, v2(0.5, 0.1), 0, 3);
  const auto v = check_ordering(a, b);
  EXPECT_FALSE(v.passed);
  EXPECT_EQ(v.witness_component, 2);
  EXPECT_GT(v.witness_time, 0);
}

TEST(Bracket, DistanceDominatedByBracket) {
  const auto sys = SystemSpec::linear(kF1);
  const Vector p = v2(0.9, 0.1), q = v2(0.2, 0.6);
  const auto [lo, hi] = bracket(p, q);
  EXPECT_EQ(lo, v2(0.2, 0.1));
  EXPECT_EQ(hi, v2(0.9, 0.6));
  const auto dx = pairwise_distance(integrate(sys, p, 0, 4), integrate(sys, q, 0, 4));
  const auto dy = pairwise_distance(integrate(sys, lo, 0, 4), integrate(sys, hi, 0, 4));
  for (std::size_t k = 0; k < dx.size(); ++k) EXPECT_LE(dx[k], dy[k] + 1e-12);
}

TEST(Export, CsvAndGnuplot) {
  const auto tr = integrate(SystemSpec::linear(kF1), v2(1, 1), 0, 0.02);
  std::ostringstream csv;
  write_csv(csv, tr);
  EXPECT_EQ(csv.str().substr(0, 8), "t,x1,x2\n");
  EXPECT_NE(csv.str().find("\n0.01,"), std::string::npos);
  std::ostringstream gp;
  write_gnuplot(gp, {0, 1}, {{1, 2}, {3, 4}}, {"a", "b"});
  EXPECT_EQ(gp.str(), "# t a b\n0 1 3\n1 2 4\n");
}

TEST(Lipschitz, LinearFieldBoundedByColumnNorm) {
  const Rhs f = [](double, const Vector& x) { return Vector(kF1 * x); };
  const double L = estimate_lipschitz(f, BoxSpace::unit(2));
  EXPECT_GT(L, 0.5);
  EXPECT_LE(L, 2.0 + 1e-12);
  EXPECT_DOUBLE_EQ(default_step(L), std::min(0.01, 0.1 / L));
}
