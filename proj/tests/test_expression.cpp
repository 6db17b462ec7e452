#include <gtest/gtest.h>

#include "comportal/expression.hpp"

using namespace comportal;

namespace {

ParseContext traffic() {
  ParseContext c;
  c.constants = {{"vf", 2.0}, {"rho_max", 4.0}};
  return c;
}

}  // namespace

TEST(Expression, GreenshieldsFreeNames) {
  const auto e = Expression::parse("vf*(1 - x/rho_max)", traffic());
  EXPECT_EQ(e.free_variables(), std::set<std::string>{"x"});
  EXPECT_EQ(e.constants_used(), (std::set<std::string>{"rho_max", "vf"}));
  EXPECT_DOUBLE_EQ(e(0.0, 1.0), 1.5);
  EXPECT_DOUBLE_EQ(e(0.0, 4.0), 0.0);
}

TEST(Expression, Precedence) {
  EXPECT_DOUBLE_EQ(parse_expression("1 + 2*3")(0, 0), 7);
  EXPECT_DOUBLE_EQ(parse_expression("-2^2")(0, 0), -4);
  EXPECT_DOUBLE_EQ(parse_expression("2^3^2")(0, 0), 512);
  EXPECT_DOUBLE_EQ(parse_expression("8/4/2")(0, 0), 1);
  EXPECT_DOUBLE_EQ(parse_expression("8-4-2")(0, 0), 2);
  EXPECT_DOUBLE_EQ(parse_expression("2*t + x")(3, 1), 7);
  EXPECT_DOUBLE_EQ(parse_expression("1e-1 * 10")(0, 0), 1);
}

TEST(Expression, Functions) {
  EXPECT_DOUBLE_EQ(parse_expression("min(1, max(0, x))")(0, 2), 1);
  EXPECT_DOUBLE_EQ(parse_expression("clamp(x, 0, 1)")(0, -3), 0);
  EXPECT_DOUBLE_EQ(parse_expression("abs(x)")(0, -3), 3);
  EXPECT_NEAR(parse_expression("exp(log(x))")(0, 2.5), 2.5, 1e-15);
  EXPECT_DOUBLE_EQ(parse_expression("sqrt(x)")(0, 9), 3);
}

TEST(Expression, GuardedEvaluation) {
  const auto e = parse_expression("1/(x-1)");
  EXPECT_THROW(e(0, 1), EvaluationError);
  EXPECT_DOUBLE_EQ(e(0, 2), 1);
  EXPECT_THROW(parse_expression("log(x)")(0, 0), EvaluationError);
  EXPECT_THROW(parse_expression("sqrt(x)")(0, -1), EvaluationError);
}

TEST(Expression, ParseErrorsCarryPosition) {
  try {
    parse_expression("1 + y");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 4u);
  }
  EXPECT_THROW(parse_expression("1 +"), ParseError);
  EXPECT_THROW(parse_expression("(1"), ParseError);
  EXPECT_THROW(parse_expression("min(1)"), ParseError);
  EXPECT_THROW(parse_expression("foo(1)"), ParseError);
  EXPECT_THROW(parse_expression("1 2"), ParseError);
}

TEST(Expression, PrintReparses) {
  for (const char* src : {"vf*(1 - x/rho_max)", "-x^2 + t/3", "clamp(x, 0, rho_max) - min(t, 1)"}) {
    const auto e = Expression::parse(src, traffic());
    const auto again = Expression::parse(e.to_string(), traffic());
    EXPECT_EQ(again.to_string(), e.to_string());
    for (double x : {0.0, 0.7, 3.1}) EXPECT_DOUBLE_EQ(again(1.3, x), e(1.3, x));
  }
}

TEST(Expression, CustomVariables) {
  ParseContext c;
  c.variables = {"t"};
  const auto e = Expression::parse("0.5 + 0.1*t", c);
  const double v[1] = {2.0};
  EXPECT_DOUBLE_EQ(e.evaluate(std::span<const double>(v, 1)), 0.7);
  EXPECT_THROW(Expression::parse("x", c), ParseError);
}
