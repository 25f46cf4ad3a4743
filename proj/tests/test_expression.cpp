#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "quclab/expression.hpp"
#include "quclab/jet.hpp"

using namespace quclab;

TEST(Expression, ArithmeticAndPrecedence) {
    EXPECT_DOUBLE_EQ(Expression::parse("1 + 2 * 3")(0, 0, 0), 7.0);
    EXPECT_DOUBLE_EQ(Expression::parse("(1 + 2) * 3")(0, 0, 0), 9.0);
    EXPECT_DOUBLE_EQ(Expression::parse("-x1^2")(3, 0, 0), -9.0);
    EXPECT_DOUBLE_EQ(Expression::parse("2^3^2")(0, 0, 0), 512.0);
    EXPECT_DOUBLE_EQ(Expression::parse("x1 - x2 - t")(5, 2, 1), 2.0);
    EXPECT_DOUBLE_EQ(Expression::parse("8 / 4 / 2")(0, 0, 0), 1.0);
    EXPECT_NEAR(Expression::parse("pi")(0, 0, 0), std::numbers::pi, 0.0);
    EXPECT_NEAR(Expression::parse("0.5*cos(x1) + 1e-1*exp(t)")(0.3, 0, 0.2), 0.5 * std::cos(0.3) + 0.1 * std::exp(0.2), 1e-15);
    EXPECT_NEAR(Expression::parse("pow(x1 + 1, 1.5)")(2, 0, 0), std::pow(3.0, 1.5), 1e-14);
}

TEST(Expression, DerivativesMatchClosedForms) {
    auto e = Expression::parse("sin(x1) * exp(-t) + x2^3");
    double x1 = 0.7, x2 = -0.4, t = 0.3;
    EXPECT_NEAR(e.derivative(Expression::x1)(x1, x2, t), std::cos(x1) * std::exp(-t), 1e-15);
    EXPECT_NEAR(e.derivative(Expression::x2)(x1, x2, t), 3 * x2 * x2, 1e-15);
    EXPECT_NEAR(e.derivative(Expression::t)(x1, x2, t), -std::sin(x1) * std::exp(-t), 1e-15);
}

TEST(Expression, QuotientDerivativeAgainstDifferences) {
    auto e = Expression::parse("pow(x1, 3) / (1 + x1^2) * cos(t)");
    auto d = e.derivative(Expression::x1);
    for (double x : {-1.3, -0.2, 0.4, 2.1}) {
        double h = 1e-5;
        // fourth-order central difference
        double fd = (-e(x + 2 * h, 0, 0.4) + 8 * e(x + h, 0, 0.4) - 8 * e(x - h, 0, 0.4) + e(x - 2 * h, 0, 0.4)) / (12 * h);
        EXPECT_NEAR(d(x, 0, 0.4), fd, 1e-9);
    }
}

TEST(Expression, ConstantsFoldAndVariableUse) {
    auto e = Expression::parse("2 * 3 + cos(0)");
    EXPECT_TRUE(e.is_constant());
    EXPECT_DOUBLE_EQ(e.constant_value(), 7.0);
    auto v = Expression::parse("x1 + 0 * t");
    EXPECT_FALSE(v.uses_variable(Expression::t));
    EXPECT_TRUE(v.derivative(Expression::t).is_constant());
    EXPECT_FALSE(Expression::parse("x1").uses_variable(Expression::x2));
}

TEST(Expression, PrintedFormParsesBack) {
    auto e = Expression::parse("0.25*sin(2*x1 - t) / (2 + cos(x2)) + pow(x1*x1 + 1, 0.5)");
    auto r = Expression::parse(e.to_string());
    for (double x : {-0.5, 0.1, 0.9}) EXPECT_DOUBLE_EQ(e(x, 0.3, 0.2), r(x, 0.3, 0.2));
}

TEST(Expression, RejectsNonDifferentiableAndMalformed) {
    for (const char* bad : {"abs(x1)", "sqrt(x1)", "max(x1, 0)", "floor(t)", "sign(x2)"}) {
        try {
            Expression::parse(bad);
            FAIL() << bad;
        } catch (const ExpressionError& err) {
            EXPECT_NE(std::string(err.what()).find("non-differentiable"), std::string::npos) << bad;
        }
    }
    for (const char* bad : {"y + 1", "2 * (x1", "x1 +", "pow(x1, t)", "x1 ^ x2", "3 $ 4", "sin x1"})
        EXPECT_THROW(Expression::parse(bad), ExpressionError) << bad;
}

TEST(Jet, ProductQuotientAndChainRule) {
    // f(x) = sin(x) * exp(x) / (1 + x^2) at x = 0.6; oracle by nested fourth-order differences.
    auto f = [](double x) { return std::sin(x) * std::exp(x) / (1 + x * x); };
    Jet2 x = Jet2::variable(0.6);
    Jet2 v = sin(x) * exp(x) / (Jet2(1.0) + pow(x, 2.0));
    double h = 1e-3;
    double d1 = (-f(0.6 + 2 * h) + 8 * f(0.6 + h) - 8 * f(0.6 - h) + f(0.6 - 2 * h)) / (12 * h);
    double d2 = (-f(0.6 + 2 * h) + 16 * f(0.6 + h) - 30 * f(0.6) + 16 * f(0.6 - h) - f(0.6 - 2 * h)) / (12 * h * h);
    EXPECT_NEAR(v.v, f(0.6), 1e-15);
    EXPECT_NEAR(v.d, d1, 1e-10);
    EXPECT_NEAR(v.dd, d2, 1e-7);
}

TEST(Jet, ExpressionEvaluatesOnJets) {
    auto e = Expression::parse("cos(x1) * pow(x1, 3) - exp(-x1)");
    auto d1 = e.derivative(Expression::x1);
    auto d2 = d1.derivative(Expression::x1);
    for (double x : {0.3, 1.1, 2.5}) {
        Jet2 j = e.evaluate<Jet2>({Jet2::variable(x), Jet2(0.0), Jet2(0.0)});
        EXPECT_NEAR(j.v, e(x, 0, 0), 1e-14);
        EXPECT_NEAR(j.d, d1(x, 0, 0), 1e-12);
        EXPECT_NEAR(j.dd, d2(x, 0, 0), 1e-12);
    }
}
