#include <gtest/gtest.h>

#include <random>

#include "ufg/expr.hpp"

using namespace ufg;

namespace {

const std::vector<std::string> kXY{"x", "y"};
const std::vector<std::string> kZ{"z"};

Expr P(const std::string& s, const std::vector<std::string>& vars = kXY) { return parse_expression(s, vars); }

// Expressions used by the differentiation and simplification properties, with their sampling boxes.
struct Case {
  std::string text;
  double lo, hi;
};
const std::vector<Case> kCorpus{
    {"sin(x)*cos(y) - x^3", -3, 3},
    {"exp(-1/x)", 0.2, 3},
    {"sin(x)/x + y", 0.1, 4},
    {"exp(-1/(1-cos(x)))/(1-cos(x))", 0.3, 6},
    {"tanh(x*y) - sqrt(x^2 + 1)", -2, 2},
    {"log(1 + x^2) * y^2 / (2 + sin(y))", -2, 2},
    {"x^2.5 + y^(-2)", 0.5, 2},
    {"-(x - y)*-(y + 2)", -2, 2},
    {"(1 - cos(x))*(sin(x) + 1e-3*x^4)", -4, 4},
};

}  // namespace

TEST(Expr, ParsesNegatedFunction) {
  Expr e = parse_expression("-sin(x)", kXY);
  EXPECT_TRUE(e == -sin(Expr::variable(0)));
}

TEST(Expr, ParsesSumOfProductAndConstant) {
  Expr e = P("x*y + 2");
  EXPECT_TRUE(e == Expr::variable(0) * Expr::variable(1) + Expr::constant(2));
}

TEST(Expr, ParsesDensityExpression) {
  Expr e = P("exp(-1/(1-cos(z)))/(1-cos(z))", kZ);
  EXPECT_NEAR(evaluate(e, {2.0}), 0.3485125103433644, 1e-15);
}

TEST(Expr, PrecedenceAndAssociativity) {
  EXPECT_DOUBLE_EQ(evaluate(P("1 - 2 - 3"), {0.0, 0.0}), -4.0);
  EXPECT_DOUBLE_EQ(evaluate(P("8 / 4 / 2"), {0.0, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(evaluate(P("2*3^2"), {0.0, 0.0}), 18.0);
  EXPECT_DOUBLE_EQ(evaluate(P("-x^2"), {3.0, 0.0}), -9.0);
  EXPECT_DOUBLE_EQ(evaluate(P("x^(-1)"), {4.0, 0.0}), 0.25);
  EXPECT_THROW(P("x^-1"), ParseError);
  EXPECT_DOUBLE_EQ(evaluate(P("x*-y"), {2.0, 3.0}), -6.0);
  EXPECT_DOUBLE_EQ(evaluate(P(" 1.5e1 +\t y "), {0.0, 1.0}), 16.0);
}

TEST(Expr, DerivativeOfSin) {
  Expr d = differentiate(P("sin(x)"), 0);
  EXPECT_TRUE(d == cos(Expr::variable(0))) << print(d);
}

TEST(Expr, DerivativeOfExpMinusInverse) {
  Expr e = P("exp(-1/x)");
  Expr d = differentiate(e, 0);
  Expr closed = P("(1/x^2)*exp(-1/x)");
  for (double x : {0.5, 1.0, 2.0}) {
    double fd = (evaluate(e, {x + 1e-6, 0.0}) - evaluate(e, {x - 1e-6, 0.0})) / 2e-6;
    EXPECT_NEAR(evaluate(d, {x, 0.0}), fd, 1e-8);
    EXPECT_NEAR(evaluate(d, {x, 0.0}), evaluate(closed, {x, 0.0}), 1e-14);
  }
}

TEST(Expr, DerivativeOfSincMatchesQuotientRule) {
  Expr d = differentiate(P("sin(z)/z", kZ), 0);
  Expr q = P("(cos(z)*z - sin(z))/z^2", kZ);
  for (double z : {0.3, 1.3, 4.0}) EXPECT_NEAR(evaluate(d, {z}), evaluate(q, {z}), 1e-14);
  EXPECT_NEAR(evaluate(d, {1.3}), -0.3643844427249877, 1e-14);
}

// Values frozen from an independent symbolic package.
TEST(Expr, DerivativeOracleValues) {
  EXPECT_NEAR(evaluate(differentiate(P("exp(-1/x)"), 0), {0.5, 0.0}), 0.5413411329464508, 1e-14);
  EXPECT_NEAR(evaluate(differentiate(P("exp(-1/(1-cos(z)))/(1-cos(z))", kZ), 0), {2.0}), -0.06575887260859523, 1e-14);
  EXPECT_NEAR(evaluate(differentiate(P("tanh(x*y)^3 + sqrt(x)*log(y)"), 0), {0.7, 1.9}), 1.4362086199430846, 1e-13);
  EXPECT_NEAR(evaluate(differentiate(P("x^2.5/(1+y^2)"), 1), {1.1, -0.4}), 0.7544938800748413, 1e-14);
}

TEST(Expr, EvaluateExamples) {
  EXPECT_EQ(evaluate(Expr::constant(2.0), {7.0}), 2.0);
  EXPECT_EQ(evaluate(P("sin(x)"), {0.0, 0.0}), 0.0);
  EXPECT_NEAR(evaluate(P("exp(-1/x)"), {1.0, 0.0}), 0.36787944117144233, 1e-16);
}

TEST(Expr, DomainErrorsNameTheSubtree) {
  try {
    evaluate(P("y + log(x - 1)"), {0.5, 0.0});
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(e.subtree().find("log"), std::string::npos) << e.subtree();
  }
  EXPECT_THROW(evaluate(P("sqrt(x)"), {-1.0, 0.0}), DomainError);
  EXPECT_THROW(evaluate(P("1/x"), {0.0, 0.0}), DomainError);
  EXPECT_THROW(evaluate(P("x^0.5"), {-2.0, 0.0}), DomainError);
  EXPECT_THROW(evaluate(P("exp(x)"), {1000.0, 0.0}), DomainError);
  EXPECT_THROW(evaluate(P("x + y"), {1.0}), DimensionError);
}

TEST(Expr, IntegerPowersOfNegativeBases) {
  EXPECT_DOUBLE_EQ(evaluate(P("x^3"), {-2.0, 0.0}), -8.0);
  EXPECT_DOUBLE_EQ(evaluate(P("x^(-2)"), {-2.0, 0.0}), 0.25);
}

TEST(Expr, SimplifyExamples) {
  EXPECT_TRUE(simplify(Expr::constant(0) * sin(Expr::variable(0))).is_zero());
  EXPECT_TRUE(simplify(Expr::variable(0) + Expr::constant(0)) == Expr::variable(0));
  Expr sc = sin(Expr::variable(0)) * cos(Expr::variable(0));
  EXPECT_TRUE(simplify(sc - sc).is_zero());
  EXPECT_TRUE(simplify(-(-Expr::variable(1))) == Expr::variable(1));
  EXPECT_TRUE(simplify(Expr::constant(2) * Expr::constant(3)) == Expr::constant(6));
  EXPECT_TRUE(simplify(Expr::constant(1) * Expr::variable(0)) == Expr::variable(0));
  EXPECT_TRUE(simplify(Expr::variable(0) / Expr::constant(1)) == Expr::variable(0));
}

TEST(Expr, SimplifyKeepsNonFiniteConstantsSymbolic) {
  Expr e = simplify(Expr::constant(1) / Expr::constant(0));
  EXPECT_FALSE(e.is_constant());
  EXPECT_THROW(evaluate(e, {0.0}), DomainError);
}

TEST(Expr, ParseErrorsCarryPositionAndExpectation) {
  try {
    P("x + * y");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 4u);
    EXPECT_FALSE(e.expected().empty());
  }
  try {
    P("foo(x)");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("foo"), std::string::npos);
  }
  try {
    P("x + w");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
  EXPECT_THROW(P("sin(x, y)"), ParseError);
  EXPECT_THROW(P("sin x"), ParseError);
  EXPECT_THROW(P("x(1)"), ParseError);
  EXPECT_THROW(P("(x + y"), ParseError);
  EXPECT_THROW(P(""), ParseError);
  EXPECT_THROW(P("x^y"), ParseError);
  EXPECT_THROW(P("--x"), ParseError);
  EXPECT_THROW(P("1.5.2"), ParseError);
  EXPECT_THROW(parse_expression("x", std::vector<std::string>{"x", "x"}), ParseError);
}

TEST(Expr, ConstantsAreSubstituted) {
  std::vector<std::string> v{"z"};
  Expr e = parse_expression("-k*z", v, {{"k", 2.0}});
  EXPECT_DOUBLE_EQ(evaluate(e, {3.0}), -6.0);
  EXPECT_EQ(e.max_variable(), 0);
}

TEST(Expr, CanonicalPrinter) {
  EXPECT_EQ(print(P("x*y + 2")), "((x1*x2)+2)");
  EXPECT_EQ(print(P("x*y + 2"), kXY), "((x*y)+2)");
  EXPECT_EQ(print(P("-sin(x)"), kXY), "(-sin(x))");
  EXPECT_EQ(print(P("x^2.5"), kXY), "(x^(2.5))");
}

// Property: exact derivative agrees with central differences at 100 random points.
TEST(ExprProperty, DerivativeMatchesFiniteDifferences) {
  std::mt19937_64 gen(11);
  for (const auto& c : kCorpus) {
    Expr e = P(c.text);
    std::uniform_real_distribution<double> u(c.lo, c.hi);
    for (int i = 0; i < 2; ++i) {
      Expr d = differentiate(e, i);
      int checked = 0;
      for (int k = 0; k < 100; ++k) {
        std::vector<double> p{u(gen), u(gen)};
        double h = 1e-6 * std::max(1.0, std::fabs(p[i]));
        auto pp = p, pm = p;
        pp[i] += h;
        pm[i] -= h;
        double fd, v;
        try {
          fd = (evaluate(e, pp) - evaluate(e, pm)) / (2 * h);
          v = evaluate(d, p);
        } catch (const DomainError&) {
          continue;
        }
        ++checked;
        EXPECT_NEAR(v, fd, 1e-6 * (1 + std::fabs(v))) << c.text << " d/d" << i;
      }
      EXPECT_GT(checked, 90) << c.text;
    }
  }
}

// Property: simplification never changes a finite value, bit for bit.
TEST(ExprProperty, SimplifyIsBitExact) {
  std::mt19937_64 gen(12);
  for (const auto& c : kCorpus) {
    Expr e = P(c.text);
    std::vector<Expr> variants{e, differentiate(e, 0), differentiate(differentiate(e, 0), 1)};
    std::uniform_real_distribution<double> u(c.lo, c.hi);
    for (const auto& v : variants) {
      Expr s = simplify(v);
      for (int k = 0; k < 100; ++k) {
        std::vector<double> p{u(gen), u(gen)};
        double a, b;
        try {
          a = evaluate(v, p);
          b = evaluate(s, p);
        } catch (const DomainError&) {
          continue;
        }
        EXPECT_EQ(a, b) << c.text;
      }
    }
  }
}

// Property: parse(print(e)) reproduces the simplify-normal form.
TEST(ExprProperty, PrintParseRoundTrip) {
  for (const auto& c : kCorpus) {
    Expr e = P(c.text);
    for (const Expr& v : {e, differentiate(e, 0), differentiate(e, 1)}) {
      Expr s = simplify(v);
      Expr back = simplify(P(print(s, kXY)));
      EXPECT_TRUE(back == s) << print(s, kXY) << "  vs  " << print(back, kXY);
      Expr back2 = simplify(parse_expression(print(s), std::vector<std::string>{"x1", "x2"}));
      EXPECT_TRUE(back2 == s);
    }
  }
}

TEST(ExprProperty, TapeMatchesTreeEvaluation) {
  std::vector<Expr> outs;
  for (const auto& c : kCorpus) outs.push_back(differentiate(P(c.text), 0));
  Tape t(outs);
  EXPECT_EQ(t.output_count(), outs.size());
  std::vector<double> res(outs.size());
  double p[2] = {0.7, 1.3};
  t.eval(p, res.data());
  for (std::size_t i = 0; i < outs.size(); ++i) EXPECT_EQ(res[i], evaluate(outs[i], {0.7, 1.3})) << i;
}

TEST(ExprProperty, StructuralHashingAndSharing) {
  Expr a = P("sin(x)*y");
  Expr b = P("sin(x)*y");
  EXPECT_TRUE(a == b);
  EXPECT_EQ(ExprHash{}(a), ExprHash{}(b));
  EXPECT_FALSE(a == P("sin(y)*x"));
  EXPECT_FALSE(Expr::constant(0.0) == Expr::constant(-0.0));
}
