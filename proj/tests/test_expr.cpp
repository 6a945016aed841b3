#include <gtest/gtest.h>

#include "lfq/corpus.hpp"
#include "lfq/expr.hpp"
#include "oracles.hpp"

using namespace lfq;

namespace {

std::vector<std::pair<std::string, Expr>> corpus_expressions() {
  std::vector<std::pair<std::string, Expr>> out;
  for (auto& e : lagrange_corpus()) out.emplace_back(e.name, std::get<LagrangeModel>(e.model).L);
  for (auto& e : metric_corpus()) {
    auto& m = std::get<NadaptedMetric>(e.model);
    for (std::size_t k = 0; k < m.g.size(); ++k) {
      out.emplace_back(e.name + ".g" + std::to_string(k), m.g[k]);
      out.emplace_back(e.name + ".h" + std::to_string(k), m.h[k]);
    }
  }
  return out;
}

const CorpusEntry& box_for(const std::string& name) {
  static auto c = full_corpus();
  return corpus_entry(c, name.substr(0, name.find('.')));
}

}  // namespace

TEST(Parse, SumOfSquares) {
  Expr e = parse("y1^2 + y2^2", 2);
  ASSERT_EQ(e->op, Op::Add);
  EXPECT_EQ(e->a->op, Op::Pow);
  EXPECT_EQ(e->a->a->var, 2);
  EXPECT_EQ(e->b->a->var, 3);
}

TEST(Parse, ConformalEntry) {
  Expr e = parse("exp(2*x1)*(y1^2+y2^2)", 2);
  ASSERT_EQ(e->op, Op::Mul);
  EXPECT_EQ(e->a->op, Op::Exp);
}

TEST(Parse, UnknownCoordinate) {
  EXPECT_THROW(parse("y3", 2), UnknownSymbol);
  EXPECT_THROW(parse("z1 + 1", 2), UnknownSymbol);
}

TEST(Parse, SyntaxErrorCarriesOffset) {
  try {
    parse("y1 + * y2", 2);
    FAIL();
  } catch (const SyntaxError& e) {
    EXPECT_EQ(e.offset, 5u);
    EXPECT_FALSE(e.expected.empty());
  }
  EXPECT_THROW(parse("", 2), SyntaxError);
  EXPECT_THROW(parse("sin(x1", 2), SyntaxError);
}

TEST(Parse, Precedence) {
  Point u{0.3, -0.7, 1.1, 2.0};
  EXPECT_DOUBLE_EQ(evaluate(parse("-x1^2", 2), u), -0.09);
  EXPECT_DOUBLE_EQ(evaluate(parse("2^3^2", 2), u), 64.0);
  EXPECT_DOUBLE_EQ(evaluate(parse("8/2/2", 2), u), 2.0);
  EXPECT_DOUBLE_EQ(evaluate(parse("1-2-3", 2), u), -4.0);
  EXPECT_DOUBLE_EQ(evaluate(parse("2*3+4*5", 2), u), 26.0);
  EXPECT_DOUBLE_EQ(evaluate(parse("y2^-1", 2), u), 0.5);
}

TEST(Render, RoundTrip) {
  for (auto& [name, e] : corpus_expressions()) {
    Expr back = parse(render(e, 2), 2);
    EXPECT_TRUE(structurally_equal(canonical(back), canonical(e))) << name << ": " << render(e, 2);
    Expr d = differentiate(e, 0);
    EXPECT_TRUE(structurally_equal(canonical(parse(render(d, 2), 2)), canonical(d))) << name;
  }
}

TEST(Differentiate, Examples) {
  Expr e = parse("y1^2+y2^2", 2);
  Expr d = differentiate(e, 2);
  Point u{0, 0, 1.5, 2};
  EXPECT_DOUBLE_EQ(evaluate(d, u), 3.0);
  EXPECT_EQ(render(differentiate(e, 0), 2), "0");
  EXPECT_TRUE(structurally_equal(differentiate(parse("x1", 2), 0), mk::num(1)));
}

TEST(Differentiate, MatchesFiniteDifferences) {
  for (auto& [name, e] : corpus_expressions()) {
    Expr d = differentiate(e, 0);
    oracle::Fn f = [&](const Point& p) { return evaluate(e, p); };
    for (auto& u : oracle::points(box_for(name), 50, 11)) {
      double fd = oracle::central(f, u, 0, 1e-5);
      EXPECT_LT(oracle::rel_err(evaluate(d, u), fd), 1e-6) << name;
    }
  }
}

TEST(Differentiate, Linearity) {
  Expr e1 = parse("exp(2*x1)*(y1^2+y2^2)", 2), e2 = parse("sin(x2)*y1 + atan(y2)", 2);
  double a = 1.7, b = -0.4;
  Expr comb = mk::add(mk::mul(mk::num(a), e1), mk::mul(mk::num(b), e2));
  for (int v = 0; v < 4; ++v)
    for (auto& u : oracle::points(lagrange_corpus()[1], 20, 3)) {
      double lhs = evaluate(differentiate(comb, v), u);
      double rhs = a * evaluate(differentiate(e1, v), u) + b * evaluate(differentiate(e2, v), u);
      EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(rhs)));
    }
}

TEST(Differentiate, AllFunctions) {
  const char* funcs[] = {"sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh", "atan"};
  Point u{0.4, 0.3, 0.8, 1.2};
  for (auto f : funcs) {
    Expr e = parse(std::string(f) + "(x1*y1 + 0.5)", 2);
    oracle::Fn fn = [&](const Point& p) { return evaluate(e, p); };
    for (int v = 0; v < 4; ++v)
      EXPECT_LT(oracle::rel_err(evaluate(differentiate(e, v), u), oracle::central(fn, u, v, 1e-5)), 1e-7) << f;
  }
  Expr p = parse("x1^y1", 2);
  oracle::Fn fp = [&](const Point& q) { return evaluate(p, q); };
  EXPECT_LT(oracle::rel_err(evaluate(differentiate(p, 2), u), oracle::central(fp, u, 2, 1e-5)), 1e-7);
}

TEST(Evaluate, Examples) {
  EXPECT_DOUBLE_EQ(evaluate(parse("y1^2+y2^2", 2), {0, 0, 1, 2}), 5.0);
  EXPECT_DOUBLE_EQ(evaluate(parse("exp(2*x1)", 2), {0, 0, 0, 0}), 1.0);
}

TEST(Evaluate, DomainErrors) {
  try {
    evaluate(parse("1 + log(x1)", 2), {-1, 0, 0, 0});
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_EQ(e.subexpression, "log(x1)");
  }
  EXPECT_THROW(evaluate(parse("sqrt(x1)", 2), {-1, 0, 0, 0}), DomainError);
  EXPECT_THROW(evaluate(parse("1/x1", 2), {0, 0, 0, 0}), DomainError);
  EXPECT_THROW(to_series(parse("log(x1)", 2), {-1, 0, 0, 0}, 2), DomainError);
}

TEST(Jet, SquareExample) {
  Point u{0.1, 0.2, 1.5, -0.5};
  Jet j = jet(parse("y1^2", 2), u, 2);
  EXPECT_DOUBLE_EQ(j({}), 2.25);
  EXPECT_DOUBLE_EQ(j({2}), 3.0);
  EXPECT_DOUBLE_EQ(j({2, 2}), 2.0);
  EXPECT_DOUBLE_EQ(j({0}), 0.0);
  EXPECT_DOUBLE_EQ(j({0, 2}), 0.0);
  EXPECT_DOUBLE_EQ(j({3, 3}), 0.0);
}

TEST(Jet, Constant) {
  Jet j = jet(parse("3.5", 2), {0, 0, 0, 0}, 3);
  for (auto& [k, v] : j.entries()) EXPECT_EQ(v, k.empty() ? 3.5 : 0.0);
}

TEST(Jet, MixedPartialsStoredOnce) {
  Jet j = jet(parse("sin(x1*y2)+x2^3*y1", 2), {0.3, 0.4, 0.5, 0.6}, 3);
  EXPECT_EQ(j({0, 3}), j({3, 0}));
  EXPECT_EQ(j({1, 2, 1}), j({1, 1, 2}));
  EXPECT_THROW(j({0, 0, 0, 0}), std::out_of_range);
}

TEST(Jet, MatchesNestedFiniteDifferences) {
  for (auto& [name, e] : corpus_expressions()) {
    oracle::Fn f = [&](const Point& p) { return evaluate(e, p); };
    for (auto& u : oracle::points(box_for(name), 3, 5)) {
      Jet j = jet(e, u, 3);
      for (auto& [idx, v] : j.entries()) {
        double step = idx.size() <= 1 ? 1e-4 : (idx.size() == 2 ? 1e-3 : 4e-3);
        double fd = oracle::nested_richardson(f, u, idx, step);
        EXPECT_LT(oracle::rel_err(v, fd), 1e-5) << name << " order " << idx.size();
      }
    }
  }
}

TEST(Series, AgreesWithJet) {
  for (auto& [name, e] : corpus_expressions()) {
    for (auto& u : oracle::points(box_for(name), 2, 9)) {
      Jet j = jet(e, u, 4);
      RSeries s = to_series(e, u, 4);
      for (auto& [idx, v] : j.entries()) {
        MonomialBasis::Exp ex(u.size(), 0);
        for (int k : idx) ex[k]++;
        EXPECT_NEAR(s.partial(ex), v, 1e-9 * std::max(1.0, std::abs(v))) << name;
      }
    }
  }
}
