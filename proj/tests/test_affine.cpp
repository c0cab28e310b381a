#include <catch2/catch_amalgamated.hpp>

#include "nestopt/affine.hpp"

using namespace nestopt;

namespace {
AffineExpr v(const char* n) { return AffineExpr::variable(n); }
AffineExpr c(long long k) { return AffineExpr::constant(k); }
}  // namespace

TEST_CASE("evaluation uses floor semantics", "[affine]") {
  std::map<std::string, long long> env{{"i", -7}};
  CHECK(eval(AffineExpr::floordiv(v("i"), 2), env) == -4);
  CHECK(eval(AffineExpr::modulo(v("i"), 2), env) == 1);
  CHECK(eval(AffineExpr::add(AffineExpr::mul(v("i"), 3), c(1)), env) == -20);
}

TEST_CASE("compiled expressions agree with interpreted evaluation", "[affine]") {
  AffineExpr e = AffineExpr::sum({AffineExpr::mul(v("a"), 5),
                                  AffineExpr::floordiv(v("b"), 3),
                                  AffineExpr::modulo(v("b"), 3), c(-2)});
  std::map<std::string, int> slots{{"a", 0}, {"b", 1}};
  SlotExpr se = compile_expr(e, slots);
  for (long long a = -4; a <= 4; ++a)
    for (long long b = -4; b <= 4; ++b) {
      std::map<std::string, long long> env{{"a", a}, {"b", b}};
      long long vals[2] = {a, b};
      CHECK(eval(se, vals) == eval(e, env));
    }
}

TEST_CASE("simplify folds strip-mine round trips", "[affine]") {
  ExtentMap ext{{"ci", 32}};
  // c*(E/c) + E%c recombines to E.
  AffineExpr e = AffineExpr::add(
      AffineExpr::mul(AffineExpr::floordiv(v("ci"), 8), 8),
      AffineExpr::modulo(v("ci"), 8));
  CHECK(simplify(e, ext) == v("ci"));
}

TEST_CASE("simplify drops range-contained div and mod", "[affine]") {
  ExtentMap ext{{"i", 4}};
  CHECK(simplify(AffineExpr::floordiv(v("i"), 8), ext) == c(0));
  CHECK(simplify(AffineExpr::modulo(v("i"), 8), ext) == v("i"));
}

TEST_CASE("simplify peels exact multiples out of div and mod", "[affine]") {
  ExtentMap ext{{"g", 2}, {"ci", 4}};
  // (4*g + ci) / 4 == g and (4*g + ci) % 4 == ci when ci ranges over [0,4).
  AffineExpr e = AffineExpr::add(AffineExpr::mul(v("g"), 4), v("ci"));
  CHECK(simplify(AffineExpr::floordiv(e, 4), ext) == v("g"));
  CHECK(simplify(AffineExpr::modulo(e, 4), ext) == v("ci"));
}

TEST_CASE("simplify merges like terms and constants", "[affine]") {
  ExtentMap ext{{"i", 100}};
  AffineExpr e = AffineExpr::sum({v("i"), v("i"), c(3), c(-3)});
  CHECK(simplify(e, ext) == AffineExpr::mul(v("i"), 2));
}

TEST_CASE("simplification is deterministic regardless of term order", "[affine]") {
  ExtentMap ext{{"a", 8}, {"b", 8}};
  AffineExpr e1 = AffineExpr::sum({v("a"), v("b"), c(1)});
  AffineExpr e2 = AffineExpr::sum({c(1), v("b"), v("a")});
  CHECK(to_string(simplify(e1, ext)) == to_string(simplify(e2, ext)));
}

TEST_CASE("substitute rewrites variables", "[affine]") {
  AffineExpr e = AffineExpr::add(v("i"), c(1));
  AffineExpr r = substitute(e, "i", AffineExpr::mul(v("j"), 2));
  std::map<std::string, long long> env{{"j", 5}};
  CHECK(eval(r, env) == 11);
}

TEST_CASE("range analysis covers affine operators", "[affine]") {
  ExtentMap ext{{"i", 8}};
  ValueRange r = range_of(AffineExpr::add(AffineExpr::mul(v("i"), -2), c(3)), ext);
  CHECK(r.lo == 3 - 14);
  CHECK(r.hi == 3);
}
