#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "blockflow/errors.hpp"
#include "blockflow/expr.hpp"
#include "testutil.hpp"

using namespace blockflow;
using namespace blockflow::expr;

namespace {

SymbolTable bind(std::initializer_list<std::pair<std::string, double>> pairs) {
    SymbolTable t;
    for (const auto& [k, v] : pairs) t.bind(k, v);
    return t;
}

}  // namespace

TEST_CASE("differentiate: loop residual d/dS (C + G*S - S) = G - 1") {
    Expr residual = variable("C") + variable("G") * variable("S") - variable("S");
    Expr dS = simplify(differentiate(residual, "S"));
    // Numerically equal to G - 1 everywhere.
    for (double g : {-1.0, 0.0, 0.5, 1.0, 3.25}) {
        SymbolTable t = bind({{"G", g}, {"C", 7.0}, {"S", 2.0}});
        CHECK(evaluate(dS, t) == doctest::Approx(g - 1.0).epsilon(1e-15));
    }
    CHECK(toString(dS) == "(G - 1)");
}

TEST_CASE("differentiate: constants and the power rule") {
    CHECK(evaluate(differentiate(constant(42.0), "x"), SymbolTable{}) == 0.0);

    Expr sq = variable("x") * variable("x");
    Expr d = simplify(differentiate(sq, "x"));
    // x * x differentiates to x + x and simplifies to 2 * x.
    CHECK(toString(d) == "(2 * x)");
    SymbolTable t = bind({{"x", 3.5}});
    CHECK(evaluate(d, t) == 7.0);
}

TEST_CASE("differentiate: quotient and integer powers") {
    Expr e = div(variable("x"), add(variable("x"), constant(1.0)));
    Expr d = differentiate(e, "x");
    SymbolTable t = bind({{"x", 2.0}});
    // d/dx x/(x+1) = 1/(x+1)^2 = 1/9 at x = 2.
    CHECK(evaluate(d, t) == doctest::Approx(1.0 / 9.0).epsilon(1e-14));

    Expr p = pow(variable("x"), 3);
    CHECK(evaluate(differentiate(p, "x"), t) == doctest::Approx(12.0));

    Expr pn = pow(variable("x"), -2);
    CHECK(evaluate(differentiate(pn, "x"), t) ==
          doctest::Approx(-2.0 / 8.0).epsilon(1e-14));
}

TEST_CASE("simplify: identities and constant folding") {
    Expr x = variable("x");
    CHECK(equal(simplify(x + constant(0.0)), x));
    CHECK(toString(simplify(constant(2.0) * constant(3.0) * x)) == "(6 * x)");
    CHECK(equal(simplify(x * constant(1.0)), x));
    CHECK(equal(simplify(x * constant(0.0)), constant(0.0)));

    // Unbound symbols stay symbolic: (G - 1) does not fold.
    Expr gm1 = simplify(variable("G") - constant(1.0));
    CHECK(gm1->kind == Kind::Add);
    CHECK(toString(gm1) == "(G - 1)");
}

TEST_CASE("simplify: nested flattening") {
    Expr e = add(add(variable("a"), variable("b")), add(variable("c"), constant(2.0)));
    Expr s = simplify(e);
    CHECK(s->kind == Kind::Add);
    CHECK(s->children.size() == 4);  // a, b, c, 2 on one level
}

TEST_CASE("substitute") {
    Expr x = variable("S");
    Expr e = x - variable("G") * x;  // S - G*S
    Expr r = substitute(e, "S", variable("C"));
    SymbolTable t = bind({{"C", 3.0}, {"G", 0.5}});
    CHECK(evaluate(r, t) == doctest::Approx(1.5));

    // Absent variable: untouched (same node).
    Expr keep = substitute(variable("x"), "y", constant(5.0));
    CHECK(equal(keep, variable("x")));

    // Loop expansion: starting from S, the sum's inputs expand to C + G*S.
    Expr sumOut = add(variable("C"), variable("gain_out"));
    Expr expanded = substitute(sumOut, "gain_out", variable("G") * variable("S"));
    CHECK(toString(expanded) == "(C + (G * S))");
}

TEST_CASE("evaluate: residual at the fixed point and error paths") {
    // S = C / (1 - G) makes the residual vanish; direct arithmetic oracle:
    // C + G*S - S with C=1, G=0.5, S=2 gives 1 + 1 - 2 = 0.
    Expr residual = variable("C") + variable("G") * variable("S") - variable("S");
    SymbolTable t = bind({{"C", 1.0}, {"G", 0.5}, {"S", 2.0}});
    CHECK(evaluate(residual, t) == 0.0);

    SymbolTable zero = bind({{"x", 0.0}});
    CHECK(evaluate(constant(6.0) * variable("x"), zero) == 0.0);

    SymbolTable div0 = bind({{"x", 1.0}, {"y", 0.0}});
    CHECK_THROWS_AS(evaluate(div(variable("x"), variable("y")), div0), EvalSingularity);
    CHECK_THROWS_AS(evaluate(variable("unbound"), SymbolTable{}), UnboundSymbol);
}

TEST_CASE("constructor invariants") {
    CHECK_THROWS_AS(add({variable("x")}), InvalidExpression);
    CHECK_THROWS_AS(div(variable("x"), constant(0.0)), InvalidExpression);
    CHECK_THROWS_AS(variable(""), InvalidExpression);
}

TEST_CASE("pretty printer format") {
    Expr e = add(variable("C"), mul(variable("G"), variable("S")));
    CHECK(toString(e) == "(C + (G * S))");
    CHECK(toString(neg(variable("x"))) == "(-x)");
    CHECK(toString(div(variable("a"), variable("b"))) == "(a / b)");
    CHECK(toString(pow(variable("x"), 3)) == "(x ^ 3)");
}

TEST_CASE("property: evaluate(simplify(e)) == evaluate(e)") {
    std::mt19937 rng(2024);
    std::vector<std::string> vars = {"x", "y", "z"};
    std::uniform_real_distribution<double> val(-2.0, 2.0);
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        Expr e = testutil::randomExpr(rng, vars, 6);
        Expr s = simplify(e);
        for (int pt = 0; pt < 4; ++pt) {
            SymbolTable t =
                bind({{"x", val(rng)}, {"y", val(rng)}, {"z", val(rng)}});
            double a, b;
            try {
                a = evaluate(e, t);
            } catch (const EvalSingularity&) {
                continue;
            }
            b = evaluate(s, t);
            if (!std::isfinite(a)) continue;
            double tol = 1e-12 * std::max(1.0, std::abs(a));
            CHECK(std::abs(a - b) <= tol);
            ++checked;
        }
    }
    CHECK(checked > 500);  // the generator must actually exercise the property
}

TEST_CASE("property: symbolic derivative matches central differences") {
    std::mt19937 rng(77);
    std::vector<std::string> vars = {"x", "y"};
    std::uniform_real_distribution<double> val(-1.5, 1.5);
    int checked = 0;
    for (int trial = 0; trial < 60; ++trial) {
        Expr e = testutil::randomExpr(rng, vars, 4, /*polynomialOnly=*/true);
        Expr d = differentiate(e, "x");
        for (int pt = 0; pt < 10; ++pt) {
            double x0 = val(rng), y0 = val(rng);
            auto f = [&](double x) {
                SymbolTable t = bind({{"x", x}, {"y", y0}});
                return evaluate(e, t);
            };
            SymbolTable t = bind({{"x", x0}, {"y", y0}});
            double sym = evaluate(d, t);
            double fd = testutil::centralDiff(f, x0, 1e-5);
            if (!std::isfinite(sym) || std::abs(sym) > 1e6) continue;
            CHECK(std::abs(sym - fd) <= 1e-6 * std::max(1.0, std::abs(sym)));
            ++checked;
        }
    }
    CHECK(checked > 300);
}

TEST_CASE("property: substitute-then-evaluate equals bind-then-evaluate") {
    std::mt19937 rng(99);
    std::vector<std::string> vars = {"x", "y"};
    std::uniform_real_distribution<double> val(-2.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        Expr e = testutil::randomExpr(rng, vars, 5);
        double c = val(rng), y0 = val(rng);
        Expr substituted = substitute(e, "x", constant(c));
        SymbolTable onlyY = bind({{"y", y0}});
        SymbolTable both = bind({{"x", c}, {"y", y0}});
        double a, b;
        try {
            a = evaluate(substituted, onlyY);
            b = evaluate(e, both);
        } catch (const EvalSingularity&) {
            continue;
        }
        if (!std::isfinite(a)) continue;
        CHECK(a == b);  // identical arithmetic, bitwise equal
    }
}

TEST_CASE("symbol table provenance") {
    SymbolTable t;
    t.bind("s_o0", 2.0);
    t.setProvenance("s_o0", {3, 0});
    REQUIRE(t.provenance("s_o0") != nullptr);
    CHECK(t.provenance("s_o0")->blockId == 3);
    CHECK(t.provenance("missing") == nullptr);
}
