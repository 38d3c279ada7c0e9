#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "blockflow/errors.hpp"
#include "blockflow/executor.hpp"
#include "blockflow/loopsolve.hpp"
#include "blockflow/stdblocks.hpp"
#include "testutil.hpp"

using namespace blockflow;
using namespace blockflow::graph;
using namespace blockflow::loopsolve;
namespace sb = blockflow::stdblocks;

namespace {

struct LoopDiagram {
    Diagram d;
    BlockId c, s, g;
    LoopCluster cluster;
};

LoopDiagram makeLoop(double cval, double gval) {
    LoopDiagram ld;
    ld.c = ld.d.addBlock(sb::makeConstant(cval), "c");
    ld.s = ld.d.addBlock(sb::makeSum("++"), "s");
    ld.g = ld.d.addBlock(sb::makeGain(gval), "g");
    ld.d.connect(out(ld.c), in(ld.s, 0));
    ld.d.connect(out(ld.s), in(ld.g));
    ld.d.connect(out(ld.g), in(ld.s, 1));
    auto clusters = ld.d.detectAlgebraicLoops();
    REQUIRE(clusters.size() == 1);
    ld.cluster = clusters[0];
    return ld;
}

/// Scalar system built directly: one unknown named "x" with the given
/// residual; the Jacobian comes from expr::differentiate like the real path.
ResidualSystem scalarSystem(expr::Expr residual) {
    ResidualSystem rs;
    rs.unknowns = {{"x", out(0)}};
    rs.residuals = {expr::simplify(residual)};
    rs.jacobian = {{expr::simplify(expr::differentiate(rs.residuals[0], "x"))}};
    rs.label = "test{x}";
    return rs;
}

}  // namespace

TEST_CASE("extractResidualSystem: the classic loop is a single-unknown system") {
    LoopDiagram ld = makeLoop(1.0, 0.5);
    ResidualSystem rs = extractResidualSystem(ld.cluster, ld.d);

    REQUIRE(rs.size() == 1);
    CHECK(rs.unknowns[0].second == out(ld.s));  // S is the sum output
    REQUIRE(rs.externalInputs.size() == 1);
    CHECK(rs.externalInputs[0].second == out(ld.c));

    // f(S) = C + G*S - S and J = G - 1, checked numerically over a grid.
    const std::string S = rs.unknowns[0].first;
    const std::string C = rs.externalInputs[0].first;
    for (double cval : {1.0, 5.0}) {
        for (double sval : {0.0, 2.0, -3.0}) {
            expr::SymbolTable t;
            t.bind(C, cval);
            t.bind(S, sval);
            for (const auto& [sym, value] : rs.parameters) t.bind(sym, value);
            CHECK(expr::evaluate(rs.residuals[0], t) ==
                  doctest::Approx(cval + 0.5 * sval - sval).epsilon(1e-15));
            CHECK(expr::evaluate(rs.jacobian[0][0], t) ==
                  doctest::Approx(0.5 - 1.0).epsilon(1e-15));
        }
    }
    // The inlined gain output is recoverable as G*S.
    REQUIRE(rs.memberOutputs.size() == 1);
    CHECK(rs.memberOutputs[0].first == out(ld.g));
}

TEST_CASE("extractResidualSystem: cross-coupled gains give the two-unknown system") {
    // sum(c, g1(x2)) -> x1; g2(x1) -> x2; g1 fed by x2 closes the ring.
    Diagram d;
    BlockId c = d.addBlock(sb::makeConstant(0.7), "c");
    BlockId s = d.addBlock(sb::makeSum("++"), "s");
    BlockId g1 = d.addBlock(sb::makeGain(0.4), "g1");
    BlockId g2 = d.addBlock(sb::makeGain(0.3), "g2");
    d.connect(out(c), in(s, 0));
    d.connect(out(g1), in(s, 1));
    d.connect(out(s), in(g2));
    d.connect(out(g2), in(g1));

    auto clusters = d.detectAlgebraicLoops();
    REQUIRE(clusters.size() == 1);
    ResidualSystem rs = extractResidualSystem(clusters[0], d);

    REQUIRE(rs.size() == 2);
    CHECK(rs.unknowns[0].second == out(s));   // x1
    CHECK(rs.unknowns[1].second == out(g2));  // x2

    // f1 = c + g1*x2 - x1, f2 = g2*x1 - x2; J = [[-1, g1], [g2, -1]].
    expr::SymbolTable t;
    t.bind(rs.externalInputs[0].first, 0.7);
    t.bind(rs.unknowns[0].first, 1.3);
    t.bind(rs.unknowns[1].first, -0.2);
    for (const auto& [sym, value] : rs.parameters) t.bind(sym, value);
    CHECK(expr::evaluate(rs.residuals[0], t) ==
          doctest::Approx(0.7 + 0.4 * -0.2 - 1.3).epsilon(1e-15));
    CHECK(expr::evaluate(rs.residuals[1], t) ==
          doctest::Approx(0.3 * 1.3 - -0.2).epsilon(1e-15));
    CHECK(expr::evaluate(rs.jacobian[0][0], t) == -1.0);
    CHECK(expr::evaluate(rs.jacobian[0][1], t) == 0.4);
    CHECK(expr::evaluate(rs.jacobian[1][0], t) == 0.3);
    CHECK(expr::evaluate(rs.jacobian[1][1], t) == -1.0);
}

TEST_CASE("extractResidualSystem: saturation inside a loop is unsolvable") {
    Diagram d;
    BlockId c = d.addBlock(sb::makeConstant(1.0), "c");
    BlockId s = d.addBlock(sb::makeSum("++"), "s");
    BlockId sat = d.addBlock(sb::makeSaturation(0.0, 0.6), "clip");
    d.connect(out(c), in(s, 0));
    d.connect(out(s), in(sat));
    d.connect(out(sat), in(s, 1));
    auto clusters = d.detectAlgebraicLoops();
    REQUIRE(clusters.size() == 1);
    CHECK_THROWS_WITH_AS(extractResidualSystem(clusters[0], d),
                         doctest::Contains("clip"), SymbolicallyUnsolvableLoop);
}

TEST_CASE("newtonStep: one exact step on the affine loop") {
    LoopDiagram ld = makeLoop(1.0, 0.5);
    ResidualSystem rs = extractResidualSystem(ld.cluster, ld.d);
    expr::SymbolTable bindings;
    bindings.bind(rs.externalInputs[0].first, 1.0);
    std::vector<double> x1 = newtonStep(rs, {0.0}, bindings);
    CHECK(x1[0] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("newtonStep: G = 1 makes the Jacobian singular") {
    LoopDiagram ld = makeLoop(1.0, 1.0);
    ResidualSystem rs = extractResidualSystem(ld.cluster, ld.d);
    expr::SymbolTable bindings;
    bindings.bind(rs.externalInputs[0].first, 1.0);
    CHECK_THROWS_AS(newtonStep(rs, {0.0}, bindings), SingularJacobian);
}

TEST_CASE("newtonStep: quadratic residual, hand-computed step") {
    // f(x) = x^2 - 4 from x0 = 3: x1 = 3 - 5/6.
    ResidualSystem rs =
        scalarSystem(expr::pow(expr::variable("x"), 2) - expr::constant(4.0));
    std::vector<double> x1 = newtonStep(rs, {3.0}, expr::SymbolTable{});
    CHECK(x1[0] == doctest::Approx(3.0 - 5.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("solveLoop: classic loop closed forms and iteration counts") {
    for (auto [cval, expected] : std::vector<std::pair<double, double>>{
             {1.0, 2.0}, {5.0, 10.0}}) {
        LoopDiagram ld = makeLoop(cval, 0.5);
        ResidualSystem rs = extractResidualSystem(ld.cluster, ld.d);
        expr::SymbolTable bindings;
        bindings.bind(rs.externalInputs[0].first, cval);
        SolveResult res = solveLoop(rs, bindings);
        CHECK(res.x[0] == doctest::Approx(expected).epsilon(1e-12));
        CHECK(res.iterations == 1);  // affine: exact in one step
    }
}

TEST_CASE("solveLoop: affine systems need exactly one step from any start") {
    LoopDiagram ld = makeLoop(2.0, -1.0);  // S = 2 / (1 - (-1)) = 1
    ResidualSystem rs = extractResidualSystem(ld.cluster, ld.d);
    expr::SymbolTable bindings;
    bindings.bind(rs.externalInputs[0].first, 2.0);
    std::mt19937 rng(8);
    std::uniform_real_distribution<double> start(-50.0, 50.0);
    for (int i = 0; i < 20; ++i) {
        std::vector<double> x0 = {start(rng)};
        SolveResult res = solveLoop(rs, bindings, &x0);
        CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(res.iterations == 1);
    }
}

TEST_CASE("solveLoop: quadratic loop converges; impossible loop diverges") {
    // s = c + s^2 via a Product block.
    auto build = [](double cval) {
        auto d = std::make_unique<Diagram>();
        BlockId c = d->addBlock(sb::makeConstant(cval), "c");
        BlockId s = d->addBlock(sb::makeSum("++"), "s");
        BlockId p = d->addBlock(sb::makeProduct(2), "sq");
        d->connect(out(c), in(s, 0));
        d->connect(out(s), in(p, 0));
        d->connect(out(s), in(p, 1));
        d->connect(out(p), in(s, 1));
        return d;
    };

    {
        auto d = build(0.2);
        Executor ex(*d);
        ex.runCycle();
        // The smaller root of s^2 - s + 0.2.
        double expected = (1.0 - std::sqrt(1.0 - 0.8)) / 2.0;
        CHECK(ex.scalarOutput(*d->findBlock("s")) ==
              doctest::Approx(expected).epsilon(1e-10));
    }
    {
        auto d = build(1.0);  // s^2 - s + 1 = 0 has no real root
        Executor ex(*d);
        CHECK_THROWS_AS(ex.runCycle(), LoopDivergence);
    }
}

TEST_CASE("engine warm start: zero iterations once the solution is held") {
    LoopDiagram ld = makeLoop(1.0, 0.5);
    Executor ex(ld.d);
    ex.runCycle();
    CHECK(ex.lastIterations(0) == 1);  // cold start from zeros
    ex.runCycle();
    CHECK(ex.lastIterations(0) == 0);  // warm start already satisfies the residual
    CHECK(ex.scalarOutput(ld.s) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("property: random affine loops match a dense linear solve") {
    std::mt19937 rng(314);
    std::uniform_real_distribution<double> cdist(-2.0, 2.0);

    for (int trial = 0; trial < 40; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 4);  // 2..5 unknowns

        // Random loop-gain matrix with spectral radius below 1 (row sums
        // bounded by 0.9), ring backbone for strong connectivity.
        std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
        for (int i = 0; i < n; ++i) {
            int ring = (i + n - 1) % n;
            m[i][ring] = (rng() % 2 ? 1 : -1) * 0.5;
            for (int j = 0; j < n; ++j) {
                if (j == i || j == ring) continue;
                if (rng() % 3 == 0) m[i][j] = (rng() % 2 ? 1 : -1) * 0.2;
            }
            double sum = 0;
            for (double v : m[i]) sum += std::abs(v);
            if (sum > 0.9)
                for (double& v : m[i]) v *= 0.9 / sum;
        }
        std::vector<double> c(n);
        for (double& v : c) v = cdist(rng);

        // Diagram: x_i = c_i + sum_j m_ij x_j.
        Diagram d;
        std::vector<BlockId> consts(n), sums(n);
        for (int i = 0; i < n; ++i)
            consts[i] = d.addBlock(sb::makeConstant(c[i]), "c" + std::to_string(i));
        for (int i = 0; i < n; ++i) {
            int inputs = 1;
            for (int j = 0; j < n; ++j)
                if (m[i][j] != 0.0) ++inputs;
            sums[i] = d.addBlock(sb::makeSum(std::string(inputs, '+')),
                                 "s" + std::to_string(i));
        }
        for (int i = 0; i < n; ++i) {
            d.connect(out(consts[i]), in(sums[i], 0));
            int slot = 1;
            for (int j = 0; j < n; ++j) {
                if (m[i][j] == 0.0) continue;
                BlockId g = d.addBlock(sb::makeGain(m[i][j]),
                                       "g" + std::to_string(i) + "_" + std::to_string(j));
                d.connect(out(sums[j]), in(g));
                d.connect(out(g), in(sums[i], slot++));
            }
        }

        Executor ex(d);
        ex.runCycle();

        // Independent oracle: Gauss-Jordan on (I - M) x = c, written here.
        std::vector<std::vector<double>> aug(n, std::vector<double>(n + 1));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) aug[i][j] = (i == j ? 1.0 : 0.0) - m[i][j];
            aug[i][n] = c[i];
        }
        for (int k = 0; k < n; ++k) {
            int piv = k;
            for (int r = k + 1; r < n; ++r)
                if (std::abs(aug[r][k]) > std::abs(aug[piv][k])) piv = r;
            std::swap(aug[k], aug[piv]);
            for (int r = 0; r < n; ++r) {
                if (r == k) continue;
                double f = aug[r][k] / aug[k][k];
                for (int j = k; j <= n; ++j) aug[r][j] -= f * aug[k][j];
            }
        }
        for (int i = 0; i < n; ++i) {
            double expected = aug[i][n] / aug[i][i];
            CHECK(std::abs(ex.scalarOutput(sums[i]) - expected) <= 1e-10);
        }
    }
}

TEST_CASE("property: Jacobian entries match finite differences") {
    std::mt19937 rng(2718);
    std::uniform_real_distribution<double> val(-1.5, 1.5);

    Diagram d;
    BlockId c = d.addBlock(sb::makeConstant(0.7), "c");
    BlockId s = d.addBlock(sb::makeSum("++"), "s");
    BlockId g1 = d.addBlock(sb::makeGain(0.4), "g1");
    BlockId g2 = d.addBlock(sb::makeGain(0.3), "g2");
    d.connect(out(c), in(s, 0));
    d.connect(out(g1), in(s, 1));
    d.connect(out(s), in(g2));
    d.connect(out(g2), in(g1));
    ResidualSystem rs = extractResidualSystem(d.detectAlgebraicLoops()[0], d);

    for (int pt = 0; pt < 5; ++pt) {
        std::vector<double> x = {val(rng), val(rng)};
        expr::SymbolTable base;
        base.bind(rs.externalInputs[0].first, 0.7);
        for (const auto& [sym, v] : rs.parameters) base.bind(sym, v);

        auto evalResidual = [&](int i, const std::vector<double>& at) {
            expr::SymbolTable t = base;
            for (int k = 0; k < rs.size(); ++k) t.bind(rs.unknowns[k].first, at[k]);
            return expr::evaluate(rs.residuals[i], t);
        };

        for (int i = 0; i < rs.size(); ++i)
            for (int j = 0; j < rs.size(); ++j) {
                expr::SymbolTable t = base;
                for (int k = 0; k < rs.size(); ++k) t.bind(rs.unknowns[k].first, x[k]);
                double sym = expr::evaluate(rs.jacobian[i][j], t);
                const double h = 1e-6;
                std::vector<double> hi = x, lo = x;
                hi[j] += h;
                lo[j] -= h;
                double fd = (evalResidual(i, hi) - evalResidual(i, lo)) / (2 * h);
                CHECK(std::abs(sym - fd) <= 1e-6 * std::max(1.0, std::abs(sym)));
            }
    }
}

TEST_CASE("property: warm start never changes the affine answer") {
    LoopDiagram ld = makeLoop(3.0, 0.25);
    ResidualSystem rs = extractResidualSystem(ld.cluster, ld.d);
    expr::SymbolTable bindings;
    bindings.bind(rs.externalInputs[0].first, 3.0);
    SolveResult cold = solveLoop(rs, bindings);
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> start(-10.0, 10.0);
    for (int i = 0; i < 25; ++i) {
        std::vector<double> w = {start(rng)};
        SolveResult warm = solveLoop(rs, bindings, &w);
        CHECK(std::abs(warm.x[0] - cold.x[0]) <= 1e-12);
    }
}

TEST_CASE("residual dump is printable text") {
    LoopDiagram ld = makeLoop(1.0, 0.5);
    ResidualSystem rs = extractResidualSystem(ld.cluster, ld.d);
    std::string text = rs.dump();
    CHECK(text.find("loop{s g}") != std::string::npos);
    CHECK(text.find("jacobian") != std::string::npos);
    CHECK(text.find("g_gain") != std::string::npos);
}
