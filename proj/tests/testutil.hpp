#pragma once

// Shared helpers for the test suites: deterministic random diagrams, the
// brute-force loop-detection oracle, finite differences, random expression
// trees, and trace runners for the engine / interpreter / emitted-C paths.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "blockflow/codegen.hpp"
#include "blockflow/executor.hpp"
#include "blockflow/expr.hpp"
#include "blockflow/graph.hpp"
#include "blockflow/stdblocks.hpp"

namespace testutil {

using blockflow::graph::BlockId;
using blockflow::graph::Diagram;

// --- random diagrams ---------------------------------------------------------

struct RandomDiagramOptions {
    int maxBlocks = 12;
    int affineLoops = 0;       // rings of sums and gains with external drive
    bool statefulKinds = true; // delays, integrators, PIDs
};

/// Random forward-wired diagram (a DAG) with optional affine loop rings
/// appended. Loop gain magnitudes stay below 0.9 so every inserted loop is
/// well posed and Newton-solvable.
inline std::unique_ptr<Diagram> makeRandomDiagram(std::mt19937& rng,
                                                  const RandomDiagramOptions& opt) {
    namespace sb = blockflow::stdblocks;
    namespace g = blockflow::graph;
    auto d = std::make_unique<Diagram>();
    std::uniform_real_distribution<double> val(-2.0, 2.0);
    std::uniform_real_distribution<double> gain(-0.95, 0.95);

    int blocks = 3 + static_cast<int>(rng() % std::max(1, opt.maxBlocks - 2));
    int sources = 1 + static_cast<int>(rng() % 2);
    std::vector<BlockId> ids;
    for (int i = 0; i < sources; ++i)
        ids.push_back(d->addBlock(sb::makeConstant(val(rng))));

    auto randomUpstream = [&](int upper) -> g::SlotRef {
        return g::out(ids[rng() % upper]);
    };

    for (int i = sources; i < blocks; ++i) {
        int upper = static_cast<int>(ids.size());
        int kind = static_cast<int>(rng() % (opt.statefulKinds ? 8 : 5));
        BlockId id;
        switch (kind) {
            case 0:
                id = d->addBlock(sb::makeConstant(val(rng)));
                break;
            case 1:
                id = d->addBlock(sb::makeGain(gain(rng)));
                d->connect(randomUpstream(upper), g::in(id));
                break;
            case 2: {
                id = d->addBlock(sb::makeSum(rng() % 2 ? "+-" : "++"));
                d->connect(randomUpstream(upper), g::in(id, 0));
                d->connect(randomUpstream(upper), g::in(id, 1));
                break;
            }
            case 3: {
                id = d->addBlock(sb::makeProduct(2));
                d->connect(randomUpstream(upper), g::in(id, 0));
                d->connect(randomUpstream(upper), g::in(id, 1));
                break;
            }
            case 4:
                id = d->addBlock(sb::makeSaturation(-1.5, 1.5));
                d->connect(randomUpstream(upper), g::in(id));
                break;
            case 5:
                id = d->addBlock(sb::makeUnitDelay(val(rng)));
                d->connect(randomUpstream(upper), g::in(id));
                break;
            case 6:
                id = d->addBlock(sb::makeIntegrator(0.1, 0.0));
                d->connect(randomUpstream(upper), g::in(id));
                break;
            default:
                id = d->addBlock(sb::makePid({0.8, 0.2, 0.1}, 0.1));
                d->connect(randomUpstream(upper), g::in(id));
                break;
        }
        ids.push_back(id);
    }

    for (int loop = 0; loop < opt.affineLoops; ++loop) {
        int n = 2 + static_cast<int>(rng() % 2);  // ring of 2..3 sums
        std::vector<BlockId> sums, gains;
        for (int i = 0; i < n; ++i)
            sums.push_back(d->addBlock(sb::makeSum("++")));
        for (int i = 0; i < n; ++i) {
            // Product of ring gains stays below 0.9 in magnitude.
            double mag = std::pow(0.85, 1.0 / n);
            double k = (rng() % 2 ? 1 : -1) * mag;
            gains.push_back(d->addBlock(sb::makeGain(k)));
        }
        for (int i = 0; i < n; ++i) {
            d->connect(g::out(sums[i]), g::in(gains[i]));
            d->connect(g::out(gains[i]), g::in(sums[(i + 1) % n], 0));
        }
        for (int i = 0; i < n; ++i)
            d->connect(g::out(ids[rng() % sources]), g::in(sums[i], 1));
    }
    return d;
}

// --- brute-force loop oracle --------------------------------------------------

/// Mutual-reachability components of the direct-feedthrough subgraph,
/// computed with Floyd-Warshall; returns components of size > 1 plus
/// self-loop singletons. Independent of the engine's Tarjan path.
inline std::vector<std::vector<int>> bruteForceDirectSccs(const Diagram& d) {
    namespace g = blockflow::graph;
    const int n = d.blockCount();
    std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
    for (const g::SignalEdge& e : d.edges()) {
        if (!d.block(e.source.block).info().directFeedthrough) continue;
        if (!d.block(e.sink.block).info().directFeedthrough) continue;
        reach[e.source.block][e.sink.block] = true;
    }
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (reach[i][k] && reach[k][j]) reach[i][j] = true;

    std::vector<std::vector<int>> comps;
    std::vector<bool> used(n, false);
    for (int i = 0; i < n; ++i) {
        if (used[i]) continue;
        std::vector<int> comp;
        for (int j = 0; j < n; ++j)
            if (i == j || (reach[i][j] && reach[j][i])) comp.push_back(j);
        if (comp.size() == 1 && !reach[i][i]) continue;
        for (int j : comp) used[j] = true;
        comps.push_back(comp);
    }
    return comps;
}

// --- numerics ------------------------------------------------------------------

inline double centralDiff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// --- random expressions ---------------------------------------------------------

/// Random expression over the given variables, depth-bounded. Divisions are
/// kept away from singularities by using var^2 + c denominators.
inline blockflow::expr::Expr randomExpr(std::mt19937& rng,
                                        const std::vector<std::string>& vars, int depth,
                                        bool polynomialOnly = false) {
    namespace e = blockflow::expr;
    std::uniform_real_distribution<double> val(-3.0, 3.0);
    if (depth == 0 || rng() % 5 == 0) {
        if (rng() % 2 == 0) return e::constant(val(rng));
        return e::variable(vars[rng() % vars.size()]);
    }
    int kind = static_cast<int>(rng() % (polynomialOnly ? 4 : 5));
    switch (kind) {
        case 0: {
            std::vector<e::Expr> ops;
            size_t n = 2 + rng() % 2;
            for (size_t i = 0; i < n; ++i)
                ops.push_back(randomExpr(rng, vars, depth - 1, polynomialOnly));
            return e::add(std::move(ops));
        }
        case 1: {
            std::vector<e::Expr> ops;
            size_t n = 2 + rng() % 2;
            for (size_t i = 0; i < n; ++i)
                ops.push_back(randomExpr(rng, vars, depth - 1, polynomialOnly));
            return e::mul(std::move(ops));
        }
        case 2:
            return e::neg(randomExpr(rng, vars, depth - 1, polynomialOnly));
        case 3:
            return e::pow(randomExpr(rng, vars, depth - 1, polynomialOnly),
                          static_cast<int>(rng() % 4));
        default: {
            e::Expr num = randomExpr(rng, vars, depth - 1, polynomialOnly);
            e::Expr den =
                e::add(e::pow(e::variable(vars[rng() % vars.size()]), 2),
                       e::constant(0.5 + (rng() % 100) / 50.0));
            return e::div(num, den);
        }
    }
}

// --- trace runners ---------------------------------------------------------------

/// Terminal scalar outputs per cycle through the engine.
inline std::vector<std::vector<double>> engineTrace(Diagram& d, int cycles) {
    namespace g = blockflow::graph;
    g::Executor ex(d);
    std::vector<g::SlotRef> terminals = ex.terminalOutputs();
    std::vector<std::vector<double>> rows;
    for (int k = 0; k < cycles; ++k) {
        ex.runCycle();
        std::vector<double> row;
        for (g::SlotRef s : terminals) row.push_back(ex.scalarOutput(s.block, s.slot));
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Terminal outputs per cycle through the lowered flat program.
inline std::vector<std::vector<double>> interpreterTrace(const Diagram& d, int cycles) {
    namespace cg = blockflow::codegen;
    cg::FlatProgram p = cg::lowerToFlatProgram(d, d.resolveExecutionOrder());
    cg::InterpreterState st = cg::initialInterpreterState(p);
    std::vector<std::vector<double>> rows;
    for (int k = 0; k < cycles; ++k) rows.push_back(cg::interpretCycle(p, st));
    return rows;
}

// --- emitted-C gated runner -------------------------------------------------------

inline bool haveCCompiler() {
    return std::system("cc --version > /dev/null 2>&1") == 0;
}

/// Compiles the emitted source with the system C compiler, runs it for the
/// given number of cycles, and parses the printed outputs. Returns nullopt
/// when no compiler is available.
inline std::optional<std::vector<std::vector<double>>> runEmitted(
    const blockflow::codegen::FlatProgram& p, const std::string& name, int cycles) {
    if (!haveCCompiler()) return std::nullopt;
    namespace cg = blockflow::codegen;
    cg::EmittedSource src = cg::emitCSource(p, name);

    char tmpl[] = "/tmp/blockflow_emit_XXXXXX";
    if (!mkdtemp(tmpl)) return std::nullopt;
    std::string dir = tmpl;

    std::ofstream(dir + "/" + name + ".h") << src.header;
    std::ofstream(dir + "/" + name + ".c") << src.source;
    {
        std::ofstream harness(dir + "/harness.c");
        harness << "#include <stdio.h>\n#include \"" << name << ".h\"\n";
        harness << "int main(void) {\n    " << name << "_state st;\n    double out["
                << std::max<size_t>(p.outputs.size(), 1) << "];\n    int k, i, rc;\n    "
                << name << "_init(&st);\n";
        harness << "    for (k = 0; k < " << cycles << "; ++k) {\n";
        harness << "        rc = " << name << "_step(&st, out);\n";
        harness << "        if (rc != 0) { printf(\"rc %d\\n\", rc); return rc; }\n";
        harness << "        for (i = 0; i < " << p.outputs.size()
                << "; ++i) printf(i ? \" %.17g\" : \"%.17g\", out[i]);\n";
        harness << "        printf(\"\\n\");\n    }\n    return 0;\n}\n";
    }
    std::string cmd = "cd " + dir + " && cc -O1 -o runner " + name +
                      ".c harness.c -lm > compile.log 2>&1 && ./runner > trace.txt 2>&1";
    if (std::system(cmd.c_str()) != 0) return std::nullopt;

    std::ifstream trace(dir + "/trace.txt");
    std::vector<std::vector<double>> rows;
    std::string lineText;
    while (std::getline(trace, lineText)) {
        std::istringstream ls(lineText);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace testutil
