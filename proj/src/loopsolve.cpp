#include "blockflow/loopsolve.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <set>
#include <sstream>

#include "blockflow/errors.hpp"
#include "blockflow/linalg.hpp"
#include "blockflow/util.hpp"

namespace blockflow::loopsolve {

using expr::Expr;
using graph::BlockId;
using graph::Diagram;
using graph::LoopCluster;
using graph::SlotRef;

std::string ResidualSystem::dump() const {
    std::ostringstream os;
    os << label << '\n';
    for (int i = 0; i < size(); ++i)
        os << "  f" << i << " (" << unknowns[i].first
           << "): " << expr::toString(residuals[i]) << " = 0\n";
    os << "  jacobian:\n";
    for (int i = 0; i < size(); ++i) {
        os << "   ";
        for (int j = 0; j < size(); ++j) os << ' ' << expr::toString(jacobian[i][j]);
        os << '\n';
    }
    return os.str();
}

namespace {

struct Extraction {
    const Diagram& d;
    const LoopCluster& cluster;
    std::set<BlockId> memberSet;
    ResidualSystem rs;

    std::map<SlotRef, std::string> unknownSymbol;
    std::map<SlotRef, std::string> externSymbol;
    std::map<SlotRef, Expr> expansion;  // cached depth-0 expansions of members
    std::set<BlockId> paramsCollected;
    std::deque<SlotRef> pending;

    explicit Extraction(const Diagram& diagram, const LoopCluster& c)
        : d(diagram), cluster(c), memberSet(c.members.begin(), c.members.end()) {}

    std::string symbolFor(SlotRef s) const {
        return d.blockName(s.block) + "_o" + std::to_string(s.slot);
    }

    void requireSymbolic(BlockId id) {
        const graph::Block& b = d.block(id);
        if (!b.info().symbolicCapable)
            throw SymbolicallyUnsolvableLoop("block '" + d.blockName(id) + "' (" +
                                             b.info().kind +
                                             ") inside an algebraic loop has no symbolic "
                                             "description");
        for (const auto& t : b.info().inputTypes)
            if (!t.isScalar())
                throw SymbolicallyUnsolvableLoop("block '" + d.blockName(id) +
                                                 "' carries non-scalar signals inside a loop");
    }

    void declareUnknown(SlotRef s) {
        if (unknownSymbol.count(s)) return;
        std::string sym = symbolFor(s);
        unknownSymbol[s] = sym;
        rs.unknowns.push_back({sym, s});
        pending.push_back(s);
    }

    Expr externalRef(SlotRef source) {
        auto it = externSymbol.find(source);
        if (it == externSymbol.end()) {
            std::string sym = symbolFor(source);
            externSymbol[source] = sym;
            rs.externalInputs.push_back({sym, source});
            it = externSymbol.find(source);
        }
        return expr::variable(it->second);
    }

    void collectParams(BlockId id) {
        if (!paramsCollected.insert(id).second) return;
        for (auto& [sym, value] : d.block(id).symbolicParams())
            rs.parameters.push_back({sym, value});
    }

    /// Expression for the signal feeding `sink`. `depth` counts how many
    /// member symbolic functions we are already inside: the block owning an
    /// unknown expands at depth 0 and may inline its direct in-loop
    /// predecessors (depth 1); any member signal needed beyond that becomes
    /// a fresh unknown instead of being expanded further.
    Expr resolveInput(SlotRef sink, int depth) {
        const graph::SignalEdge* e = d.edgeInto(sink);
        if (!e)
            throw InvalidDiagram("input " + d.slotName(sink) +
                                 " is unconnected inside a loop cluster");
        SlotRef src = e->source;
        if (!memberSet.count(src.block)) return externalRef(src);
        if (auto it = unknownSymbol.find(src); it != unknownSymbol.end())
            return expr::variable(it->second);
        if (depth >= 1) {
            declareUnknown(src);
            return expr::variable(unknownSymbol[src]);
        }
        return expandOutput(src, depth + 1);
    }

    /// Symbolic output of a member block's slot with inputs resolved at the
    /// given depth. Results are cached per slot; cached expressions only
    /// ever reference unknowns, externals, and parameters, so they stay
    /// valid wherever they are reused.
    Expr expandOutput(SlotRef slot, int depth) {
        if (auto it = expansion.find(slot); it != expansion.end()) return it->second;
        BlockId id = slot.block;
        requireSymbolic(id);
        collectParams(id);
        const graph::Block& b = d.block(id);
        std::vector<Expr> inputs;
        inputs.reserve(b.info().numInputs);
        for (int i = 0; i < b.info().numInputs; ++i)
            inputs.push_back(resolveInput(graph::in(id, i), depth));
        std::vector<Expr> outs = b.symbolicOutputs(inputs);
        for (int k = 0; k < b.info().numOutputs; ++k)
            expansion.emplace(graph::out(id, k), outs.at(k));
        return outs.at(slot.slot);
    }
};

}  // namespace

ResidualSystem extractResidualSystem(const LoopCluster& cluster, const Diagram& d,
                                     NewtonConfig config) {
    Extraction ex(d, cluster);
    ex.rs.config = config;
    {
        std::string names;
        for (BlockId id : cluster.members) names += (names.empty() ? "" : " ") + d.blockName(id);
        ex.rs.label = "loop{" + names + "}";
    }

    // Up-front capability check so the error names the offending block even
    // when expansion would have reached it late.
    for (BlockId id : cluster.members) ex.requireSymbolic(id);

    // Which member outputs feed back into the cluster.
    std::set<SlotRef> inLoopDriven;
    for (const auto& e : cluster.memberEdges) inLoopDriven.insert(e.source);

    // Seed unknowns at the loop's entry points: outputs of members that
    // receive external inputs. A cluster with no external drive (rare) falls
    // back to the lowest-id member.
    std::set<BlockId> hasExternal;
    for (const SlotRef& s : cluster.externalInputs) hasExternal.insert(s.block);
    bool seeded = false;
    for (BlockId id : cluster.members) {
        if (!hasExternal.count(id)) continue;
        for (const SlotRef& s : inLoopDriven)
            if (s.block == id) {
                ex.declareUnknown(s);
                seeded = true;
            }
    }
    if (!seeded) {
        BlockId head = cluster.members.front();
        for (const SlotRef& s : inLoopDriven)
            if (s.block == head) {
                ex.declareUnknown(s);
                seeded = true;
            }
    }
    if (!seeded)
        throw SymbolicallyUnsolvableLoop(ex.rs.label + " has no in-loop driven signal");

    // Build one residual per unknown; expansion may append further unknowns.
    while (!ex.pending.empty()) {
        SlotRef slot = ex.pending.front();
        ex.pending.pop_front();
        std::string sym = ex.unknownSymbol[slot];
        Expr expanded = ex.expandOutput(slot, 0);
        Expr residual = expr::simplify(expr::add(expanded, expr::neg(expr::variable(sym))));
        ex.rs.residuals.push_back(residual);
    }

    // Expansions for member outputs that are not unknowns, so the engine can
    // write every member output after a solve. These are cache hits: every
    // member output was either declared an unknown or inlined while the
    // residuals were built.
    for (BlockId id : cluster.members) {
        const graph::Block& b = d.block(id);
        for (int k = 0; k < b.info().numOutputs; ++k) {
            SlotRef s = graph::out(id, k);
            if (ex.unknownSymbol.count(s)) continue;
            Expr e = ex.expandOutput(s, 1);
            ex.rs.memberOutputs.push_back({s, expr::simplify(e)});
        }
    }
    if (!ex.pending.empty())
        throw SymbolicallyUnsolvableLoop(ex.rs.label +
                                         ": expansion re-opened unknowns unexpectedly");

    // Jacobian via symbolic differentiation, simplified entry by entry.
    const int n = ex.rs.size();
    ex.rs.jacobian.assign(n, std::vector<Expr>(n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            ex.rs.jacobian[i][j] =
                expr::simplify(expr::differentiate(ex.rs.residuals[i], ex.rs.unknowns[j].first));

    return ex.rs;
}

namespace {

expr::SymbolTable bindAll(const ResidualSystem& rs, const std::vector<double>& x,
                          const expr::SymbolTable& bindings) {
    expr::SymbolTable t = bindings;
    for (const auto& [sym, value] : rs.parameters) t.bind(sym, value);
    for (int i = 0; i < rs.size(); ++i) t.bind(rs.unknowns[i].first, x[i]);
    return t;
}

double residualInfNorm(const ResidualSystem& rs, const expr::SymbolTable& t,
                       std::vector<double>& f) {
    double norm = 0.0;
    for (int i = 0; i < rs.size(); ++i) {
        f[i] = expr::evaluate(rs.residuals[i], t);
        norm = std::max(norm, std::abs(f[i]));
    }
    return norm;
}

}  // namespace

std::vector<double> newtonStep(const ResidualSystem& rs, const std::vector<double>& x,
                               const expr::SymbolTable& bindings) {
    const int n = rs.size();
    expr::SymbolTable t = bindAll(rs, x, bindings);
    std::vector<double> f(n);
    residualInfNorm(rs, t, f);
    la::Matrix jac(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) jac(i, j) = expr::evaluate(rs.jacobian[i][j], t);
    std::vector<double> rhs(n);
    for (int i = 0; i < n; ++i) rhs[i] = -f[i];
    std::vector<double> dx;
    try {
        dx = la::solveLinear(std::move(jac), std::move(rhs));
    } catch (const SingularJacobian& e) {
        throw SingularJacobian(rs.label + ": " + e.what());
    }
    std::vector<double> next(n);
    for (int i = 0; i < n; ++i) next[i] = x[i] + dx[i];
    return next;
}

SolveResult solveLoop(const ResidualSystem& rs, const expr::SymbolTable& bindings,
                      const std::vector<double>* warmStart) {
    const int n = rs.size();
    SolveResult result;
    result.x.assign(n, 0.0);
    if (warmStart) {
        if (static_cast<int>(warmStart->size()) != n)
            throw InvalidDiagram(rs.label + ": warm start size mismatch");
        result.x = *warmStart;
    }

    std::vector<double> f(n);
    for (int iter = 0; iter <= rs.config.maxIterations; ++iter) {
        expr::SymbolTable t = bindAll(rs, result.x, bindings);
        result.residualNorm = residualInfNorm(rs, t, f);
        if (result.residualNorm <= rs.config.tolerance) {
            result.iterations = iter;
            return result;
        }
        if (iter == rs.config.maxIterations) break;
        result.x = newtonStep(rs, result.x, bindings);
    }
    throw LoopDivergence(rs.label + " did not converge within " +
                             std::to_string(rs.config.maxIterations) +
                             " Newton iterations (last residual norm " +
                             util::fmtDouble(result.residualNorm) + ")",
                         result.residualNorm);
}

}  // namespace blockflow::loopsolve
