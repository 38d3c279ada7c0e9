#pragma once

#include <string>
#include <utility>
#include <vector>

#include "blockflow/expr.hpp"
#include "blockflow/graph.hpp"

namespace blockflow::loopsolve {

struct NewtonConfig {
    double tolerance = 1e-10;  // residual infinity-norm
    int maxIterations = 50;
    enum class InitialGuess { Zeros, WarmStart } initialGuess = InitialGuess::WarmStart;
};

/// The algebraic system f(x) = 0 extracted from one loop cluster, with its
/// symbolically differentiated Jacobian. Built once at schedule time and
/// immutable afterwards.
struct ResidualSystem {
    /// Unknown signals x_i: symbol name plus the member output slot it
    /// stands for.
    std::vector<std::pair<std::string, graph::SlotRef>> unknowns;
    /// Signals entering the loop from outside, bound from the value table
    /// each cycle.
    std::vector<std::pair<std::string, graph::SlotRef>> externalInputs;
    /// Block parameters referenced symbolically (gain values etc.), bound
    /// once per solve.
    std::vector<std::pair<std::string, double>> parameters;
    /// f_i, simplified; residuals.size() == unknowns.size().
    std::vector<expr::Expr> residuals;
    /// d f_i / d x_j, simplified.
    std::vector<std::vector<expr::Expr>> jacobian;
    /// Member output slots that are not unknowns, with their expansion in
    /// terms of unknowns and externals; evaluated after a solve so every
    /// member output carries a value.
    std::vector<std::pair<graph::SlotRef, expr::Expr>> memberOutputs;

    NewtonConfig config;
    std::string label;  // "loop{s g}" etc., used in error messages

    int size() const { return static_cast<int>(unknowns.size()); }

    /// Pretty-printed residuals and Jacobian for diagnostics.
    std::string dump() const;
};

/// Walks the loop starting at each unknown, expanding member blocks'
/// symbolic outputs in terms of unknowns, external inputs, and parameters,
/// then differentiates every residual to fill the Jacobian.
///
/// Unknowns are seeded at the outputs of members with external inputs (the
/// loop's entry points); expansion goes one member deep, so any signal
/// referenced beyond the direct predecessor becomes an unknown of its own.
/// For the classic constant-sum-gain loop this yields the single-unknown
/// system f(S) = C + G*S - S with Jacobian G - 1.
///
/// Throws SymbolicallyUnsolvableLoop when a member has no symbolic
/// description (for example a Saturation block inside the loop).
ResidualSystem extractResidualSystem(const graph::LoopCluster& cluster,
                                     const graph::Diagram& d, NewtonConfig config = {});

/// One Newton-Raphson step: solves grad_f(x) dx = -f(x) by Gaussian
/// elimination with partial pivoting and returns x + dx.
std::vector<double> newtonStep(const ResidualSystem& rs, const std::vector<double>& x,
                               const expr::SymbolTable& bindings);

struct SolveResult {
    std::vector<double> x;
    int iterations = 0;
    double residualNorm = 0.0;
};

/// Iterates newtonStep until the residual infinity-norm falls within
/// tolerance or the iteration budget runs out (LoopDivergence). Affine
/// systems converge in exactly one step from any initial guess.
SolveResult solveLoop(const ResidualSystem& rs, const expr::SymbolTable& bindings,
                      const std::vector<double>* warmStart = nullptr);

}  // namespace blockflow::loopsolve
