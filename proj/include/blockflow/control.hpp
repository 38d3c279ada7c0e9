#pragma once

#include <optional>

#include "blockflow/linalg.hpp"

namespace blockflow::control {

/// LTI system x' = Ax + Bu, y = Cx + Du. sampleTime is empty for
/// continuous-time systems.
struct StateSpace {
    la::Matrix a, b, c, d;
    std::optional<double> sampleTime;

    int states() const { return a.rows(); }
    int inputs() const { return b.cols(); }
    int outputs() const { return c.rows(); }
    bool continuous() const { return !sampleTime.has_value(); }

    void checkDimensions() const;
};

/// Polynomial ratio in descending powers; denominator is kept monic and the
/// function proper (deg num <= deg den).
struct TransferFunction {
    std::vector<double> numerator;
    std::vector<double> denominator;
    std::optional<double> sampleTime;
};

/// Matrix exponential by scaling-and-squaring with a Pade(6) approximant.
la::Matrix expm(const la::Matrix& a);

/// Zero-order-hold discretization: A_d = exp(AT), B_d from the augmented
/// exponential exp([[A,B],[0,0]] T); C and D unchanged.
StateSpace c2dZOH(const StateSpace& sys, double T);

/// Bilinear (Tustin) discretization. Throws DiscretizationSingularity when
/// (I - A T/2) is singular.
StateSpace c2dTustin(const StateSpace& sys, double T);

struct DlqrResult {
    la::Matrix k;  // state feedback gain
    la::Matrix p;  // DARE solution
    int iterations = 0;
};

/// Discrete-time LQR: solves the DARE
///   P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q
/// by fixed-point iteration from P0 = Q (tolerance 1e-12 on the infinity
/// norm of the update, at most 10000 iterations), then K = (R + B'PB)^-1
/// B'PA. Throws RiccatiNoConvergence for non-stabilizable pairs.
DlqrResult dlqr(const la::Matrix& a, const la::Matrix& b, const la::Matrix& q,
                const la::Matrix& r);

/// SISO state space -> transfer function via the Leverrier-Faddeev
/// recursion (denominator = characteristic polynomial, numerator from
/// C adj(sI - A) B + D den). Throws UnsupportedShape for MIMO systems.
TransferFunction ss2tf(const StateSpace& sys);

/// Proper SISO transfer function -> controllable canonical form. Throws
/// ImproperTransferFunction when deg num > deg den.
StateSpace tf2ss(const TransferFunction& tf);

}  // namespace blockflow::control
