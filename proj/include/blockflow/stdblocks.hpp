#pragma once

#include <functional>
#include <random>

#include "blockflow/graph.hpp"

namespace blockflow::stdblocks {

using graph::Block;
using graph::BlockId;
using graph::Diagram;
using graph::Value;
using graph::ValueType;

// ---------------------------------------------------------------------------
// Scalar per-cycle semantics, exposed as plain functions so tests and the
// hand-coded pipelines use exactly the same arithmetic as the blocks.
// ---------------------------------------------------------------------------

Value gainEval(const Value& u, const Value& k);
double sumEval(std::span<const double> u, std::span<const int> signs);
double saturationEval(double u, double lo, double hi);

struct PidGains {
    double kp = 0.0;
    double ki = 0.0;
    double kd = 0.0;
};

struct PidState {
    double integral = 0.0;
    double prevError = 0.0;
};

/// Discrete PID, integrate-then-act, unfiltered derivative:
///   I += T*e;  u = kp*e + ki*I + kd*(e - e_prev)/T.
double pidStep(double e, const PidGains& g, double T, PidState& state);

// ---------------------------------------------------------------------------
// Block kinds. All are registered under the kind names below and accept the
// listed parameters from a ParamMap (and hence from the CLI diagram format).
//
//   Constant        value=<v>
//   Gain            gain=<k> (or a matrix gain, programmatic only)
//   Sum             signs=<e.g. "++-">
//   Product         inputs=<n>
//   Saturation      lo=<v> hi=<v>
//   UnitDelay       init=<v>
//   Delay           steps=<n> init=<v>
//   Integrator      T=<v> init=<v>
//   PID             kp= ki= kd= T=
//   CondIntegrator  T= ki= lo= hi=   (gated integral path of the anti-windup PID)
//   StateSpace      a= b= c= d= (matrices; discrete-time x' = Ax + Bu, y = Cx + Du)
//   Conv2D          programmatic (kernel), or kernel=noise-robust-laplacian
//   Function        programmatic only (user closure)
// ---------------------------------------------------------------------------

std::unique_ptr<Block> makeConstant(const Value& value);
std::unique_ptr<Block> makeGain(const Value& gain, ValueType inputType = ValueType::scalar());
std::unique_ptr<Block> makeSum(const std::string& signs, ValueType type = ValueType::scalar());
std::unique_ptr<Block> makeProduct(int inputs);
std::unique_ptr<Block> makeSaturation(double lo, double hi);
std::unique_ptr<Block> makeUnitDelay(double init = 0.0);
std::unique_ptr<Block> makeDelay(int steps, double init = 0.0);
std::unique_ptr<Block> makeIntegrator(double sampleTime, double init = 0.0);
std::unique_ptr<Block> makePid(const PidGains& gains, double sampleTime);
std::unique_ptr<Block> makeCondIntegrator(double sampleTime, double ki, double lo, double hi);
std::unique_ptr<Block> makeStateSpace(const la::Matrix& a, const la::Matrix& b,
                                      const la::Matrix& c, const la::Matrix& d);
std::unique_ptr<Block> makeConv2D(const imaging::Kernel2D& kernel);

/// User closure block: declared arity and types, optional latch for stateful
/// indirect behavior. Never symbolic-capable and never lowerable.
struct FunctionSpec {
    std::vector<ValueType> inputTypes;
    std::vector<ValueType> outputTypes;
    bool directFeedthrough = true;
    std::function<void(std::span<const Value>, std::span<Value>)> compute;
    std::function<void(std::span<const Value>)> latch;  // optional
    std::function<void()> reset;                        // optional
};
std::unique_ptr<Block> makeFunction(FunctionSpec spec);

// ---------------------------------------------------------------------------
// Anti-windup PID composite (conditional integration).
// ---------------------------------------------------------------------------

enum class AntiWindup {
    None,                    // plain PID + output saturation
    ConditionalIntegration,  // integral frozen when it would push deeper into saturation
};

/// Blocks appended by buildAntiWindupPid. Wire `errorIn` from the error
/// signal and `controlOut` into the plant.
struct PidFragment {
    graph::SlotRef errorIn;
    graph::SlotRef controlOut;
    std::vector<BlockId> blocks;
};

/// Composes P, I, and D paths from delays, sums, and gains, with an output
/// saturation at [uMin, uMax]. With ConditionalIntegration the integral path
/// runs through a gated integrator that refuses updates which would drive
/// the pre-saturation output further past its limits.
PidFragment buildAntiWindupPid(Diagram& d, const std::string& namePrefix,
                               const PidGains& gains, double sampleTime, double uMin,
                               double uMax,
                               AntiWindup mode = AntiWindup::ConditionalIntegration);

/// Desk-scale joint tracking scenario: a discrete double-integrator joint
/// under torque saturation, stepped to a target and hit by a disturbance
/// pulse. The same scenario runs through a plain PID + saturation and
/// through the anti-windup composite, both as diagrams.
struct JointScenario {
    double sampleTime = 0.005;
    int cycles = 4000;
    double target = 1.0;
    PidGains gains{8.0, 6.0, 2.5};
    double uMin = -2.0;
    double uMax = 2.0;
    int disturbanceStart = 2000;
    int disturbanceEnd = 2400;
    double disturbance = -1.5;
};

struct JointTrace {
    std::vector<double> position;
    std::vector<double> control;
};

struct JointComparison {
    JointTrace plain;
    JointTrace antiWindup;
    double plainPeak = 0.0;       // max position overshoot past the target
    double antiWindupPeak = 0.0;
};

JointComparison runJointTrackingComparison(const JointScenario& scenario = {});

/// Builds one variant of the scenario diagram and returns (diagram ids kept
/// internal) the executor-ready diagram; exposed for the cycle-time
/// benchmarks.
std::unique_ptr<graph::Diagram> buildJointDiagram(const JointScenario& scenario,
                                                  AntiWindup mode);

}  // namespace blockflow::stdblocks
