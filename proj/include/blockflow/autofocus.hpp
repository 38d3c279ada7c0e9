#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "blockflow/executor.hpp"
#include "blockflow/imaging.hpp"
#include "blockflow/stdblocks.hpp"

namespace blockflow::autofocus {

/// Synthetic lens/motor plant: a fixed high-contrast scene rendered through
/// a defocus blur whose width grows with the distance between the focus
/// motor and the true focus position, plus additive uniform noise. Stands in
/// for the thermographer hardware so the closed loop is testable at desk
/// scale.
struct FocusPlant {
    imaging::ImageBuffer scene;
    double trueFocus = 0.45;       // in [0, 1]
    double motorPosition = 0.0;
    double motorTimeConstant = 0.12;  // first-order lag, seconds
    double sigma0 = 0.5;              // blur floor when perfectly focused
    double sigmaSlope = 4.0;          // blur growth per unit of defocus
    double noiseAmplitude = 0.0;      // uniform noise in [-amp, amp]
    std::mt19937_64 rng{0};

    void seed(uint64_t s) { rng.seed(s); }
    double currentSigma() const;
};

/// Scene blurred at the plant's current defocus plus noise; deterministic
/// for a fixed seed and call sequence.
imaging::ImageBuffer renderScene(FocusPlant& plant);

/// First-order lag toward the setpoint; clamps to the setpoint when the
/// step exceeds the time constant.
void motorStep(FocusPlant& plant, double setpoint, double T);

/// Ring buffer holding the last 100 sharpness samples. Reads of the value
/// "100 cycles ago" return 0 until 100 samples have been written.
struct SharpnessBuffer {
    std::array<double, 100> samples{};
    size_t next = 0;

    double oldest() const { return samples[next]; }
    void push(double v) {
        samples[next] = v;
        next = (next + 1) % samples.size();
    }
};

struct AutofocusConfig {
    stdblocks::PidGains gains{0.05, 0.0, 0.0};
    double sampleTime = 1.0 / 27.0;  // one image per cycle at 27 Hz
    /// Direction reversal fires when the 100-cycle sharpness change drops
    /// below -frac * current sharpness...
    double reversalThresholdFrac = 0.05;
    /// ...and at most once per dwell window, so a single decline episode
    /// does not thrash the direction every cycle.
    int reversalDwell = 30;
    double setpointMin = 0.0;
    double setpointMax = 0.6;
};

/// Direction memory plus velocity-form setpoint integration. Shared by the
/// hand-coded step and the diagram function block so both paths execute
/// identical arithmetic.
struct DirectionIntegrator {
    double direction = 1.0;
    double setpoint = 0.0;
    bool wasBelow = false;
    int sinceFlip = 1 << 30;

    double step(double e, double s, double pidOut, const AutofocusConfig& cfg);
};

struct AutofocusState {
    SharpnessBuffer buffer;
    stdblocks::PidState pid;
    DirectionIntegrator dir;
};

/// One controller cycle: sharpness of the noise-robust Laplacian, error
/// against the sample 100 cycles back, PID, direction logic, and the
/// saturated setpoint update. Returns the new setpoint.
double autofocusStep(const imaging::ImageBuffer& img, AutofocusState& st,
                     const AutofocusConfig& cfg);

struct TraceRow {
    int cycle;
    double sharpness;
    double error;
    double setpoint;
    double motorPosition;
    double trueFocus;
};

/// Hand-coded closed loop: render, control, move; one row per cycle.
std::vector<TraceRow> runClosedLoop(FocusPlant& plant, const AutofocusConfig& cfg,
                                    int cycles);

/// CSV with header: cycle,sharpness,error,setpoint,motor_position,true_focus.
std::string traceToCsv(std::span<const TraceRow> rows);

/// 48x48 scene with sharp rectangles, a bar, and point features; contrast 1.
imaging::ImageBuffer makeDefaultScene();

/// The same pipeline as autofocusStep expressed as a diagram:
/// plant -> Conv2D -> sharpness -> {Delay(100), Sum} -> PID -> direction ->
/// Saturation -> plant. The plant block latches the motor at end of cycle.
struct AutofocusDiagramIds {
    graph::BlockId plant, conv, sharp, delay, esum, pid, dir, sat;
};
AutofocusDiagramIds buildAutofocusDiagram(graph::Diagram& d, FocusPlant& plant,
                                          const AutofocusConfig& cfg);

}  // namespace blockflow::autofocus
