#include "blockflow/autofocus.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "blockflow/errors.hpp"
#include "blockflow/util.hpp"

namespace blockflow::autofocus {

double FocusPlant::currentSigma() const {
    return sigma0 + sigmaSlope * std::abs(motorPosition - trueFocus);
}

imaging::ImageBuffer renderScene(FocusPlant& plant) {
    imaging::ImageBuffer img = imaging::gaussianBlur(plant.scene, plant.currentSigma());
    if (plant.noiseAmplitude > 0.0) {
        for (double& v : img.data) {
            // 53-bit uniform in [0, 1); implementation-independent.
            double u = static_cast<double>(plant.rng() >> 11) * 0x1.0p-53;
            v += plant.noiseAmplitude * (2.0 * u - 1.0);
        }
    }
    return img;
}

void motorStep(FocusPlant& plant, double setpoint, double T) {
    if (T <= 0) throw BadParameter("motorStep requires T > 0");
    double alpha = plant.motorTimeConstant <= T ? 1.0 : T / plant.motorTimeConstant;
    plant.motorPosition += alpha * (setpoint - plant.motorPosition);
}

double DirectionIntegrator::step(double e, double s, double pidOut,
                                 const AutofocusConfig& cfg) {
    bool below = e < -cfg.reversalThresholdFrac * s;
    if (below && !wasBelow && sinceFlip >= cfg.reversalDwell) {
        direction = -direction;
        sinceFlip = 0;
    } else if (sinceFlip < (1 << 30)) {
        ++sinceFlip;
    }
    wasBelow = below;
    setpoint = stdblocks::saturationEval(setpoint + direction * pidOut, cfg.setpointMin,
                                         cfg.setpointMax);
    return setpoint;
}

double autofocusStep(const imaging::ImageBuffer& img, AutofocusState& st,
                     const AutofocusConfig& cfg) {
    double s = imaging::sharpness(imaging::noiseRobustLaplacian(img));
    double e = s - st.buffer.oldest();
    double pidOut = stdblocks::pidStep(e, cfg.gains, cfg.sampleTime, st.pid);
    double sp = st.dir.step(e, s, pidOut, cfg);
    st.buffer.push(s);
    return sp;
}

std::vector<TraceRow> runClosedLoop(FocusPlant& plant, const AutofocusConfig& cfg,
                                    int cycles) {
    std::vector<TraceRow> rows;
    rows.reserve(cycles);
    AutofocusState st;
    for (int k = 0; k < cycles; ++k) {
        imaging::ImageBuffer img = renderScene(plant);
        double s = imaging::sharpness(imaging::noiseRobustLaplacian(img));
        double e = s - st.buffer.oldest();
        double pidOut = stdblocks::pidStep(e, cfg.gains, cfg.sampleTime, st.pid);
        double sp = st.dir.step(e, s, pidOut, cfg);
        st.buffer.push(s);
        rows.push_back({k, s, e, sp, plant.motorPosition, plant.trueFocus});
        motorStep(plant, sp, cfg.sampleTime);
    }
    return rows;
}

std::string traceToCsv(std::span<const TraceRow> rows) {
    std::ostringstream os;
    os << "cycle,sharpness,error,setpoint,motor_position,true_focus\n";
    for (const TraceRow& r : rows) {
        os << r.cycle << ',' << util::fmtDouble(r.sharpness) << ','
           << util::fmtDouble(r.error) << ',' << util::fmtDouble(r.setpoint) << ','
           << util::fmtDouble(r.motorPosition) << ',' << util::fmtDouble(r.trueFocus)
           << '\n';
    }
    return os.str();
}

imaging::ImageBuffer makeDefaultScene() {
    imaging::ImageBuffer img(48, 48, 0.0);
    // Solid block, a bar, and isolated points: edges keep the Laplacian
    // responsive at small blur, the points keep it steep near focus.
    for (int r = 10; r < 22; ++r)
        for (int c = 8; c < 20; ++c) img.at(r, c) = 1.0;
    for (int r = 6; r < 40; ++r)
        for (int c = 30; c < 33; ++c) img.at(r, c) = 0.85;
    img.at(36, 12) = 1.0;
    img.at(40, 38) = 1.0;
    img.at(8, 38) = 1.0;
    img.at(28, 22) = 1.0;
    return img;
}

AutofocusDiagramIds buildAutofocusDiagram(graph::Diagram& d, FocusPlant& plant,
                                          const AutofocusConfig& cfg) {
    using graph::Value;
    using graph::ValueType;
    AutofocusDiagramIds ids{};

    // Plant: indirect feedthrough; renders from the current motor position
    // and latches the setpoint into the motor at end of cycle.
    stdblocks::FunctionSpec plantSpec;
    plantSpec.inputTypes = {ValueType::scalar()};
    plantSpec.outputTypes = {ValueType::image()};
    plantSpec.directFeedthrough = false;
    plantSpec.compute = [&plant](std::span<const Value>, std::span<Value> out) {
        out[0] = renderScene(plant);
    };
    plantSpec.latch = [&plant, T = cfg.sampleTime](std::span<const Value> in) {
        motorStep(plant, graph::asScalar(in[0]), T);
    };
    ids.plant = d.addBlock(stdblocks::makeFunction(std::move(plantSpec)), "plant");

    ids.conv = d.addBlock(stdblocks::makeConv2D(imaging::noiseRobustLaplacianKernel()),
                          "laplacian");

    stdblocks::FunctionSpec sharpSpec;
    sharpSpec.inputTypes = {ValueType::image()};
    sharpSpec.outputTypes = {ValueType::scalar()};
    sharpSpec.compute = [](std::span<const Value> in, std::span<Value> out) {
        out[0] = imaging::sharpness(std::get<imaging::ImageBuffer>(in[0]));
    };
    ids.sharp = d.addBlock(stdblocks::makeFunction(std::move(sharpSpec)), "sharpness");

    ids.delay = d.addBlock(stdblocks::makeDelay(100, 0.0), "memory");
    ids.esum = d.addBlock(stdblocks::makeSum("+-"), "err");
    ids.pid = d.addBlock(stdblocks::makePid(cfg.gains, cfg.sampleTime), "pid");

    stdblocks::FunctionSpec dirSpec;
    dirSpec.inputTypes = {ValueType::scalar(), ValueType::scalar(), ValueType::scalar()};
    dirSpec.outputTypes = {ValueType::scalar()};
    auto dir = std::make_shared<DirectionIntegrator>();
    dirSpec.compute = [dir, cfg](std::span<const Value> in, std::span<Value> out) {
        out[0] = dir->step(graph::asScalar(in[0]), graph::asScalar(in[1]),
                           graph::asScalar(in[2]), cfg);
    };
    dirSpec.reset = [dir] { *dir = DirectionIntegrator{}; };
    ids.dir = d.addBlock(stdblocks::makeFunction(std::move(dirSpec)), "direction");

    ids.sat = d.addBlock(stdblocks::makeSaturation(cfg.setpointMin, cfg.setpointMax),
                         "ceiling");

    d.connect(graph::out(ids.plant), graph::in(ids.conv));
    d.connect(graph::out(ids.conv), graph::in(ids.sharp));
    d.connect(graph::out(ids.sharp), graph::in(ids.delay));
    d.connect(graph::out(ids.sharp), graph::in(ids.esum, 0));
    d.connect(graph::out(ids.delay), graph::in(ids.esum, 1));
    d.connect(graph::out(ids.esum), graph::in(ids.pid));
    d.connect(graph::out(ids.esum), graph::in(ids.dir, 0));
    d.connect(graph::out(ids.sharp), graph::in(ids.dir, 1));
    d.connect(graph::out(ids.pid), graph::in(ids.dir, 2));
    d.connect(graph::out(ids.dir), graph::in(ids.sat));
    d.connect(graph::out(ids.sat), graph::in(ids.plant));
    return ids;
}

}  // namespace blockflow::autofocus
