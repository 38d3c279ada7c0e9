#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "blockflow/errors.hpp"
#include "blockflow/executor.hpp"
#include "blockflow/graph.hpp"
#include "blockflow/stdblocks.hpp"
#include "testutil.hpp"

using namespace blockflow;
using namespace blockflow::graph;
namespace sb = blockflow::stdblocks;

namespace {

/// The two-constant, gain, sum example: c -> g -> s, c2 -> s.
struct SimpleDiagram {
    Diagram d;
    BlockId c, c2, s, g;
};

SimpleDiagram makeSimple() {
    SimpleDiagram sd;
    sd.c = sd.d.addBlock(sb::makeConstant(5.0), "c");
    sd.c2 = sd.d.addBlock(sb::makeConstant(2.0), "c2");
    sd.s = sd.d.addBlock(sb::makeSum("++"), "s");
    sd.g = sd.d.addBlock(sb::makeGain(0.5), "g");
    sd.d.connect(out(sd.c), in(sd.g));
    sd.d.connect(out(sd.g), in(sd.s, 0));
    sd.d.connect(out(sd.c2), in(sd.s, 1));
    return sd;
}

/// Constant -> sum -> gain -> back to sum: one algebraic loop.
struct LoopDiagram {
    Diagram d;
    BlockId c, s, g;
};

LoopDiagram makeLoop(double cval, double gval) {
    LoopDiagram ld;
    ld.c = ld.d.addBlock(sb::makeConstant(cval), "c");
    ld.s = ld.d.addBlock(sb::makeSum("++"), "s");
    ld.g = ld.d.addBlock(sb::makeGain(gval), "g");
    ld.d.connect(out(ld.c), in(ld.s, 0));
    ld.d.connect(out(ld.s), in(ld.g));
    ld.d.connect(out(ld.g), in(ld.s, 1));
    return ld;
}

}  // namespace

TEST_CASE("connect: legal and illegal pairings") {
    SimpleDiagram sd = makeSimple();  // legal connections built without throwing

    // input-to-input and output-to-output are illegal pairings
    CHECK_THROWS_AS(sd.d.connect(in(sd.g), in(sd.s, 0)), IllegalPortPairing);
    CHECK_THROWS_AS(sd.d.connect(out(sd.c), out(sd.g)), IllegalPortPairing);

    // second driver on an already-driven input
    BlockId c3 = sd.d.addBlock(sb::makeConstant(1.0), "c3");
    CHECK_THROWS_AS(sd.d.connect(out(c3), in(sd.g)), MultipleDrivers);

    // unknown slots
    CHECK_THROWS_AS(sd.d.connect(out(sd.c, 7), in(sd.s, 0)), UnknownSlot);
    CHECK_THROWS_AS(sd.d.connect(out(99), in(sd.s, 0)), UnknownSlot);
}

TEST_CASE("connect: type mismatch") {
    Diagram d;
    BlockId c = d.addBlock(sb::makeConstant(1.0), "c");
    BlockId conv = d.addBlock(sb::makeConv2D(imaging::noiseRobustLaplacianKernel()), "f");
    CHECK_THROWS_AS(d.connect(out(c), in(conv)), TypeMismatch);
}

TEST_CASE("validate: complete diagram, missing input, empty diagram") {
    SimpleDiagram sd = makeSimple();
    CHECK(sd.d.validate().ok());

    Diagram d;
    BlockId c = d.addBlock(sb::makeConstant(1.0), "c");
    BlockId s = d.addBlock(sb::makeSum("++"), "s");
    d.connect(out(c), in(s, 0));
    ValidationReport report = d.validate();
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].code == "unbound-input");
    CHECK(report.violations[0].message.find("s.in1") != std::string::npos);

    Diagram empty;
    CHECK(empty.validate().ok());
}

TEST_CASE("detectAlgebraicLoops: the constant-sum-gain loop") {
    LoopDiagram ld = makeLoop(1.0, 0.5);
    auto clusters = ld.d.detectAlgebraicLoops();
    REQUIRE(clusters.size() == 1);
    CHECK(clusters[0].members == std::vector<BlockId>{ld.s, ld.g});
    REQUIRE(clusters[0].externalInputs.size() == 1);
    CHECK(clusters[0].externalInputs[0] == in(ld.s, 0));
    CHECK(clusters[0].memberEdges.size() == 2);
}

TEST_CASE("detectAlgebraicLoops: feedthrough-complete acyclic diagram has none") {
    SimpleDiagram sd = makeSimple();
    CHECK(sd.d.detectAlgebraicLoops().empty());
}

TEST_CASE("detectAlgebraicLoops: a delay breaks the loop") {
    Diagram d;
    BlockId c = d.addBlock(sb::makeConstant(1.0), "c");
    BlockId s = d.addBlock(sb::makeSum("++"), "s");
    BlockId g = d.addBlock(sb::makeGain(0.5), "g");
    BlockId z = d.addBlock(sb::makeUnitDelay(), "z");
    d.connect(out(c), in(s, 0));
    d.connect(out(s), in(g));
    d.connect(out(g), in(z));
    d.connect(out(z), in(s, 1));
    CHECK(d.detectAlgebraicLoops().empty());
}

TEST_CASE("resolveExecutionOrder: drivers precede direct-feedthrough sinks") {
    SimpleDiagram sd = makeSimple();
    ExecutionSchedule sched = sd.d.resolveExecutionOrder();
    REQUIRE(sched.items.size() == 4);

    auto position = [&](BlockId id) {
        for (size_t i = 0; i < sched.items.size(); ++i)
            if (!sched.items[i].isCluster && sched.items[i].block == id) return i;
        return size_t(999);
    };
    CHECK(position(sd.c) < position(sd.g));
    CHECK(position(sd.g) < position(sd.s));
    CHECK(position(sd.c2) < position(sd.s));
}

TEST_CASE("resolveExecutionOrder: loop cluster after its external driver") {
    LoopDiagram ld = makeLoop(1.0, 0.5);
    ExecutionSchedule sched = ld.d.resolveExecutionOrder();
    REQUIRE(sched.items.size() == 2);
    CHECK(!sched.items[0].isCluster);
    CHECK(sched.items[0].block == ld.c);
    CHECK(sched.items[1].isCluster);
    CHECK(sched.clusters[sched.items[1].cluster].members ==
          std::vector<BlockId>{ld.s, ld.g});
}

TEST_CASE("resolveExecutionOrder: sources only, id tie-break") {
    Diagram d;
    BlockId a = d.addBlock(sb::makeConstant(1.0), "a");
    BlockId b = d.addBlock(sb::makeConstant(2.0), "b");
    BlockId c = d.addBlock(sb::makeConstant(3.0), "c");
    ExecutionSchedule sched = d.resolveExecutionOrder();
    REQUIRE(sched.items.size() == 3);
    CHECK(sched.items[0].block == a);
    CHECK(sched.items[1].block == b);
    CHECK(sched.items[2].block == c);
}

TEST_CASE("resolveExecutionOrder: loops disabled raise UnresolvableCycle") {
    LoopDiagram ld = makeLoop(1.0, 0.5);
    CHECK_THROWS_AS(ld.d.resolveExecutionOrder(/*allowLoops=*/false), UnresolvableCycle);
}

TEST_CASE("executeCycle: gain-sum pipeline produces 4.5") {
    SimpleDiagram sd = makeSimple();
    Executor ex(sd.d);
    ex.runCycle();
    CHECK(ex.scalarOutput(sd.s) == 4.5);  // exact in double
    CHECK(ex.scalarOutput(sd.g) == 2.5);
}

TEST_CASE("executeCycle: algebraic loop solved to C / (1 - G)") {
    LoopDiagram ld = makeLoop(1.0, 0.5);
    Executor ex(ld.d);
    ex.runCycle();
    CHECK(ex.scalarOutput(ld.s) == doctest::Approx(2.0).epsilon(1e-12));
    // The inlined gain output is written back too.
    CHECK(ex.scalarOutput(ld.g) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("executeCycle: two chained unit delays shift an impulse by two") {
    Diagram d;
    int cycle = 0;
    sb::FunctionSpec impulse;
    impulse.outputTypes = {ValueType::scalar()};
    impulse.compute = [&cycle](std::span<const Value>, std::span<Value> o) {
        o[0] = cycle == 0 ? 1.0 : 0.0;
    };
    BlockId src = d.addBlock(sb::makeFunction(std::move(impulse)), "src");
    BlockId z1 = d.addBlock(sb::makeUnitDelay(), "z1");
    BlockId z2 = d.addBlock(sb::makeUnitDelay(), "z2");
    d.connect(out(src), in(z1));
    d.connect(out(z1), in(z2));

    Executor ex(d);
    std::vector<double> outputs;
    for (cycle = 0; cycle < 4;) {
        ex.runCycle();
        outputs.push_back(ex.scalarOutput(z2));
        ++cycle;
    }
    CHECK(outputs == std::vector<double>{0.0, 0.0, 1.0, 0.0});
}

TEST_CASE("unit delay initial state appears on the first cycle") {
    Diagram d;
    BlockId c = d.addBlock(sb::makeConstant(3.0), "c");
    BlockId z = d.addBlock(sb::makeUnitDelay(7.0), "z");
    d.connect(out(c), in(z));
    Executor ex(d);
    ex.runCycle();
    CHECK(ex.scalarOutput(z) == 7.0);
    ex.runCycle();
    CHECK(ex.scalarOutput(z) == 3.0);
}

TEST_CASE("property: scheduling soundness on random diagrams") {
    std::mt19937 rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        testutil::RandomDiagramOptions opt;
        opt.maxBlocks = 12;
        opt.affineLoops = trial % 3 == 0 ? 1 : 0;
        auto d = testutil::makeRandomDiagram(rng, opt);
        ExecutionSchedule sched = d->resolveExecutionOrder();

        // Every block in exactly one item.
        std::set<BlockId> seen;
        for (const auto& item : sched.items) {
            if (item.isCluster)
                for (BlockId id : sched.clusters[item.cluster].members)
                    CHECK(seen.insert(id).second);
            else
                CHECK(seen.insert(item.block).second);
        }
        CHECK(static_cast<int>(seen.size()) == d->blockCount());

        // Drivers precede every direct-feedthrough sink.
        std::vector<int> position(d->blockCount(), -1);
        for (size_t i = 0; i < sched.items.size(); ++i) {
            const auto& item = sched.items[i];
            if (item.isCluster)
                for (BlockId id : sched.clusters[item.cluster].members)
                    position[id] = static_cast<int>(i);
            else
                position[item.block] = static_cast<int>(i);
        }
        for (const SignalEdge& e : d->edges()) {
            if (!d->block(e.sink.block).info().directFeedthrough) continue;
            if (position[e.source.block] == position[e.sink.block]) continue;  // same cluster
            CHECK(position[e.source.block] < position[e.sink.block]);
        }
    }
}

TEST_CASE("property: loop detection matches the brute-force oracle") {
    std::mt19937 rng(1234);
    for (int trial = 0; trial < 150; ++trial) {
        testutil::RandomDiagramOptions opt;
        opt.maxBlocks = 8;
        opt.affineLoops = trial % 2;
        auto d = testutil::makeRandomDiagram(rng, opt);

        auto clusters = d->detectAlgebraicLoops();
        auto expected = testutil::bruteForceDirectSccs(*d);

        auto canon = [](std::vector<std::vector<int>> comps) {
            for (auto& c : comps) std::sort(c.begin(), c.end());
            std::sort(comps.begin(), comps.end());
            return comps;
        };
        std::vector<std::vector<int>> got;
        for (const auto& c : clusters) got.push_back(c.members);
        CHECK(canon(got) == canon(expected));
    }
}

TEST_CASE("property: identical diagrams give bit-identical traces") {
    std::mt19937 rngA(7), rngB(7);
    testutil::RandomDiagramOptions opt;
    opt.maxBlocks = 10;
    opt.affineLoops = 1;
    auto a = testutil::makeRandomDiagram(rngA, opt);
    auto b = testutil::makeRandomDiagram(rngB, opt);
    auto ta = testutil::engineTrace(*a, 100);
    auto tb = testutil::engineTrace(*b, 100);
    CHECK(ta == tb);  // bitwise equality
}

TEST_CASE("property: re-resolving the schedule is stable") {
    std::mt19937 rng(91);
    testutil::RandomDiagramOptions opt;
    opt.affineLoops = 1;
    auto d = testutil::makeRandomDiagram(rng, opt);
    ExecutionSchedule s1 = d->resolveExecutionOrder();
    ExecutionSchedule s2 = d->resolveExecutionOrder();
    REQUIRE(s1.items.size() == s2.items.size());
    for (size_t i = 0; i < s1.items.size(); ++i) {
        CHECK(s1.items[i].isCluster == s2.items[i].isCluster);
        CHECK(s1.items[i].block == s2.items[i].block);
        CHECK(s1.items[i].cluster == s2.items[i].cluster);
    }
}

TEST_CASE("registration contract: a user-defined kind is first class") {
    // A clip-to-unit block registered from user code, with factory params.
    registerBlockKind("UserClip", [](const ParamMap& params) {
        double hi = 1.0;
        if (auto it = params.find("hi"); it != params.end())
            hi = std::get<double>(it->second);
        return sb::makeSaturation(-hi, hi);
    });

    Diagram d;
    BlockId c = d.addBlock(sb::makeConstant(9.0), "c");
    BlockId u = d.add("UserClip", "u", {{"hi", 2.0}});
    d.connect(out(c), in(u));
    Executor ex(d);
    ex.runCycle();
    CHECK(ex.scalarOutput(u) == 2.0);
}

TEST_CASE("debug dump is deterministic and names loop members") {
    LoopDiagram ld = makeLoop(1.0, 0.5);
    std::string dump1 = ld.d.debugDump();
    std::string dump2 = ld.d.debugDump();
    CHECK(dump1 == dump2);
    CHECK(dump1.find("loop{s g}") != std::string::npos);
    CHECK(dump1.find("c.out0 -> s.in0") != std::string::npos);
}

TEST_CASE("duplicate block names are rejected") {
    Diagram d;
    d.addBlock(sb::makeConstant(1.0), "x");
    CHECK_THROWS_AS(d.addBlock(sb::makeConstant(2.0), "x"), BadParameter);
}
