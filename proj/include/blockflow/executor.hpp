#pragma once

#include "blockflow/graph.hpp"
#include "blockflow/loopsolve.hpp"

namespace blockflow::graph {

struct ExecOptions {
    bool allowLoops = true;
    loopsolve::NewtonConfig newton;
};

/// Drives cycle execution of a validated diagram: triggers every schedule
/// item once in order, delegates loop clusters to the Newton solver, then
/// lets indirect-feedthrough blocks latch their state from the cycle's final
/// signal values. One executor owns one diagram's runtime state; concurrent
/// execution requires separate instances.
class Executor {
public:
    explicit Executor(Diagram& d, ExecOptions options = {});

    /// Executes one cycle. Block and loop errors abort the cycle and carry
    /// the offending block or cluster in their message.
    void runCycle();

    /// Resets all block state, loop warm starts, and the cycle counter.
    void reset();

    long cycle() const { return cycle_; }
    const ExecutionSchedule& schedule() const { return schedule_; }
    const Diagram& diagram() const { return *diagram_; }

    const Value& output(BlockId block, int slot = 0) const;
    double scalarOutput(BlockId block, int slot = 0) const;

    /// Newton iterations spent on the given cluster during the last cycle.
    int lastIterations(int cluster) const { return loops_.at(cluster).lastIterations; }
    const loopsolve::ResidualSystem& residualSystem(int cluster) const {
        return loops_.at(cluster).system;
    }

    /// Output slots with no outgoing edges, ascending (block, slot); these
    /// are the diagram's observable results and the columns of CSV traces.
    std::vector<SlotRef> terminalOutputs() const;

private:
    struct PreparedLoop {
        loopsolve::ResidualSystem system;
        std::vector<double> warm;
        bool hasWarm = false;
        int lastIterations = 0;
    };

    void solveCluster(int index);

    Diagram* diagram_;
    ExecOptions options_;
    ExecutionSchedule schedule_;
    std::vector<PreparedLoop> loops_;
    std::vector<std::vector<Value>> values_;  // [block][output slot]
    long cycle_ = 0;
};

}  // namespace blockflow::graph
