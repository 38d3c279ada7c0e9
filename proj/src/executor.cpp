#include "blockflow/executor.hpp"

#include <algorithm>

#include "blockflow/errors.hpp"

namespace blockflow::graph {

Executor::Executor(Diagram& d, ExecOptions options)
    : diagram_(&d), options_(options) {
    ValidationReport report = d.validate();
    if (!report.ok())
        throw InvalidDiagram("diagram is not executable:\n" + report.toString());
    schedule_ = d.resolveExecutionOrder(options_.allowLoops);
    for (const LoopCluster& cluster : schedule_.clusters) {
        PreparedLoop prepared{loopsolve::extractResidualSystem(cluster, d, options_.newton),
                              {}, false, 0};
        loops_.push_back(std::move(prepared));
    }
    values_.resize(d.blockCount());
    for (BlockId id = 0; id < d.blockCount(); ++id)
        values_[id].assign(d.block(id).info().numOutputs, Value{0.0});
    reset();
}

void Executor::reset() {
    for (BlockId id = 0; id < diagram_->blockCount(); ++id) diagram_->block(id).reset();
    for (auto& loop : loops_) {
        loop.hasWarm = false;
        loop.warm.clear();
        loop.lastIterations = 0;
    }
    for (auto& outs : values_)
        for (Value& v : outs) v = 0.0;
    cycle_ = 0;
}

const Value& Executor::output(BlockId block, int slot) const {
    return values_.at(block).at(slot);
}

double Executor::scalarOutput(BlockId block, int slot) const {
    return asScalar(output(block, slot));
}

std::vector<SlotRef> Executor::terminalOutputs() const {
    std::vector<SlotRef> result;
    for (BlockId id = 0; id < diagram_->blockCount(); ++id) {
        for (int s = 0; s < diagram_->block(id).info().numOutputs; ++s) {
            bool consumed = false;
            for (const SignalEdge& e : diagram_->edges())
                if (e.source == out(id, s)) {
                    consumed = true;
                    break;
                }
            if (!consumed) result.push_back(out(id, s));
        }
    }
    return result;
}

namespace {

std::vector<Value> gatherInputs(const Diagram& d, const std::vector<std::vector<Value>>& values,
                                BlockId id) {
    const BlockInfo& bi = d.block(id).info();
    std::vector<Value> inputs;
    inputs.reserve(bi.numInputs);
    for (int s = 0; s < bi.numInputs; ++s) {
        const SignalEdge* e = d.edgeInto(in(id, s));
        if (!e) throw InvalidDiagram("input " + d.slotName(in(id, s)) + " is unconnected");
        inputs.push_back(values[e->source.block][e->source.slot]);
    }
    return inputs;
}

}  // namespace

void Executor::solveCluster(int index) {
    PreparedLoop& loop = loops_[index];
    const loopsolve::ResidualSystem& rs = loop.system;

    expr::SymbolTable bindings;
    for (const auto& [sym, slot] : rs.externalInputs) {
        bindings.bind(sym, asScalar(values_[slot.block][slot.slot]));
        bindings.setProvenance(sym, {slot.block, slot.slot});
    }

    const std::vector<double>* warm = nullptr;
    if (rs.config.initialGuess == loopsolve::NewtonConfig::InitialGuess::WarmStart &&
        loop.hasWarm)
        warm = &loop.warm;

    loopsolve::SolveResult solved = loopsolve::solveLoop(rs, bindings, warm);
    loop.lastIterations = solved.iterations;
    loop.warm = solved.x;
    loop.hasWarm = true;

    // Write the unknowns back to their slots, then every inlined member
    // output via its expansion.
    expr::SymbolTable full = bindings;
    for (const auto& [sym, value] : rs.parameters) full.bind(sym, value);
    for (int i = 0; i < rs.size(); ++i) {
        const auto& [sym, slot] = rs.unknowns[i];
        values_[slot.block][slot.slot] = solved.x[i];
        full.bind(sym, solved.x[i]);
    }
    for (const auto& [slot, expression] : rs.memberOutputs)
        values_[slot.block][slot.slot] = expr::evaluate(expression, full);
}

void Executor::runCycle() {
    Diagram& d = *diagram_;
    for (const ExecutionSchedule::Item& item : schedule_.items) {
        if (item.isCluster) {
            solveCluster(item.cluster);
            continue;
        }
        Block& b = d.block(item.block);
        std::vector<Value> inputs = gatherInputs(d, values_, item.block);
        try {
            b.compute(inputs, values_[item.block]);
        } catch (EngineError& e) {
            throw EngineError("block '" + b.name() + "' (" + b.info().kind +
                              ") failed: " + e.what());
        }
    }
    // Commit phase: indirect blocks absorb this cycle's final input values,
    // so their next outputs depend only on inputs from completed cycles.
    for (BlockId id = 0; id < d.blockCount(); ++id) {
        Block& b = d.block(id);
        if (b.info().numInputs == 0) continue;
        std::vector<Value> inputs = gatherInputs(d, values_, id);
        b.latch(inputs);
    }
    ++cycle_;
}

}  // namespace blockflow::graph
