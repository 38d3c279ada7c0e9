#pragma once

#include <string>
#include <vector>

#include "blockflow/expr.hpp"
#include "blockflow/graph.hpp"

namespace blockflow::codegen {

/// Instruction operand: either a temporary or an interned constant.
struct Operand {
    enum class Tag { Temp, Const } tag = Tag::Temp;
    int index = 0;

    static Operand temp(int i) { return {Tag::Temp, i}; }
    static Operand pool(int i) { return {Tag::Const, i}; }
};

/// One straight-line instruction. Value-producing ops write temp `dst`.
struct Instr {
    enum class Op {
        LoadConst,    // dst = constants[pool]
        Copy,         // dst = a
        Add,          // dst = a + b
        Mul,          // dst = a * b
        Div,          // dst = a / b
        Neg,          // dst = -a
        Clamp,        // dst = min(max(a, b), c)   (b = lo, c = hi)
        CmpGt,        // dst = a > b ? 1 : 0
        CmpLt,        // dst = a < b ? 1 : 0
        And,          // dst = (a != 0 && b != 0) ? 1 : 0
        Or,           // dst = (a != 0 || b != 0) ? 1 : 0
        Select,       // dst = a != 0 ? b : c
        LoadState,    // dst = state[state]
        StoreState,   // state[state] = a
        StoreOutput,  // out[output] = a
        Newton,       // run newtons[newton]
    };
    Op op;
    int dst = -1;
    Operand a, b, c;
    int state = -1;
    int pool = -1;
    int output = -1;
    int newton = -1;
};

/// An inlined bounded Newton iteration: the body evaluates the residuals and
/// the symbolically derived Jacobian entries at the current unknowns, then a
/// dense linear solve updates them. Unknowns persist in state slots so each
/// cycle warm-starts from the previous solution.
struct NewtonProgram {
    int n = 0;
    double tolerance = 1e-10;
    int maxIterations = 50;
    std::vector<int> xTemps;
    std::vector<int> warmStateSlots;
    std::vector<Instr> body;
    std::vector<int> residualTemps;
    std::vector<int> jacobianTemps;  // row-major n*n
    std::string label;
};

struct StateSlot {
    double init = 0.0;
    std::string name;
};

struct OutputSlot {
    std::string name;
    graph::SlotRef slot;
    int temp = -1;
};

/// One cycle of a scheduled diagram as a flat straight-line program.
/// Temporaries are single-assignment within a cycle; state slots are written
/// at most once per cycle.
struct FlatProgram {
    std::vector<double> constants;
    std::vector<StateSlot> state;
    std::vector<Instr> instrs;
    std::vector<NewtonProgram> newtons;
    std::vector<OutputSlot> outputs;
    int numTemps = 0;

    int countOp(Instr::Op op) const;
};

/// Emission sink handed to Block::lowerInto. Wraps the program builder with
/// the lowering context of one block: its input operands, its reserved
/// output temps, and a latch section that runs after every block's body.
class BlockLowering {
public:
    virtual ~BlockLowering() = default;

    virtual int numInputs() const = 0;
    virtual Operand input(int slot) const = 0;
    virtual int outputTemp(int slot) const = 0;
    virtual const std::string& blockName() const = 0;

    virtual Operand constant(double v) = 0;
    virtual int allocState(double init, const std::string& nameSuffix) = 0;

    /// dst == -1 allocates a fresh temporary; the new temp index is returned.
    virtual int emitLoadConst(double v, int dst = -1) = 0;
    virtual int emitCopy(Operand a, int dst = -1) = 0;
    virtual int emitBin(Instr::Op op, Operand a, Operand b, int dst = -1) = 0;
    virtual int emitNeg(Operand a, int dst = -1) = 0;
    virtual int emitClamp(Operand a, Operand lo, Operand hi, int dst = -1) = 0;
    virtual int emitSelect(Operand cond, Operand a, Operand b, int dst = -1) = 0;
    virtual int emitLoadState(int stateSlot, int dst = -1) = 0;
    virtual void emitStoreState(int stateSlot, Operand v) = 0;

    /// Redirects subsequent emission to the end-of-cycle latch section.
    /// Indirect-feedthrough blocks commit state there, after every input
    /// temp has its final value for the cycle.
    virtual void beginLatch() = 0;
};

/// Lowers one cycle of the scheduled diagram. Loop clusters become inlined
/// bounded Newton loops with their Jacobian entries compiled to
/// instructions. Throws CodegenUnsupportedBlock for kinds that cannot be
/// lowered (Function, Conv2D, anything image-valued).
FlatProgram lowerToFlatProgram(const graph::Diagram& d, const graph::ExecutionSchedule& s);

/// Interpreter state: the persistent slots of a flat program.
struct InterpreterState {
    std::vector<double> state;
};

InterpreterState initialInterpreterState(const FlatProgram& p);

/// Executes one cycle; returns the program outputs in declared order.
/// Newton non-convergence and singular Jacobians throw the same error types
/// as the engine's loop solver.
std::vector<double> interpretCycle(const FlatProgram& p, InterpreterState& st);

struct EmittedSource {
    std::string header;  // <name>.h
    std::string source;  // <name>.c
};

/// Self-contained C89-subset translation: a state struct, an init function,
/// and a step function. No dynamic allocation; deterministic text.
EmittedSource emitCSource(const FlatProgram& p, const std::string& name);

/// Symbolic linearization: A = df/dx, B = df/du as expression grids, plus a
/// C function evaluating both at a runtime point.
struct LinearizationResult {
    std::vector<std::vector<expr::Expr>> a;
    std::vector<std::vector<expr::Expr>> b;
    std::vector<std::string> stateSymbols;
    std::vector<std::string> inputSymbols;
    std::string source;
};

LinearizationResult emitLinearization(const std::vector<expr::Expr>& dynamics,
                                      const std::vector<std::string>& stateSymbols,
                                      const std::vector<std::string>& inputSymbols,
                                      const std::string& name);

}  // namespace blockflow::codegen
