#include "blockflow/codegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <sstream>

#include "blockflow/errors.hpp"
#include "blockflow/linalg.hpp"
#include "blockflow/loopsolve.hpp"
#include "blockflow/util.hpp"

namespace blockflow::codegen {

using expr::Expr;
using graph::BlockId;
using graph::Diagram;
using graph::ExecutionSchedule;
using graph::SlotRef;

int FlatProgram::countOp(Instr::Op op) const {
    int count = 0;
    for (const Instr& i : instrs)
        if (i.op == op) ++count;
    return count;
}

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

namespace {

struct ProgramBuilder {
    FlatProgram program;
    std::vector<Instr> latch;
    std::vector<Instr>* sink = nullptr;
    std::map<uint64_t, int> pool;  // keyed by bit pattern so -0.0 stays distinct

    ProgramBuilder() { sink = &program.instrs; }

    int newTemp() { return program.numTemps++; }

    int intern(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        auto it = pool.find(bits);
        if (it != pool.end()) return it->second;
        int idx = static_cast<int>(program.constants.size());
        program.constants.push_back(v);
        pool.emplace(bits, idx);
        return idx;
    }

    Operand constOp(double v) { return Operand::pool(intern(v)); }

    int emitValue(Instr i, int dst) {
        if (dst < 0) dst = newTemp();
        i.dst = dst;
        sink->push_back(i);
        return dst;
    }
};

class BlockLoweringImpl final : public BlockLowering {
public:
    BlockLoweringImpl(ProgramBuilder& b, const Diagram& d, BlockId id,
                      const std::map<SlotRef, int>& outputTemps)
        : b_(b), d_(d), id_(id), outputTemps_(outputTemps) {}

    int numInputs() const override { return d_.block(id_).info().numInputs; }

    Operand input(int slot) const override {
        const graph::SignalEdge* e = d_.edgeInto(graph::in(id_, slot));
        if (!e)
            throw InvalidDiagram("input " + d_.slotName(graph::in(id_, slot)) +
                                 " is unconnected");
        return Operand::temp(outputTemps_.at(e->source));
    }

    int outputTemp(int slot) const override {
        return outputTemps_.at(graph::out(id_, slot));
    }

    const std::string& blockName() const override { return d_.blockName(id_); }

    Operand constant(double v) override { return b_.constOp(v); }

    int allocState(double init, const std::string& suffix) override {
        int idx = static_cast<int>(b_.program.state.size());
        b_.program.state.push_back({init, d_.blockName(id_) + "." + suffix});
        return idx;
    }

    int emitLoadConst(double v, int dst) override {
        Instr i{};
        i.op = Instr::Op::LoadConst;
        i.pool = b_.intern(v);
        return b_.emitValue(i, dst);
    }

    int emitCopy(Operand a, int dst) override {
        Instr i{};
        i.op = Instr::Op::Copy;
        i.a = a;
        return b_.emitValue(i, dst);
    }

    int emitBin(Instr::Op op, Operand a, Operand b, int dst) override {
        Instr i{};
        i.op = op;
        i.a = a;
        i.b = b;
        return b_.emitValue(i, dst);
    }

    int emitNeg(Operand a, int dst) override {
        Instr i{};
        i.op = Instr::Op::Neg;
        i.a = a;
        return b_.emitValue(i, dst);
    }

    int emitClamp(Operand a, Operand lo, Operand hi, int dst) override {
        Instr i{};
        i.op = Instr::Op::Clamp;
        i.a = a;
        i.b = lo;
        i.c = hi;
        return b_.emitValue(i, dst);
    }

    int emitSelect(Operand cond, Operand a, Operand b, int dst) override {
        Instr i{};
        i.op = Instr::Op::Select;
        i.a = cond;
        i.b = a;
        i.c = b;
        return b_.emitValue(i, dst);
    }

    int emitLoadState(int stateSlot, int dst) override {
        Instr i{};
        i.op = Instr::Op::LoadState;
        i.state = stateSlot;
        return b_.emitValue(i, dst);
    }

    void emitStoreState(int stateSlot, Operand v) override {
        Instr i{};
        i.op = Instr::Op::StoreState;
        i.state = stateSlot;
        i.a = v;
        b_.sink->push_back(i);
    }

    void beginLatch() override { b_.sink = &b_.latch; }

private:
    ProgramBuilder& b_;
    const Diagram& d_;
    BlockId id_;
    const std::map<SlotRef, int>& outputTemps_;
};

/// Compiles an expression tree to instructions, mirroring expr::evaluate's
/// operand order so interpreted results match engine-side evaluation.
Operand compileExpr(const Expr& e, const std::map<std::string, Operand>& symbols,
                    ProgramBuilder& b) {
    switch (e->kind) {
        case expr::Kind::Constant:
            return b.constOp(e->value);
        case expr::Kind::Variable: {
            auto it = symbols.find(e->name);
            if (it == symbols.end())
                throw CodegenUnsupportedBlock("unbound symbol '" + e->name +
                                              "' during lowering");
            return it->second;
        }
        case expr::Kind::Add: {
            Operand acc = compileExpr(e->children[0], symbols, b);
            for (size_t i = 1; i < e->children.size(); ++i) {
                Instr ins{};
                ins.op = Instr::Op::Add;
                ins.a = acc;
                ins.b = compileExpr(e->children[i], symbols, b);
                acc = Operand::temp(b.emitValue(ins, -1));
            }
            return acc;
        }
        case expr::Kind::Mul: {
            Operand acc = compileExpr(e->children[0], symbols, b);
            for (size_t i = 1; i < e->children.size(); ++i) {
                Instr ins{};
                ins.op = Instr::Op::Mul;
                ins.a = acc;
                ins.b = compileExpr(e->children[i], symbols, b);
                acc = Operand::temp(b.emitValue(ins, -1));
            }
            return acc;
        }
        case expr::Kind::Neg: {
            Instr ins{};
            ins.op = Instr::Op::Neg;
            ins.a = compileExpr(e->children[0], symbols, b);
            return Operand::temp(b.emitValue(ins, -1));
        }
        case expr::Kind::Div: {
            Instr ins{};
            ins.op = Instr::Op::Div;
            ins.a = compileExpr(e->children[0], symbols, b);
            ins.b = compileExpr(e->children[1], symbols, b);
            return Operand::temp(b.emitValue(ins, -1));
        }
        case expr::Kind::Pow: {
            if (e->exponent == 0) return b.constOp(1.0);
            Operand base = compileExpr(e->children[0], symbols, b);
            Operand acc = base;
            for (int i = 1; i < std::abs(e->exponent); ++i) {
                Instr ins{};
                ins.op = Instr::Op::Mul;
                ins.a = acc;
                ins.b = base;
                acc = Operand::temp(b.emitValue(ins, -1));
            }
            if (e->exponent < 0) {
                Instr ins{};
                ins.op = Instr::Op::Div;
                ins.a = b.constOp(1.0);
                ins.b = acc;
                acc = Operand::temp(b.emitValue(ins, -1));
            }
            return acc;
        }
    }
    throw CodegenUnsupportedBlock("corrupt expression node during lowering");
}

}  // namespace

// ---------------------------------------------------------------------------
// Lowering driver
// ---------------------------------------------------------------------------

FlatProgram lowerToFlatProgram(const Diagram& d, const ExecutionSchedule& schedule) {
    for (BlockId id = 0; id < d.blockCount(); ++id) {
        if (!d.block(id).info().lowerable)
            throw CodegenUnsupportedBlock("block '" + d.blockName(id) + "' (" +
                                          d.block(id).info().kind +
                                          ") cannot be lowered to a flat program");
    }
    graph::ValidationReport report = d.validate();
    if (!report.ok())
        throw InvalidDiagram("cannot lower an invalid diagram:\n" + report.toString());

    ProgramBuilder b;

    // Every block output gets a reserved temp up front so any block can name
    // its inputs regardless of schedule position.
    std::map<SlotRef, int> outputTemps;
    for (BlockId id = 0; id < d.blockCount(); ++id)
        for (int s = 0; s < d.block(id).info().numOutputs; ++s)
            outputTemps[graph::out(id, s)] = b.newTemp();

    for (const ExecutionSchedule::Item& item : schedule.items) {
        if (!item.isCluster) {
            BlockLoweringImpl ctx(b, d, item.block, outputTemps);
            d.block(item.block).lowerInto(ctx);
            b.sink = &b.program.instrs;  // leave latch mode if the block used it
            continue;
        }

        // Loop cluster: compile residuals and Jacobian into a bounded Newton
        // loop; unknowns persist in state slots (zeros on the first cycle,
        // warm start afterwards, matching the engine default).
        const graph::LoopCluster& cluster = schedule.clusters[item.cluster];
        loopsolve::ResidualSystem rs = loopsolve::extractResidualSystem(cluster, d);

        NewtonProgram np;
        np.n = rs.size();
        np.tolerance = rs.config.tolerance;
        np.maxIterations = rs.config.maxIterations;
        np.label = rs.label;

        std::map<std::string, Operand> symbols;
        for (const auto& [sym, value] : rs.parameters) symbols[sym] = b.constOp(value);
        for (const auto& [sym, slot] : rs.externalInputs)
            symbols[sym] = Operand::temp(outputTemps.at(slot));
        for (int i = 0; i < np.n; ++i) {
            int xt = b.newTemp();
            np.xTemps.push_back(xt);
            int ss = static_cast<int>(b.program.state.size());
            b.program.state.push_back(
                {0.0, rs.label + ".x" + std::to_string(i) + "(" + rs.unknowns[i].first + ")"});
            np.warmStateSlots.push_back(ss);
            symbols[rs.unknowns[i].first] = Operand::temp(xt);
        }

        b.sink = &np.body;
        for (int i = 0; i < np.n; ++i) {
            Operand r = compileExpr(rs.residuals[i], symbols, b);
            Instr cp{};
            cp.op = Instr::Op::Copy;
            cp.a = r;
            np.residualTemps.push_back(b.emitValue(cp, -1));
        }
        for (int i = 0; i < np.n; ++i)
            for (int j = 0; j < np.n; ++j) {
                Operand jij = compileExpr(rs.jacobian[i][j], symbols, b);
                Instr cp{};
                cp.op = Instr::Op::Copy;
                cp.a = jij;
                np.jacobianTemps.push_back(b.emitValue(cp, -1));
            }
        b.sink = &b.program.instrs;

        Instr run{};
        run.op = Instr::Op::Newton;
        run.newton = static_cast<int>(b.program.newtons.size());
        b.program.instrs.push_back(run);
        b.program.newtons.push_back(std::move(np));
        const NewtonProgram& placed = b.program.newtons.back();

        // Solved unknowns land in their signal temps; inlined member outputs
        // are evaluated from their expansions.
        for (int i = 0; i < placed.n; ++i) {
            Instr cp{};
            cp.op = Instr::Op::Copy;
            cp.a = Operand::temp(placed.xTemps[i]);
            b.emitValue(cp, outputTemps.at(rs.unknowns[i].second));
        }
        for (const auto& [slot, expression] : rs.memberOutputs) {
            Operand v = compileExpr(expression, symbols, b);
            Instr cp{};
            cp.op = Instr::Op::Copy;
            cp.a = v;
            b.emitValue(cp, outputTemps.at(slot));
        }
    }

    // Observable results: output slots nothing consumes.
    for (BlockId id = 0; id < d.blockCount(); ++id) {
        for (int s = 0; s < d.block(id).info().numOutputs; ++s) {
            bool consumed = false;
            for (const graph::SignalEdge& e : d.edges())
                if (e.source == graph::out(id, s)) {
                    consumed = true;
                    break;
                }
            if (consumed) continue;
            OutputSlot out;
            out.name = d.slotName(graph::out(id, s));
            out.slot = graph::out(id, s);
            out.temp = outputTemps.at(out.slot);
            int index = static_cast<int>(b.program.outputs.size());
            b.program.outputs.push_back(out);
            Instr st{};
            st.op = Instr::Op::StoreOutput;
            st.output = index;
            st.a = Operand::temp(out.temp);
            b.program.instrs.push_back(st);
        }
    }

    // Latch section last: state commits see the cycle's final values.
    b.program.instrs.insert(b.program.instrs.end(), b.latch.begin(), b.latch.end());
    return std::move(b.program);
}

// ---------------------------------------------------------------------------
// Interpreter
// ---------------------------------------------------------------------------

InterpreterState initialInterpreterState(const FlatProgram& p) {
    InterpreterState st;
    st.state.reserve(p.state.size());
    for (const StateSlot& s : p.state) st.state.push_back(s.init);
    return st;
}

namespace {

double readOperand(const FlatProgram& p, const std::vector<double>& temps, Operand o) {
    return o.tag == Operand::Tag::Const ? p.constants[o.index] : temps[o.index];
}

void runInstr(const FlatProgram& p, const Instr& i, std::vector<double>& temps,
              InterpreterState& st, std::vector<double>& outputs);

void runNewton(const FlatProgram& p, const NewtonProgram& np, std::vector<double>& temps,
               InterpreterState& st, std::vector<double>& outputs) {
    for (int i = 0; i < np.n; ++i) temps[np.xTemps[i]] = st.state[np.warmStateSlots[i]];
    double norm = 0.0;
    for (int iter = 0; iter <= np.maxIterations; ++iter) {
        for (const Instr& i : np.body) runInstr(p, i, temps, st, outputs);
        norm = 0.0;
        for (int i = 0; i < np.n; ++i)
            norm = std::max(norm, std::abs(temps[np.residualTemps[i]]));
        if (norm <= np.tolerance) {
            for (int i = 0; i < np.n; ++i)
                st.state[np.warmStateSlots[i]] = temps[np.xTemps[i]];
            return;
        }
        if (iter == np.maxIterations) break;
        la::Matrix jac(np.n, np.n);
        std::vector<double> rhs(np.n);
        for (int i = 0; i < np.n; ++i) {
            rhs[i] = -temps[np.residualTemps[i]];
            for (int j = 0; j < np.n; ++j)
                jac(i, j) = temps[np.jacobianTemps[i * np.n + j]];
        }
        std::vector<double> dx;
        try {
            dx = la::solveLinear(std::move(jac), std::move(rhs));
        } catch (const SingularJacobian& e) {
            throw SingularJacobian(np.label + ": " + e.what());
        }
        for (int i = 0; i < np.n; ++i) temps[np.xTemps[i]] += dx[i];
    }
    throw LoopDivergence(np.label + " did not converge within " +
                             std::to_string(np.maxIterations) + " Newton iterations",
                         norm);
}

void runInstr(const FlatProgram& p, const Instr& i, std::vector<double>& temps,
              InterpreterState& st, std::vector<double>& outputs) {
    auto rd = [&](Operand o) { return readOperand(p, temps, o); };
    switch (i.op) {
        case Instr::Op::LoadConst:
            temps[i.dst] = p.constants[i.pool];
            break;
        case Instr::Op::Copy:
            temps[i.dst] = rd(i.a);
            break;
        case Instr::Op::Add:
            temps[i.dst] = rd(i.a) + rd(i.b);
            break;
        case Instr::Op::Mul:
            temps[i.dst] = rd(i.a) * rd(i.b);
            break;
        case Instr::Op::Div:
            temps[i.dst] = rd(i.a) / rd(i.b);
            break;
        case Instr::Op::Neg:
            temps[i.dst] = -rd(i.a);
            break;
        case Instr::Op::Clamp: {
            double x = rd(i.a), lo = rd(i.b), hi = rd(i.c);
            temps[i.dst] = x < lo ? lo : (x > hi ? hi : x);
            break;
        }
        case Instr::Op::CmpGt:
            temps[i.dst] = rd(i.a) > rd(i.b) ? 1.0 : 0.0;
            break;
        case Instr::Op::CmpLt:
            temps[i.dst] = rd(i.a) < rd(i.b) ? 1.0 : 0.0;
            break;
        case Instr::Op::And:
            temps[i.dst] = (rd(i.a) != 0.0 && rd(i.b) != 0.0) ? 1.0 : 0.0;
            break;
        case Instr::Op::Or:
            temps[i.dst] = (rd(i.a) != 0.0 || rd(i.b) != 0.0) ? 1.0 : 0.0;
            break;
        case Instr::Op::Select:
            temps[i.dst] = rd(i.a) != 0.0 ? rd(i.b) : rd(i.c);
            break;
        case Instr::Op::LoadState:
            temps[i.dst] = st.state[i.state];
            break;
        case Instr::Op::StoreState:
            st.state[i.state] = rd(i.a);
            break;
        case Instr::Op::StoreOutput:
            outputs[i.output] = rd(i.a);
            break;
        case Instr::Op::Newton:
            runNewton(p, p.newtons[i.newton], temps, st, outputs);
            break;
    }
}

}  // namespace

std::vector<double> interpretCycle(const FlatProgram& p, InterpreterState& st) {
    if (st.state.size() != p.state.size())
        throw InvalidDiagram("interpreter state does not match the program's state table");
    std::vector<double> temps(p.numTemps, 0.0);
    std::vector<double> outputs(p.outputs.size(), 0.0);
    for (const Instr& i : p.instrs) runInstr(p, i, temps, st, outputs);
    return outputs;
}

// ---------------------------------------------------------------------------
// C emission
// ---------------------------------------------------------------------------

namespace {

std::string operandText(const FlatProgram& p, Operand o) {
    if (o.tag == Operand::Tag::Const) return util::fmtDoubleC(p.constants[o.index]);
    return "t" + std::to_string(o.index);
}

void emitSolveUnrolled(std::ostringstream& os, int n, const std::string& ind) {
    // Scaled partial pivoting with physical row swaps; mirrors the runtime
    // solver so generated code and engine agree on singularity behavior.
    os << ind << "piv_ = -1; best_ = -1.0;\n";
    for (int k = 0; k < n; ++k) {
        if (k > 0) os << ind << "piv_ = -1; best_ = -1.0;\n";
        for (int r = k; r < n; ++r)
            os << ind << "if (sc_[" << r << "] != 0.0) { mag_ = fabs(jm_[" << r << "][" << k
               << "]) / sc_[" << r << "]; if (mag_ > best_) { best_ = mag_; piv_ = " << r
               << "; } }\n";
        os << ind << "if (piv_ < 0) return 2;\n";
        os << ind << "if (piv_ != " << k << ") {\n";
        for (int c = k; c < n; ++c)
            os << ind << "    tmp_ = jm_[" << k << "][" << c << "]; jm_[" << k << "][" << c
               << "] = jm_[piv_][" << c << "]; jm_[piv_][" << c << "] = tmp_;\n";
        os << ind << "    tmp_ = fv_[" << k << "]; fv_[" << k
           << "] = fv_[piv_]; fv_[piv_] = tmp_;\n";
        os << ind << "    tmp_ = sc_[" << k << "]; sc_[" << k
           << "] = sc_[piv_]; sc_[piv_] = tmp_;\n";
        os << ind << "}\n";
        os << ind << "if (fabs(jm_[" << k << "][" << k << "]) <= 1e-12 * sc_[" << k
           << "]) return 2;\n";
        for (int r = k + 1; r < n; ++r) {
            os << ind << "m_ = jm_[" << r << "][" << k << "] / jm_[" << k << "][" << k
               << "];\n";
            for (int c = k + 1; c < n; ++c)
                os << ind << "jm_[" << r << "][" << c << "] -= m_ * jm_[" << k << "][" << c
                   << "];\n";
            os << ind << "fv_[" << r << "] -= m_ * fv_[" << k << "];\n";
        }
    }
    for (int k = n - 1; k >= 0; --k) {
        os << ind << "acc_ = fv_[" << k << "];\n";
        for (int c = k + 1; c < n; ++c)
            os << ind << "acc_ -= jm_[" << k << "][" << c << "] * dx_[" << c << "];\n";
        os << ind << "dx_[" << k << "] = acc_ / jm_[" << k << "][" << k << "];\n";
    }
}

void emitSolveLooped(std::ostringstream& os, int n, const std::string& ind) {
    os << ind << "for (k_ = 0; k_ < " << n << "; ++k_) {\n";
    os << ind << "    piv_ = -1; best_ = -1.0;\n";
    os << ind << "    for (r_ = k_; r_ < " << n << "; ++r_) {\n";
    os << ind << "        if (sc_[r_] == 0.0) continue;\n";
    os << ind << "        mag_ = fabs(jm_[r_][k_]) / sc_[r_];\n";
    os << ind << "        if (mag_ > best_) { best_ = mag_; piv_ = r_; }\n";
    os << ind << "    }\n";
    os << ind << "    if (piv_ < 0) return 2;\n";
    os << ind << "    if (piv_ != k_) {\n";
    os << ind << "        for (c_ = k_; c_ < " << n
       << "; ++c_) { tmp_ = jm_[k_][c_]; jm_[k_][c_] = jm_[piv_][c_]; jm_[piv_][c_] = tmp_; }\n";
    os << ind << "        tmp_ = fv_[k_]; fv_[k_] = fv_[piv_]; fv_[piv_] = tmp_;\n";
    os << ind << "        tmp_ = sc_[k_]; sc_[k_] = sc_[piv_]; sc_[piv_] = tmp_;\n";
    os << ind << "    }\n";
    os << ind << "    if (fabs(jm_[k_][k_]) <= 1e-12 * sc_[k_]) return 2;\n";
    os << ind << "    for (r_ = k_ + 1; r_ < " << n << "; ++r_) {\n";
    os << ind << "        m_ = jm_[r_][k_] / jm_[k_][k_];\n";
    os << ind << "        for (c_ = k_ + 1; c_ < " << n
       << "; ++c_) jm_[r_][c_] -= m_ * jm_[k_][c_];\n";
    os << ind << "        fv_[r_] -= m_ * fv_[k_];\n";
    os << ind << "    }\n";
    os << ind << "}\n";
    os << ind << "for (k_ = " << n - 1 << "; k_ >= 0; --k_) {\n";
    os << ind << "    acc_ = fv_[k_];\n";
    os << ind << "    for (c_ = k_ + 1; c_ < " << n
       << "; ++c_) acc_ -= jm_[k_][c_] * dx_[c_];\n";
    os << ind << "    dx_[k_] = acc_ / jm_[k_][k_];\n";
    os << ind << "}\n";
}

void emitInstrC(std::ostringstream& os, const FlatProgram& p, const Instr& i,
                const std::string& ind) {
    auto t = [&](Operand o) { return operandText(p, o); };
    auto dst = [&] { return "t" + std::to_string(i.dst); };
    switch (i.op) {
        case Instr::Op::LoadConst:
            os << ind << dst() << " = " << util::fmtDoubleC(p.constants[i.pool]) << ";\n";
            break;
        case Instr::Op::Copy:
            os << ind << dst() << " = " << t(i.a) << ";\n";
            break;
        case Instr::Op::Add:
            os << ind << dst() << " = " << t(i.a) << " + " << t(i.b) << ";\n";
            break;
        case Instr::Op::Mul:
            os << ind << dst() << " = " << t(i.a) << " * " << t(i.b) << ";\n";
            break;
        case Instr::Op::Div:
            os << ind << dst() << " = " << t(i.a) << " / " << t(i.b) << ";\n";
            break;
        case Instr::Op::Neg:
            os << ind << dst() << " = -" << t(i.a) << ";\n";
            break;
        case Instr::Op::Clamp:
            os << ind << dst() << " = " << t(i.a) << " < " << t(i.b) << " ? " << t(i.b)
               << " : (" << t(i.a) << " > " << t(i.c) << " ? " << t(i.c) << " : " << t(i.a)
               << ");\n";
            break;
        case Instr::Op::CmpGt:
            os << ind << dst() << " = " << t(i.a) << " > " << t(i.b) << " ? 1.0 : 0.0;\n";
            break;
        case Instr::Op::CmpLt:
            os << ind << dst() << " = " << t(i.a) << " < " << t(i.b) << " ? 1.0 : 0.0;\n";
            break;
        case Instr::Op::And:
            os << ind << dst() << " = (" << t(i.a) << " != 0.0 && " << t(i.b)
               << " != 0.0) ? 1.0 : 0.0;\n";
            break;
        case Instr::Op::Or:
            os << ind << dst() << " = (" << t(i.a) << " != 0.0 || " << t(i.b)
               << " != 0.0) ? 1.0 : 0.0;\n";
            break;
        case Instr::Op::Select:
            os << ind << dst() << " = " << t(i.a) << " != 0.0 ? " << t(i.b) << " : " << t(i.c)
               << ";\n";
            break;
        case Instr::Op::LoadState:
            os << ind << dst() << " = st->s[" << i.state << "];\n";
            break;
        case Instr::Op::StoreState:
            os << ind << "st->s[" << i.state << "] = " << t(i.a) << ";\n";
            break;
        case Instr::Op::StoreOutput:
            os << ind << "out[" << i.output << "] = " << t(i.a) << "; /* "
               << p.outputs[i.output].name << " */\n";
            break;
        case Instr::Op::Newton: {
            const NewtonProgram& np = p.newtons[i.newton];
            const int n = np.n;
            os << ind << "{ /* " << np.label << ": " << n << " unknown(s) */\n";
            std::string in1 = ind + "    ";
            std::string in2 = in1 + "    ";
            std::string in3 = in2 + "    ";
            os << in1 << "double jm_[" << n << "][" << n << "], fv_[" << n << "], sc_[" << n
               << "], dx_[" << n << "], tmp_, m_, mag_, best_, acc_, nrm_;\n";
            os << in1 << "int it_, piv_, conv_ = 0;\n";
            if (n > 4) os << in1 << "int k_, r_, c_;\n";
            for (int k = 0; k < n; ++k)
                os << in1 << "t" << np.xTemps[k] << " = st->s[" << np.warmStateSlots[k]
                   << "];\n";
            os << in1 << "for (it_ = 0; it_ <= " << np.maxIterations << "; ++it_) {\n";
            for (const Instr& bi : np.body) emitInstrC(os, p, bi, in2);
            os << in2 << "nrm_ = 0.0;\n";
            for (int k = 0; k < n; ++k)
                os << in2 << "if (fabs(t" << np.residualTemps[k] << ") > nrm_) nrm_ = fabs(t"
                   << np.residualTemps[k] << ");\n";
            os << in2 << "if (nrm_ <= " << util::fmtDoubleC(np.tolerance)
               << ") { conv_ = 1; break; }\n";
            os << in2 << "if (it_ == " << np.maxIterations << ") break;\n";
            for (int r = 0; r < n; ++r) {
                for (int c = 0; c < n; ++c)
                    os << in2 << "jm_[" << r << "][" << c << "] = t"
                       << np.jacobianTemps[r * n + c] << ";\n";
                os << in2 << "fv_[" << r << "] = -t" << np.residualTemps[r] << ";\n";
            }
            for (int r = 0; r < n; ++r) {
                os << in2 << "sc_[" << r << "] = fabs(jm_[" << r << "][0]);\n";
                for (int c = 1; c < n; ++c)
                    os << in2 << "if (fabs(jm_[" << r << "][" << c << "]) > sc_[" << r
                       << "]) sc_[" << r << "] = fabs(jm_[" << r << "][" << c << "]);\n";
            }
            os << in2 << "{\n";
            if (n <= 4)
                emitSolveUnrolled(os, n, in3);
            else
                emitSolveLooped(os, n, in3);
            os << in2 << "}\n";
            for (int k = 0; k < n; ++k)
                os << in2 << "t" << np.xTemps[k] << " += dx_[" << k << "];\n";
            os << in1 << "}\n";
            os << in1 << "if (!conv_) return 1;\n";
            for (int k = 0; k < n; ++k)
                os << in1 << "st->s[" << np.warmStateSlots[k] << "] = t" << np.xTemps[k]
                   << ";\n";
            os << ind << "}\n";
            break;
        }
    }
}

}  // namespace

EmittedSource emitCSource(const FlatProgram& p, const std::string& name) {
    const size_t stateSize = std::max<size_t>(p.state.size(), 1);
    const size_t outSize = std::max<size_t>(p.outputs.size(), 1);

    std::ostringstream h;
    h << "#ifndef " << name << "_H\n#define " << name << "_H\n\n";
    h << "/* One-cycle step function generated from a block diagram.\n";
    h << " * State slots:\n";
    for (size_t i = 0; i < p.state.size(); ++i)
        h << " *   s[" << i << "] " << p.state[i].name << "\n";
    h << " * Outputs:\n";
    for (size_t i = 0; i < p.outputs.size(); ++i)
        h << " *   out[" << i << "] " << p.outputs[i].name << "\n";
    h << " */\n\n";
    h << "typedef struct {\n    double s[" << stateSize << "];\n} " << name << "_state;\n\n";
    h << "void " << name << "_init(" << name << "_state *st);\n";
    h << "/* Returns 0 on success, 1 on loop divergence, 2 on a singular jacobian. */\n";
    h << "int " << name << "_step(" << name << "_state *st, double out[" << outSize
      << "]);\n\n";
    h << "#endif\n";

    std::ostringstream c;
    c << "#include \"" << name << ".h\"\n\n#include <math.h>\n\n";
    c << "void " << name << "_init(" << name << "_state *st) {\n";
    if (p.state.empty()) c << "    st->s[0] = 0.0;\n";
    for (size_t i = 0; i < p.state.size(); ++i)
        c << "    st->s[" << i << "] = " << util::fmtDoubleC(p.state[i].init) << "; /* "
          << p.state[i].name << " */\n";
    c << "}\n\n";
    c << "int " << name << "_step(" << name << "_state *st, double out[" << outSize
      << "]) {\n";
    if (p.numTemps > 0) {
        c << "    double";
        for (int i = 0; i < p.numTemps; ++i) c << (i ? ", t" : " t") << i;
        c << ";\n";
    }
    for (const Instr& i : p.instrs) emitInstrC(c, p, i, "    ");
    c << "    return 0;\n}\n";

    return {h.str(), c.str()};
}

// ---------------------------------------------------------------------------
// Symbolic linearization
// ---------------------------------------------------------------------------

namespace {

void exprToC(const Expr& e, const std::map<std::string, std::string>& names,
             std::string& out) {
    switch (e->kind) {
        case expr::Kind::Constant:
            out += util::fmtDoubleC(e->value);
            return;
        case expr::Kind::Variable: {
            auto it = names.find(e->name);
            if (it == names.end())
                throw CodegenUnsupportedBlock("symbol '" + e->name +
                                              "' is not a state or input");
            out += it->second;
            return;
        }
        case expr::Kind::Add:
            out += '(';
            for (size_t i = 0; i < e->children.size(); ++i) {
                if (i) out += " + ";
                exprToC(e->children[i], names, out);
            }
            out += ')';
            return;
        case expr::Kind::Mul:
            out += '(';
            for (size_t i = 0; i < e->children.size(); ++i) {
                if (i) out += " * ";
                exprToC(e->children[i], names, out);
            }
            out += ')';
            return;
        case expr::Kind::Neg:
            out += "(-";
            exprToC(e->children[0], names, out);
            out += ')';
            return;
        case expr::Kind::Div:
            out += '(';
            exprToC(e->children[0], names, out);
            out += " / ";
            exprToC(e->children[1], names, out);
            out += ')';
            return;
        case expr::Kind::Pow: {
            if (e->exponent == 0) {
                out += "1.0";
                return;
            }
            std::string base;
            exprToC(e->children[0], names, base);
            std::string prod = base;
            for (int i = 1; i < std::abs(e->exponent); ++i) prod += " * " + base;
            if (e->exponent < 0)
                out += "(1.0 / (" + prod + "))";
            else
                out += "(" + prod + ")";
            return;
        }
    }
}

}  // namespace

LinearizationResult emitLinearization(const std::vector<Expr>& dynamics,
                                      const std::vector<std::string>& stateSymbols,
                                      const std::vector<std::string>& inputSymbols,
                                      const std::string& name) {
    const int n = static_cast<int>(dynamics.size());
    const int nx = static_cast<int>(stateSymbols.size());
    const int nu = static_cast<int>(inputSymbols.size());

    LinearizationResult result;
    result.stateSymbols = stateSymbols;
    result.inputSymbols = inputSymbols;
    result.a.assign(n, std::vector<Expr>(nx));
    result.b.assign(n, std::vector<Expr>(nu));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < nx; ++j)
            result.a[i][j] = expr::simplify(expr::differentiate(dynamics[i], stateSymbols[j]));
        for (int j = 0; j < nu; ++j)
            result.b[i][j] = expr::simplify(expr::differentiate(dynamics[i], inputSymbols[j]));
    }

    std::map<std::string, std::string> names;
    for (int j = 0; j < nx; ++j) names[stateSymbols[j]] = "x[" + std::to_string(j) + "]";
    for (int j = 0; j < nu; ++j) names[inputSymbols[j]] = "u[" + std::to_string(j) + "]";

    std::ostringstream c;
    c << "/* Jacobians of f(x, u): a is " << n << "x" << nx << " row-major, b is " << n << "x"
      << nu << " row-major. */\n";
    c << "void " << name << "_linearize(const double x[" << std::max(nx, 1)
      << "], const double u[" << std::max(nu, 1) << "], double a[" << std::max(n * nx, 1)
      << "], double b[" << std::max(n * nu, 1) << "]) {\n";
    c << "    (void)x; (void)u;\n";
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < nx; ++j) {
            std::string text;
            exprToC(result.a[i][j], names, text);
            c << "    a[" << i * nx + j << "] = " << text << ";\n";
        }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < nu; ++j) {
            std::string text;
            exprToC(result.b[i][j], names, text);
            c << "    b[" << i * nu + j << "] = " << text << ";\n";
        }
    c << "}\n";
    result.source = c.str();
    return result;
}

}  // namespace blockflow::codegen
