#include "blockflow/stdblocks.hpp"

#include <algorithm>
#include <cmath>

#include "blockflow/codegen.hpp"
#include "blockflow/errors.hpp"
#include "blockflow/executor.hpp"

namespace blockflow::stdblocks {

using codegen::BlockLowering;
using codegen::Instr;
using codegen::Operand;
using expr::Expr;
using graph::BlockInfo;
using graph::ParamMap;
using graph::ParamValue;

// ---------------------------------------------------------------------------
// Free-function semantics
// ---------------------------------------------------------------------------

Value gainEval(const Value& u, const Value& k) {
    if (const double* ks = std::get_if<double>(&k)) {
        if (const double* us = std::get_if<double>(&u)) return *ks * *us;
        if (const la::Matrix* um = std::get_if<la::Matrix>(&u)) return *um * *ks;
        throw TypeMismatch("scalar gain cannot scale an image");
    }
    const la::Matrix& km = std::get<la::Matrix>(k);
    if (const la::Matrix* um = std::get_if<la::Matrix>(&u)) return km * *um;
    throw TypeMismatch("matrix gain requires a vector or matrix input");
}

double sumEval(std::span<const double> u, std::span<const int> signs) {
    double acc = 0.0;
    for (size_t i = 0; i < u.size(); ++i) acc += signs[i] > 0 ? u[i] : -u[i];
    return acc;
}

double saturationEval(double u, double lo, double hi) {
    return u < lo ? lo : (u > hi ? hi : u);
}

double pidStep(double e, const PidGains& g, double T, PidState& state) {
    state.integral += T * e;
    double derivative = (e - state.prevError) / T;
    double u = g.kp * e + g.ki * state.integral + g.kd * derivative;
    state.prevError = e;
    return u;
}

// ---------------------------------------------------------------------------
// Parameter helpers
// ---------------------------------------------------------------------------

namespace {

double paramDouble(const ParamMap& p, const std::string& key, double def) {
    auto it = p.find(key);
    if (it == p.end()) return def;
    if (const double* d = std::get_if<double>(&it->second)) return *d;
    if (const std::string* s = std::get_if<std::string>(&it->second)) {
        try {
            size_t pos = 0;
            double v = std::stod(*s, &pos);
            if (pos == s->size()) return v;
        } catch (...) {
        }
    }
    throw BadParameter("parameter '" + key + "' must be a number");
}

double requireDouble(const ParamMap& p, const std::string& key) {
    if (!p.count(key)) throw BadParameter("missing required parameter '" + key + "'");
    return paramDouble(p, key, 0.0);
}

int paramInt(const ParamMap& p, const std::string& key, int def) {
    double v = paramDouble(p, key, def);
    int i = static_cast<int>(v);
    if (static_cast<double>(i) != v) throw BadParameter("parameter '" + key + "' must be an integer");
    return i;
}

std::string paramString(const ParamMap& p, const std::string& key, const std::string& def) {
    auto it = p.find(key);
    if (it == p.end()) return def;
    if (const std::string* s = std::get_if<std::string>(&it->second)) return *s;
    throw BadParameter("parameter '" + key + "' must be a string");
}

la::Matrix requireMatrix(const ParamMap& p, const std::string& key) {
    auto it = p.find(key);
    if (it == p.end()) throw BadParameter("missing required parameter '" + key + "'");
    if (const la::Matrix* m = std::get_if<la::Matrix>(&it->second)) return *m;
    if (const double* d = std::get_if<double>(&it->second)) return la::Matrix(1, 1, {*d});
    throw BadParameter("parameter '" + key + "' must be a matrix");
}

std::vector<ValueType> scalars(int n) {
    return std::vector<ValueType>(n, ValueType::scalar());
}

}  // namespace

// ---------------------------------------------------------------------------
// Constant
// ---------------------------------------------------------------------------

namespace {

ValueType typeOfValue(const Value& v, ValueType declared = ValueType::scalar()) {
    if (std::holds_alternative<double>(v)) return ValueType::scalar();
    if (const la::Matrix* m = std::get_if<la::Matrix>(&v)) {
        if (declared.kind == ValueType::Kind::Vector && m->cols() == 1)
            return ValueType::vector(m->rows());
        return ValueType::matrix(m->rows(), m->cols());
    }
    return ValueType::image();
}

class ConstantBlock final : public Block {
public:
    explicit ConstantBlock(Value value) : value_(std::move(value)) {
        BlockInfo info;
        info.kind = "Constant";
        info.numOutputs = 1;
        info.symbolicCapable = std::holds_alternative<double>(value_);
        info.lowerable = info.symbolicCapable;
        info.outputTypes = {typeOfValue(value_)};
        setInfo(std::move(info));
    }

    void compute(std::span<const Value>, std::span<Value> out) override { out[0] = value_; }

    std::vector<Expr> symbolicOutputs(std::span<const Expr>) const override {
        return {expr::constant(std::get<double>(value_))};
    }

    void lowerInto(BlockLowering& ctx) const override {
        ctx.emitLoadConst(std::get<double>(value_), ctx.outputTemp(0));
    }

private:
    Value value_;
};

// ---------------------------------------------------------------------------
// Gain
// ---------------------------------------------------------------------------

class GainBlock final : public Block {
public:
    GainBlock(Value gain, ValueType inputType) : gain_(std::move(gain)) {
        BlockInfo info;
        info.kind = "Gain";
        info.numInputs = 1;
        info.numOutputs = 1;
        info.inputTypes = {inputType};
        info.outputTypes = {deriveOutputType(inputType)};
        info.symbolicCapable =
            std::holds_alternative<double>(gain_) && inputType.isScalar();
        info.lowerable = info.symbolicCapable;
        setInfo(std::move(info));
    }

    void compute(std::span<const Value> in, std::span<Value> out) override {
        out[0] = gainEval(in[0], gain_);
    }

    std::vector<Expr> symbolicOutputs(std::span<const Expr> in) const override {
        return {expr::mul(expr::variable(name() + "_gain"), in[0])};
    }

    std::vector<std::pair<std::string, double>> symbolicParams() const override {
        return {{name() + "_gain", std::get<double>(gain_)}};
    }

    void lowerInto(BlockLowering& ctx) const override {
        ctx.emitBin(Instr::Op::Mul, ctx.constant(std::get<double>(gain_)), ctx.input(0),
                    ctx.outputTemp(0));
    }

private:
    ValueType deriveOutputType(const ValueType& inputType) const {
        if (const double* k = std::get_if<double>(&gain_)) {
            (void)k;
            return inputType;  // uniform scaling preserves shape
        }
        const la::Matrix& km = std::get<la::Matrix>(gain_);
        // K (p x q) against vector(q) or matrix(q, m); checked here so a bad
        // pairing fails at construction, not mid-cycle.
        if (inputType.kind == ValueType::Kind::Vector) {
            if (inputType.rows != km.cols())
                throw BadParameter("gain matrix is not multiplicable with its input");
            return ValueType::vector(km.rows());
        }
        if (inputType.kind == ValueType::Kind::Matrix) {
            if (inputType.rows != km.cols())
                throw BadParameter("gain matrix is not multiplicable with its input");
            return ValueType::matrix(km.rows(), inputType.cols);
        }
        throw BadParameter("matrix gain requires a vector or matrix input type");
    }

    Value gain_;
};

// ---------------------------------------------------------------------------
// Sum
// ---------------------------------------------------------------------------

class SumBlock final : public Block {
public:
    SumBlock(std::string signsText, ValueType type) {
        for (char c : signsText) {
            if (c == '+')
                signs_.push_back(1);
            else if (c == '-')
                signs_.push_back(-1);
            else
                throw BadParameter("sum signs must be '+' or '-'");
        }
        if (signs_.empty()) throw BadParameter("sum requires at least one input");
        BlockInfo info;
        info.kind = "Sum";
        info.numInputs = static_cast<int>(signs_.size());
        info.numOutputs = 1;
        info.inputTypes.assign(signs_.size(), type);
        info.outputTypes = {type};
        info.symbolicCapable = type.isScalar();
        info.lowerable = type.isScalar();
        setInfo(std::move(info));
    }

    void compute(std::span<const Value> in, std::span<Value> out) override {
        if (info().inputTypes[0].isScalar()) {
            double acc = 0.0;
            for (size_t i = 0; i < in.size(); ++i) {
                double v = graph::asScalar(in[i]);
                acc += signs_[i] > 0 ? v : -v;
            }
            out[0] = acc;
            return;
        }
        la::Matrix acc = std::get<la::Matrix>(in[0]);
        if (signs_[0] < 0) acc = acc * -1.0;
        for (size_t i = 1; i < in.size(); ++i) {
            const la::Matrix& m = std::get<la::Matrix>(in[i]);
            if (signs_[i] > 0)
                acc += m;
            else
                acc -= m;
        }
        out[0] = acc;
    }

    std::vector<Expr> symbolicOutputs(std::span<const Expr> in) const override {
        std::vector<Expr> terms;
        for (size_t i = 0; i < in.size(); ++i)
            terms.push_back(signs_[i] > 0 ? in[i] : expr::neg(in[i]));
        if (terms.size() == 1) return {terms[0]};
        return {expr::add(std::move(terms))};
    }

    void lowerInto(BlockLowering& ctx) const override {
        auto term = [&](int i) -> Operand {
            Operand u = ctx.input(i);
            return signs_[i] > 0 ? u : Operand::temp(ctx.emitNeg(u));
        };
        if (signs_.size() == 1) {
            ctx.emitCopy(term(0), ctx.outputTemp(0));
            return;
        }
        Operand acc = term(0);
        for (size_t i = 1; i < signs_.size(); ++i) {
            int dst = i + 1 == signs_.size() ? ctx.outputTemp(0) : -1;
            acc = Operand::temp(ctx.emitBin(Instr::Op::Add, acc, term(static_cast<int>(i)), dst));
        }
    }

private:
    std::vector<int> signs_;
};

// ---------------------------------------------------------------------------
// Product
// ---------------------------------------------------------------------------

class ProductBlock final : public Block {
public:
    explicit ProductBlock(int inputs) {
        if (inputs < 1) throw BadParameter("product requires at least one input");
        BlockInfo info;
        info.kind = "Product";
        info.numInputs = inputs;
        info.numOutputs = 1;
        info.inputTypes = scalars(inputs);
        info.outputTypes = scalars(1);
        info.symbolicCapable = true;
        setInfo(std::move(info));
    }

    void compute(std::span<const Value> in, std::span<Value> out) override {
        double acc = 1.0;
        for (const Value& v : in) acc *= graph::asScalar(v);
        out[0] = acc;
    }

    std::vector<Expr> symbolicOutputs(std::span<const Expr> in) const override {
        if (in.size() == 1) return {in[0]};
        return {expr::mul(std::vector<Expr>(in.begin(), in.end()))};
    }

    void lowerInto(BlockLowering& ctx) const override {
        if (ctx.numInputs() == 1) {
            ctx.emitCopy(ctx.input(0), ctx.outputTemp(0));
            return;
        }
        Operand acc = ctx.input(0);
        for (int i = 1; i < ctx.numInputs(); ++i) {
            int dst = i + 1 == ctx.numInputs() ? ctx.outputTemp(0) : -1;
            acc = Operand::temp(ctx.emitBin(Instr::Op::Mul, acc, ctx.input(i), dst));
        }
    }
};

// ---------------------------------------------------------------------------
// Saturation
// ---------------------------------------------------------------------------

class SaturationBlock final : public Block {
public:
    SaturationBlock(double lo, double hi) : lo_(lo), hi_(hi) {
        if (lo > hi) throw BadParameter("saturation requires lo <= hi");
        BlockInfo info;
        info.kind = "Saturation";
        info.numInputs = 1;
        info.numOutputs = 1;
        info.inputTypes = scalars(1);
        info.outputTypes = scalars(1);
        info.symbolicCapable = false;  // non-smooth; cannot sit inside a Newton loop
        setInfo(std::move(info));
    }

    void compute(std::span<const Value> in, std::span<Value> out) override {
        out[0] = saturationEval(graph::asScalar(in[0]), lo_, hi_);
    }

    void lowerInto(BlockLowering& ctx) const override {
        ctx.emitClamp(ctx.input(0), ctx.constant(lo_), ctx.constant(hi_), ctx.outputTemp(0));
    }

private:
    double lo_, hi_;
};

// ---------------------------------------------------------------------------
// UnitDelay / Delay
// ---------------------------------------------------------------------------

class DelayBlock final : public Block {
public:
    DelayBlock(int steps, double init, const char* kindName) : init_(init) {
        if (steps < 1) throw BadParameter("delay requires steps >= 1");
        buffer_.assign(steps, init);
        BlockInfo info;
        info.kind = kindName;
        info.numInputs = 1;
        info.numOutputs = 1;
        info.directFeedthrough = false;
        info.stateSize = steps;
        info.inputTypes = scalars(1);
        info.outputTypes = scalars(1);
        setInfo(std::move(info));
    }

    void reset() override {
        std::fill(buffer_.begin(), buffer_.end(), init_);
        pos_ = 0;
    }

    void compute(std::span<const Value>, std::span<Value> out) override {
        out[0] = buffer_[pos_];
    }

    void latch(std::span<const Value> in) override {
        buffer_[pos_] = graph::asScalar(in[0]);
        pos_ = (pos_ + 1) % buffer_.size();
    }

    void lowerInto(BlockLowering& ctx) const override {
        // Shift-register form: s[k-1] is the oldest sample.
        const int k = static_cast<int>(buffer_.size());
        std::vector<int> slots(k);
        for (int i = 0; i < k; ++i)
            slots[i] = ctx.allocState(init_, "z" + std::to_string(i));
        ctx.emitLoadState(slots[k - 1], ctx.outputTemp(0));
        ctx.beginLatch();
        for (int i = k - 1; i >= 1; --i) {
            int t = ctx.emitLoadState(slots[i - 1]);
            ctx.emitStoreState(slots[i], Operand::temp(t));
        }
        ctx.emitStoreState(slots[0], ctx.input(0));
    }

private:
    std::vector<double> buffer_;
    size_t pos_ = 0;
    double init_;
};

// ---------------------------------------------------------------------------
// Integrator (forward Euler accumulator)
// ---------------------------------------------------------------------------

class IntegratorBlock final : public Block {
public:
    IntegratorBlock(double sampleTime, double init) : T_(sampleTime), state_(init), init_(init) {
        if (sampleTime <= 0) throw BadParameter("integrator requires T > 0");
        BlockInfo info;
        info.kind = "Integrator";
        info.numInputs = 1;
        info.numOutputs = 1;
        info.directFeedthrough = false;
        info.stateSize = 1;
        info.inputTypes = scalars(1);
        info.outputTypes = scalars(1);
        setInfo(std::move(info));
    }

    void reset() override { state_ = init_; }

    void compute(std::span<const Value>, std::span<Value> out) override { out[0] = state_; }

    void latch(std::span<const Value> in) override {
        state_ += T_ * graph::asScalar(in[0]);
    }

    void lowerInto(BlockLowering& ctx) const override {
        int slot = ctx.allocState(init_, "acc");
        ctx.emitLoadState(slot, ctx.outputTemp(0));
        ctx.beginLatch();
        int s = ctx.emitLoadState(slot);
        int du = ctx.emitBin(Instr::Op::Mul, ctx.constant(T_), ctx.input(0));
        int next = ctx.emitBin(Instr::Op::Add, Operand::temp(s), Operand::temp(du));
        ctx.emitStoreState(slot, Operand::temp(next));
    }

private:
    double T_;
    double state_;
    double init_;
};

// ---------------------------------------------------------------------------
// PID (direct feedthrough: acts on the current error)
// ---------------------------------------------------------------------------

class PidBlock final : public Block {
public:
    PidBlock(const PidGains& gains, double sampleTime) : gains_(gains), T_(sampleTime) {
        if (sampleTime <= 0) throw BadParameter("pid requires T > 0");
        BlockInfo info;
        info.kind = "PID";
        info.numInputs = 1;
        info.numOutputs = 1;
        info.stateSize = 2;  // integral, previous error
        info.inputTypes = scalars(1);
        info.outputTypes = scalars(1);
        setInfo(std::move(info));
    }

    void reset() override { state_ = PidState{}; }

    void compute(std::span<const Value> in, std::span<Value> out) override {
        out[0] = pidStep(graph::asScalar(in[0]), gains_, T_, state_);
    }

    void lowerInto(BlockLowering& ctx) const override {
        int iSlot = ctx.allocState(0.0, "i");
        int eSlot = ctx.allocState(0.0, "eprev");
        Operand e = ctx.input(0);
        // Mirrors pidStep exactly: integral update before use.
        int i0 = ctx.emitLoadState(iSlot);
        int te = ctx.emitBin(Instr::Op::Mul, ctx.constant(T_), e);
        int i1 = ctx.emitBin(Instr::Op::Add, Operand::temp(i0), Operand::temp(te));
        ctx.emitStoreState(iSlot, Operand::temp(i1));
        int ep = ctx.emitLoadState(eSlot);
        int diff = ctx.emitBin(Instr::Op::Add, e, Operand::temp(ctx.emitNeg(Operand::temp(ep))));
        int der = ctx.emitBin(Instr::Op::Div, Operand::temp(diff), ctx.constant(T_));
        int up = ctx.emitBin(Instr::Op::Mul, ctx.constant(gains_.kp), e);
        int ui = ctx.emitBin(Instr::Op::Mul, ctx.constant(gains_.ki), Operand::temp(i1));
        int ud = ctx.emitBin(Instr::Op::Mul, ctx.constant(gains_.kd), Operand::temp(der));
        int s1 = ctx.emitBin(Instr::Op::Add, Operand::temp(up), Operand::temp(ui));
        ctx.emitBin(Instr::Op::Add, Operand::temp(s1), Operand::temp(ud), ctx.outputTemp(0));
        ctx.emitStoreState(eSlot, e);
    }

private:
    PidGains gains_;
    double T_;
    PidState state_;
};

// ---------------------------------------------------------------------------
// CondIntegrator: the gated integral path of the anti-windup PID.
//
// Inputs: (e, p) where p is the non-integral part of the raw control signal.
// A candidate update I' = I + T*e is committed unless the resulting raw
// output p + ki*I' would lie beyond [lo, hi] with the error still pushing in
// that direction; the committed integral contribution ki*I is the output.
// ---------------------------------------------------------------------------

class CondIntegratorBlock final : public Block {
public:
    CondIntegratorBlock(double sampleTime, double ki, double lo, double hi)
        : T_(sampleTime), ki_(ki), lo_(lo), hi_(hi) {
        if (sampleTime <= 0) throw BadParameter("cond-integrator requires T > 0");
        if (lo > hi) throw BadParameter("cond-integrator requires lo <= hi");
        BlockInfo info;
        info.kind = "CondIntegrator";
        info.numInputs = 2;
        info.numOutputs = 1;
        info.stateSize = 1;
        info.inputTypes = scalars(2);
        info.outputTypes = scalars(1);
        setInfo(std::move(info));
    }

    void reset() override { integral_ = 0.0; }

    void compute(std::span<const Value> in, std::span<Value> out) override {
        double e = graph::asScalar(in[0]);
        double p = graph::asScalar(in[1]);
        double cand = integral_ + T_ * e;
        double raw = p + ki_ * cand;
        bool freeze = (raw > hi_ && e > 0.0) || (raw < lo_ && e < 0.0);
        if (!freeze) integral_ = cand;
        out[0] = ki_ * integral_;
    }

    void lowerInto(BlockLowering& ctx) const override {
        int slot = ctx.allocState(0.0, "i");
        Operand e = ctx.input(0);
        Operand p = ctx.input(1);
        int i0 = ctx.emitLoadState(slot);
        int te = ctx.emitBin(Instr::Op::Mul, ctx.constant(T_), e);
        int cand = ctx.emitBin(Instr::Op::Add, Operand::temp(i0), Operand::temp(te));
        int kiCand = ctx.emitBin(Instr::Op::Mul, ctx.constant(ki_), Operand::temp(cand));
        int raw = ctx.emitBin(Instr::Op::Add, p, Operand::temp(kiCand));
        int overHi = ctx.emitBin(Instr::Op::CmpGt, Operand::temp(raw), ctx.constant(hi_));
        int ePos = ctx.emitBin(Instr::Op::CmpGt, e, ctx.constant(0.0));
        int freezeHi = ctx.emitBin(Instr::Op::And, Operand::temp(overHi), Operand::temp(ePos));
        int underLo = ctx.emitBin(Instr::Op::CmpLt, Operand::temp(raw), ctx.constant(lo_));
        int eNeg = ctx.emitBin(Instr::Op::CmpLt, e, ctx.constant(0.0));
        int freezeLo = ctx.emitBin(Instr::Op::And, Operand::temp(underLo), Operand::temp(eNeg));
        int freeze = ctx.emitBin(Instr::Op::Or, Operand::temp(freezeHi), Operand::temp(freezeLo));
        int next = ctx.emitSelect(Operand::temp(freeze), Operand::temp(i0), Operand::temp(cand));
        ctx.emitStoreState(slot, Operand::temp(next));
        ctx.emitBin(Instr::Op::Mul, ctx.constant(ki_), Operand::temp(next), ctx.outputTemp(0));
    }

private:
    double T_, ki_, lo_, hi_;
    double integral_ = 0.0;
};

// ---------------------------------------------------------------------------
// StateSpace: discrete-time LTI block, scalar input and output.
// Direct feedthrough exactly when D is nonzero.
// ---------------------------------------------------------------------------

class StateSpaceBlock final : public Block {
public:
    StateSpaceBlock(la::Matrix a, la::Matrix b, la::Matrix c, la::Matrix d)
        : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)), d_(std::move(d)) {
        const int n = a_.rows();
        if (a_.cols() != n || b_.rows() != n || b_.cols() != 1 || c_.rows() != 1 ||
            c_.cols() != n || d_.rows() != 1 || d_.cols() != 1)
            throw BadParameter("state-space block expects SISO dimensions");
        state_.assign(n, 0.0);
        BlockInfo info;
        info.kind = "StateSpace";
        info.numInputs = 1;
        info.numOutputs = 1;
        info.directFeedthrough = d_(0, 0) != 0.0;
        info.stateSize = n;
        info.inputTypes = scalars(1);
        info.outputTypes = scalars(1);
        setInfo(std::move(info));
    }

    void reset() override { std::fill(state_.begin(), state_.end(), 0.0); }

    void compute(std::span<const Value> in, std::span<Value> out) override {
        double y = 0.0;
        for (size_t i = 0; i < state_.size(); ++i) y += c_(0, static_cast<int>(i)) * state_[i];
        if (info().directFeedthrough) y += d_(0, 0) * graph::asScalar(in[0]);
        out[0] = y;
    }

    void latch(std::span<const Value> in) override {
        double u = graph::asScalar(in[0]);
        std::vector<double> next(state_.size(), 0.0);
        for (size_t i = 0; i < state_.size(); ++i) {
            double acc = 0.0;
            for (size_t j = 0; j < state_.size(); ++j)
                acc += a_(static_cast<int>(i), static_cast<int>(j)) * state_[j];
            next[i] = acc + b_(static_cast<int>(i), 0) * u;
        }
        state_ = std::move(next);
    }

    void lowerInto(BlockLowering& ctx) const override {
        const int n = static_cast<int>(state_.size());
        std::vector<int> slots(n);
        for (int i = 0; i < n; ++i) slots[i] = ctx.allocState(0.0, "x" + std::to_string(i));
        // y = C x (+ D u)
        Operand acc = ctx.constant(0.0);
        for (int i = 0; i < n; ++i) {
            int xi = ctx.emitLoadState(slots[i]);
            int term = ctx.emitBin(Instr::Op::Mul, ctx.constant(c_(0, i)), Operand::temp(xi));
            acc = Operand::temp(ctx.emitBin(Instr::Op::Add, acc, Operand::temp(term)));
        }
        if (info().directFeedthrough) {
            int term = ctx.emitBin(Instr::Op::Mul, ctx.constant(d_(0, 0)), ctx.input(0));
            acc = Operand::temp(ctx.emitBin(Instr::Op::Add, acc, Operand::temp(term)));
        }
        ctx.emitCopy(acc, ctx.outputTemp(0));
        // x' = A x + B u, committed at end of cycle.
        ctx.beginLatch();
        std::vector<int> old(n), next(n);
        for (int i = 0; i < n; ++i) old[i] = ctx.emitLoadState(slots[i]);
        for (int i = 0; i < n; ++i) {
            Operand row = ctx.constant(0.0);
            for (int j = 0; j < n; ++j) {
                int term =
                    ctx.emitBin(Instr::Op::Mul, ctx.constant(a_(i, j)), Operand::temp(old[j]));
                row = Operand::temp(ctx.emitBin(Instr::Op::Add, row, Operand::temp(term)));
            }
            int bu = ctx.emitBin(Instr::Op::Mul, ctx.constant(b_(i, 0)), ctx.input(0));
            next[i] = ctx.emitBin(Instr::Op::Add, row, Operand::temp(bu));
        }
        for (int i = 0; i < n; ++i) ctx.emitStoreState(slots[i], Operand::temp(next[i]));
    }

private:
    la::Matrix a_, b_, c_, d_;
    std::vector<double> state_;
};

// ---------------------------------------------------------------------------
// Conv2D (wraps imaging::conv2d; image-valued, so not lowerable)
// ---------------------------------------------------------------------------

class Conv2DBlock final : public Block {
public:
    explicit Conv2DBlock(imaging::Kernel2D kernel) : kernel_(std::move(kernel)) {
        BlockInfo info;
        info.kind = "Conv2D";
        info.numInputs = 1;
        info.numOutputs = 1;
        info.lowerable = false;
        info.inputTypes = {ValueType::image()};
        info.outputTypes = {ValueType::image()};
        setInfo(std::move(info));
    }

    void compute(std::span<const Value> in, std::span<Value> out) override {
        out[0] = imaging::conv2d(std::get<imaging::ImageBuffer>(in[0]), kernel_);
    }

private:
    imaging::Kernel2D kernel_;
};

// ---------------------------------------------------------------------------
// Function (user closure)
// ---------------------------------------------------------------------------

class FunctionBlock final : public Block {
public:
    explicit FunctionBlock(FunctionSpec spec) : spec_(std::move(spec)) {
        if (!spec_.compute) throw BadParameter("function block requires a compute closure");
        BlockInfo info;
        info.kind = "Function";
        info.numInputs = static_cast<int>(spec_.inputTypes.size());
        info.numOutputs = static_cast<int>(spec_.outputTypes.size());
        info.directFeedthrough = spec_.directFeedthrough;
        info.symbolicCapable = false;  // closures have no algebraic description
        info.lowerable = false;
        info.inputTypes = spec_.inputTypes;
        info.outputTypes = spec_.outputTypes;
        setInfo(std::move(info));
    }

    void reset() override {
        if (spec_.reset) spec_.reset();
    }

    void compute(std::span<const Value> in, std::span<Value> out) override {
        spec_.compute(in, out);
    }

    void latch(std::span<const Value> in) override {
        if (spec_.latch) spec_.latch(in);
    }

private:
    FunctionSpec spec_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Factories
// ---------------------------------------------------------------------------

std::unique_ptr<Block> makeConstant(const Value& value) {
    return std::make_unique<ConstantBlock>(value);
}

std::unique_ptr<Block> makeGain(const Value& gain, ValueType inputType) {
    return std::make_unique<GainBlock>(gain, inputType);
}

std::unique_ptr<Block> makeSum(const std::string& signs, ValueType type) {
    return std::make_unique<SumBlock>(signs, type);
}

std::unique_ptr<Block> makeProduct(int inputs) {
    return std::make_unique<ProductBlock>(inputs);
}

std::unique_ptr<Block> makeSaturation(double lo, double hi) {
    return std::make_unique<SaturationBlock>(lo, hi);
}

std::unique_ptr<Block> makeUnitDelay(double init) {
    return std::make_unique<DelayBlock>(1, init, "UnitDelay");
}

std::unique_ptr<Block> makeDelay(int steps, double init) {
    return std::make_unique<DelayBlock>(steps, init, "Delay");
}

std::unique_ptr<Block> makeIntegrator(double sampleTime, double init) {
    return std::make_unique<IntegratorBlock>(sampleTime, init);
}

std::unique_ptr<Block> makePid(const PidGains& gains, double sampleTime) {
    return std::make_unique<PidBlock>(gains, sampleTime);
}

std::unique_ptr<Block> makeCondIntegrator(double sampleTime, double ki, double lo, double hi) {
    return std::make_unique<CondIntegratorBlock>(sampleTime, ki, lo, hi);
}

std::unique_ptr<Block> makeStateSpace(const la::Matrix& a, const la::Matrix& b,
                                      const la::Matrix& c, const la::Matrix& d) {
    return std::make_unique<StateSpaceBlock>(a, b, c, d);
}

std::unique_ptr<Block> makeConv2D(const imaging::Kernel2D& kernel) {
    return std::make_unique<Conv2DBlock>(kernel);
}

std::unique_ptr<Block> makeFunction(FunctionSpec spec) {
    return std::make_unique<FunctionBlock>(std::move(spec));
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

namespace {

void registerStandardBlocks() {
    using graph::registerBlockKind;
    registerBlockKind("Constant", [](const ParamMap& p) {
        return makeConstant(requireDouble(p, "value"));
    });
    registerBlockKind("Gain", [](const ParamMap& p) {
        auto it = p.find("gain");
        if (it != p.end() && std::holds_alternative<la::Matrix>(it->second)) {
            la::Matrix k = std::get<la::Matrix>(it->second);
            int inRows = paramInt(p, "input_rows", k.cols());
            return makeGain(k, ValueType::vector(inRows));
        }
        return makeGain(requireDouble(p, "gain"));
    });
    registerBlockKind("Sum", [](const ParamMap& p) {
        return makeSum(paramString(p, "signs", "++"));
    });
    registerBlockKind("Product", [](const ParamMap& p) {
        return makeProduct(paramInt(p, "inputs", 2));
    });
    registerBlockKind("Saturation", [](const ParamMap& p) {
        return makeSaturation(requireDouble(p, "lo"), requireDouble(p, "hi"));
    });
    registerBlockKind("UnitDelay", [](const ParamMap& p) {
        return makeUnitDelay(paramDouble(p, "init", 0.0));
    });
    registerBlockKind("Delay", [](const ParamMap& p) {
        return makeDelay(paramInt(p, "steps", 1), paramDouble(p, "init", 0.0));
    });
    registerBlockKind("Integrator", [](const ParamMap& p) {
        return makeIntegrator(paramDouble(p, "T", 1.0), paramDouble(p, "init", 0.0));
    });
    registerBlockKind("PID", [](const ParamMap& p) {
        PidGains g{paramDouble(p, "kp", 0.0), paramDouble(p, "ki", 0.0),
                   paramDouble(p, "kd", 0.0)};
        return makePid(g, paramDouble(p, "T", 1.0));
    });
    registerBlockKind("CondIntegrator", [](const ParamMap& p) {
        return makeCondIntegrator(paramDouble(p, "T", 1.0), requireDouble(p, "ki"),
                                  requireDouble(p, "lo"), requireDouble(p, "hi"));
    });
    registerBlockKind("StateSpace", [](const ParamMap& p) {
        return makeStateSpace(requireMatrix(p, "a"), requireMatrix(p, "b"),
                              requireMatrix(p, "c"), requireMatrix(p, "d"));
    });
    registerBlockKind("Conv2D", [](const ParamMap& p) {
        std::string kernel = paramString(p, "kernel", "noise-robust-laplacian");
        if (kernel == "noise-robust-laplacian")
            return makeConv2D(imaging::noiseRobustLaplacianKernel());
        throw BadParameter("unknown named kernel '" + kernel + "'");
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// Anti-windup composite
// ---------------------------------------------------------------------------

PidFragment buildAntiWindupPid(Diagram& d, const std::string& prefix, const PidGains& gains,
                               double T, double uMin, double uMax, AntiWindup mode) {
    if (uMin >= uMax) throw BadParameter("anti-windup PID requires u_min < u_max");
    PidFragment frag;

    if (mode == AntiWindup::None) {
        // Plain PID followed by an output saturation.
        BlockId pid = d.addBlock(makePid(gains, T), prefix + "_pid");
        BlockId sat = d.addBlock(makeSaturation(uMin, uMax), prefix + "_sat");
        d.connect(graph::out(pid), graph::in(sat));
        frag.errorIn = graph::in(pid);
        frag.controlOut = graph::out(sat);
        frag.blocks = {pid, sat};
        return frag;
    }

    // Error fans out to the P gain, the D path (unit delay + differencing
    // sum + gain), and the gated integrator; the final sum feeds the output
    // saturation. The delay in the D path is the only state outside the
    // integrator, and no algebraic loop is formed since everything is
    // feed-forward.
    BlockId fan = d.addBlock(makeSum("+"), prefix + "_e");
    BlockId kp = d.addBlock(makeGain(gains.kp), prefix + "_kp");
    BlockId dely = d.addBlock(makeUnitDelay(0.0), prefix + "_z");
    BlockId diff = d.addBlock(makeSum("+-"), prefix + "_de");
    BlockId kd = d.addBlock(makeGain(gains.kd / T), prefix + "_kd");
    BlockId psum = d.addBlock(makeSum("++"), prefix + "_pd");
    BlockId gate = d.addBlock(makeCondIntegrator(T, gains.ki, uMin, uMax), prefix + "_i");
    BlockId usum = d.addBlock(makeSum("++"), prefix + "_u");
    BlockId sat = d.addBlock(makeSaturation(uMin, uMax), prefix + "_sat");

    d.connect(graph::out(fan), graph::in(kp));
    d.connect(graph::out(fan), graph::in(dely));
    d.connect(graph::out(fan), graph::in(diff, 0));
    d.connect(graph::out(dely), graph::in(diff, 1));
    d.connect(graph::out(diff), graph::in(kd));
    d.connect(graph::out(kp), graph::in(psum, 0));
    d.connect(graph::out(kd), graph::in(psum, 1));
    d.connect(graph::out(fan), graph::in(gate, 0));
    d.connect(graph::out(psum), graph::in(gate, 1));
    d.connect(graph::out(psum), graph::in(usum, 0));
    d.connect(graph::out(gate), graph::in(usum, 1));
    d.connect(graph::out(usum), graph::in(sat));

    frag.errorIn = graph::in(fan);
    frag.controlOut = graph::out(sat);
    frag.blocks = {fan, kp, dely, diff, kd, psum, gate, usum, sat};
    return frag;
}

// ---------------------------------------------------------------------------
// Joint tracking comparison (double-integrator plant, torque saturation)
// ---------------------------------------------------------------------------

std::unique_ptr<graph::Diagram> buildJointDiagram(const JointScenario& s, AntiWindup mode) {
    auto d = std::make_unique<Diagram>();
    const double T = s.sampleTime;

    BlockId target = d->addBlock(makeConstant(s.target), "target");
    BlockId esum = d->addBlock(makeSum("+-"), "error");
    PidFragment frag = buildAntiWindupPid(*d, "ctl", s.gains, T, s.uMin, s.uMax, mode);

    // Disturbance torque pulse, injected after the saturation.
    FunctionSpec distSpec;
    distSpec.outputTypes = {ValueType::scalar()};
    auto counter = std::make_shared<int>(0);
    distSpec.compute = [counter, s](std::span<const Value>, std::span<Value> out) {
        int k = (*counter)++;
        out[0] = (k >= s.disturbanceStart && k < s.disturbanceEnd) ? s.disturbance : 0.0;
    };
    distSpec.reset = [counter] { *counter = 0; };
    BlockId dist = d->addBlock(makeFunction(std::move(distSpec)), "disturbance");
    BlockId usum = d->addBlock(makeSum("++"), "torque");

    // Exact ZOH discretization of the double integrator.
    la::Matrix ad{{1.0, T}, {0.0, 1.0}};
    la::Matrix bd{{T * T / 2.0}, {T}};
    la::Matrix c{{1.0, 0.0}};
    la::Matrix dmat{{0.0}};
    BlockId plant = d->addBlock(makeStateSpace(ad, bd, c, dmat), "joint");

    d->connect(graph::out(target), graph::in(esum, 0));
    d->connect(graph::out(plant), graph::in(esum, 1));
    d->connect(graph::out(esum), frag.errorIn);
    d->connect(frag.controlOut, graph::in(usum, 0));
    d->connect(graph::out(dist), graph::in(usum, 1));
    d->connect(graph::out(usum), graph::in(plant));
    return d;
}

namespace {

JointTrace runJointDiagram(graph::Diagram& d, const JointScenario& s) {
    graph::Executor ex(d);
    JointTrace trace;
    trace.position.reserve(s.cycles);
    trace.control.reserve(s.cycles);
    BlockId plant = *d.findBlock("joint");
    std::optional<BlockId> sat = d.findBlock("ctl_sat");
    for (int k = 0; k < s.cycles; ++k) {
        ex.runCycle();
        trace.position.push_back(ex.scalarOutput(plant));
        trace.control.push_back(sat ? ex.scalarOutput(*sat) : 0.0);
    }
    return trace;
}

double peakOvershoot(const JointTrace& t, double target) {
    double peak = 0.0;
    for (double x : t.position) peak = std::max(peak, x - target);
    return peak;
}

}  // namespace

JointComparison runJointTrackingComparison(const JointScenario& s) {
    JointComparison cmp;
    auto plain = buildJointDiagram(s, AntiWindup::None);
    auto aw = buildJointDiagram(s, AntiWindup::ConditionalIntegration);
    cmp.plain = runJointDiagram(*plain, s);
    cmp.antiWindup = runJointDiagram(*aw, s);
    cmp.plainPeak = peakOvershoot(cmp.plain, s.target);
    cmp.antiWindupPeak = peakOvershoot(cmp.antiWindup, s.target);
    return cmp;
}

}  // namespace blockflow::stdblocks

namespace blockflow::graph {

void ensureStandardBlocksRegistered() {
    static const bool once = [] {
        blockflow::stdblocks::registerStandardBlocks();
        return true;
    }();
    (void)once;
}

}  // namespace blockflow::graph
