#pragma once

#include <stdexcept>
#include <string>

namespace blockflow {

/// Base class for every error thrown by the engine.
class EngineError : public std::runtime_error {
public:
    explicit EngineError(const std::string& what) : std::runtime_error(what) {}
};

#define BLOCKFLOW_DEFINE_ERROR(Name)                                           \
    class Name : public EngineError {                                          \
    public:                                                                    \
        explicit Name(const std::string& what) : EngineError(what) {}          \
    };

// expr
BLOCKFLOW_DEFINE_ERROR(UnboundSymbol)
BLOCKFLOW_DEFINE_ERROR(EvalSingularity)
BLOCKFLOW_DEFINE_ERROR(NonDifferentiable)
BLOCKFLOW_DEFINE_ERROR(InvalidExpression)

// graph
BLOCKFLOW_DEFINE_ERROR(IllegalPortPairing)
BLOCKFLOW_DEFINE_ERROR(MultipleDrivers)
BLOCKFLOW_DEFINE_ERROR(TypeMismatch)
BLOCKFLOW_DEFINE_ERROR(UnknownSlot)
BLOCKFLOW_DEFINE_ERROR(UnresolvableCycle)
BLOCKFLOW_DEFINE_ERROR(BadParameter)
BLOCKFLOW_DEFINE_ERROR(InvalidDiagram)

// loopsolve
BLOCKFLOW_DEFINE_ERROR(SymbolicallyUnsolvableLoop)
BLOCKFLOW_DEFINE_ERROR(SingularJacobian)

class LoopDivergence : public EngineError {
public:
    LoopDivergence(const std::string& what, double lastResidualNorm)
        : EngineError(what), lastResidualNorm_(lastResidualNorm) {}
    double lastResidualNorm() const { return lastResidualNorm_; }

private:
    double lastResidualNorm_;
};

// control
BLOCKFLOW_DEFINE_ERROR(DiscretizationSingularity)
BLOCKFLOW_DEFINE_ERROR(RiccatiNoConvergence)
BLOCKFLOW_DEFINE_ERROR(UnsupportedShape)
BLOCKFLOW_DEFINE_ERROR(ImproperTransferFunction)

// imaging
BLOCKFLOW_DEFINE_ERROR(KernelTooLarge)

// net
BLOCKFLOW_DEFINE_ERROR(PayloadSizeMismatch)
BLOCKFLOW_DEFINE_ERROR(UnknownKey)
BLOCKFLOW_DEFINE_ERROR(TransportError)

// codegen
BLOCKFLOW_DEFINE_ERROR(CodegenUnsupportedBlock)

// cli
class ParseError : public EngineError {
public:
    ParseError(const std::string& what, int line)
        : EngineError("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

#undef BLOCKFLOW_DEFINE_ERROR

}  // namespace blockflow
