#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "blockflow/expr.hpp"
#include "blockflow/imaging.hpp"
#include "blockflow/linalg.hpp"

namespace blockflow::codegen {
class BlockLowering;  // defined in codegen.hpp; blocks implement lowerInto against it
}

namespace blockflow::graph {

using BlockId = int;

enum class PortKind { Input, Output, Parameter };

/// Reference to one slot of one block, e.g. "g.out0".
struct SlotRef {
    BlockId block = -1;
    PortKind kind = PortKind::Output;
    int slot = 0;

    friend bool operator==(const SlotRef& a, const SlotRef& b) {
        return a.block == b.block && a.kind == b.kind && a.slot == b.slot;
    }
    friend bool operator<(const SlotRef& a, const SlotRef& b) {
        if (a.block != b.block) return a.block < b.block;
        if (a.kind != b.kind) return a.kind < b.kind;
        return a.slot < b.slot;
    }
};

inline SlotRef out(BlockId b, int slot = 0) { return {b, PortKind::Output, slot}; }
inline SlotRef in(BlockId b, int slot = 0) { return {b, PortKind::Input, slot}; }

/// Semantic type tag carried by every signal. Connections require exact
/// equality between source and sink.
struct ValueType {
    enum class Kind { Scalar, Vector, Matrix, Image } kind = Kind::Scalar;
    int rows = 1;
    int cols = 1;

    static ValueType scalar() { return {}; }
    static ValueType vector(int n) { return {Kind::Vector, n, 1}; }
    static ValueType matrix(int r, int c) { return {Kind::Matrix, r, c}; }
    static ValueType image() { return {Kind::Image, 0, 0}; }

    bool isScalar() const { return kind == Kind::Scalar; }
    std::string toString() const;

    friend bool operator==(const ValueType& a, const ValueType& b) {
        if (a.kind != b.kind) return false;
        if (a.kind == Kind::Scalar || a.kind == Kind::Image) return true;
        return a.rows == b.rows && a.cols == b.cols;
    }
};

/// Runtime signal value. Vectors are carried as n-by-1 matrices.
using Value = std::variant<double, la::Matrix, imaging::ImageBuffer>;

double asScalar(const Value& v);

/// Static description of a block instance: what the scheduler, the loop
/// solver, and the code generator need to know without running it.
struct BlockInfo {
    std::string kind;
    int numInputs = 0;
    int numOutputs = 0;
    bool directFeedthrough = true;
    bool symbolicCapable = false;
    bool lowerable = true;
    int stateSize = 0;
    std::vector<ValueType> inputTypes;
    std::vector<ValueType> outputTypes;
};

/// A functional block. Registering a new kind takes a factory plus a
/// BlockInfo describing arity, feedthrough, symbolic capability, and state
/// size; that is the whole extension contract, and user-defined kinds are
/// first-class once registered.
///
/// Execution contract per cycle:
///   - compute() runs once, in schedule order. Direct-feedthrough blocks
///     read their current inputs here; indirect ones must produce outputs
///     from state alone.
///   - latch() runs once for every block after all compute() calls, with the
///     cycle's final input values. Indirect blocks commit state here so
///     their outputs only ever depend on inputs from previous cycles.
class Block {
public:
    virtual ~Block() = default;

    const BlockInfo& info() const { return info_; }
    BlockId id() const { return id_; }
    const std::string& name() const { return name_; }

    virtual void reset() {}
    virtual void compute(std::span<const Value> inputs, std::span<Value> outputs) = 0;
    virtual void latch(std::span<const Value> inputs) { (void)inputs; }

    /// Output expressions in terms of the given input expressions. Only
    /// valid when info().symbolicCapable; parameters appear as symbols named
    /// by symbolicParams().
    virtual std::vector<expr::Expr> symbolicOutputs(std::span<const expr::Expr> inputs) const;

    /// (symbol name, current value) for every parameter referenced by
    /// symbolicOutputs().
    virtual std::vector<std::pair<std::string, double>> symbolicParams() const { return {}; }

    /// Append this block's one-cycle semantics to a flat program. The default
    /// refuses: anything without an implementation here cannot be lowered.
    virtual void lowerInto(codegen::BlockLowering& ctx) const;

private:
    friend class Diagram;
    BlockInfo info_;
    BlockId id_ = -1;
    std::string name_;

protected:
    void setInfo(BlockInfo info) { info_ = std::move(info); }
};

using ParamValue = std::variant<double, std::string, la::Matrix>;
using ParamMap = std::map<std::string, ParamValue>;
using BlockFactory = std::function<std::unique_ptr<Block>(const ParamMap&)>;

/// Directed signal edge; source must be an output, sink an input, and the
/// two value types must match exactly.
struct SignalEdge {
    SlotRef source;
    SlotRef sink;
    ValueType type;
};

struct Violation {
    std::string code;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    std::string toString() const;
};

/// An algebraic loop: a strongly connected component (or self-loop) of the
/// subgraph induced by direct-feedthrough blocks only.
struct LoopCluster {
    std::vector<BlockId> members;         // ascending ids
    std::vector<SignalEdge> memberEdges;  // edges with both endpoints inside
    std::vector<SlotRef> externalInputs;  // member input slots driven from outside
};

struct ExecutionSchedule {
    struct Item {
        bool isCluster = false;
        BlockId block = -1;  // valid when !isCluster
        int cluster = -1;    // valid when isCluster
    };
    std::vector<Item> items;
    std::vector<LoopCluster> clusters;
};

/// The diagram: blocks, edges, and parameter bindings. Construction is
/// single-threaded; a validated diagram plus schedule is immutable during
/// execution.
class Diagram {
public:
    /// Adds a block by registered kind name. Names must be unique; an empty
    /// name defaults to "b<id>".
    BlockId add(const std::string& kind, const std::string& name = "",
                const ParamMap& params = {});
    BlockId addBlock(std::unique_ptr<Block> block, const std::string& name = "",
                     const std::string& kind = "", const ParamMap& params = {});

    /// Re-creates the block with merged parameters (arities must not change).
    void setParams(BlockId id, const ParamMap& params);

    void connect(SlotRef source, SlotRef sink);

    ValidationReport validate() const;
    std::vector<LoopCluster> detectAlgebraicLoops() const;
    ExecutionSchedule resolveExecutionOrder(bool allowLoops = true) const;

    /// Deterministic text dump of blocks, edges, schedule, and loop
    /// clusters; consumed by the CLI `order` command and golden tests.
    std::string debugDump(const ExecutionSchedule* schedule = nullptr) const;

    int blockCount() const { return static_cast<int>(blocks_.size()); }
    Block& block(BlockId id) { return *blocks_.at(id).block; }
    const Block& block(BlockId id) const { return *blocks_.at(id).block; }
    const std::string& blockName(BlockId id) const { return blocks_.at(id).name; }
    const std::string& blockKind(BlockId id) const { return blocks_.at(id).kind; }
    const ParamMap& blockParams(BlockId id) const { return blocks_.at(id).params; }
    std::optional<BlockId> findBlock(const std::string& name) const;

    const std::vector<SignalEdge>& edges() const { return edges_; }
    /// Edge driving the given input slot, or nullptr.
    const SignalEdge* edgeInto(SlotRef sink) const;

    std::string slotName(SlotRef s) const;

private:
    struct Entry {
        std::unique_ptr<Block> block;
        std::string name;
        std::string kind;
        ParamMap params;
    };
    std::vector<Entry> blocks_;
    std::vector<SignalEdge> edges_;
    std::map<std::pair<BlockId, int>, int> edgeBySink_;

    void checkSlot(SlotRef s) const;
};

/// Kind-name -> factory registry. The standard library registers itself on
/// first access; registerBlockKind is the user extension point.
std::map<std::string, BlockFactory>& blockRegistry();
void registerBlockKind(const std::string& kind, BlockFactory factory);

}  // namespace blockflow::graph
