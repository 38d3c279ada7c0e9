#include "blockflow/graph.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "blockflow/errors.hpp"

namespace blockflow::graph {

std::string ValueType::toString() const {
    switch (kind) {
        case Kind::Scalar:
            return "scalar";
        case Kind::Vector:
            return "vector(" + std::to_string(rows) + ")";
        case Kind::Matrix:
            return "matrix(" + std::to_string(rows) + "," + std::to_string(cols) + ")";
        case Kind::Image:
            return "image";
    }
    return "?";
}

double asScalar(const Value& v) {
    if (const double* d = std::get_if<double>(&v)) return *d;
    throw TypeMismatch("expected a scalar signal value");
}

std::vector<expr::Expr> Block::symbolicOutputs(std::span<const expr::Expr>) const {
    throw SymbolicallyUnsolvableLoop("block '" + name_ + "' (" + info_.kind +
                                     ") has no symbolic description");
}

void Block::lowerInto(codegen::BlockLowering&) const {
    throw CodegenUnsupportedBlock("block '" + name_ + "' (" + info_.kind +
                                  ") cannot be lowered to a flat program");
}

std::string ValidationReport::toString() const {
    std::ostringstream os;
    for (const auto& v : violations) os << v.code << ": " << v.message << '\n';
    return os.str();
}

std::map<std::string, BlockFactory>& blockRegistry() {
    static std::map<std::string, BlockFactory> registry;
    return registry;
}

void registerBlockKind(const std::string& kind, BlockFactory factory) {
    blockRegistry()[kind] = std::move(factory);
}

// Defined in stdblocks.cpp; pulls the standard library into the registry.
void ensureStandardBlocksRegistered();

BlockId Diagram::add(const std::string& kind, const std::string& name,
                     const ParamMap& params) {
    ensureStandardBlocksRegistered();
    auto it = blockRegistry().find(kind);
    if (it == blockRegistry().end()) throw BadParameter("unknown block kind '" + kind + "'");
    return addBlock(it->second(params), name, kind, params);
}

BlockId Diagram::addBlock(std::unique_ptr<Block> block, const std::string& name,
                          const std::string& kind, const ParamMap& params) {
    BlockId id = static_cast<BlockId>(blocks_.size());
    std::string resolved = name.empty() ? "b" + std::to_string(id) : name;
    if (findBlock(resolved))
        throw BadParameter("duplicate block name '" + resolved + "'");
    block->id_ = id;
    block->name_ = resolved;
    if (block->info_.kind.empty()) block->info_.kind = kind;
    std::string resolvedKind = kind.empty() ? block->info().kind : kind;
    blocks_.push_back(Entry{std::move(block), resolved, resolvedKind, params});
    return id;
}

void Diagram::setParams(BlockId id, const ParamMap& params) {
    Entry& e = blocks_.at(id);
    if (e.kind.empty()) throw BadParameter("block '" + e.name + "' has no registered kind");
    ParamMap merged = e.params;
    for (const auto& [k, v] : params) merged[k] = v;
    auto it = blockRegistry().find(e.kind);
    if (it == blockRegistry().end()) throw BadParameter("unknown block kind '" + e.kind + "'");
    std::unique_ptr<Block> rebuilt = it->second(merged);
    const BlockInfo& oldInfo = e.block->info();
    const BlockInfo& newInfo = rebuilt->info();
    if (newInfo.numInputs != oldInfo.numInputs || newInfo.numOutputs != oldInfo.numOutputs)
        throw BadParameter("parameter change would alter arity of block '" + e.name + "'");
    rebuilt->id_ = id;
    rebuilt->name_ = e.name;
    e.block = std::move(rebuilt);
    e.params = merged;
}

std::optional<BlockId> Diagram::findBlock(const std::string& name) const {
    for (size_t i = 0; i < blocks_.size(); ++i)
        if (blocks_[i].name == name) return static_cast<BlockId>(i);
    return std::nullopt;
}

void Diagram::checkSlot(SlotRef s) const {
    if (s.block < 0 || s.block >= blockCount())
        throw UnknownSlot("no block with id " + std::to_string(s.block));
    const BlockInfo& bi = block(s.block).info();
    int arity = s.kind == PortKind::Input ? bi.numInputs : bi.numOutputs;
    if (s.slot < 0 || s.slot >= arity)
        throw UnknownSlot("block '" + blockName(s.block) + "' has no " +
                          (s.kind == PortKind::Input ? "input" : "output") + " slot " +
                          std::to_string(s.slot));
}

std::string Diagram::slotName(SlotRef s) const {
    std::string base = s.block >= 0 && s.block < blockCount() ? blockName(s.block)
                                                              : "b" + std::to_string(s.block);
    const char* port = s.kind == PortKind::Input    ? ".in"
                       : s.kind == PortKind::Output ? ".out"
                                                    : ".param";
    return base + port + std::to_string(s.slot);
}

void Diagram::connect(SlotRef source, SlotRef sink) {
    if (source.kind != PortKind::Output || sink.kind != PortKind::Input)
        throw IllegalPortPairing("connect requires output -> input, got " + slotName(source) +
                                 " -> " + slotName(sink));
    checkSlot(source);
    checkSlot(sink);
    if (edgeBySink_.count({sink.block, sink.slot}))
        throw MultipleDrivers("input " + slotName(sink) + " is already driven");
    ValueType srcType = block(source.block).info().outputTypes.at(source.slot);
    ValueType dstType = block(sink.block).info().inputTypes.at(sink.slot);
    if (!(srcType == dstType))
        throw TypeMismatch("cannot connect " + slotName(source) + " (" + srcType.toString() +
                           ") to " + slotName(sink) + " (" + dstType.toString() + ")");
    edgeBySink_[{sink.block, sink.slot}] = static_cast<int>(edges_.size());
    edges_.push_back(SignalEdge{source, sink, srcType});
}

const SignalEdge* Diagram::edgeInto(SlotRef sink) const {
    auto it = edgeBySink_.find({sink.block, sink.slot});
    return it == edgeBySink_.end() ? nullptr : &edges_[it->second];
}

ValidationReport Diagram::validate() const {
    ValidationReport report;
    for (BlockId id = 0; id < blockCount(); ++id) {
        const BlockInfo& bi = block(id).info();
        for (int s = 0; s < bi.numInputs; ++s) {
            if (!edgeInto(in(id, s)))
                report.violations.push_back(
                    {"unbound-input", "input " + slotName(in(id, s)) + " is unconnected"});
        }
    }
    for (const SignalEdge& e : edges_) {
        ValueType srcType = block(e.source.block).info().outputTypes.at(e.source.slot);
        ValueType dstType = block(e.sink.block).info().inputTypes.at(e.sink.slot);
        if (!(srcType == dstType))
            report.violations.push_back(
                {"type-mismatch", "edge " + slotName(e.source) + " -> " + slotName(e.sink) +
                                      " connects " + srcType.toString() + " to " +
                                      dstType.toString()});
    }
    return report;
}

namespace {

/// Iterative Tarjan over an adjacency list; returns components in reverse
/// topological order of the condensation. Kept deterministic by visiting
/// vertices and successors in ascending order.
std::vector<std::vector<int>> tarjanSccs(const std::vector<std::vector<int>>& adj) {
    const int n = static_cast<int>(adj.size());
    std::vector<int> index(n, -1), lowlink(n, 0), onStack(n, 0);
    std::vector<int> stack;
    std::vector<std::vector<int>> sccs;
    int counter = 0;

    struct Frame {
        int v;
        size_t next;
    };
    for (int root = 0; root < n; ++root) {
        if (index[root] != -1) continue;
        std::vector<Frame> frames{{root, 0}};
        index[root] = lowlink[root] = counter++;
        stack.push_back(root);
        onStack[root] = 1;
        while (!frames.empty()) {
            Frame& f = frames.back();
            if (f.next < adj[f.v].size()) {
                int w = adj[f.v][f.next++];
                if (index[w] == -1) {
                    index[w] = lowlink[w] = counter++;
                    stack.push_back(w);
                    onStack[w] = 1;
                    frames.push_back({w, 0});
                } else if (onStack[w]) {
                    lowlink[f.v] = std::min(lowlink[f.v], index[w]);
                }
            } else {
                if (lowlink[f.v] == index[f.v]) {
                    std::vector<int> comp;
                    while (true) {
                        int w = stack.back();
                        stack.pop_back();
                        onStack[w] = 0;
                        comp.push_back(w);
                        if (w == f.v) break;
                    }
                    std::sort(comp.begin(), comp.end());
                    sccs.push_back(std::move(comp));
                }
                int v = f.v;
                frames.pop_back();
                if (!frames.empty())
                    lowlink[frames.back().v] = std::min(lowlink[frames.back().v], lowlink[v]);
            }
        }
    }
    return sccs;
}

}  // namespace

std::vector<LoopCluster> Diagram::detectAlgebraicLoops() const {
    const int n = blockCount();
    // Subgraph induced by direct-feedthrough blocks only: a delay or
    // integrator on a cycle breaks the algebraic dependency.
    std::vector<std::vector<int>> adj(n);
    std::vector<bool> hasSelfEdge(n, false);
    for (const SignalEdge& e : edges_) {
        if (!block(e.source.block).info().directFeedthrough) continue;
        if (!block(e.sink.block).info().directFeedthrough) continue;
        if (e.source.block == e.sink.block) hasSelfEdge[e.source.block] = true;
        adj[e.source.block].push_back(e.sink.block);
    }
    for (auto& a : adj) {
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
    }

    std::vector<std::vector<int>> sccs = tarjanSccs(adj);
    std::vector<LoopCluster> clusters;
    for (auto& comp : sccs) {
        if (comp.size() < 2 && !(comp.size() == 1 && hasSelfEdge[comp[0]])) continue;
        LoopCluster cluster;
        cluster.members = std::move(comp);
        std::set<BlockId> memberSet(cluster.members.begin(), cluster.members.end());
        for (const SignalEdge& e : edges_) {
            bool srcIn = memberSet.count(e.source.block) != 0;
            bool dstIn = memberSet.count(e.sink.block) != 0;
            if (srcIn && dstIn)
                cluster.memberEdges.push_back(e);
            else if (!srcIn && dstIn)
                cluster.externalInputs.push_back(e.sink);
        }
        std::sort(cluster.externalInputs.begin(), cluster.externalInputs.end());
        clusters.push_back(std::move(cluster));
    }
    std::sort(clusters.begin(), clusters.end(),
              [](const LoopCluster& a, const LoopCluster& b) {
                  return a.members.front() < b.members.front();
              });
    return clusters;
}

ExecutionSchedule Diagram::resolveExecutionOrder(bool allowLoops) const {
    ExecutionSchedule sched;
    sched.clusters = detectAlgebraicLoops();
    if (!allowLoops && !sched.clusters.empty()) {
        std::string names;
        for (BlockId id : sched.clusters.front().members)
            names += (names.empty() ? "" : ", ") + blockName(id);
        throw UnresolvableCycle("diagram contains an algebraic loop {" + names +
                                "} and loop solving is disabled");
    }

    const int n = blockCount();
    // Condensation item per block: its cluster index, or its own node.
    std::vector<int> clusterOf(n, -1);
    for (size_t c = 0; c < sched.clusters.size(); ++c)
        for (BlockId id : sched.clusters[c].members) clusterOf[id] = static_cast<int>(c);

    // One condensation node per cluster plus one per free block. Node key for
    // the deterministic tie-break is the smallest member block id.
    struct Node {
        bool isCluster;
        int index;  // cluster index or block id
        int key;
    };
    std::vector<Node> nodes;
    std::vector<int> nodeOf(n, -1);
    for (size_t c = 0; c < sched.clusters.size(); ++c) {
        int nodeIdx = static_cast<int>(nodes.size());
        nodes.push_back({true, static_cast<int>(c), sched.clusters[c].members.front()});
        for (BlockId id : sched.clusters[c].members) nodeOf[id] = nodeIdx;
    }
    for (BlockId id = 0; id < n; ++id) {
        if (nodeOf[id] != -1) continue;
        nodeOf[id] = static_cast<int>(nodes.size());
        nodes.push_back({false, id, id});
    }

    // Precedence: a driver precedes its sink whenever the sink has direct
    // feedthrough (clusters are all-direct by construction). Blocks with
    // indirect feedthrough carry no ordering obligation.
    std::vector<std::set<int>> succ(nodes.size());
    std::vector<int> indegree(nodes.size(), 0);
    for (const SignalEdge& e : edges_) {
        int u = nodeOf[e.source.block];
        int v = nodeOf[e.sink.block];
        if (u == v) continue;
        bool sinkDirect = block(e.sink.block).info().directFeedthrough;
        if (!sinkDirect) continue;
        if (succ[u].insert(v).second) ++indegree[v];
    }

    // Kahn's algorithm with an ascending block-id tie-break.
    std::set<std::pair<int, int>> ready;  // (key, node)
    for (size_t i = 0; i < nodes.size(); ++i)
        if (indegree[i] == 0) ready.insert({nodes[i].key, static_cast<int>(i)});
    while (!ready.empty()) {
        auto [key, u] = *ready.begin();
        ready.erase(ready.begin());
        ExecutionSchedule::Item item;
        if (nodes[u].isCluster) {
            item.isCluster = true;
            item.cluster = nodes[u].index;
        } else {
            item.block = nodes[u].index;
        }
        sched.items.push_back(item);
        for (int v : succ[u])
            if (--indegree[v] == 0) ready.insert({nodes[v].key, v});
    }
    if (sched.items.size() != nodes.size())
        throw UnresolvableCycle("execution order has a residual cycle");
    return sched;
}

std::string Diagram::debugDump(const ExecutionSchedule* schedule) const {
    std::ostringstream os;
    os << "blocks:\n";
    for (BlockId id = 0; id < blockCount(); ++id) {
        const BlockInfo& bi = block(id).info();
        os << "  " << id << ' ' << blockName(id) << ' ' << bi.kind << " in=" << bi.numInputs
           << " out=" << bi.numOutputs << " feedthrough=" << (bi.directFeedthrough ? "direct" : "indirect")
           << " state=" << bi.stateSize << '\n';
    }
    os << "edges:\n";
    for (const SignalEdge& e : edges_)
        os << "  " << slotName(e.source) << " -> " << slotName(e.sink) << " ["
           << e.type.toString() << "]\n";

    ExecutionSchedule local;
    if (!schedule) {
        local = resolveExecutionOrder();
        schedule = &local;
    }
    os << "schedule:";
    for (const auto& item : schedule->items) {
        if (item.isCluster) {
            os << " loop{";
            const LoopCluster& c = schedule->clusters[item.cluster];
            for (size_t i = 0; i < c.members.size(); ++i)
                os << (i ? " " : "") << blockName(c.members[i]);
            os << '}';
        } else {
            os << ' ' << blockName(item.block);
        }
    }
    os << '\n';
    os << "loops:\n";
    for (size_t c = 0; c < schedule->clusters.size(); ++c) {
        const LoopCluster& lc = schedule->clusters[c];
        os << "  cluster " << c << ": members={";
        for (size_t i = 0; i < lc.members.size(); ++i)
            os << (i ? " " : "") << blockName(lc.members[i]);
        os << "} externals={";
        for (size_t i = 0; i < lc.externalInputs.size(); ++i)
            os << (i ? " " : "") << slotName(lc.externalInputs[i]);
        os << "}\n";
    }
    return os.str();
}

}  // namespace blockflow::graph
