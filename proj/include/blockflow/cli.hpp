#pragma once

#include <iostream>
#include <string>
#include <vector>

#include "blockflow/graph.hpp"

namespace blockflow::cli {

/// Parses the line-oriented diagram format:
///   # comment
///   block <name> <Kind> [key=value ...]
///   connect <src>.out<k> <dst>.in<k>
///   param <name> key=value
/// Names must be declared before use. Values parse as numbers, as matrices
/// ("1,0;0,1", rows separated by ';'), or fall back to strings. Errors carry
/// the offending line number.
graph::Diagram parseDiagramFile(const std::string& text);

/// Canonical file text for a parsed diagram; parse(dump(parse(x))) yields a
/// structurally identical diagram.
std::string dumpDiagramFile(const graph::Diagram& d);

/// Structural equality: same blocks (name, kind, parameters) and edges.
bool sameDiagram(const graph::Diagram& a, const graph::Diagram& b);

/// Entry point behind the binary. Exit codes: 0 success, 1 parse/validation
/// error, 2 runtime error.
int runCommand(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr);

}  // namespace blockflow::cli
