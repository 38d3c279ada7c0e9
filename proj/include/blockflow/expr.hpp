#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace blockflow::expr {

class ExprNode;

/// Shared immutable handle; subtrees are freely shared across expressions
/// and across threads.
using Expr = std::shared_ptr<const ExprNode>;

enum class Kind { Constant, Variable, Add, Mul, Neg, Div, Pow };

/// One node of an immutable expression tree over named scalar variables.
/// The node set is deliberately small: the loop residuals and the symbolic
/// block library only ever need rational polynomial arithmetic.
class ExprNode {
public:
    Kind kind;
    double value = 0.0;           // Constant
    std::string name;             // Variable
    std::vector<Expr> children;   // Add/Mul ( >= 2 ), Neg (1), Div (num, den), Pow (base)
    int exponent = 0;             // Pow

    explicit ExprNode(Kind k) : kind(k) {}
};

// Construction. Add/Mul require at least two operands; div rejects a literal
// zero denominator.
Expr constant(double v);
Expr variable(std::string name);
Expr add(std::vector<Expr> operands);
Expr add(Expr a, Expr b);
Expr mul(std::vector<Expr> operands);
Expr mul(Expr a, Expr b);
Expr neg(Expr e);
Expr div(Expr num, Expr den);
Expr pow(Expr base, int exponent);

// Convenience operators for building test expressions.
Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);

/// Structural equality (same tree shape, names, and constants).
bool equal(const Expr& a, const Expr& b);

/// Sorted, de-duplicated variable names appearing in e.
std::vector<std::string> variables(const Expr& e);

/// Where a bound symbol came from, when it mirrors a diagram signal.
struct SymbolProvenance {
    int blockId = -1;
    int slot = -1;
};

/// Name -> value bindings used by evaluate(). Lookups of unbound names fail
/// loudly; there are no silent defaults.
class SymbolTable {
public:
    void bind(const std::string& name, double value) { bindings_[name] = value; }
    bool has(const std::string& name) const { return bindings_.count(name) != 0; }
    double lookup(const std::string& name) const;

    void setProvenance(const std::string& name, SymbolProvenance p) { provenance_[name] = p; }
    const SymbolProvenance* provenance(const std::string& name) const;

    size_t size() const { return bindings_.size(); }

private:
    std::unordered_map<std::string, double> bindings_;
    std::unordered_map<std::string, SymbolProvenance> provenance_;
};

/// Exact partial derivative with respect to v. The result is a plain
/// expression tree; callers usually follow up with simplify().
Expr differentiate(const Expr& e, const std::string& v);

/// Normalization-lite simplification: constant folding, identity
/// elimination (x+0, x*1, x*0), flattening of nested sums and products, and
/// grouping of syntactically identical addends (x + x -> 2*x). Numeric
/// equivalence with the input is the contract; syntactic canonicity is not.
Expr simplify(const Expr& e);

/// Replaces every occurrence of variable v with r.
Expr substitute(const Expr& e, const std::string& v, const Expr& r);

/// Numeric evaluation in double precision. Throws UnboundSymbol or
/// EvalSingularity (division by zero, 0 raised to a negative power).
double evaluate(const Expr& e, const SymbolTable& table);

/// Infix text with explicit parentheses, e.g. "(C + (G * S))". Negated and
/// negative-constant addends print with a binary minus for readability.
std::string toString(const Expr& e);

}  // namespace blockflow::expr
