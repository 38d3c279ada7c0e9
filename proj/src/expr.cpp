#include "blockflow/expr.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "blockflow/errors.hpp"
#include "blockflow/util.hpp"

namespace blockflow::expr {

namespace {

std::shared_ptr<ExprNode> makeNode(Kind k) { return std::make_shared<ExprNode>(k); }

bool isConstant(const Expr& e, double v) {
    return e->kind == Kind::Constant && e->value == v;
}

}  // namespace

Expr constant(double v) {
    auto n = makeNode(Kind::Constant);
    n->value = v;
    return n;
}

Expr variable(std::string name) {
    if (name.empty()) throw InvalidExpression("variable name must not be empty");
    auto n = makeNode(Kind::Variable);
    n->name = std::move(name);
    return n;
}

Expr add(std::vector<Expr> operands) {
    if (operands.size() < 2) throw InvalidExpression("add requires at least two operands");
    auto n = makeNode(Kind::Add);
    n->children = std::move(operands);
    return n;
}

Expr add(Expr a, Expr b) { return add(std::vector<Expr>{std::move(a), std::move(b)}); }

Expr mul(std::vector<Expr> operands) {
    if (operands.size() < 2) throw InvalidExpression("mul requires at least two operands");
    auto n = makeNode(Kind::Mul);
    n->children = std::move(operands);
    return n;
}

Expr mul(Expr a, Expr b) { return mul(std::vector<Expr>{std::move(a), std::move(b)}); }

Expr neg(Expr e) {
    auto n = makeNode(Kind::Neg);
    n->children.push_back(std::move(e));
    return n;
}

Expr div(Expr num, Expr den) {
    if (isConstant(den, 0.0)) throw InvalidExpression("division by the literal constant 0");
    auto n = makeNode(Kind::Div);
    n->children.push_back(std::move(num));
    n->children.push_back(std::move(den));
    return n;
}

Expr pow(Expr base, int exponent) {
    auto n = makeNode(Kind::Pow);
    n->children.push_back(std::move(base));
    n->exponent = exponent;
    return n;
}

Expr operator+(const Expr& a, const Expr& b) { return add(a, b); }
Expr operator-(const Expr& a, const Expr& b) { return add(a, neg(b)); }
Expr operator*(const Expr& a, const Expr& b) { return mul(a, b); }
Expr operator/(const Expr& a, const Expr& b) { return div(a, b); }
Expr operator-(const Expr& a) { return neg(a); }

bool equal(const Expr& a, const Expr& b) {
    if (a.get() == b.get()) return true;
    if (a->kind != b->kind) return false;
    switch (a->kind) {
        case Kind::Constant:
            return a->value == b->value;
        case Kind::Variable:
            return a->name == b->name;
        case Kind::Pow:
            if (a->exponent != b->exponent) return false;
            break;
        default:
            break;
    }
    if (a->children.size() != b->children.size()) return false;
    for (size_t i = 0; i < a->children.size(); ++i)
        if (!equal(a->children[i], b->children[i])) return false;
    return true;
}

namespace {

void collectVariables(const Expr& e, std::set<std::string>& out) {
    if (e->kind == Kind::Variable) out.insert(e->name);
    for (const Expr& c : e->children) collectVariables(c, out);
}

}  // namespace

std::vector<std::string> variables(const Expr& e) {
    std::set<std::string> s;
    collectVariables(e, s);
    return {s.begin(), s.end()};
}

double SymbolTable::lookup(const std::string& name) const {
    auto it = bindings_.find(name);
    if (it == bindings_.end()) throw UnboundSymbol("unbound symbol '" + name + "'");
    return it->second;
}

const SymbolProvenance* SymbolTable::provenance(const std::string& name) const {
    auto it = provenance_.find(name);
    return it == provenance_.end() ? nullptr : &it->second;
}

Expr differentiate(const Expr& e, const std::string& v) {
    switch (e->kind) {
        case Kind::Constant:
            return constant(0.0);
        case Kind::Variable:
            return constant(e->name == v ? 1.0 : 0.0);
        case Kind::Add: {
            std::vector<Expr> terms;
            terms.reserve(e->children.size());
            for (const Expr& c : e->children) terms.push_back(differentiate(c, v));
            return add(std::move(terms));
        }
        case Kind::Mul: {
            // General product rule: sum over i of (d op_i) * prod(op_j, j != i).
            std::vector<Expr> terms;
            for (size_t i = 0; i < e->children.size(); ++i) {
                std::vector<Expr> factors;
                factors.push_back(differentiate(e->children[i], v));
                for (size_t j = 0; j < e->children.size(); ++j)
                    if (j != i) factors.push_back(e->children[j]);
                terms.push_back(mul(std::move(factors)));
            }
            return add(std::move(terms));
        }
        case Kind::Neg:
            return neg(differentiate(e->children[0], v));
        case Kind::Div: {
            const Expr& num = e->children[0];
            const Expr& den = e->children[1];
            Expr dn = differentiate(num, v);
            Expr dd = differentiate(den, v);
            return div(add(mul(dn, den), neg(mul(num, dd))), pow(den, 2));
        }
        case Kind::Pow: {
            if (e->exponent == 0) return constant(0.0);
            Expr inner = differentiate(e->children[0], v);
            return mul({constant(static_cast<double>(e->exponent)),
                        pow(e->children[0], e->exponent - 1), std::move(inner)});
        }
    }
    throw NonDifferentiable("unsupported expression node kind " +
                            std::to_string(static_cast<int>(e->kind)));
}

namespace {

void flattenInto(Kind kind, const Expr& e, std::vector<Expr>& out) {
    if (e->kind == kind) {
        for (const Expr& c : e->children) flattenInto(kind, c, out);
    } else {
        out.push_back(e);
    }
}

Expr simplifyAdd(const std::vector<Expr>& simplifiedChildren) {
    std::vector<Expr> flat;
    for (const Expr& c : simplifiedChildren) flattenInto(Kind::Add, c, flat);

    double constSum = 0.0;
    std::vector<Expr> terms;
    for (const Expr& c : flat) {
        if (c->kind == Kind::Constant) {
            constSum += c->value;
        } else {
            terms.push_back(c);
        }
    }

    // Group syntactically identical terms: x + x -> 2 * x.
    std::vector<Expr> grouped;
    std::vector<int> counts;
    for (const Expr& t : terms) {
        bool found = false;
        for (size_t i = 0; i < grouped.size(); ++i) {
            if (equal(grouped[i], t)) {
                ++counts[i];
                found = true;
                break;
            }
        }
        if (!found) {
            grouped.push_back(t);
            counts.push_back(1);
        }
    }
    std::vector<Expr> result;
    for (size_t i = 0; i < grouped.size(); ++i) {
        if (counts[i] == 1)
            result.push_back(grouped[i]);
        else
            result.push_back(mul(constant(static_cast<double>(counts[i])), grouped[i]));
    }
    if (constSum != 0.0 || result.empty()) result.push_back(constant(constSum));
    if (result.size() == 1) return result[0];
    return add(std::move(result));
}

Expr simplifyMul(const std::vector<Expr>& simplifiedChildren) {
    std::vector<Expr> flat;
    for (const Expr& c : simplifiedChildren) flattenInto(Kind::Mul, c, flat);

    double constProd = 1.0;
    std::vector<Expr> factors;
    for (const Expr& c : flat) {
        if (c->kind == Kind::Constant) {
            constProd *= c->value;
        } else {
            factors.push_back(c);
        }
    }
    if (constProd == 0.0) return constant(0.0);
    std::vector<Expr> result;
    if (constProd != 1.0 || factors.empty()) result.push_back(constant(constProd));
    result.insert(result.end(), factors.begin(), factors.end());
    if (result.size() == 1) return result[0];
    return mul(std::move(result));
}

}  // namespace

Expr simplify(const Expr& e) {
    switch (e->kind) {
        case Kind::Constant:
        case Kind::Variable:
            return e;
        case Kind::Add: {
            std::vector<Expr> kids;
            kids.reserve(e->children.size());
            for (const Expr& c : e->children) kids.push_back(simplify(c));
            return simplifyAdd(kids);
        }
        case Kind::Mul: {
            std::vector<Expr> kids;
            kids.reserve(e->children.size());
            for (const Expr& c : e->children) kids.push_back(simplify(c));
            return simplifyMul(kids);
        }
        case Kind::Neg: {
            Expr inner = simplify(e->children[0]);
            if (inner->kind == Kind::Constant) return constant(-inner->value);
            if (inner->kind == Kind::Neg) return inner->children[0];
            return neg(inner);
        }
        case Kind::Div: {
            Expr num = simplify(e->children[0]);
            Expr den = simplify(e->children[1]);
            // Never materialize a literal 0 denominator: if the denominator
            // folded to 0, keep the original so evaluation still reports the
            // singularity instead of a constructor error.
            if (isConstant(den, 0.0)) den = e->children[1];
            if (isConstant(num, 0.0) && den->kind == Kind::Constant && den->value != 0.0)
                return constant(0.0);
            if (isConstant(den, 1.0)) return num;
            if (num->kind == Kind::Constant && den->kind == Kind::Constant && den->value != 0.0)
                return constant(num->value / den->value);
            return div(num, den);
        }
        case Kind::Pow: {
            Expr base = simplify(e->children[0]);
            if (e->exponent == 0) return constant(1.0);
            if (e->exponent == 1) return base;
            if (base->kind == Kind::Constant) {
                double acc = 1.0;
                int k = std::abs(e->exponent);
                for (int i = 0; i < k; ++i) acc *= base->value;
                if (e->exponent < 0) {
                    if (acc == 0.0) return pow(base, e->exponent);  // keep the singularity
                    acc = 1.0 / acc;
                }
                return constant(acc);
            }
            return pow(base, e->exponent);
        }
    }
    return e;
}

Expr substitute(const Expr& e, const std::string& v, const Expr& r) {
    switch (e->kind) {
        case Kind::Constant:
            return e;
        case Kind::Variable:
            return e->name == v ? r : e;
        default: {
            bool changed = false;
            std::vector<Expr> kids;
            kids.reserve(e->children.size());
            for (const Expr& c : e->children) {
                Expr nc = substitute(c, v, r);
                changed = changed || nc.get() != c.get();
                kids.push_back(std::move(nc));
            }
            if (!changed) return e;
            auto n = makeNode(e->kind);
            n->exponent = e->exponent;
            n->children = std::move(kids);
            return n;
        }
    }
}

double evaluate(const Expr& e, const SymbolTable& table) {
    switch (e->kind) {
        case Kind::Constant:
            return e->value;
        case Kind::Variable:
            return table.lookup(e->name);
        case Kind::Add: {
            double acc = 0.0;
            for (const Expr& c : e->children) acc += evaluate(c, table);
            return acc;
        }
        case Kind::Mul: {
            double acc = 1.0;
            for (const Expr& c : e->children) acc *= evaluate(c, table);
            return acc;
        }
        case Kind::Neg:
            return -evaluate(e->children[0], table);
        case Kind::Div: {
            double num = evaluate(e->children[0], table);
            double den = evaluate(e->children[1], table);
            if (den == 0.0) throw EvalSingularity("division by zero");
            return num / den;
        }
        case Kind::Pow: {
            double base = evaluate(e->children[0], table);
            int k = e->exponent;
            if (k == 0) return 1.0;  // 0^0 == 1 by convention
            double acc = base;
            for (int i = 1; i < std::abs(k); ++i) acc *= base;
            if (k < 0) {
                if (acc == 0.0) throw EvalSingularity("zero raised to a negative power");
                return 1.0 / acc;
            }
            return acc;
        }
    }
    throw InvalidExpression("corrupt expression node");
}

namespace {

void printExpr(const Expr& e, std::string& out) {
    switch (e->kind) {
        case Kind::Constant:
            out += util::fmtDouble(e->value);
            return;
        case Kind::Variable:
            out += e->name;
            return;
        case Kind::Add: {
            out += '(';
            for (size_t i = 0; i < e->children.size(); ++i) {
                const Expr& c = e->children[i];
                if (i == 0) {
                    printExpr(c, out);
                } else if (c->kind == Kind::Neg) {
                    out += " - ";
                    printExpr(c->children[0], out);
                } else if (c->kind == Kind::Constant && c->value < 0) {
                    out += " - ";
                    out += util::fmtDouble(-c->value);
                } else {
                    out += " + ";
                    printExpr(c, out);
                }
            }
            out += ')';
            return;
        }
        case Kind::Mul: {
            out += '(';
            for (size_t i = 0; i < e->children.size(); ++i) {
                if (i) out += " * ";
                printExpr(e->children[i], out);
            }
            out += ')';
            return;
        }
        case Kind::Neg:
            out += "(-";
            printExpr(e->children[0], out);
            out += ')';
            return;
        case Kind::Div:
            out += '(';
            printExpr(e->children[0], out);
            out += " / ";
            printExpr(e->children[1], out);
            out += ')';
            return;
        case Kind::Pow:
            out += '(';
            printExpr(e->children[0], out);
            out += " ^ ";
            out += std::to_string(e->exponent);
            out += ')';
            return;
    }
}

}  // namespace

std::string toString(const Expr& e) {
    std::string out;
    printExpr(e, out);
    return out;
}

}  // namespace blockflow::expr
