#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

#include "quclab/jet.hpp"

namespace quclab {

struct ExpressionError : std::runtime_error {
    ExpressionError(const std::string& what, std::size_t pos)
        : std::runtime_error(what + " at position " + std::to_string(pos)), position(pos) {}
    std::size_t position;
};

/// Expression tree over the variables x1, x2, t with + - * /, sin, cos, exp and
/// pow(base, constant). Immutable; symbolic derivatives produce new trees.
class Expression {
public:
    enum class Op { constant, variable, add, sub, mul, div, neg, sin, cos, exp, pow };
    static constexpr int x1 = 0, x2 = 1, t = 2;

    Expression() : Expression(constant_node(0.0)) {}

    static Expression parse(const std::string& text);
    static Expression constant(double c) { return Expression(constant_node(c)); }
    static Expression variable(int index) {
        auto n = std::make_shared<Node>();
        n->op = Op::variable;
        n->var = index;
        return Expression(n);
    }

    template <class T>
    T evaluate(const std::array<T, 3>& vars) const {
        return eval<T>(*node_, vars);
    }
    double operator()(double x1v, double x2v, double tv) const { return evaluate<double>({x1v, x2v, tv}); }

    Expression derivative(int index) const { return Expression(diff(node_, index)); }

    bool is_constant() const { return node_->op == Op::constant; }
    double constant_value() const { return node_->value; }
    bool uses_variable(int index) const { return uses(*node_, index); }
    std::string to_string() const { return print(*node_); }

    /// factor * E(kx x1, kx x2, kt t).
    Expression rescaled(double kx, double kt, double factor = 1.0) const {
        return Expression(make(Op::mul, constant_node(factor), scale_vars(node_, {kx, kx, kt})));
    }

private:
    struct Node {
        Op op = Op::constant;
        double value = 0.0;
        int var = 0;
        std::shared_ptr<const Node> lhs, rhs;
    };
    using NodePtr = std::shared_ptr<const Node>;

    explicit Expression(NodePtr n) : node_(std::move(n)) {}

    static NodePtr constant_node(double c) {
        auto n = std::make_shared<Node>();
        n->value = c;
        return n;
    }
    static NodePtr make(Op op, NodePtr l, NodePtr r = nullptr, double value = 0.0) {
        // Fold constants and trivial identities so derivative trees stay small.
        auto is_c = [](const NodePtr& p, double v) { return p && p->op == Op::constant && p->value == v; };
        auto both_c = l && l->op == Op::constant && (!r || r->op == Op::constant);
        switch (op) {
            case Op::add:
                if (is_c(l, 0.0)) return r;
                if (is_c(r, 0.0)) return l;
                break;
            case Op::sub:
                if (is_c(r, 0.0)) return l;
                if (is_c(l, 0.0)) return make(Op::neg, r);
                break;
            case Op::mul:
                if (is_c(l, 0.0) || is_c(r, 0.0)) return constant_node(0.0);
                if (is_c(l, 1.0)) return r;
                if (is_c(r, 1.0)) return l;
                break;
            case Op::div:
                if (is_c(l, 0.0)) return constant_node(0.0);
                if (is_c(r, 1.0)) return l;
                break;
            case Op::pow:
                if (value == 0.0) return constant_node(1.0);
                if (value == 1.0) return l;
                break;
            default: break;
        }
        auto n = std::make_shared<Node>();
        n->op = op;
        n->lhs = std::move(l);
        n->rhs = std::move(r);
        n->value = value;
        if (both_c && op != Op::variable) {
            double v = eval<double>(*n, {0.0, 0.0, 0.0});
            return constant_node(v);
        }
        return n;
    }

    template <class T>
    static T eval(const Node& n, const std::array<T, 3>& vars) {
        using std::cos, std::exp, std::pow, std::sin;
        switch (n.op) {
            case Op::constant: return T(n.value);
            case Op::variable: return vars[static_cast<std::size_t>(n.var)];
            case Op::add: return eval<T>(*n.lhs, vars) + eval<T>(*n.rhs, vars);
            case Op::sub: return eval<T>(*n.lhs, vars) - eval<T>(*n.rhs, vars);
            case Op::mul: return eval<T>(*n.lhs, vars) * eval<T>(*n.rhs, vars);
            case Op::div: return eval<T>(*n.lhs, vars) / eval<T>(*n.rhs, vars);
            case Op::neg: return -eval<T>(*n.lhs, vars);
            case Op::sin: return sin(eval<T>(*n.lhs, vars));
            case Op::cos: return cos(eval<T>(*n.lhs, vars));
            case Op::exp: return exp(eval<T>(*n.lhs, vars));
            case Op::pow: return pow(eval<T>(*n.lhs, vars), n.value);
        }
        return T(0.0);
    }

    static NodePtr scale_vars(const NodePtr& n, const std::array<double, 3>& k) {
        if (!n) return n;
        if (n->op == Op::variable) return make(Op::mul, constant_node(k[static_cast<std::size_t>(n->var)]), n);
        if (n->op == Op::constant) return n;
        return make(n->op, scale_vars(n->lhs, k), scale_vars(n->rhs, k), n->value);
    }

    static NodePtr diff(const NodePtr& n, int index) {
        switch (n->op) {
            case Op::constant: return constant_node(0.0);
            case Op::variable: return constant_node(n->var == index ? 1.0 : 0.0);
            case Op::add: return make(Op::add, diff(n->lhs, index), diff(n->rhs, index));
            case Op::sub: return make(Op::sub, diff(n->lhs, index), diff(n->rhs, index));
            case Op::mul:
                return make(Op::add, make(Op::mul, diff(n->lhs, index), n->rhs), make(Op::mul, n->lhs, diff(n->rhs, index)));
            case Op::div: {
                auto num = make(Op::sub, make(Op::mul, diff(n->lhs, index), n->rhs), make(Op::mul, n->lhs, diff(n->rhs, index)));
                return make(Op::div, num, make(Op::pow, n->rhs, nullptr, 2.0));
            }
            case Op::neg: return make(Op::neg, diff(n->lhs, index));
            case Op::sin: return make(Op::mul, make(Op::cos, n->lhs), diff(n->lhs, index));
            case Op::cos: return make(Op::neg, make(Op::mul, make(Op::sin, n->lhs), diff(n->lhs, index)));
            case Op::exp: return make(Op::mul, n, diff(n->lhs, index));
            case Op::pow:
                return make(Op::mul, make(Op::mul, constant_node(n->value), make(Op::pow, n->lhs, nullptr, n->value - 1.0)),
                            diff(n->lhs, index));
        }
        return constant_node(0.0);
    }

    static bool uses(const Node& n, int index) {
        if (n.op == Op::variable) return n.var == index;
        return (n.lhs && uses(*n.lhs, index)) || (n.rhs && uses(*n.rhs, index));
    }

    static std::string print(const Node& n) {
        static const char* names[] = {"x1", "x2", "t"};
        auto num = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return std::string(buf);
        };
        switch (n.op) {
            case Op::constant: return num(n.value);
            case Op::variable: return names[n.var];
            case Op::add: return "(" + print(*n.lhs) + " + " + print(*n.rhs) + ")";
            case Op::sub: return "(" + print(*n.lhs) + " - " + print(*n.rhs) + ")";
            case Op::mul: return "(" + print(*n.lhs) + " * " + print(*n.rhs) + ")";
            case Op::div: return "(" + print(*n.lhs) + " / " + print(*n.rhs) + ")";
            case Op::neg: return "(-" + print(*n.lhs) + ")";
            case Op::sin: return "sin(" + print(*n.lhs) + ")";
            case Op::cos: return "cos(" + print(*n.lhs) + ")";
            case Op::exp: return "exp(" + print(*n.lhs) + ")";
            case Op::pow: return "pow(" + print(*n.lhs) + ", " + num(n.value) + ")";
        }
        return "?";
    }

    class Parser;
    NodePtr node_;
};

class Expression::Parser {
public:
    explicit Parser(const std::string& s) : s_(s) {}

    NodePtr parse_all() {
        auto n = expr();
        skip();
        if (pos_ != s_.size()) throw ExpressionError("unexpected character '" + std::string(1, s_[pos_]) + "'", pos_);
        return n;
    }

private:
    void skip() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool accept(char c) {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!accept(c)) throw ExpressionError(std::string("expected '") + c + "'", pos_);
    }

    NodePtr expr() {
        auto n = term();
        for (;;) {
            if (accept('+')) n = make(Op::add, n, term());
            else if (accept('-')) n = make(Op::sub, n, term());
            else return n;
        }
    }
    NodePtr term() {
        auto n = unary();
        for (;;) {
            if (accept('*')) n = make(Op::mul, n, unary());
            else if (accept('/')) n = make(Op::div, n, unary());
            else return n;
        }
    }
    NodePtr unary() {
        if (accept('-')) return make(Op::neg, unary());
        if (accept('+')) return unary();
        auto base = primary();
        skip();
        if (accept('^')) {
            std::size_t at = pos_;
            auto e = unary();
            if (e->op != Op::constant) throw ExpressionError("exponent must be a constant", at);
            return make(Op::pow, base, nullptr, e->value);
        }
        return base;
    }
    NodePtr primary() {
        skip();
        if (pos_ >= s_.size()) throw ExpressionError("unexpected end of expression", pos_);
        char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            auto n = expr();
            expect(')');
            return n;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t start = pos_;
            char* end = nullptr;
            double v = std::strtod(s_.c_str() + pos_, &end);
            pos_ = static_cast<std::size_t>(end - s_.c_str());
            if (pos_ == start) throw ExpressionError("malformed number", start);
            return constant_node(v);
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
            std::string id = s_.substr(start, pos_ - start);
            if (id == "x1") return variable_node(0);
            if (id == "x2") return variable_node(1);
            if (id == "t") return variable_node(2);
            if (id == "pi") return constant_node(std::numbers::pi);
            if (id == "e") return constant_node(std::numbers::e);
            if (id == "sin" || id == "cos" || id == "exp") {
                expect('(');
                auto arg = expr();
                expect(')');
                return make(id == "sin" ? Op::sin : (id == "cos" ? Op::cos : Op::exp), arg);
            }
            if (id == "pow") {
                expect('(');
                auto base = expr();
                expect(',');
                std::size_t at = pos_;
                auto e = expr();
                expect(')');
                if (e->op != Op::constant) throw ExpressionError("pow exponent must be a constant", at);
                return make(Op::pow, base, nullptr, e->value);
            }
            static const char* rough[] = {"abs", "min", "max", "sqrt", "floor", "ceil", "sign", "round", "heaviside", "step", "mod", "log"};
            for (const char* r : rough)
                if (id == r) throw ExpressionError("non-differentiable construct '" + id + "' rejected", start);
            throw ExpressionError("unknown identifier '" + id + "'", start);
        }
        throw ExpressionError("unexpected character '" + std::string(1, c) + "'", pos_);
    }
    static NodePtr variable_node(int i) {
        auto n = std::make_shared<Node>();
        n->op = Op::variable;
        n->var = i;
        return n;
    }

    const std::string& s_;
    std::size_t pos_ = 0;
};

inline Expression Expression::parse(const std::string& text) { return Expression(Parser(text).parse_all()); }

}  // namespace quclab
