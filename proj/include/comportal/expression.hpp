#ifndef COMPORTAL_EXPRESSION_HPP
#define COMPORTAL_EXPRESSION_HPP

// Small arithmetic expression language for user-supplied coefficient
// functions such as "vf*(1 - x/rho_max)".
//
// Precedence, high to low: function call / parentheses, '^' (right
// associative), unary minus, '*' '/', '+' '-' (left associative).
// Functions: min, max, clamp(v, lo, hi), abs, exp, log, sqrt.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "comportal/error.hpp"

namespace comportal {

/// Names an expression may refer to. Variables are bound at evaluation time,
/// in the order listed here; constants are folded at parse time.
struct ParseContext {
  std::vector<std::string> variables{"t", "x"};
  std::map<std::string, double> constants;
};

class Expression {
public:
  static Expression parse(std::string_view src, const ParseContext& ctx = {});

  /// `values` are bound to ctx.variables by position.
  double evaluate(std::span<const double> values) const {
    return eval(root_, values);
  }
  double operator()(double t, double x) const {
    const double vals[2] = {t, x};
    return evaluate(std::span<const double>(vals, 2));
  }

  /// Fully parenthesized; reparses to the same tree under the same context.
  std::string to_string() const { return print(root_); }
  const std::string& source() const noexcept { return source_; }
  const std::set<std::string>& free_variables() const noexcept { return vars_; }
  const std::set<std::string>& constants_used() const noexcept { return consts_; }

private:
  enum class Op { Num, Var, Const, Neg, Add, Sub, Mul, Div, Pow, Min, Max, Clamp, Abs, Exp, Log, Sqrt };
  struct Node {
    Op op;
    double value = 0.0;  // Num, Const
    int slot = -1;       // Var
    int a = -1, b = -1, c = -1;
    std::string name{};  // Var, Const
  };
  friend class ExpressionParser;

  double eval(int i, std::span<const double> vals) const {
    const Node& n = nodes_[i];
    auto arg = [&](int k) { return eval(k, vals); };
    switch (n.op) {
      case Op::Num:
      case Op::Const: return n.value;
      case Op::Var:
        if (n.slot >= static_cast<int>(vals.size()))
          throw EvaluationError("no value bound for variable '" + n.name + "'");
        return vals[n.slot];
      case Op::Neg: return -arg(n.a);
      case Op::Add: return arg(n.a) + arg(n.b);
      case Op::Sub: return arg(n.a) - arg(n.b);
      case Op::Mul: return arg(n.a) * arg(n.b);
      case Op::Div: {
        const double num = arg(n.a);
        const double den = arg(n.b);
        if (den == 0.0) throw EvaluationError("division by zero in '" + source_ + "'");
        return num / den;
      }
      case Op::Pow: {
        const double r = std::pow(arg(n.a), arg(n.b));
        if (!std::isfinite(r)) throw EvaluationError("power is not finite in '" + source_ + "'");
        return r;
      }
      case Op::Min: return std::min(arg(n.a), arg(n.b));
      case Op::Max: return std::max(arg(n.a), arg(n.b));
      case Op::Clamp: {
        const double lo = arg(n.b), hi = arg(n.c);
        if (lo > hi) throw EvaluationError("clamp with lo > hi in '" + source_ + "'");
        return std::min(std::max(arg(n.a), lo), hi);
      }
      case Op::Abs: return std::abs(arg(n.a));
      case Op::Exp: return std::exp(arg(n.a));
      case Op::Log: {
        const double v = arg(n.a);
        if (!(v > 0)) throw EvaluationError("log of nonpositive value in '" + source_ + "'");
        return std::log(v);
      }
      case Op::Sqrt: {
        const double v = arg(n.a);
        if (v < 0) throw EvaluationError("sqrt of negative value in '" + source_ + "'");
        return std::sqrt(v);
      }
    }
    return 0.0;
  }

  std::string print(int i) const {
    const Node& n = nodes_[i];
    auto bin = [&](const char* op) { return "(" + print(n.a) + " " + op + " " + print(n.b) + ")"; };
    switch (n.op) {
      case Op::Num: {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", n.value);
        return buf;
      }
      case Op::Var:
      case Op::Const: return n.name;
      case Op::Neg: return "(-" + print(n.a) + ")";
      case Op::Add: return bin("+");
      case Op::Sub: return bin("-");
      case Op::Mul: return bin("*");
      case Op::Div: return bin("/");
      case Op::Pow: return bin("^");
      case Op::Min: return "min(" + print(n.a) + ", " + print(n.b) + ")";
      case Op::Max: return "max(" + print(n.a) + ", " + print(n.b) + ")";
      case Op::Clamp: return "clamp(" + print(n.a) + ", " + print(n.b) + ", " + print(n.c) + ")";
      case Op::Abs: return "abs(" + print(n.a) + ")";
      case Op::Exp: return "exp(" + print(n.a) + ")";
      case Op::Log: return "log(" + print(n.a) + ")";
      case Op::Sqrt: return "sqrt(" + print(n.a) + ")";
    }
    return "";
  }

  std::vector<Node> nodes_;
  int root_ = -1;
  std::string source_;
  std::set<std::string> vars_;
  std::set<std::string> consts_;
};

class ExpressionParser {
public:
  ExpressionParser(std::string_view src, const ParseContext& ctx) : src_(src), ctx_(ctx) {}

  Expression run() {
    if (src_.find_first_not_of(" \t\r\n") == std::string_view::npos) throw ParseError("empty expression", 0);
    out_.source_ = std::string(src_);
    out_.root_ = additive();
    skip_ws();
    if (pos_ < src_.size()) throw ParseError(std::string("unexpected '") + src_[pos_] + "'", pos_);
    return std::move(out_);
  }

private:
  using Op = Expression::Op;

  int add(Expression::Node n) {
    out_.nodes_.push_back(std::move(n));
    return static_cast<int>(out_.nodes_.size()) - 1;
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }
  bool accept(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!accept(c)) {
      if (pos_ >= src_.size()) throw ParseError(std::string("expected '") + c + "' but input ended", pos_);
      throw ParseError(std::string("expected '") + c + "'", pos_);
    }
  }

  int additive() {
    int lhs = multiplicative();
    for (;;) {
      if (accept('+')) lhs = add({Op::Add, 0, -1, lhs, multiplicative()});
      else if (accept('-')) lhs = add({Op::Sub, 0, -1, lhs, multiplicative()});
      else return lhs;
    }
  }
  int multiplicative() {
    int lhs = unary();
    for (;;) {
      if (accept('*')) lhs = add({Op::Mul, 0, -1, lhs, unary()});
      else if (accept('/')) lhs = add({Op::Div, 0, -1, lhs, unary()});
      else return lhs;
    }
  }
  int unary() {
    if (accept('-')) return add({Op::Neg, 0, -1, unary()});
    if (accept('+')) return unary();
    return power();
  }
  int power() {
    const int base = primary();
    if (accept('^')) return add({Op::Pow, 0, -1, base, unary()});
    return base;
  }

  int primary() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("unexpected end of expression", pos_);
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      const int e = additive();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    throw ParseError(std::string("unexpected '") + c + "'", pos_);
  }

  int number() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.')) ++pos_;
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < src_.size() && (src_[p] == '+' || src_[p] == '-')) ++p;
      if (p < src_.size() && std::isdigit(static_cast<unsigned char>(src_[p]))) {
        pos_ = p;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      }
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(src_.data() + start, src_.data() + pos_, v);
    if (ec != std::errc() || ptr != src_.data() + pos_) throw ParseError("malformed number", start);
    return add({Op::Num, v});
  }

  int identifier() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
    const std::string name(src_.substr(start, pos_ - start));
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == '(') return call(name, start);
    for (std::size_t k = 0; k < ctx_.variables.size(); ++k)
      if (ctx_.variables[k] == name) {
        out_.vars_.insert(name);
        Expression::Node n{Op::Var};
        n.slot = static_cast<int>(k);
        n.name = name;
        return add(std::move(n));
      }
    if (auto it = ctx_.constants.find(name); it != ctx_.constants.end()) {
      out_.consts_.insert(name);
      Expression::Node n{Op::Const, it->second};
      n.name = name;
      return add(std::move(n));
    }
    throw ParseError("unknown identifier '" + name + "'", start);
  }

  int call(const std::string& name, std::size_t at) {
    static const std::map<std::string, std::pair<Op, int>> table{
        {"min", {Op::Min, 2}}, {"max", {Op::Max, 2}},   {"clamp", {Op::Clamp, 3}}, {"abs", {Op::Abs, 1}},
        {"exp", {Op::Exp, 1}}, {"log", {Op::Log, 1}}, {"sqrt", {Op::Sqrt, 1}}};
    const auto it = table.find(name);
    if (it == table.end()) throw ParseError("unknown function '" + name + "'", at);
    expect('(');
    std::vector<int> args{additive()};
    while (accept(',')) args.push_back(additive());
    expect(')');
    if (static_cast<int>(args.size()) != it->second.second)
      throw ParseError(name + " takes " + std::to_string(it->second.second) + " argument(s)", at);
    Expression::Node n{it->second.first};
    n.a = args[0];
    if (args.size() > 1) n.b = args[1];
    if (args.size() > 2) n.c = args[2];
    return add(std::move(n));
  }

  std::string_view src_;
  const ParseContext& ctx_;
  std::size_t pos_ = 0;
  Expression out_;
};

inline Expression Expression::parse(std::string_view src, const ParseContext& ctx) {
  return ExpressionParser(src, ctx).run();
}

inline Expression parse_expression(std::string_view src, const ParseContext& ctx = {}) {
  return Expression::parse(src, ctx);
}

}  // namespace comportal

#endif  // COMPORTAL_EXPRESSION_HPP
