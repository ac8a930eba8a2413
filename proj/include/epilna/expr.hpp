#pragma once
// Small arithmetic expression language used in model configuration files:
// rate coefficients, initial-volume formulas and estimation-scale transforms
// are all written as strings over named parameters, e.g.
//   "beta*alpha_LG"   "P_eff_G - 30"   "log(beta*P/mu - 1) + log(P*rho)".
// Grammar: + - * / ^ unary-, parentheses, numeric literals, identifiers and
// the unary functions log, exp, sqrt, logit, expit.

#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace epilna {

struct ExprError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExprNode {
  enum class Kind { number, param, add, sub, mul, div, pow, neg, call };
  Kind kind;
  double value = 0.0;           // number
  int param = -1;               // param (index into the bound name table)
  std::string name;             // param name / function name
  std::unique_ptr<ExprNode> lhs, rhs;
};

using ExprPtr = std::unique_ptr<ExprNode>;

class ExprParser {
 public:
  explicit ExprParser(const std::string& text) : s_(text) {}

  ExprPtr parse() {
    ExprPtr e = parse_sum();
    skip_ws();
    if (pos_ != s_.size()) fail("trailing characters");
    return e;
  }

 private:
  ExprPtr parse_sum() {
    ExprPtr lhs = parse_product();
    for (;;) {
      skip_ws();
      if (accept('+'))
        lhs = binary(ExprNode::Kind::add, std::move(lhs), parse_product());
      else if (accept('-'))
        lhs = binary(ExprNode::Kind::sub, std::move(lhs), parse_product());
      else
        return lhs;
    }
  }

  ExprPtr parse_product() {
    ExprPtr lhs = parse_unary();
    for (;;) {
      skip_ws();
      if (accept('*'))
        lhs = binary(ExprNode::Kind::mul, std::move(lhs), parse_unary());
      else if (accept('/'))
        lhs = binary(ExprNode::Kind::div, std::move(lhs), parse_unary());
      else
        return lhs;
    }
  }

  ExprPtr parse_unary() {
    skip_ws();
    if (accept('-')) {
      auto n = std::make_unique<ExprNode>();
      n->kind = ExprNode::Kind::neg;
      n->lhs = parse_unary();
      return n;
    }
    return parse_power();
  }

  ExprPtr parse_power() {
    ExprPtr base = parse_atom();
    skip_ws();
    if (accept('^')) return binary(ExprNode::Kind::pow, std::move(base), parse_unary());
    return base;
  }

  ExprPtr parse_atom() {
    skip_ws();
    if (pos_ >= s_.size()) fail("unexpected end of expression");
    char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      ExprPtr e = parse_sum();
      skip_ws();
      if (!accept(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      size_t end;
      double v = std::stod(s_.substr(pos_), &end);
      pos_ += end;
      auto n = std::make_unique<ExprNode>();
      n->kind = ExprNode::Kind::number;
      n->value = v;
      return n;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t start = pos_;
      while (pos_ < s_.size() &&
             (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
        ++pos_;
      std::string id = s_.substr(start, pos_ - start);
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == '(') {
        ++pos_;
        auto n = std::make_unique<ExprNode>();
        n->kind = ExprNode::Kind::call;
        n->name = id;
        n->lhs = parse_sum();
        skip_ws();
        if (!accept(')')) fail("expected ')' after function argument");
        return n;
      }
      auto n = std::make_unique<ExprNode>();
      n->kind = ExprNode::Kind::param;
      n->name = id;
      return n;
    }
    fail(std::string("unexpected character '") + c + "'");
    return nullptr;  // unreachable
  }

  static ExprPtr binary(ExprNode::Kind k, ExprPtr l, ExprPtr r) {
    auto n = std::make_unique<ExprNode>();
    n->kind = k;
    n->lhs = std::move(l);
    n->rhs = std::move(r);
    return n;
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool accept(char c) {
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ExprError("expression '" + s_ + "': " + msg);
  }

  std::string s_;
  size_t pos_ = 0;
};

// Resolve identifiers against a name table; unknown names throw ExprError
// with the offending identifier so config errors point at the right token.
inline void bind_params(ExprNode& n, const std::map<std::string, int>& table) {
  switch (n.kind) {
    case ExprNode::Kind::param: {
      auto it = table.find(n.name);
      if (it == table.end()) throw ExprError("unknown parameter '" + n.name + "'");
      n.param = it->second;
      break;
    }
    case ExprNode::Kind::number:
      break;
    default:
      if (n.lhs) bind_params(*n.lhs, table);
      if (n.rhs) bind_params(*n.rhs, table);
  }
}

inline double eval_expr(const ExprNode& n, const double* params) {
  switch (n.kind) {
    case ExprNode::Kind::number: return n.value;
    case ExprNode::Kind::param:  return params[n.param];
    case ExprNode::Kind::add:    return eval_expr(*n.lhs, params) + eval_expr(*n.rhs, params);
    case ExprNode::Kind::sub:    return eval_expr(*n.lhs, params) - eval_expr(*n.rhs, params);
    case ExprNode::Kind::mul:    return eval_expr(*n.lhs, params) * eval_expr(*n.rhs, params);
    case ExprNode::Kind::div:    return eval_expr(*n.lhs, params) / eval_expr(*n.rhs, params);
    case ExprNode::Kind::pow:    return std::pow(eval_expr(*n.lhs, params), eval_expr(*n.rhs, params));
    case ExprNode::Kind::neg:    return -eval_expr(*n.lhs, params);
    case ExprNode::Kind::call: {
      double a = eval_expr(*n.lhs, params);
      if (n.name == "log") return std::log(a);
      if (n.name == "exp") return std::exp(a);
      if (n.name == "sqrt") return std::sqrt(a);
      if (n.name == "logit") return std::log(a / (1.0 - a));
      if (n.name == "expit") return 1.0 / (1.0 + std::exp(-a));
      throw ExprError("unknown function '" + n.name + "'");
    }
  }
  throw ExprError("corrupt expression node");
}

// Convenience wrapper holding source text + bound AST.
struct Expr {
  std::string text;
  std::shared_ptr<const ExprNode> root;  // immutable once bound, so copies share it

  Expr() = default;
  Expr(const std::string& src, const std::map<std::string, int>& table) { parse(src, table); }

  void parse(const std::string& src, const std::map<std::string, int>& table) {
    text = src;
    ExprPtr ast = ExprParser(src).parse();
    bind_params(*ast, table);
    root = std::move(ast);
  }

  double operator()(const double* params) const { return eval_expr(*root, params); }
  bool empty() const { return !root; }
};

}  // namespace epilna
