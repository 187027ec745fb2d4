#include "sfml/expression.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>

#include "sfml/common.hpp"

namespace sfml {

class ExprParser {
 public:
  ExprParser(const std::string& src, const std::string& var, Expression& out)
      : src_(src), var_(var), out_(out) {}

  void run() {
    out_.root_ = parse_expr();
    skip_ws();
    if (pos_ != src_.size()) fail("unexpected trailing input");
  }

 private:
  using Op = Expression::Op;

  const std::string& src_;
  const std::string& var_;
  Expression& out_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("expression \"" + src_ + "\": " + msg + " at position " +
                      std::to_string(pos_));
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  char peek() {
    skip_ws();
    return pos_ < src_.size() ? src_[pos_] : '\0';
  }

  int add_node(Op op, double value = 0.0, int a = -1, int b = -1) {
    out_.nodes_.push_back({op, value, a, b});
    return static_cast<int>(out_.nodes_.size()) - 1;
  }

  int parse_expr() {
    int lhs = parse_term();
    for (;;) {
      if (eat('+')) {
        lhs = add_node(Op::add, 0.0, lhs, parse_term());
      } else if (eat('-')) {
        lhs = add_node(Op::sub, 0.0, lhs, parse_term());
      } else {
        return lhs;
      }
    }
  }

  int parse_term() {
    int lhs = parse_unary();
    for (;;) {
      if (eat('*')) {
        lhs = add_node(Op::mul, 0.0, lhs, parse_unary());
      } else if (eat('/')) {
        lhs = add_node(Op::div, 0.0, lhs, parse_unary());
      } else {
        return lhs;
      }
    }
  }

  int parse_unary() {
    if (eat('-')) return add_node(Op::neg, 0.0, parse_unary());
    return parse_power();
  }

  int parse_power() {
    int base = parse_primary();
    if (eat('^')) {
      // right associative; exponent may itself be signed
      return add_node(Op::pow, 0.0, base, parse_unary());
    }
    return base;
  }

  int parse_primary() {
    skip_ws();
    if (pos_ >= src_.size()) fail("unexpected end of input");
    const char c = src_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_word();
    if (eat('(')) {
      const int inner = parse_expr();
      if (!eat(')')) fail("expected ')'");
      return inner;
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  int parse_number() {
    const char* begin = src_.c_str() + pos_;
    char* end = nullptr;
    const double value = std::strtod(begin, &end);
    if (end == begin) fail("malformed number");
    pos_ += static_cast<std::size_t>(end - begin);
    return add_node(Op::num, value);
  }

  int parse_word() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      ++pos_;
    }
    const std::string word = src_.substr(start, pos_ - start);
    if (word == var_) return add_node(Op::var);
    if (word == "pi") return add_node(Op::num, 3.14159265358979323846);
    Op fn;
    if (word == "sin") {
      fn = Op::sin;
    } else if (word == "cos") {
      fn = Op::cos;
    } else if (word == "exp") {
      fn = Op::exp;
    } else {
      pos_ = start;
      fail("unknown identifier \"" + word + "\"");
    }
    if (!eat('(')) fail("expected '(' after function name");
    const int arg = parse_expr();
    if (!eat(')')) fail("expected ')'");
    return add_node(fn, 0.0, arg);
  }
};

Expression Expression::parse(const std::string& source, const std::string& var) {
  Expression expr;
  expr.source_ = source;
  ExprParser(source, var, expr).run();
  return expr;
}

double Expression::eval(double x) const {
  // Nodes are appended child-first, so a single forward sweep evaluates the DAG.
  thread_local std::vector<double> stack;
  stack.assign(nodes_.size(), 0.0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    switch (n.op) {
      case Op::num: stack[i] = n.value; break;
      case Op::var: stack[i] = x; break;
      case Op::add: stack[i] = stack[n.a] + stack[n.b]; break;
      case Op::sub: stack[i] = stack[n.a] - stack[n.b]; break;
      case Op::mul: stack[i] = stack[n.a] * stack[n.b]; break;
      case Op::div: stack[i] = stack[n.a] / stack[n.b]; break;
      case Op::neg: stack[i] = -stack[n.a]; break;
      case Op::pow: stack[i] = std::pow(stack[n.a], stack[n.b]); break;
      case Op::sin: stack[i] = std::sin(stack[n.a]); break;
      case Op::cos: stack[i] = std::cos(stack[n.a]); break;
      case Op::exp: stack[i] = std::exp(stack[n.a]); break;
    }
  }
  return root_ >= 0 ? stack[root_] : 0.0;
}

}  // namespace sfml
