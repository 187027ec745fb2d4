#pragma once

#include <string>
#include <vector>

namespace sfml {

/// Parsed scalar expression in one variable. The grammar is deliberately
/// small: numbers, the variable name, `pi`, `+ - * / ^`, unary minus,
/// parentheses, and the functions sin/cos/exp. Enough to write signals like
/// `0.5*sin(6*t)` or `0.1*exp(cos(pi*t))` in a config file.
class Expression {
 public:
  /// Parses `source`; `var` is the variable name (default "t").
  /// Throws ConfigError with a position on malformed input.
  static Expression parse(const std::string& source, const std::string& var = "t");

  double eval(double x) const;
  const std::string& source() const { return source_; }

 private:
  enum class Op : unsigned char { num, var, add, sub, mul, div, neg, pow, sin, cos, exp };
  struct Node {
    Op op;
    double value = 0.0;  // for num
    int a = -1, b = -1;  // child indices
  };
  std::vector<Node> nodes_;
  int root_ = -1;
  std::string source_;

  friend class ExprParser;
};

}  // namespace sfml
