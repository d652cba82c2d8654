#pragma once

#include <algorithm>
#include <cctype>
#include <memory>
#include <string>
#include <vector>

#include "sembayes/common.hpp"

namespace sembayes {

/// Arithmetic over named quantities: + - * / unary minus, parentheses and
/// numeric literals. Names may carry a bracketed suffix such as
/// lambda[y2,eta].
class Expression {
 public:
  static Expression parse(const std::string& text) {
    Parser p{text};
    Expression e;
    e.root_ = p.expression();
    p.skip_space();
    if (p.pos != text.size()) p.fail("unexpected '" + std::string(1, text[p.pos]) + "'");
    e.text_ = text;
    collect(*e.root_, e.names_);
    return e;
  }

  const std::string& text() const { return text_; }
  /// Distinct names in order of first appearance.
  const std::vector<std::string>& names() const { return names_; }

  /// values[i] is the value of names()[i].
  double evaluate(const std::vector<double>& values) const { return eval(*root_, values); }

 private:
  struct Node {
    char op = 0;  // '+', '-', '*', '/', 'n' (negate), 'c' (constant), 'v' (variable)
    double value = 0.0;
    std::string name;
    int slot = -1;
    std::unique_ptr<Node> lhs, rhs;
  };

  struct Parser {
    const std::string& s;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& msg) const {
      throw DomainError("expression error at column " + std::to_string(pos + 1) + ": " + msg);
    }
    void skip_space() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    bool accept(char c) {
      skip_space();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }
    std::unique_ptr<Node> binary(char op, std::unique_ptr<Node> l, std::unique_ptr<Node> r) {
      auto n = std::make_unique<Node>();
      n->op = op;
      n->lhs = std::move(l);
      n->rhs = std::move(r);
      return n;
    }
    std::unique_ptr<Node> expression() {
      auto left = term();
      for (;;) {
        if (accept('+')) left = binary('+', std::move(left), term());
        else if (accept('-')) left = binary('-', std::move(left), term());
        else return left;
      }
    }
    std::unique_ptr<Node> term() {
      auto left = unary();
      for (;;) {
        if (accept('*')) left = binary('*', std::move(left), unary());
        else if (accept('/')) left = binary('/', std::move(left), unary());
        else return left;
      }
    }
    std::unique_ptr<Node> unary() {
      if (accept('-')) {
        auto n = std::make_unique<Node>();
        n->op = 'n';
        n->lhs = unary();
        return n;
      }
      if (accept('+')) return unary();
      return primary();
    }
    std::unique_ptr<Node> primary() {
      skip_space();
      if (pos >= s.size()) fail("unexpected end of expression");
      if (accept('(')) {
        auto e = expression();
        if (!accept(')')) fail("expected ')'");
        return e;
      }
      const char c = s[pos];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        std::size_t used = 0;
        double v;
        try {
          v = std::stod(s.substr(pos), &used);
        } catch (const std::exception&) {
          fail("bad number");
        }
        pos += used;
        auto n = std::make_unique<Node>();
        n->op = 'c';
        n->value = v;
        return n;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        const std::size_t start = pos;
        while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
        if (pos < s.size() && s[pos] == '[') {
          const std::size_t close = s.find(']', pos);
          if (close == std::string::npos) fail("unterminated '['");
          pos = close + 1;
        }
        auto n = std::make_unique<Node>();
        n->op = 'v';
        for (char ch : s.substr(start, pos - start))
          if (!std::isspace(static_cast<unsigned char>(ch))) n->name += ch;
        return n;
      }
      fail("unexpected '" + std::string(1, c) + "'");
    }
  };

  static void collect(Node& n, std::vector<std::string>& names) {
    if (n.op == 'v') {
      auto it = std::find(names.begin(), names.end(), n.name);
      n.slot = static_cast<int>(it - names.begin());
      if (it == names.end()) names.push_back(n.name);
    }
    if (n.lhs) collect(*n.lhs, names);
    if (n.rhs) collect(*n.rhs, names);
  }

  static double eval(const Node& n, const std::vector<double>& v) {
    switch (n.op) {
      case 'c': return n.value;
      case 'v': return v.at(static_cast<std::size_t>(n.slot));
      case 'n': return -eval(*n.lhs, v);
      case '+': return eval(*n.lhs, v) + eval(*n.rhs, v);
      case '-': return eval(*n.lhs, v) - eval(*n.rhs, v);
      case '*': return eval(*n.lhs, v) * eval(*n.rhs, v);
      case '/': return eval(*n.lhs, v) / eval(*n.rhs, v);
    }
    return 0.0;
  }

  std::string text_;
  std::shared_ptr<Node> root_;
  std::vector<std::string> names_;
};

}  // namespace sembayes
