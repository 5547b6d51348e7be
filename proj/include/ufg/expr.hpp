#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ufg/errors.hpp"

namespace ufg {

enum class UnaryOp : std::uint8_t { neg, sin, cos, exp, log, sqrt, tanh };
enum class BinaryOp : std::uint8_t { add, sub, mul, div, pow };

inline const char* op_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::neg: return "-";
    case UnaryOp::sin: return "sin";
    case UnaryOp::cos: return "cos";
    case UnaryOp::exp: return "exp";
    case UnaryOp::log: return "log";
    case UnaryOp::sqrt: return "sqrt";
    case UnaryOp::tanh: return "tanh";
  }
  return "?";
}

inline char op_symbol(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return '+';
    case BinaryOp::sub: return '-';
    case BinaryOp::mul: return '*';
    case BinaryOp::div: return '/';
    case BinaryOp::pow: return '^';
  }
  return '?';
}

// Immutable expression tree with shared subtrees.
class Expr {
 public:
  enum class Kind : std::uint8_t { constant, variable, unary, binary };

  Expr() : Expr(constant(0.0)) {}

  static Expr constant(double v) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::constant;
    n->value = v;
    n->hash = mix(0x11, std::bit_cast<std::uint64_t>(v));
    return Expr(std::move(n));
  }

  static Expr variable(int index) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::variable;
    n->index = index;
    n->max_var = index;
    n->hash = mix(0x22, static_cast<std::uint64_t>(index));
    return Expr(std::move(n));
  }

  static Expr unary(UnaryOp op, const Expr& a) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::unary;
    n->uop = op;
    n->a = a.node_;
    n->max_var = a.node_->max_var;
    n->size = 1 + a.node_->size;
    n->hash = mix(mix(0x33, static_cast<std::uint64_t>(op)), a.node_->hash);
    return Expr(std::move(n));
  }

  static Expr binary(BinaryOp op, const Expr& a, const Expr& b) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::binary;
    n->bop = op;
    n->a = a.node_;
    n->b = b.node_;
    n->max_var = std::max(a.node_->max_var, b.node_->max_var);
    n->size = 1 + a.node_->size + b.node_->size;
    n->hash = mix(mix(mix(0x44, static_cast<std::uint64_t>(op)), a.node_->hash),
                  b.node_->hash);
    return Expr(std::move(n));
  }

  Kind kind() const { return node_->kind; }
  double value() const { return node_->value; }
  int index() const { return node_->index; }
  UnaryOp unary_op() const { return node_->uop; }
  BinaryOp binary_op() const { return node_->bop; }
  Expr child() const { return Expr(node_->a); }
  Expr left() const { return Expr(node_->a); }
  Expr right() const { return Expr(node_->b); }

  bool is_constant() const { return node_->kind == Kind::constant; }
  bool is_constant(double v) const { return is_constant() && node_->value == v; }
  bool is_zero() const { return is_constant(0.0); }
  bool is_neg() const { return node_->kind == Kind::unary && node_->uop == UnaryOp::neg; }

  // Largest variable index referenced, -1 for none.
  int max_variable() const { return node_->max_var; }
  std::size_t size() const { return node_->size; }
  std::size_t hash() const { return node_->hash; }
  const void* id() const { return node_.get(); }

  friend bool operator==(const Expr& x, const Expr& y) { return equal(x.node_.get(), y.node_.get()); }

 private:
  struct Node {
    Kind kind = Kind::constant;
    UnaryOp uop = UnaryOp::neg;
    BinaryOp bop = BinaryOp::add;
    double value = 0.0;
    int index = -1;
    int max_var = -1;
    std::size_t size = 1;
    std::size_t hash = 0;
    std::shared_ptr<const Node> a, b;
  };

  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

  static std::size_t mix(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }

  static bool equal(const Node* x, const Node* y) {
    if (x == y) return true;
    if (x->hash != y->hash || x->kind != y->kind || x->size != y->size) return false;
    switch (x->kind) {
      case Kind::constant:
        return std::bit_cast<std::uint64_t>(x->value) == std::bit_cast<std::uint64_t>(y->value);
      case Kind::variable:
        return x->index == y->index;
      case Kind::unary:
        return x->uop == y->uop && equal(x->a.get(), y->a.get());
      case Kind::binary:
        return x->bop == y->bop && equal(x->a.get(), y->a.get()) && equal(x->b.get(), y->b.get());
    }
    return false;
  }

  std::shared_ptr<const Node> node_;
};

struct ExprHash {
  std::size_t operator()(const Expr& e) const { return e.hash(); }
};

inline Expr operator+(const Expr& a, const Expr& b) { return Expr::binary(BinaryOp::add, a, b); }
inline Expr operator-(const Expr& a, const Expr& b) { return Expr::binary(BinaryOp::sub, a, b); }
inline Expr operator*(const Expr& a, const Expr& b) { return Expr::binary(BinaryOp::mul, a, b); }
inline Expr operator/(const Expr& a, const Expr& b) { return Expr::binary(BinaryOp::div, a, b); }
inline Expr operator-(const Expr& a) { return Expr::unary(UnaryOp::neg, a); }
inline Expr operator+(const Expr& a, double b) { return a + Expr::constant(b); }
inline Expr operator-(const Expr& a, double b) { return a - Expr::constant(b); }
inline Expr operator*(double a, const Expr& b) { return Expr::constant(a) * b; }
inline Expr operator/(double a, const Expr& b) { return Expr::constant(a) / b; }

inline Expr sin(const Expr& a) { return Expr::unary(UnaryOp::sin, a); }
inline Expr cos(const Expr& a) { return Expr::unary(UnaryOp::cos, a); }
inline Expr exp(const Expr& a) { return Expr::unary(UnaryOp::exp, a); }
inline Expr log(const Expr& a) { return Expr::unary(UnaryOp::log, a); }
inline Expr sqrt(const Expr& a) { return Expr::unary(UnaryOp::sqrt, a); }
inline Expr tanh(const Expr& a) { return Expr::unary(UnaryOp::tanh, a); }

namespace detail {

inline bool small_integer(double c, int limit = 8) {
  return std::isfinite(c) && c == std::floor(c) && std::fabs(c) <= limit;
}

inline double apply(UnaryOp op, double a) {
  switch (op) {
    case UnaryOp::neg: return -a;
    case UnaryOp::sin: return std::sin(a);
    case UnaryOp::cos: return std::cos(a);
    case UnaryOp::exp: return std::exp(a);
    case UnaryOp::log: return std::log(a);
    case UnaryOp::sqrt: return std::sqrt(a);
    case UnaryOp::tanh: return std::tanh(a);
  }
  return a;
}

inline double apply(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::mul: return a * b;
    case BinaryOp::div: return a / b;
    case BinaryOp::pow: return std::pow(a, b);
  }
  return a;
}

inline std::string format_number(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

// x^c with small integer exponents expanded into products.
inline Expr power(const Expr& base, double c) {
  if (detail::small_integer(c)) {
    int n = static_cast<int>(c);
    if (n == 0) return Expr::constant(1.0);
    Expr p = base;
    for (int i = 1; i < std::abs(n); ++i) p = p * base;
    return n > 0 ? p : Expr::constant(1.0) / p;
  }
  return Expr::binary(BinaryOp::pow, base, Expr::constant(c));
}

inline std::string default_variable_name(int i) { return "x" + std::to_string(i + 1); }

// Canonical printer: every compound node is parenthesized.
inline std::string print(const Expr& e, std::span<const std::string> names = {}) {
  switch (e.kind()) {
    case Expr::Kind::constant:
      return detail::format_number(e.value());
    case Expr::Kind::variable:
      return e.index() < static_cast<int>(names.size()) ? names[e.index()]
                                                        : default_variable_name(e.index());
    case Expr::Kind::unary: {
      Expr c = e.child();
      if (e.unary_op() == UnaryOp::neg) {
        std::string inner = print(c, names);
        if (c.is_constant() || c.is_neg()) inner = "(" + inner + ")";
        return "(-" + inner + ")";
      }
      return std::string(op_name(e.unary_op())) + "(" + print(c, names) + ")";
    }
    case Expr::Kind::binary: {
      std::string r = print(e.right(), names);
      if (e.binary_op() == BinaryOp::pow) r = "(" + r + ")";
      return "(" + print(e.left(), names) + op_symbol(e.binary_op()) + r + ")";
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Parser

namespace detail {

inline bool is_function_name(std::string_view s, UnaryOp& op) {
  static const std::pair<std::string_view, UnaryOp> table[] = {
      {"sin", UnaryOp::sin}, {"cos", UnaryOp::cos},   {"exp", UnaryOp::exp},
      {"log", UnaryOp::log}, {"sqrt", UnaryOp::sqrt}, {"tanh", UnaryOp::tanh}};
  for (const auto& [name, o] : table)
    if (name == s) {
      op = o;
      return true;
    }
  return false;
}

class Parser {
 public:
  Parser(std::string_view text, std::span<const std::string> vars,
         const std::map<std::string, double>& constants)
      : text_(text), vars_(vars), constants_(constants) {}

  Expr parse() {
    skip();
    if (pos_ >= text_.size()) throw ParseError("empty expression", pos_, {"expression"});
    Expr e = expr();
    skip();
    if (pos_ < text_.size())
      throw ParseError(std::string("unexpected '") + text_[pos_] + "'", pos_,
                       {"+", "-", "*", "/", "^", "end of input"});
    return e;
  }

 private:
  void skip() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  char peek() {
    skip();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }
  void expect(char c) {
    if (peek() != c) {
      std::string got = pos_ < text_.size() ? std::string(1, text_[pos_]) : "end of input";
      throw ParseError("expected '" + std::string(1, c) + "' but found '" + got + "'", pos_,
                       {std::string(1, c)});
    }
    ++pos_;
  }

  Expr expr() {
    Expr e = term();
    for (char c = peek(); c == '+' || c == '-'; c = peek()) {
      ++pos_;
      Expr r = term();
      e = c == '+' ? e + r : e - r;
    }
    return e;
  }

  Expr term() {
    Expr e = factor();
    for (char c = peek(); c == '*' || c == '/'; c = peek()) {
      ++pos_;
      Expr r = factor();
      e = c == '*' ? e * r : e / r;
    }
    return e;
  }

  Expr factor() {
    if (peek() != '-') return power();
    ++pos_;
    // A minus sign directly in front of a bare literal is a negative literal.
    std::size_t save = pos_;
    if (starts_number()) {
      double v = number();
      if (peek() != '^') return Expr::constant(-v);
      pos_ = save;
    }
    if (peek() == '-') throw ParseError("repeated unary minus", pos_, {"number", "identifier", "("});
    return -power();
  }

  Expr power() {
    Expr base = atom();
    if (peek() != '^') return base;
    ++pos_;
    std::size_t at = pos_;
    Expr ex = simplify_constant(atom());
    if (!ex.is_constant()) throw ParseError("exponent must be a constant", at, {"number"});
    return ufg::power(base, ex.value());
  }

  static Expr simplify_constant(const Expr& e);

  bool starts_number() {
    char c = peek();
    return std::isdigit(static_cast<unsigned char>(c)) ||
           (c == '.' && pos_ + 1 < text_.size() &&
            std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])));
  }

  double number() {
    std::size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t q = pos_ + 1;
      if (q < text_.size() && (text_[q] == '+' || text_[q] == '-')) ++q;
      if (q < text_.size() && std::isdigit(static_cast<unsigned char>(text_[q]))) {
        pos_ = q;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      }
    }
    double v = 0.0;
    auto r = std::from_chars(text_.data() + start, text_.data() + pos_, v);
    if (r.ec != std::errc() || r.ptr != text_.data() + pos_)
      throw ParseError("malformed number", start, {"number"});
    return v;
  }

  Expr atom() {
    char c = peek();
    if (c == '(') {
      ++pos_;
      Expr e = expr();
      expect(')');
      return e;
    }
    if (starts_number()) return Expr::constant(number());
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
        ++pos_;
      std::string name(text_.substr(start, pos_ - start));
      bool call = peek() == '(';
      UnaryOp op{};
      if (is_function_name(name, op)) {
        if (!call) throw ParseError("function '" + name + "' requires an argument", pos_, {"("});
        ++pos_;
        Expr arg = expr();
        if (peek() == ',')
          throw ParseError("arity mismatch: '" + name + "' takes one argument", pos_, {")"});
        expect(')');
        return Expr::unary(op, arg);
      }
      for (std::size_t i = 0; i < vars_.size(); ++i) {
        if (vars_[i] == name) {
          if (call) throw ParseError("'" + name + "' is a variable, not a function", pos_, {"operator"});
          return Expr::variable(static_cast<int>(i));
        }
      }
      if (auto it = constants_.find(name); it != constants_.end()) {
        if (call) throw ParseError("'" + name + "' is a parameter, not a function", pos_, {"operator"});
        return Expr::constant(it->second);
      }
      if (call) throw ParseError("unknown function '" + name + "'", start, {"sin", "cos", "exp", "log", "sqrt", "tanh"});
      throw ParseError("unknown identifier '" + name + "'", start, {"variable"});
    }
    if (c == '\0') throw ParseError("unexpected end of input", pos_, {"number", "identifier", "("});
    throw ParseError(std::string("unexpected '") + c + "'", pos_, {"number", "identifier", "("});
  }

  std::string_view text_;
  std::span<const std::string> vars_;
  const std::map<std::string, double>& constants_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Expr parse_expression(std::string_view text, std::span<const std::string> variable_names,
                             const std::map<std::string, double>& constants = {}) {
  for (std::size_t i = 0; i < variable_names.size(); ++i)
    for (std::size_t j = i + 1; j < variable_names.size(); ++j)
      if (variable_names[i] == variable_names[j])
        throw ParseError("duplicate variable name '" + variable_names[i] + "'", 0);
  return detail::Parser(text, variable_names, constants).parse();
}

inline Expr parse_expression(std::string_view text, std::initializer_list<std::string> names) {
  std::vector<std::string> v(names);
  return parse_expression(text, std::span<const std::string>(v));
}

// ---------------------------------------------------------------------------
// Simplification. Every rewrite is exact in IEEE arithmetic wherever the
// original evaluates to a finite value.

namespace detail {

inline bool same(const Expr& a, const Expr& b) { return a == b; }

inline Expr simplify_node(const Expr& e);

inline Expr simplify_unary(UnaryOp op, const Expr& a) {
  if (a.is_constant()) {
    double v = apply(op, a.value());
    if (std::isfinite(v) && !(op == UnaryOp::log && a.value() <= 0) &&
        !(op == UnaryOp::sqrt && a.value() < 0))
      return Expr::constant(v);
  }
  if (op == UnaryOp::neg) {
    if (a.is_neg()) return a.child();
    if (a.kind() == Expr::Kind::binary && a.binary_op() == BinaryOp::sub)
      return simplify_node(Expr::binary(BinaryOp::sub, a.right(), a.left()));
  }
  return Expr::unary(op, a);
}

inline Expr simplify_binary(BinaryOp op, const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) {
    double v = apply(op, a.value(), b.value());
    bool ok = std::isfinite(v) && !(op == BinaryOp::div && b.value() == 0.0);
    if (ok) return Expr::constant(v);
  }
  switch (op) {
    case BinaryOp::add:
      if (a.is_zero()) return b;
      if (b.is_zero()) return a;
      if (b.is_neg()) return simplify_binary(BinaryOp::sub, a, b.child());
      if (a.is_neg()) return simplify_binary(BinaryOp::sub, b, a.child());
      break;
    case BinaryOp::sub:
      if (b.is_zero()) return a;
      if (a.is_zero()) return simplify_unary(UnaryOp::neg, b);
      if (same(a, b)) return Expr::constant(0.0);
      if (b.is_neg()) return simplify_binary(BinaryOp::add, a, b.child());
      break;
    case BinaryOp::mul:
      if (a.is_zero() || b.is_zero()) return Expr::constant(0.0);
      if (a.is_constant(1.0)) return b;
      if (b.is_constant(1.0)) return a;
      if (a.is_constant(-1.0)) return simplify_unary(UnaryOp::neg, b);
      if (b.is_constant(-1.0)) return simplify_unary(UnaryOp::neg, a);
      if (a.is_neg() && b.is_neg()) return simplify_binary(BinaryOp::mul, a.child(), b.child());
      if (a.is_neg()) return simplify_unary(UnaryOp::neg, simplify_binary(BinaryOp::mul, a.child(), b));
      if (b.is_neg()) return simplify_unary(UnaryOp::neg, simplify_binary(BinaryOp::mul, a, b.child()));
      // Constants go left; multiplication commutes exactly.
      if (b.is_constant() && !a.is_constant()) return Expr::binary(op, b, a);
      break;
    case BinaryOp::div:
      if (b.is_constant(1.0)) return a;
      if (b.is_constant(-1.0)) return simplify_unary(UnaryOp::neg, a);
      if (a.is_zero() && !b.is_zero()) return Expr::constant(0.0);
      if (a.is_neg()) return simplify_unary(UnaryOp::neg, simplify_binary(BinaryOp::div, a.child(), b));
      if (b.is_neg()) return simplify_unary(UnaryOp::neg, simplify_binary(BinaryOp::div, a, b.child()));
      break;
    case BinaryOp::pow:
      if (b.is_constant(1.0)) return a;
      if (b.is_zero()) return Expr::constant(1.0);
      break;
  }
  return Expr::binary(op, a, b);
}

inline Expr simplify_node(const Expr& e) {
  switch (e.kind()) {
    case Expr::Kind::unary: return simplify_unary(e.unary_op(), e.child());
    case Expr::Kind::binary: return simplify_binary(e.binary_op(), e.left(), e.right());
    default: return e;
  }
}

inline Expr simplify_rec(const Expr& e, std::unordered_map<const void*, Expr>& memo) {
  if (e.kind() == Expr::Kind::constant || e.kind() == Expr::Kind::variable) return e;
  if (auto it = memo.find(e.id()); it != memo.end()) return it->second;
  Expr r;
  if (e.kind() == Expr::Kind::unary)
    r = simplify_unary(e.unary_op(), simplify_rec(e.child(), memo));
  else
    r = simplify_binary(e.binary_op(), simplify_rec(e.left(), memo), simplify_rec(e.right(), memo));
  memo.emplace(e.id(), r);
  return r;
}

inline Expr Parser::simplify_constant(const Expr& e) {
  std::unordered_map<const void*, Expr> memo;
  return simplify_rec(e, memo);
}

}  // namespace detail

inline Expr simplify(const Expr& e) {
  std::unordered_map<const void*, Expr> memo;
  return detail::simplify_rec(e, memo);
}

// ---------------------------------------------------------------------------
// Differentiation

namespace detail {

inline Expr diff_rec(const Expr& e, int i, std::unordered_map<const void*, Expr>& memo) {
  switch (e.kind()) {
    case Expr::Kind::constant: return Expr::constant(0.0);
    case Expr::Kind::variable: return Expr::constant(e.index() == i ? 1.0 : 0.0);
    default: break;
  }
  if (auto it = memo.find(e.id()); it != memo.end()) return it->second;
  Expr r;
  if (e.kind() == Expr::Kind::unary) {
    Expr a = e.child();
    Expr da = diff_rec(a, i, memo);
    if (da.is_zero()) {
      r = Expr::constant(0.0);
    } else {
      switch (e.unary_op()) {
        case UnaryOp::neg: r = -da; break;
        case UnaryOp::sin: r = cos(a) * da; break;
        case UnaryOp::cos: r = -(sin(a) * da); break;
        case UnaryOp::exp: r = e * da; break;
        case UnaryOp::log: r = da / a; break;
        case UnaryOp::sqrt: r = da / (Expr::constant(2.0) * e); break;
        case UnaryOp::tanh: r = (Expr::constant(1.0) - e * e) * da; break;
      }
    }
  } else {
    Expr a = e.left(), b = e.right();
    Expr da = diff_rec(a, i, memo);
    Expr db = diff_rec(b, i, memo);
    switch (e.binary_op()) {
      case BinaryOp::add: r = da + db; break;
      case BinaryOp::sub: r = da - db; break;
      case BinaryOp::mul: r = da * b + a * db; break;
      case BinaryOp::div: r = (da * b - a * db) / (b * b); break;
      case BinaryOp::pow: {
        double c = b.value();
        r = Expr::constant(c) * power(a, c - 1.0) * da;
        break;
      }
    }
  }
  r = simplify(r);
  memo.emplace(e.id(), r);
  return r;
}

}  // namespace detail

inline Expr differentiate(const Expr& e, int var_index) {
  std::unordered_map<const void*, Expr> memo;
  return detail::diff_rec(e, var_index, memo);
}

// ---------------------------------------------------------------------------
// Checked evaluation

namespace detail {

inline double eval_rec(const Expr& e, std::span<const double> x) {
  switch (e.kind()) {
    case Expr::Kind::constant: return e.value();
    case Expr::Kind::variable:
      if (e.index() >= static_cast<int>(x.size()))
        throw DimensionError("variable index " + std::to_string(e.index()) +
                             " outside point of length " + std::to_string(x.size()));
      return x[e.index()];
    case Expr::Kind::unary: {
      double a = eval_rec(e.child(), x);
      if (e.unary_op() == UnaryOp::log && a <= 0) throw DomainError("log of non-positive value", print(e));
      if (e.unary_op() == UnaryOp::sqrt && a < 0) throw DomainError("sqrt of negative value", print(e));
      double v = apply(e.unary_op(), a);
      if (!std::isfinite(v)) throw DomainError("non-finite result", print(e));
      return v;
    }
    case Expr::Kind::binary: {
      double a = eval_rec(e.left(), x);
      double b = eval_rec(e.right(), x);
      if (e.binary_op() == BinaryOp::div && b == 0.0) throw DomainError("division by zero", print(e));
      if (e.binary_op() == BinaryOp::pow) {
        if (a < 0 && b != std::floor(b)) throw DomainError("negative base with non-integer exponent", print(e));
        if (a == 0 && b < 0) throw DomainError("division by zero", print(e));
      }
      double v = apply(e.binary_op(), a, b);
      if (!std::isfinite(v)) throw DomainError("non-finite result", print(e));
      return v;
    }
  }
  return 0.0;
}

}  // namespace detail

inline double evaluate(const Expr& e, std::span<const double> point) { return detail::eval_rec(e, point); }

inline double evaluate(const Expr& e, std::initializer_list<double> point) {
  return detail::eval_rec(e, std::span<const double>(point.begin(), point.size()));
}

// ---------------------------------------------------------------------------
// Compiled evaluation: value-numbered register tape, no domain checks.
// Callers check finiteness and fall back to evaluate() for diagnostics.

class Tape {
 public:
  Tape() = default;

  explicit Tape(std::span<const Expr> outputs) {
    std::unordered_map<const void*, int> by_node;
    std::unordered_map<Key, int, KeyHash> by_key;
    for (const Expr& e : outputs) outputs_.push_back(emit(e, by_node, by_key));
  }

  std::size_t output_count() const { return outputs_.size(); }
  std::size_t instruction_count() const { return code_.size(); }

  void eval(const double* x, double* out) const {
    thread_local std::vector<double> regs;
    if (regs.size() < code_.size()) regs.resize(code_.size());
    double* r = regs.data();
    for (std::size_t k = 0; k < code_.size(); ++k) {
      const Instr& in = code_[k];
      switch (in.op) {
        case Op::konst: r[k] = in.c; break;
        case Op::var: r[k] = x[in.a]; break;
        case Op::neg: r[k] = -r[in.a]; break;
        case Op::sin: r[k] = std::sin(r[in.a]); break;
        case Op::cos: r[k] = std::cos(r[in.a]); break;
        case Op::exp: r[k] = std::exp(r[in.a]); break;
        case Op::log: r[k] = std::log(r[in.a]); break;
        case Op::sqrt: r[k] = std::sqrt(r[in.a]); break;
        case Op::tanh: r[k] = std::tanh(r[in.a]); break;
        case Op::add: r[k] = r[in.a] + r[in.b]; break;
        case Op::sub: r[k] = r[in.a] - r[in.b]; break;
        case Op::mul: r[k] = r[in.a] * r[in.b]; break;
        case Op::div: r[k] = r[in.a] / r[in.b]; break;
        case Op::pow: r[k] = std::pow(r[in.a], r[in.b]); break;
      }
    }
    for (std::size_t j = 0; j < outputs_.size(); ++j) out[j] = r[outputs_[j]];
  }

 private:
  enum class Op : std::uint8_t { konst, var, neg, sin, cos, exp, log, sqrt, tanh, add, sub, mul, div, pow };
  struct Instr {
    Op op;
    int a = -1, b = -1;
    double c = 0.0;
  };
  struct Key {
    Op op;
    int a, b;
    std::uint64_t c;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      std::uint64_t h = static_cast<std::uint64_t>(k.op) * 0x9e3779b97f4a7c15ULL;
      h ^= static_cast<std::uint64_t>(k.a) + 0x7f4a7c15ULL + (h << 6) + (h >> 2);
      h ^= static_cast<std::uint64_t>(k.b) + 0x94d049bbULL + (h << 6) + (h >> 2);
      h ^= k.c + (h << 6) + (h >> 2);
      return static_cast<std::size_t>(h);
    }
  };

  int push(Key key, std::unordered_map<Key, int, KeyHash>& by_key) {
    if (auto it = by_key.find(key); it != by_key.end()) return it->second;
    code_.push_back({key.op, key.a, key.b, std::bit_cast<double>(key.c)});
    int id = static_cast<int>(code_.size()) - 1;
    by_key.emplace(key, id);
    return id;
  }

  int emit(const Expr& e, std::unordered_map<const void*, int>& by_node,
           std::unordered_map<Key, int, KeyHash>& by_key) {
    if (auto it = by_node.find(e.id()); it != by_node.end()) return it->second;
    int id = -1;
    switch (e.kind()) {
      case Expr::Kind::constant:
        id = push({Op::konst, -1, -1, std::bit_cast<std::uint64_t>(e.value())}, by_key);
        break;
      case Expr::Kind::variable:
        id = push({Op::var, e.index(), -1, 0}, by_key);
        break;
      case Expr::Kind::unary: {
        int a = emit(e.child(), by_node, by_key);
        id = push({static_cast<Op>(static_cast<int>(Op::neg) + static_cast<int>(e.unary_op())), a, -1, 0}, by_key);
        break;
      }
      case Expr::Kind::binary: {
        int a = emit(e.left(), by_node, by_key);
        int b = emit(e.right(), by_node, by_key);
        id = push({static_cast<Op>(static_cast<int>(Op::add) + static_cast<int>(e.binary_op())), a, b, 0}, by_key);
        break;
      }
    }
    by_node.emplace(e.id(), id);
    return id;
  }

  std::vector<Instr> code_;
  std::vector<int> outputs_;
};

}  // namespace ufg
