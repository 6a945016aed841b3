#ifndef LFQ_EXPR_HPP
#define LFQ_EXPR_HPP

#include <charconv>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "series.hpp"

namespace lfq {

/** \brief Parse failure with the byte offset and the tokens that would have been accepted. */
struct SyntaxError : std::runtime_error {
  SyntaxError(std::size_t off, std::set<std::string> exp, const std::string& msg)
      : std::runtime_error("SyntaxError at offset " + std::to_string(off) + ": " + msg), offset(off),
        expected(std::move(exp)) {}
  std::size_t offset;
  std::set<std::string> expected;
};

struct UnknownSymbol : std::runtime_error {
  explicit UnknownSymbol(const std::string& n) : std::runtime_error("UnknownSymbol: " + n), name(n) {}
  std::string name;
};

/** \brief Evaluation outside the domain; carries the rendered offending subexpression. */
struct DomainError : std::runtime_error {
  DomainError(const std::string& sub, const std::string& why)
      : std::runtime_error("DomainError in " + sub + ": " + why), subexpression(sub) {}
  std::string subexpression;
};

enum class Op { Num, Var, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Tan, Exp, Log, Sqrt, Sinh, Cosh, Atan };

struct Node;
using Expr = std::shared_ptr<const Node>;

struct Node {
  Op op;
  double num = 0;  // Num
  int var = -1;    // Var: 0..n-1 are x, n..2n-1 are y
  Expr a, b;
};

inline const char* func_name(Op op) {
  switch (op) {
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Tan: return "tan";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Sinh: return "sinh";
    case Op::Cosh: return "cosh";
    case Op::Atan: return "atan";
    default: return nullptr;
  }
}

inline bool is_func(Op op) { return func_name(op) != nullptr; }

namespace mk {
inline Expr num(double v) { return std::make_shared<Node>(Node{Op::Num, v, -1, nullptr, nullptr}); }
inline Expr var(int k) { return std::make_shared<Node>(Node{Op::Var, 0, k, nullptr, nullptr}); }
inline Expr raw(Op op, Expr a, Expr b = nullptr) {
  return std::make_shared<Node>(Node{op, 0, -1, std::move(a), std::move(b)});
}
inline bool is_num(const Expr& e, double v) { return e->op == Op::Num && e->num == v; }

// constructors with constant folding and zero/one elimination only
inline Expr neg(Expr a) {
  if (a->op == Op::Num) return num(-a->num);
  if (a->op == Op::Neg) return a->a;
  return raw(Op::Neg, a);
}
inline Expr add(Expr a, Expr b) {
  if (a->op == Op::Num && b->op == Op::Num) return num(a->num + b->num);
  if (is_num(a, 0)) return b;
  if (is_num(b, 0)) return a;
  return raw(Op::Add, a, b);
}
inline Expr sub(Expr a, Expr b) {
  if (a->op == Op::Num && b->op == Op::Num) return num(a->num - b->num);
  if (is_num(b, 0)) return a;
  if (is_num(a, 0)) return neg(b);
  return raw(Op::Sub, a, b);
}
inline Expr mul(Expr a, Expr b) {
  if (a->op == Op::Num && b->op == Op::Num) return num(a->num * b->num);
  if (is_num(a, 0) || is_num(b, 0)) return num(0);
  if (is_num(a, 1)) return b;
  if (is_num(b, 1)) return a;
  return raw(Op::Mul, a, b);
}
inline Expr div(Expr a, Expr b) {
  if (a->op == Op::Num && b->op == Op::Num && b->num != 0) return num(a->num / b->num);
  if (is_num(a, 0) && !is_num(b, 0)) return num(0);
  if (is_num(b, 1)) return a;
  return raw(Op::Div, a, b);
}
inline Expr pow(Expr a, Expr b) {
  if (is_num(b, 0)) return num(1);
  if (is_num(b, 1)) return a;
  if (a->op == Op::Num && b->op == Op::Num) {
    double r = std::pow(a->num, b->num);
    if (std::isfinite(r)) return num(r);
  }
  return raw(Op::Pow, a, b);
}
inline Expr fn(Op op, Expr a) { return raw(op, a); }
}  // namespace mk

/// coordinate name for storage index k in dimension n
inline std::string coord_name(int k, int n) {
  return (k < n ? "x" : "y") + std::to_string((k < n ? k : k - n) + 1);
}

inline std::string format_number(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/** \brief Render with explicit parentheses around every compound subexpression. */
inline std::string render(const Expr& e, int n) {
  switch (e->op) {
    case Op::Num:
      return e->num < 0 ? "(-" + format_number(-e->num) + ")" : format_number(e->num);
    case Op::Var: return coord_name(e->var, n);
    case Op::Neg: return "(-" + render(e->a, n) + ")";
    case Op::Add: return "(" + render(e->a, n) + " + " + render(e->b, n) + ")";
    case Op::Sub: return "(" + render(e->a, n) + " - " + render(e->b, n) + ")";
    case Op::Mul: return "(" + render(e->a, n) + "*" + render(e->b, n) + ")";
    case Op::Div: return "(" + render(e->a, n) + "/" + render(e->b, n) + ")";
    case Op::Pow: return "(" + render(e->a, n) + "^" + render(e->b, n) + ")";
    default: return std::string(func_name(e->op)) + "(" + render(e->a, n) + ")";
  }
}

inline bool structurally_equal(const Expr& a, const Expr& b) {
  if (a->op != b->op) return false;
  if (a->op == Op::Num) return a->num == b->num;
  if (a->op == Op::Var) return a->var == b->var;
  if (!structurally_equal(a->a, b->a)) return false;
  if (a->b || b->b) return a->b && b->b && structurally_equal(a->b, b->b);
  return true;
}

/// folds negated literals into literals; used to compare round-tripped trees
inline Expr canonical(const Expr& e) {
  switch (e->op) {
    case Op::Num:
    case Op::Var: return e;
    case Op::Neg: {
      Expr a = canonical(e->a);
      return a->op == Op::Num ? mk::num(-a->num) : mk::raw(Op::Neg, a);
    }
    default: return mk::raw(e->op, canonical(e->a), e->b ? canonical(e->b) : nullptr);
  }
}

namespace detail {

class Parser {
 public:
  Parser(const std::string& s, int n) : s_(s), n_(n) {}

  Expr run() {
    if (s_.find_first_not_of(" \t\r\n") == std::string::npos)
      throw SyntaxError(0, {"expression"}, "empty input");
    Expr e = expr();
    skip();
    if (p_ != s_.size()) fail({"+", "-", "*", "/", "^", "end of input"}, "unexpected trailing text");
    return e;
  }

 private:
  [[noreturn]] void fail(std::set<std::string> exp, const std::string& msg) {
    throw SyntaxError(p_, std::move(exp), msg);
  }
  void skip() {
    while (p_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[p_]))) ++p_;
  }
  bool eat(char c) {
    skip();
    if (p_ < s_.size() && s_[p_] == c) {
      ++p_;
      return true;
    }
    return false;
  }

  Expr expr() {
    Expr e = term();
    for (;;) {
      if (eat('+')) e = mk::raw(Op::Add, e, term());
      else if (eat('-')) e = mk::raw(Op::Sub, e, term());
      else return e;
    }
  }
  Expr term() {
    Expr e = unary();
    for (;;) {
      if (eat('*')) e = mk::raw(Op::Mul, e, unary());
      else if (eat('/')) e = mk::raw(Op::Div, e, unary());
      else return e;
    }
  }
  Expr unary() {
    if (eat('-')) return mk::raw(Op::Neg, unary());
    return power();
  }
  // '^' binds tighter than unary minus and groups to the left
  Expr power() {
    Expr e = atom();
    while (eat('^')) e = mk::raw(Op::Pow, e, exponent());
    return e;
  }
  Expr exponent() {
    if (eat('-')) return mk::raw(Op::Neg, exponent());
    return atom();
  }
  Expr atom() {
    skip();
    static const std::set<std::string> starts = {"number", "identifier", "(", "-"};
    if (p_ >= s_.size()) fail(starts, "unexpected end of input");
    char c = s_[p_];
    if (c == '(') {
      ++p_;
      Expr e = expr();
      if (!eat(')')) fail({")", "+", "-", "*", "/", "^"}, "missing closing parenthesis");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return ident();
    fail(starts, std::string("unexpected character '") + c + "'");
  }
  Expr number() {
    std::size_t start = p_;
    while (p_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[p_])) || s_[p_] == '.')) ++p_;
    if (p_ < s_.size() && (s_[p_] == 'e' || s_[p_] == 'E')) {
      std::size_t q = p_ + 1;
      if (q < s_.size() && (s_[q] == '+' || s_[q] == '-')) ++q;
      if (q < s_.size() && std::isdigit(static_cast<unsigned char>(s_[q]))) {
        p_ = q;
        while (p_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[p_]))) ++p_;
      }
    }
    double v = 0;
    auto r = std::from_chars(s_.data() + start, s_.data() + p_, v);
    if (r.ec != std::errc() || r.ptr != s_.data() + p_) {
      p_ = start;
      fail({"number"}, "malformed number");
    }
    return mk::num(v);
  }
  Expr ident() {
    std::size_t start = p_;
    while (p_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[p_])) || s_[p_] == '_')) ++p_;
    std::string name = s_.substr(start, p_ - start);
    static const std::map<std::string, Op> funcs = {
        {"sin", Op::Sin},   {"cos", Op::Cos},   {"tan", Op::Tan},   {"exp", Op::Exp},  {"log", Op::Log},
        {"sqrt", Op::Sqrt}, {"sinh", Op::Sinh}, {"cosh", Op::Cosh}, {"atan", Op::Atan}};
    auto f = funcs.find(name);
    if (f != funcs.end()) {
      if (!eat('(')) fail({"("}, "function name must be followed by '('");
      Expr arg = expr();
      if (!eat(')')) fail({")", "+", "-", "*", "/", "^"}, "missing closing parenthesis");
      return mk::fn(f->second, arg);
    }
    if (name.size() >= 2 && (name[0] == 'x' || name[0] == 'y')) {
      bool digits = name.find_first_not_of("0123456789", 1) == std::string::npos && name[1] != '0';
      if (digits) {
        long k = std::stol(name.substr(1));
        if (k >= 1 && k <= n_) return mk::var(static_cast<int>(name[0] == 'x' ? k - 1 : n_ + k - 1));
      }
    }
    throw UnknownSymbol(name);
  }

  const std::string& s_;
  int n_;
  std::size_t p_ = 0;
};

}  // namespace detail

/** \brief Parse the DSL over coordinates x1..xn, y1..yn. */
inline Expr parse(const std::string& text, int n) {
  if (n < 1) throw std::invalid_argument("dimension n must be positive");
  return detail::Parser(text, n).run();
}

inline Expr differentiate(const Expr& e, int v) {
  using namespace mk;
  switch (e->op) {
    case Op::Num: return num(0);
    case Op::Var: return num(e->var == v ? 1 : 0);
    case Op::Neg: return neg(differentiate(e->a, v));
    case Op::Add: return add(differentiate(e->a, v), differentiate(e->b, v));
    case Op::Sub: return sub(differentiate(e->a, v), differentiate(e->b, v));
    case Op::Mul:
      return add(mul(differentiate(e->a, v), e->b), mul(e->a, differentiate(e->b, v)));
    case Op::Div: {
      Expr da = differentiate(e->a, v), db = differentiate(e->b, v);
      return div(sub(mul(da, e->b), mul(e->a, db)), pow(e->b, num(2)));
    }
    case Op::Pow: {
      Expr da = differentiate(e->a, v), db = differentiate(e->b, v);
      if (db->op == Op::Num && db->num == 0) {
        if (e->b->op == Op::Num) return mul(mul(e->b, pow(e->a, num(e->b->num - 1))), da);
        return mul(mul(e->b, pow(e->a, sub(e->b, num(1)))), da);
      }
      return mul(e, add(mul(db, fn(Op::Log, e->a)), div(mul(e->b, da), e->a)));
    }
    case Op::Sin: return mul(fn(Op::Cos, e->a), differentiate(e->a, v));
    case Op::Cos: return mul(neg(fn(Op::Sin, e->a)), differentiate(e->a, v));
    case Op::Tan: return div(differentiate(e->a, v), pow(fn(Op::Cos, e->a), num(2)));
    case Op::Exp: return mul(e, differentiate(e->a, v));
    case Op::Log: return div(differentiate(e->a, v), e->a);
    case Op::Sqrt: return div(differentiate(e->a, v), mul(num(2), e));
    case Op::Sinh: return mul(fn(Op::Cosh, e->a), differentiate(e->a, v));
    case Op::Cosh: return mul(fn(Op::Sinh, e->a), differentiate(e->a, v));
    case Op::Atan: return div(differentiate(e->a, v), add(num(1), pow(e->a, num(2))));
  }
  return num(0);
}

/// coordinates of a point: the first n entries are x, the next n are y
using Point = std::vector<double>;

namespace detail {

inline double eval_rec(const Expr& e, const Point& u, int n) {
  auto bad = [&](const char* why) -> double { throw DomainError(render(e, n), why); };
  switch (e->op) {
    case Op::Num: return e->num;
    case Op::Var: return u.at(e->var);
    case Op::Neg: return -eval_rec(e->a, u, n);
    case Op::Add: return eval_rec(e->a, u, n) + eval_rec(e->b, u, n);
    case Op::Sub: return eval_rec(e->a, u, n) - eval_rec(e->b, u, n);
    case Op::Mul: return eval_rec(e->a, u, n) * eval_rec(e->b, u, n);
    case Op::Div: {
      double a = eval_rec(e->a, u, n), b = eval_rec(e->b, u, n);
      if (b == 0) return bad("division by zero");
      return a / b;
    }
    case Op::Pow: {
      double a = eval_rec(e->a, u, n), b = eval_rec(e->b, u, n);
      if (a < 0 && std::floor(b) != b) return bad("non-integer power of a negative value");
      if (a == 0 && b < 0) return bad("negative power of zero");
      return std::pow(a, b);
    }
    case Op::Sin: return std::sin(eval_rec(e->a, u, n));
    case Op::Cos: return std::cos(eval_rec(e->a, u, n));
    case Op::Tan: {
      double a = eval_rec(e->a, u, n);
      if (std::cos(a) == 0) return bad("tan at a pole");
      return std::tan(a);
    }
    case Op::Exp: return std::exp(eval_rec(e->a, u, n));
    case Op::Log: {
      double a = eval_rec(e->a, u, n);
      if (!(a > 0)) return bad("log of a non-positive value");
      return std::log(a);
    }
    case Op::Sqrt: {
      double a = eval_rec(e->a, u, n);
      if (a < 0) return bad("sqrt of a negative value");
      return std::sqrt(a);
    }
    case Op::Sinh: return std::sinh(eval_rec(e->a, u, n));
    case Op::Cosh: return std::cosh(eval_rec(e->a, u, n));
    case Op::Atan: return std::atan(eval_rec(e->a, u, n));
  }
  return 0;
}

inline RSeries series_rec(const Expr& e, const std::vector<RSeries>& vars, int n) {
  const RSeries& proto = vars[0];
  try {
    switch (e->op) {
      case Op::Num: return RSeries::constant(proto.basis(), proto.order(), e->num);
      case Op::Var: return vars.at(e->var);
      case Op::Neg: return -series_rec(e->a, vars, n);
      case Op::Add: return series_rec(e->a, vars, n) + series_rec(e->b, vars, n);
      case Op::Sub: return series_rec(e->a, vars, n) - series_rec(e->b, vars, n);
      case Op::Mul: return series_rec(e->a, vars, n) * series_rec(e->b, vars, n);
      case Op::Div: return series_rec(e->a, vars, n) / series_rec(e->b, vars, n);
      case Op::Pow: {
        RSeries a = series_rec(e->a, vars, n);
        RSeries b = series_rec(e->b, vars, n);
        bool const_exp = true;
        for (std::size_t i = 1; i < b.size(); ++i) const_exp = const_exp && b[i] == 0;
        if (const_exp) return sfun::pow(a, b.value());
        return sfun::exp(b * sfun::log(a));
      }
      case Op::Sin: return sfun::sin(series_rec(e->a, vars, n));
      case Op::Cos: return sfun::cos(series_rec(e->a, vars, n));
      case Op::Tan: return sfun::tan(series_rec(e->a, vars, n));
      case Op::Exp: return sfun::exp(series_rec(e->a, vars, n));
      case Op::Log: return sfun::log(series_rec(e->a, vars, n));
      case Op::Sqrt: return sfun::sqrt(series_rec(e->a, vars, n));
      case Op::Sinh: return sfun::sinh(series_rec(e->a, vars, n));
      case Op::Cosh: return sfun::cosh(series_rec(e->a, vars, n));
      case Op::Atan: return sfun::atan(series_rec(e->a, vars, n));
    }
  } catch (const std::domain_error& err) {
    throw DomainError(render(e, n), err.what());
  }
  return proto;
}

}  // namespace detail

inline double evaluate(const Expr& e, const Point& u) {
  int n = static_cast<int>(u.size() / 2);
  for (double x : u)
    if (!std::isfinite(x)) throw std::invalid_argument("point has a non-finite component");
  return detail::eval_rec(e, u, n);
}

/** \brief Taylor expansion of e around u to the given order (exact derivatives). */
inline RSeries to_series(const Expr& e, const Point& u, int order) {
  int dim = static_cast<int>(u.size());
  const MonomialBasis& b = MonomialBasis::get(dim, std::max(order, 0));
  std::vector<RSeries> vars;
  for (int k = 0; k < dim; ++k) vars.push_back(RSeries::variable(b, order, k, u[k]));
  return detail::series_rec(e, vars, dim / 2);
}

/// same, on a caller-supplied basis (so series from different expressions combine)
inline RSeries to_series(const Expr& e, const Point& u, int order, const MonomialBasis& b) {
  std::vector<RSeries> vars;
  for (int k = 0; k < static_cast<int>(u.size()); ++k) vars.push_back(RSeries::variable(b, order, k, u[k]));
  return detail::series_rec(e, vars, static_cast<int>(u.size()) / 2);
}

/** \brief All partial derivatives of total order <= J, keyed by sorted variable lists. */
class Jet {
 public:
  Jet(Point u, int order) : u_(std::move(u)), order_(order) {}
  const Point& point() const { return u_; }
  int order() const { return order_; }
  /// partial derivative along the listed variables (any order of the list)
  double operator()(std::vector<int> vars) const {
    std::sort(vars.begin(), vars.end());
    auto it = values_.find(vars);
    if (it == values_.end()) throw std::out_of_range("jet entry beyond stored order");
    return it->second;
  }
  const std::map<std::vector<int>, double>& entries() const { return values_; }
  void set(std::vector<int> vars, double v) { values_[std::move(vars)] = v; }

 private:
  Point u_;
  int order_;
  std::map<std::vector<int>, double> values_;
};

/** \brief Jet by repeated symbolic differentiation, one derivative tree per sorted multi-index. */
inline Jet jet(const Expr& e, const Point& u, int order) {
  if (order < 0) throw std::invalid_argument("jet order must be non-negative");
  int dim = static_cast<int>(u.size());
  Jet j(u, order);
  std::map<std::vector<int>, Expr> level = {{{}, e}};
  j.set({}, evaluate(e, u));
  for (int d = 1; d <= order; ++d) {
    std::map<std::vector<int>, Expr> next;
    for (auto& [idx, ex] : level) {
      int from = idx.empty() ? 0 : idx.back();
      for (int v = from; v < dim; ++v) {
        auto key = idx;
        key.push_back(v);
        Expr de = differentiate(ex, v);
        j.set(key, evaluate(de, u));
        next.emplace(std::move(key), std::move(de));
      }
    }
    level = std::move(next);
  }
  return j;
}

}  // namespace lfq

#endif
