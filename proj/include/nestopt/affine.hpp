#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nestopt/errors.hpp"

namespace nestopt {

// Quasi-affine index expression: sums of scaled iterators plus constants,
// with floor-division and modulo by compile-time constants. This is the
// full expression language used by bounds, coordinate maps and access maps.
struct AffineExpr {
  enum class Kind { Const, Var, Add, Mul, Div, Mod };

  Kind kind = Kind::Const;
  long long k = 0;         // Const value, or the scalar of Mul/Div/Mod
  std::string var;         // Var only
  std::vector<AffineExpr> args;  // Add children, or the single Mul/Div/Mod child

  static AffineExpr constant(long long c) {
    AffineExpr e;
    e.kind = Kind::Const;
    e.k = c;
    return e;
  }
  static AffineExpr variable(std::string name) {
    AffineExpr e;
    e.kind = Kind::Var;
    e.var = std::move(name);
    return e;
  }
  static AffineExpr sum(std::vector<AffineExpr> terms) {
    if (terms.size() == 1) return terms[0];
    AffineExpr e;
    e.kind = Kind::Add;
    e.args = std::move(terms);
    return e;
  }
  static AffineExpr add(AffineExpr a, AffineExpr b) {
    return sum({std::move(a), std::move(b)});
  }
  static AffineExpr mul(AffineExpr a, long long c) {
    AffineExpr e;
    e.kind = Kind::Mul;
    e.k = c;
    e.args.push_back(std::move(a));
    return e;
  }
  static AffineExpr floordiv(AffineExpr a, long long c) {
    AffineExpr e;
    e.kind = Kind::Div;
    e.k = c;
    e.args.push_back(std::move(a));
    return e;
  }
  static AffineExpr modulo(AffineExpr a, long long c) {
    AffineExpr e;
    e.kind = Kind::Mod;
    e.k = c;
    e.args.push_back(std::move(a));
    return e;
  }

  bool operator==(const AffineExpr& o) const {
    return kind == o.kind && k == o.k && var == o.var && args == o.args;
  }
};

namespace detail {

inline long long floor_div(long long a, long long b) {
  long long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline long long floor_mod(long long a, long long b) {
  return a - floor_div(a, b) * b;
}

}  // namespace detail

inline long long eval(const AffineExpr& e,
                      const std::map<std::string, long long>& env) {
  switch (e.kind) {
    case AffineExpr::Kind::Const:
      return e.k;
    case AffineExpr::Kind::Var: {
      auto it = env.find(e.var);
      if (it == env.end()) throw Error("unbound iterator '" + e.var + "'");
      return it->second;
    }
    case AffineExpr::Kind::Add: {
      long long s = 0;
      for (const auto& a : e.args) s += eval(a, env);
      return s;
    }
    case AffineExpr::Kind::Mul:
      return e.k * eval(e.args[0], env);
    case AffineExpr::Kind::Div:
      return detail::floor_div(eval(e.args[0], env), e.k);
    case AffineExpr::Kind::Mod:
      return detail::floor_mod(eval(e.args[0], env), e.k);
  }
  return 0;
}

// A compiled form with iterator names resolved to value-array slots, for
// fast repeated evaluation inside the enumeration loops.
struct SlotExpr {
  AffineExpr::Kind kind = AffineExpr::Kind::Const;
  long long k = 0;
  int slot = -1;
  std::vector<SlotExpr> args;
};

inline SlotExpr compile_expr(const AffineExpr& e,
                             const std::map<std::string, int>& slots) {
  SlotExpr out;
  out.kind = e.kind;
  out.k = e.k;
  if (e.kind == AffineExpr::Kind::Var) {
    auto it = slots.find(e.var);
    if (it == slots.end()) throw Error("unbound iterator '" + e.var + "'");
    out.slot = it->second;
  }
  out.args.reserve(e.args.size());
  for (const auto& a : e.args) out.args.push_back(compile_expr(a, slots));
  return out;
}

inline long long eval(const SlotExpr& e, const long long* vals) {
  switch (e.kind) {
    case AffineExpr::Kind::Const:
      return e.k;
    case AffineExpr::Kind::Var:
      return vals[e.slot];
    case AffineExpr::Kind::Add: {
      long long s = 0;
      for (const auto& a : e.args) s += eval(a, vals);
      return s;
    }
    case AffineExpr::Kind::Mul:
      return e.k * eval(e.args[0], vals);
    case AffineExpr::Kind::Div:
      return detail::floor_div(eval(e.args[0], vals), e.k);
    case AffineExpr::Kind::Mod:
      return detail::floor_mod(eval(e.args[0], vals), e.k);
  }
  return 0;
}

inline void collect_vars(const AffineExpr& e, std::set<std::string>& out) {
  if (e.kind == AffineExpr::Kind::Var) out.insert(e.var);
  for (const auto& a : e.args) collect_vars(a, out);
}

inline AffineExpr substitute(const AffineExpr& e, const std::string& name,
                             const AffineExpr& repl) {
  if (e.kind == AffineExpr::Kind::Var) return e.var == name ? repl : e;
  AffineExpr out = e;
  for (auto& a : out.args) a = substitute(a, name, repl);
  return out;
}

inline std::string to_string(const AffineExpr& e) {
  auto wrap = [](const AffineExpr& c) {
    std::string s = to_string(c);
    if (c.kind == AffineExpr::Kind::Var || c.kind == AffineExpr::Kind::Const)
      return s;
    return "(" + s + ")";
  };
  switch (e.kind) {
    case AffineExpr::Kind::Const:
      return std::to_string(e.k);
    case AffineExpr::Kind::Var:
      return e.var;
    case AffineExpr::Kind::Mul:
      return std::to_string(e.k) + "*" + wrap(e.args[0]);
    case AffineExpr::Kind::Div:
      return wrap(e.args[0]) + "/" + std::to_string(e.k);
    case AffineExpr::Kind::Mod:
      return wrap(e.args[0]) + "%" + std::to_string(e.k);
    case AffineExpr::Kind::Add: {
      std::string s;
      for (size_t i = 0; i < e.args.size(); ++i) {
        const AffineExpr& t = e.args[i];
        if (i == 0) {
          s = to_string(t);
        } else if (t.kind == AffineExpr::Kind::Const && t.k < 0) {
          s += " - " + std::to_string(-t.k);
        } else {
          s += " + " + to_string(t);
        }
      }
      return s;
    }
  }
  return "";
}

// Inclusive value range, used to justify div/mod rewrites.
struct ValueRange {
  long long lo = 0;
  long long hi = 0;
  bool known = false;
};

using ExtentMap = std::map<std::string, long long>;

inline ValueRange range_of(const AffineExpr& e, const ExtentMap& extents) {
  switch (e.kind) {
    case AffineExpr::Kind::Const:
      return {e.k, e.k, true};
    case AffineExpr::Kind::Var: {
      auto it = extents.find(e.var);
      if (it == extents.end()) return {};
      return {0, it->second - 1, true};
    }
    case AffineExpr::Kind::Add: {
      ValueRange r{0, 0, true};
      for (const auto& a : e.args) {
        ValueRange c = range_of(a, extents);
        if (!c.known) return {};
        r.lo += c.lo;
        r.hi += c.hi;
      }
      return r;
    }
    case AffineExpr::Kind::Mul: {
      ValueRange c = range_of(e.args[0], extents);
      if (!c.known) return {};
      long long a = c.lo * e.k, b = c.hi * e.k;
      return {std::min(a, b), std::max(a, b), true};
    }
    case AffineExpr::Kind::Div: {
      ValueRange c = range_of(e.args[0], extents);
      if (!c.known || e.k <= 0) return {};
      return {detail::floor_div(c.lo, e.k), detail::floor_div(c.hi, e.k), true};
    }
    case AffineExpr::Kind::Mod: {
      if (e.k <= 0) return {};
      ValueRange c = range_of(e.args[0], extents);
      if (c.known && c.lo >= 0 && c.hi < e.k) return c;
      return {0, e.k - 1, true};
    }
  }
  return {};
}

namespace detail {

// A simplified Add is kept as coef*atom terms plus one constant; atoms are
// Var/Div/Mod nodes keyed by their printed form for deterministic ordering.
struct Term {
  long long coef;
  AffineExpr atom;
};

inline AffineExpr make_term(const Term& t) {
  if (t.coef == 1) return t.atom;
  return AffineExpr::mul(t.atom, t.coef);
}

inline AffineExpr rebuild(std::vector<Term> terms, long long cst) {
  std::sort(terms.begin(), terms.end(), [](const Term& a, const Term& b) {
    return to_string(a.atom) < to_string(b.atom);
  });
  std::vector<AffineExpr> parts;
  for (const auto& t : terms)
    if (t.coef != 0) parts.push_back(make_term(t));
  if (cst != 0 || parts.empty()) parts.push_back(AffineExpr::constant(cst));
  return AffineExpr::sum(std::move(parts));
}

}  // namespace detail

inline AffineExpr simplify(const AffineExpr& e, const ExtentMap& extents);

namespace detail {

// Flattens a simplified expression into terms + constant.
inline void flatten(const AffineExpr& e, std::vector<Term>& terms,
                    long long& cst, long long scale = 1) {
  switch (e.kind) {
    case AffineExpr::Kind::Const:
      cst += scale * e.k;
      return;
    case AffineExpr::Kind::Add:
      for (const auto& a : e.args) flatten(a, terms, cst, scale);
      return;
    case AffineExpr::Kind::Mul:
      flatten(e.args[0], terms, cst, scale * e.k);
      return;
    default:
      terms.push_back({scale, e});
      return;
  }
}

inline AffineExpr simplify_add(std::vector<AffineExpr> children,
                               const ExtentMap& extents) {
  std::vector<Term> raw;
  long long cst = 0;
  for (const auto& c : children) flatten(c, raw, cst);

  // Combine like atoms.
  std::vector<Term> terms;
  for (const auto& t : raw) {
    bool merged = false;
    for (auto& u : terms) {
      if (u.atom == t.atom) {
        u.coef += t.coef;
        merged = true;
        break;
      }
    }
    if (!merged) terms.push_back(t);
  }

  // Recombine c*(E/c) + (E%c) -> E.
  for (size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].atom.kind != AffineExpr::Kind::Div) continue;
    long long c = terms[i].atom.k;
    for (size_t j = 0; j < terms.size(); ++j) {
      if (i == j || terms[j].atom.kind != AffineExpr::Kind::Mod) continue;
      if (terms[j].atom.k != c || !(terms[j].atom.args[0] == terms[i].atom.args[0]))
        continue;
      long long t = terms[j].coef;
      if (t == 0 || terms[i].coef != t * c) continue;
      AffineExpr inner = terms[i].atom.args[0];
      terms[i].coef = 0;
      terms[j].coef = 0;
      std::vector<Term> extra;
      long long icst = 0;
      flatten(simplify(inner, extents), extra, icst, t);
      cst += icst;
      for (const auto& x : extra) {
        bool merged = false;
        for (auto& u : terms)
          if (u.atom == x.atom) {
            u.coef += x.coef;
            merged = true;
            break;
          }
        if (!merged) terms.push_back(x);
      }
      i = static_cast<size_t>(-1);  // restart scan
      break;
    }
  }
  terms.erase(std::remove_if(terms.begin(), terms.end(),
                             [](const Term& t) { return t.coef == 0; }),
              terms.end());
  if (terms.empty()) return AffineExpr::constant(cst);
  if (terms.size() == 1 && cst == 0) return make_term(terms[0]);
  return rebuild(std::move(terms), cst);
}

}  // namespace detail

inline AffineExpr simplify(const AffineExpr& e, const ExtentMap& extents) {
  using K = AffineExpr::Kind;
  switch (e.kind) {
    case K::Const:
    case K::Var:
      return e;
    case K::Add: {
      std::vector<AffineExpr> ch;
      ch.reserve(e.args.size());
      for (const auto& a : e.args) ch.push_back(simplify(a, extents));
      return detail::simplify_add(std::move(ch), extents);
    }
    case K::Mul: {
      AffineExpr c = simplify(e.args[0], extents);
      if (e.k == 0) return AffineExpr::constant(0);
      if (e.k == 1) return c;
      if (c.kind == K::Const) return AffineExpr::constant(e.k * c.k);
      return detail::simplify_add({AffineExpr::mul(std::move(c), e.k)}, extents);
    }
    case K::Div: {
      AffineExpr c = simplify(e.args[0], extents);
      long long d = e.k;
      if (d == 1) return c;
      if (c.kind == K::Const) return AffineExpr::constant(detail::floor_div(c.k, d));
      if (c.kind == K::Div) return simplify(AffineExpr::floordiv(c.args[0], c.k * d), extents);
      ValueRange r = range_of(c, extents);
      if (r.known && r.lo >= 0 && r.hi < d) return AffineExpr::constant(0);
      // Peel off terms that are exact multiples of d.
      std::vector<detail::Term> terms;
      long long cst = 0;
      detail::flatten(c, terms, cst);
      std::vector<detail::Term> quot, rem;
      long long rem_cst = cst;
      long long quot_cst = 0;
      if (cst % d == 0) {
        quot_cst = cst / d;
        rem_cst = 0;
      }
      for (const auto& t : terms) {
        if (t.coef % d == 0)
          quot.push_back({t.coef / d, t.atom});
        else
          rem.push_back(t);
      }
      if (!quot.empty() || rem_cst != cst) {
        AffineExpr r_expr = detail::rebuild(rem, rem_cst);
        ValueRange rr = range_of(r_expr, extents);
        if (rr.known && rr.lo >= 0 && rr.hi < d) {
          return detail::simplify_add({detail::rebuild(std::move(quot), quot_cst)},
                                      extents);
        }
      }
      return AffineExpr::floordiv(std::move(c), d);
    }
    case K::Mod: {
      AffineExpr c = simplify(e.args[0], extents);
      long long m = e.k;
      if (m == 1) return AffineExpr::constant(0);
      if (c.kind == K::Const) return AffineExpr::constant(detail::floor_mod(c.k, m));
      ValueRange r = range_of(c, extents);
      if (r.known && r.lo >= 0 && r.hi < m) return c;
      // Drop terms that vanish modulo m.
      std::vector<detail::Term> terms;
      long long cst = 0;
      detail::flatten(c, terms, cst);
      std::vector<detail::Term> rem;
      long long rem_cst = cst % m == 0 ? 0 : cst;
      bool dropped = (cst % m == 0 && cst != 0);
      for (const auto& t : terms) {
        if (t.coef % m == 0)
          dropped = true;
        else
          rem.push_back(t);
      }
      if (dropped) {
        AffineExpr r_expr = detail::rebuild(std::move(rem), rem_cst);
        ValueRange rr = range_of(r_expr, extents);
        if (rr.known && rr.lo >= 0 && rr.hi < m)
          return detail::simplify_add({std::move(r_expr)}, extents);
      }
      return AffineExpr::modulo(std::move(c), m);
    }
  }
  return e;
}

}  // namespace nestopt
