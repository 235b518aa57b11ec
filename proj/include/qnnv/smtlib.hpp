#pragma once

// SMT-LIB v2 emission. Fixed point maps to QF_BV (two's complement,
// arithmetic-shift products), float32 to QF_FP with RNE, real to QF_LRA.
// Referenced inputs are declared as nondet{i}; every assignment becomes a define-fun.

#include "qnnv/ir.hpp"

#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace qnnv {

inline std::string smt_logic(const Semantics& s)
{
  switch (s.kind) {
  case NumericKind::Fxp: return "QF_BV";
  case NumericKind::Float32: return "QF_FP";
  case NumericKind::Real: return "QF_LRA";
  }
  return "ALL";
}

inline std::string smt_sort(const Semantics& s)
{
  switch (s.kind) {
  case NumericKind::Fxp: return "(_ BitVec " + std::to_string(s.format.total_bits()) + ")";
  case NumericKind::Float32: return "(_ FloatingPoint 8 24)";
  case NumericKind::Real: return "Real";
  }
  return "?";
}

namespace detail {

inline std::string bits_string(std::uint32_t v, int from, int count)
{
  std::string s = "#b";
  for (int i = from + count - 1; i >= from; --i)
    s.push_back((v >> i) & 1u ? '1' : '0');
  return s;
}

inline std::string real_literal(const Rational& v)
{
  auto nat = [](const BigInt& z) { return z.get_str() + ".0"; };
  const BigInt num = abs(v.get_num());
  std::string body = v.get_den() == 1 ? nat(num) : "(/ " + nat(num) + " " + nat(v.get_den()) + ")";
  return sgn(v) < 0 ? "(- " + body + ")" : body;
}

class SmtPrinter
{
public:
  explicit SmtPrinter(const SsaProgram& p) : p_(p), memo_(p.dag.size()) {}

  std::string constant(const Rational& v) const
  {
    const Semantics& s = p_.semantics;
    switch (s.kind) {
    case NumericKind::Fxp: {
      const Rational r = v * Rational(pow2(static_cast<unsigned>(s.format.l)));
      if (!is_integer(r))
        throw Error("smt: constant " + to_string(v) + " is not on the lattice");
      BigInt raw = r.get_num();
      const BigInt m = pow2(static_cast<unsigned>(s.format.total_bits()));
      if (sgn(raw) < 0)
        raw += m;
      return "(_ bv" + raw.get_str() + " " + std::to_string(s.format.total_bits()) + ")";
    }
    case NumericKind::Float32: {
      const float f = rational_to_float(v);
      if (rational_from_double(f) != v)
        throw Error("smt: constant " + to_string(v) + " is not a float32 value");
      const std::uint32_t b = float_bits(f);
      return "(fp " + bits_string(b, 31, 1) + " " + bits_string(b, 23, 8) + " " + bits_string(b, 0, 23) + ")";
    }
    case NumericKind::Real: return real_literal(v);
    }
    return "?";
  }

  std::string term(NodeId id)
  {
    if (!memo_[id].empty())
      return memo_[id];
    const Node& n = p_.dag.node(id);
    std::string r;
    switch (n.op) {
    case Op::Const: r = constant(n.value); break;
    case Op::BoolConst: r = n.flag ? "true" : "false"; break;
    case Op::Input: r = "nondet" + std::to_string(n.index); break;
    case Op::Var: r = p_.assignments.at(n.index).name; break;
    case Op::Add: r = app(add_op(), n.args); break;
    case Op::Mul: r = mul(id, n); break;
    case Op::Ite: r = app("ite", n.args); break;
    case Op::Lt:
    case Op::Le:
    case Op::Gt:
    case Op::Ge:
    case Op::Eq: r = app(cmp_op(n.op), n.args); break;
    case Op::Not: r = app("not", n.args); break;
    case Op::And: r = app("and", n.args); break;
    case Op::Or: r = app("or", n.args); break;
    case Op::Xor: r = app("xor", n.args); break;
    }
    memo_[id] = r;
    return r;
  }

private:
  const SsaProgram& p_;
  std::vector<std::string> memo_;

  std::string app(const std::string& f, const std::vector<NodeId>& args)
  {
    std::string s = "(" + f;
    for (NodeId a : args)
      s += " " + term(a);
    return s + ")";
  }

  std::string add_op() const
  {
    switch (p_.semantics.kind) {
    case NumericKind::Fxp: return "bvadd";
    case NumericKind::Float32: return "fp.add RNE";
    case NumericKind::Real: return "+";
    }
    return "?";
  }

  std::string cmp_op(Op op) const
  {
    static const char* bv[] = {"bvslt", "bvsle", "bvsgt", "bvsge", "="};
    static const char* fp[] = {"fp.lt", "fp.leq", "fp.gt", "fp.geq", "fp.eq"};
    static const char* re[] = {"<", "<=", ">", ">=", "="};
    const int k = static_cast<int>(op) - static_cast<int>(Op::Lt);
    switch (p_.semantics.kind) {
    case NumericKind::Fxp: return bv[k];
    case NumericKind::Float32: return fp[k];
    case NumericKind::Real: return re[k];
    }
    return "?";
  }

  std::string mul(NodeId id, const Node& n)
  {
    const Semantics& s = p_.semantics;
    if (s.kind == NumericKind::Float32)
      return app("fp.mul RNE", n.args);
    if (s.kind == NumericKind::Real)
      return app("*", n.args);
    // Fixed point: exact 2n-bit product, then drop l fraction bits.
    const int w = s.format.total_bits(), l = s.format.l;
    const std::string ext = "(_ sign_extend " + std::to_string(w) + ")";
    const std::string prod = "(bvmul (" + ext + " " + term(n.args[0]) + ") (" + ext + " " + term(n.args[1]) + "))";
    auto extract = [](int hi, int lo, const std::string& x) {
      return "((_ extract " + std::to_string(hi) + " " + std::to_string(lo) + ") " + x + ")";
    };
    if (s.rounding == RoundingMode::TruncateTowardNegInf || l == 0)
      return extract(w + l - 1, l, prod);
    // Nearest, ties toward zero: round up when the dropped part exceeds one
    // half, or equals it and the product is negative.
    const std::string p = "p!" + std::to_string(id);
    const std::string rem = extract(l - 1, 0, p);
    const std::string half = "(_ bv" + pow2(static_cast<unsigned>(l - 1)).get_str() + " " + std::to_string(l) + ")";
    const std::string neg = "(= " + extract(2 * w - 1, 2 * w - 1, p) + " #b1)";
    const std::string up = "(or (bvugt " + rem + " " + half + ") (and (= " + rem + " " + half + ") " + neg + "))";
    const std::string one = "(_ bv1 " + std::to_string(w) + ")", zero = "(_ bv0 " + std::to_string(w) + ")";
    return "(let ((" + p + " " + prod + ")) (bvadd " + extract(w + l - 1, l, p) + " (ite " + up + " " + one + " " + zero +
           ")))";
  }
};

/// Inputs reachable from any assignment, assume, or assert.
inline std::vector<bool> referenced_inputs(const SsaProgram& p)
{
  std::vector<bool> used(p.num_inputs, false), seen(p.dag.size(), false);
  std::vector<NodeId> stack;
  for (const auto& a : p.assignments)
    stack.push_back(a.expr);
  stack.insert(stack.end(), p.assumes.begin(), p.assumes.end());
  stack.insert(stack.end(), p.asserts.begin(), p.asserts.end());
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    if (seen[id])
      continue;
    seen[id] = true;
    const Node& n = p.dag.node(id);
    if (n.op == Op::Input && n.index < used.size())
      used[n.index] = true;
    stack.insert(stack.end(), n.args.begin(), n.args.end());
  }
  return used;
}

} // namespace detail

/// Satisfiable iff some input satisfies every assume and violates an assert.
inline void emit_smtlib(const SsaProgram& p, std::ostream& out)
{
  detail::SmtPrinter pr(p);
  const std::string sort = smt_sort(p.semantics);
  out << "(set-option :produce-models true)\n";
  out << "(set-logic " << smt_logic(p.semantics) << ")\n";
  const auto used = detail::referenced_inputs(p);
  for (std::size_t i = 0; i < p.num_inputs; ++i)
    if (used[i])
      out << "(declare-const nondet" << i << " " << sort << ")\n";
  for (const auto& a : p.assignments) {
    const bool b = p.dag.sort(a.expr) == Sort::Bool;
    out << "(define-fun " << a.name << " () " << (b ? "Bool" : sort) << " " << pr.term(a.expr) << ")\n";
  }
  for (NodeId a : p.assumes)
    out << "(assert " << pr.term(a) << ")\n";
  if (p.asserts.empty())
    out << "(assert false)\n";
  else if (p.asserts.size() == 1)
    out << "(assert (not " << pr.term(p.asserts[0]) << "))\n";
  else {
    out << "(assert (not (and";
    for (NodeId a : p.asserts)
      out << " " << pr.term(a);
    out << ")))\n";
  }
  out << "(check-sat)\n(get-model)\n";
}

inline std::string emit_smtlib(const SsaProgram& p)
{
  std::ostringstream os;
  emit_smtlib(p, os);
  return os.str();
}

} // namespace qnnv
