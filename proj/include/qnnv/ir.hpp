#pragma once

// Hash-consed expression DAG and the SSA program built on it.
//
// Numeric nodes take their meaning from the program's Semantics: Add and Mul
// are wrap-around fixed-point, binary32 round-to-nearest-even, or exact
// rational operations. Constants always hold the exact value of a
// representable number. Var(i) refers to assignment i of the program.

#include "qnnv/domains.hpp"
#include "qnnv/error.hpp"
#include "qnnv/property.hpp"
#include "qnnv/rational.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace qnnv {

using NodeId = std::uint32_t;

enum class Op : std::uint8_t
{
  Const,
  BoolConst,
  Input,
  Var,
  Add,
  Mul,
  Ite,
  Lt,
  Le,
  Gt,
  Ge,
  Eq,
  And,
  Or,
  Not,
  Xor,
};

enum class Sort : std::uint8_t
{
  Num,
  Bool,
};

inline bool is_comparison(Op op) { return op >= Op::Lt && op <= Op::Eq; }

inline CmpOp to_cmp(Op op)
{
  switch (op) {
  case Op::Lt: return CmpOp::Lt;
  case Op::Le: return CmpOp::Le;
  case Op::Gt: return CmpOp::Gt;
  case Op::Ge: return CmpOp::Ge;
  default: return CmpOp::Eq;
  }
}

inline Op from_cmp(CmpOp c)
{
  switch (c) {
  case CmpOp::Lt: return Op::Lt;
  case CmpOp::Le: return Op::Le;
  case CmpOp::Gt: return Op::Gt;
  case CmpOp::Ge: return Op::Ge;
  case CmpOp::Eq: return Op::Eq;
  }
  return Op::Eq;
}

struct Node
{
  Op op = Op::Const;
  Sort sort = Sort::Num;
  std::vector<NodeId> args;
  Rational value;        ///< Const
  bool flag = false;     ///< BoolConst
  std::size_t index = 0; ///< Input, Var
};

class ExprDag
{
public:
  NodeId constant(const Rational& v)
  {
    Node n;
    n.op = Op::Const;
    n.value = v;
    n.value.canonicalize();
    return intern(std::move(n));
  }

  NodeId boolean(bool b)
  {
    Node n;
    n.op = Op::BoolConst;
    n.sort = Sort::Bool;
    n.flag = b;
    return intern(std::move(n));
  }

  NodeId input(std::size_t i)
  {
    Node n;
    n.op = Op::Input;
    n.index = i;
    return intern(std::move(n));
  }

  NodeId var(std::size_t assignment, Sort s)
  {
    Node n;
    n.op = Op::Var;
    n.sort = s;
    n.index = assignment;
    return intern(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) { return make(Op::Add, {a, b}); }
  NodeId mul(NodeId a, NodeId b) { return make(Op::Mul, {a, b}); }
  NodeId ite(NodeId c, NodeId t, NodeId e) { return make(Op::Ite, {c, t, e}); }
  NodeId cmp(CmpOp op, NodeId a, NodeId b) { return make(from_cmp(op), {a, b}); }
  NodeId lnot(NodeId a) { return make(Op::Not, {a}); }

  NodeId land(std::vector<NodeId> xs) { return junction(Op::And, std::move(xs), true); }
  NodeId lor(std::vector<NodeId> xs) { return junction(Op::Or, std::move(xs), false); }
  NodeId lxor(std::vector<NodeId> xs)
  {
    if (xs.empty())
      return boolean(false);
    return xs.size() == 1 ? xs[0] : make(Op::Xor, std::move(xs));
  }

  /// Structural constructor with sort checking; no simplification.
  NodeId make(Op op, std::vector<NodeId> args)
  {
    Node n;
    n.op = op;
    auto need = [&](std::size_t k) {
      if (args.size() != k)
        throw Error("ir: wrong operand count");
    };
    auto all = [&](Sort s) {
      for (NodeId a : args)
        if (sort(a) != s)
          throw Error("ir: operand sort mismatch");
    };
    switch (op) {
    case Op::Add:
    case Op::Mul:
      need(2);
      all(Sort::Num);
      n.sort = Sort::Num;
      break;
    case Op::Ite:
      need(3);
      if (sort(args[0]) != Sort::Bool || sort(args[1]) != sort(args[2]))
        throw Error("ir: ite sort mismatch");
      n.sort = sort(args[1]);
      break;
    case Op::Lt:
    case Op::Le:
    case Op::Gt:
    case Op::Ge:
    case Op::Eq:
      need(2);
      all(Sort::Num);
      n.sort = Sort::Bool;
      break;
    case Op::Not:
      need(1);
      all(Sort::Bool);
      n.sort = Sort::Bool;
      break;
    case Op::And:
    case Op::Or:
    case Op::Xor:
      if (args.size() < 2)
        throw Error("ir: junction needs two operands");
      all(Sort::Bool);
      n.sort = Sort::Bool;
      break;
    default: throw Error("ir: make() is for operators only");
    }
    n.args = std::move(args);
    return intern(std::move(n));
  }

  const Node& node(NodeId id) const { return nodes_.at(id); }
  Sort sort(NodeId id) const { return nodes_.at(id).sort; }
  std::size_t size() const { return nodes_.size(); }

private:
  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> index_;

  NodeId junction(Op op, std::vector<NodeId> xs, bool unit)
  {
    if (xs.empty())
      return boolean(unit);
    return xs.size() == 1 ? xs[0] : make(op, std::move(xs));
  }

  static std::string key(const Node& n)
  {
    std::string k;
    k.push_back(static_cast<char>('A' + static_cast<int>(n.op)));
    k.push_back(n.sort == Sort::Bool ? 'b' : 'n');
    switch (n.op) {
    case Op::Const: k += n.value.get_str(); break;
    case Op::BoolConst: k += n.flag ? "1" : "0"; break;
    case Op::Input:
    case Op::Var: k += std::to_string(n.index); break;
    default:
      for (NodeId a : n.args) {
        k += std::to_string(a);
        k.push_back(',');
      }
    }
    return k;
  }

  NodeId intern(Node n)
  {
    std::string k = key(n);
    auto it = index_.find(k);
    if (it != index_.end())
      return it->second;
    const auto id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(std::move(n));
    index_.emplace(std::move(k), id);
    return id;
  }
};

enum class VarRole : std::uint8_t
{
  Input,
  PreActivation,
  PostActivation,
  Other,
};

struct Assignment
{
  std::string name;
  NodeId expr = 0;
  VarRole role = VarRole::Other;
  std::size_t layer = 0;  ///< neurons only
  std::size_t neuron = 0; ///< neuron index, or input index for inputs
};

struct SsaProgram
{
  Semantics semantics;
  ExprDag dag;
  std::vector<Assignment> assignments;
  std::vector<NodeId> assumes;
  std::vector<NodeId> asserts;
  std::size_t num_inputs = 0;
  std::size_t discharged_asserts = 0; ///< conjuncts proven by intervals at lowering

  /// Distinct nodes reachable from assignments, assumes and asserts.
  std::size_t node_count() const
  {
    std::vector<bool> seen(dag.size(), false);
    std::size_t count = 0;
    std::vector<NodeId> stack;
    auto push = [&](NodeId id) {
      if (!seen[id]) {
        seen[id] = true;
        ++count;
        stack.push_back(id);
      }
    };
    for (const auto& a : assignments)
      push(a.expr);
    for (NodeId id : assumes)
      push(id);
    for (NodeId id : asserts)
      push(id);
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      for (NodeId c : dag.node(id).args)
        push(c);
    }
    return count;
  }

  /// Assignment index for input i (inputs are never propagated away).
  std::optional<std::size_t> input_assignment(std::size_t i) const
  {
    for (std::size_t k = 0; k < assignments.size(); ++k)
      if (assignments[k].role == VarRole::Input && assignments[k].neuron == i)
        return k;
    return std::nullopt;
  }
};

// Printing -----------------------------------------------------------------

/// Exact decimal for dyadic rationals, p/q otherwise.
inline std::string exact_decimal(const Rational& v)
{
  BigInt den = v.get_den();
  unsigned twos = 0;
  while (mpz_even_p(den.get_mpz_t())) {
    den >>= 1;
    ++twos;
  }
  if (den != 1)
    return v.get_str();
  BigInt scaled = v.get_num();
  BigInt five = 1;
  for (unsigned i = 0; i < twos; ++i)
    five *= 5;
  scaled *= five; // value * 10^twos
  const bool neg = sgn(scaled) < 0;
  std::string digits = BigInt(abs(scaled)).get_str();
  if (twos > 0) {
    if (digits.size() <= twos)
      digits.insert(0, twos - digits.size() + 1, '0');
    digits.insert(digits.size() - twos, ".");
  }
  return neg ? "-" + digits : digits;
}

inline std::string infix(const SsaProgram& p, NodeId id)
{
  const Node& n = p.dag.node(id);
  auto sub = [&](std::size_t i) { return infix(p, n.args[i]); };
  switch (n.op) {
  case Op::Const: return exact_decimal(n.value);
  case Op::BoolConst: return n.flag ? "true" : "false";
  case Op::Input: return "nondet_symbol(nondet" + std::to_string(n.index) + ")";
  case Op::Var: return p.assignments.at(n.index).name;
  case Op::Add: return sub(0) + " + " + sub(1);
  case Op::Mul: {
    auto wrap = [&](std::size_t i) {
      Op o = p.dag.node(n.args[i]).op;
      return o == Op::Add || o == Op::Ite ? "(" + sub(i) + ")" : sub(i);
    };
    return wrap(0) + " * " + wrap(1);
  }
  case Op::Ite: return "(" + sub(0) + " ? " + sub(1) + " : " + sub(2) + ")";
  case Op::Lt:
  case Op::Le:
  case Op::Gt:
  case Op::Ge:
  case Op::Eq: return sub(0) + " " + std::string(cmp_symbol(to_cmp(n.op))) + " " + sub(1);
  case Op::Not: return "!(" + sub(0) + ")";
  case Op::And:
  case Op::Or:
  case Op::Xor: {
    const char* sep = n.op == Op::And ? " && " : n.op == Op::Or ? " || " : " ^ ";
    std::string s = "(";
    for (std::size_t i = 0; i < n.args.size(); ++i)
      s += (i ? sep : "") + sub(i);
    return s + ")";
  }
  }
  return "?";
}

/// Textual SSA listing: "name == expr" lines, then assumes and asserts.
inline void dump_ssa(const SsaProgram& p, std::ostream& out)
{
  for (const auto& a : p.assignments)
    out << a.name << " == " << infix(p, a.expr) << "\n";
  for (NodeId id : p.assumes)
    out << "(assume) " << infix(p, id) << "\n";
  for (NodeId id : p.asserts)
    out << "(assert) " << infix(p, id) << "\n";
}

inline std::string dump_ssa(const SsaProgram& p)
{
  std::ostringstream os;
  dump_ssa(p, os);
  return os.str();
}

inline void dump_dot(const SsaProgram& p, std::ostream& out)
{
  out << "digraph ssa {\n  node [fontname=\"monospace\"];\n";
  std::vector<bool> seen(p.dag.size(), false);
  std::function<void(NodeId)> visit = [&](NodeId id) {
    if (seen[id])
      return;
    seen[id] = true;
    const Node& n = p.dag.node(id);
    std::string label;
    switch (n.op) {
    case Op::Const: label = exact_decimal(n.value); break;
    case Op::BoolConst: label = n.flag ? "true" : "false"; break;
    case Op::Input: label = "nondet" + std::to_string(n.index); break;
    case Op::Var: label = p.assignments.at(n.index).name; break;
    case Op::Add: label = "+"; break;
    case Op::Mul: label = "*"; break;
    case Op::Ite: label = "ite"; break;
    case Op::Not: label = "not"; break;
    case Op::And: label = "and"; break;
    case Op::Or: label = "or"; break;
    case Op::Xor: label = "xor"; break;
    default: label = std::string(cmp_symbol(to_cmp(n.op)));
    }
    out << "  n" << id << " [label=\"" << label << "\"];\n";
    for (NodeId c : n.args) {
      out << "  n" << id << " -> n" << c << ";\n";
      visit(c);
    }
  };
  for (std::size_t i = 0; i < p.assignments.size(); ++i) {
    out << "  a" << i << " [shape=box,label=\"" << p.assignments[i].name << "\"];\n";
    out << "  a" << i << " -> n" << p.assignments[i].expr << ";\n";
    visit(p.assignments[i].expr);
  }
  for (std::size_t i = 0; i < p.assumes.size(); ++i) {
    out << "  assume" << i << " [shape=house];\n  assume" << i << " -> n" << p.assumes[i] << ";\n";
    visit(p.assumes[i]);
  }
  for (std::size_t i = 0; i < p.asserts.size(); ++i) {
    out << "  assert" << i << " [shape=invhouse];\n  assert" << i << " -> n" << p.asserts[i] << ";\n";
    visit(p.asserts[i]);
  }
  out << "}\n";
}

// Interpretation -------------------------------------------------------------

/// Valuation of a program for one input assignment, in exact values. Empty
/// optionals stand for NaN.
struct ProgramValuation
{
  std::vector<std::variant<bool, std::optional<Rational>>> assignments;
  std::vector<bool> assumes;
  std::vector<bool> asserts;

  bool assumes_hold() const
  {
    for (bool b : assumes)
      if (!b)
        return false;
    return true;
  }

  bool asserts_hold() const
  {
    for (bool b : asserts)
      if (!b)
        return false;
    return true;
  }

  std::optional<Rational> number(std::size_t assignment) const
  {
    return std::get<std::optional<Rational>>(assignments.at(assignment));
  }
};

namespace detail {

template <class D>
class Interpreter
{
public:
  using V = typename D::Value;
  using Cell = std::variant<bool, V>;

  Interpreter(const SsaProgram& p, D& dom, const std::vector<V>& inputs)
    : p_(p), dom_(dom), inputs_(inputs), memo_(p.dag.size()), assigned_(p.assignments.size())
  {}

  ProgramValuation run()
  {
    ProgramValuation out;
    for (std::size_t i = 0; i < p_.assignments.size(); ++i) {
      assigned_[i] = eval(p_.assignments[i].expr);
      const Cell& c = *assigned_[i];
      if (std::holds_alternative<bool>(c))
        out.assignments.emplace_back(std::get<bool>(c));
      else
        out.assignments.emplace_back(dom_.exact(std::get<V>(c)));
    }
    for (NodeId id : p_.assumes)
      out.assumes.push_back(std::get<bool>(eval(id)));
    for (NodeId id : p_.asserts)
      out.asserts.push_back(std::get<bool>(eval(id)));
    return out;
  }

private:
  const SsaProgram& p_;
  D& dom_;
  const std::vector<V>& inputs_;
  std::vector<std::optional<Cell>> memo_;
  std::vector<std::optional<Cell>> assigned_;

  V num(NodeId id) { return std::get<V>(eval(id)); }
  bool truth(NodeId id) { return std::get<bool>(eval(id)); }

  Cell eval(NodeId id)
  {
    if (memo_[id])
      return *memo_[id];
    const Node& n = p_.dag.node(id);
    Cell r;
    switch (n.op) {
    case Op::Const: r = dom_.from_exact(n.value); break;
    case Op::BoolConst: r = n.flag; break;
    case Op::Input: r = inputs_.at(n.index); break;
    case Op::Var:
      if (!assigned_.at(n.index))
        throw Error("ir: variable used before its assignment");
      r = *assigned_[n.index];
      break;
    case Op::Add: r = dom_.add(num(n.args[0]), num(n.args[1])); break;
    case Op::Mul: r = dom_.mul(num(n.args[0]), num(n.args[1])); break;
    case Op::Ite: r = truth(n.args[0]) ? eval(n.args[1]) : eval(n.args[2]); break;
    case Op::Lt:
    case Op::Le:
    case Op::Gt:
    case Op::Ge:
    case Op::Eq: r = D::compare_values(num(n.args[0]), to_cmp(n.op), num(n.args[1])); break;
    case Op::Not: r = !truth(n.args[0]); break;
    case Op::And: {
      bool b = true;
      for (NodeId a : n.args)
        b = truth(a) && b;
      r = b;
      break;
    }
    case Op::Or: {
      bool b = false;
      for (NodeId a : n.args)
        b = truth(a) || b;
      r = b;
      break;
    }
    case Op::Xor: {
      bool b = false;
      for (NodeId a : n.args)
        b = b != truth(a);
      r = b;
      break;
    }
    }
    memo_[id] = r;
    return r;
  }
};

} // namespace detail

/// Evaluates the program on inputs given as exact values (already in the
/// program's value domain, e.g. multiples of 2^-l in fixed point).
inline ProgramValuation interpret(const SsaProgram& p, const std::vector<Rational>& inputs, const TableSet* tables = nullptr)
{
  if (inputs.size() != p.num_inputs)
    throw DimensionError("interpret: program has " + std::to_string(p.num_inputs) + " inputs, got " +
                         std::to_string(inputs.size()));
  auto go = [&](auto dom) {
    std::vector<typename decltype(dom)::Value> in;
    for (const auto& v : inputs)
      in.push_back(dom.from_exact(v));
    detail::Interpreter<decltype(dom)> it(p, dom, in);
    return it.run();
  };
  switch (p.semantics.kind) {
  case NumericKind::Real: return go(RealDomain(tables));
  case NumericKind::Float32: return go(Float32Domain(tables));
  case NumericKind::Fxp: return go(FxpDomain(p.semantics, tables));
  }
  throw Error("unknown semantics");
}

} // namespace qnnv
