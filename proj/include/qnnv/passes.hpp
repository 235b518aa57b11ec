#pragma once

// Program transformations. Each pass returns a new program with a freshly
// built DAG; the input program is left untouched.

#include "qnnv/domains.hpp"
#include "qnnv/ir.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <vector>

namespace qnnv {

namespace detail {

/// Rebuilds every root of `src` into a new program. `rebuild(dag, node,
/// args)` receives the already rewritten children and returns the new node.
/// Var nodes go through `var_map`.
class Rewriter
{
public:
  using Rule = std::function<NodeId(SsaProgram& out, const Node& n, std::vector<NodeId> args)>;

  Rewriter(const SsaProgram& src, Rule rule) : src_(src), rule_(std::move(rule)) {}

  SsaProgram& out() { return out_; }

  void begin()
  {
    out_.semantics = src_.semantics;
    out_.num_inputs = src_.num_inputs;
    out_.discharged_asserts = src_.discharged_asserts;
    memo_.assign(src_.dag.size(), std::nullopt);
    var_map_.assign(src_.assignments.size(), std::nullopt);
  }

  NodeId rewrite(NodeId id)
  {
    if (memo_[id])
      return *memo_[id];
    const Node& n = src_.dag.node(id);
    NodeId r;
    switch (n.op) {
    case Op::Const: r = out_.dag.constant(n.value); break;
    case Op::BoolConst: r = out_.dag.boolean(n.flag); break;
    case Op::Input: r = out_.dag.input(n.index); break;
    case Op::Var:
      if (!var_map_.at(n.index))
        throw Error("pass: variable " + src_.assignments[n.index].name + " has no definition");
      r = *var_map_[n.index];
      break;
    default: {
      std::vector<NodeId> args;
      for (NodeId a : n.args)
        args.push_back(rewrite(a));
      r = rule_(out_, n, std::move(args));
    }
    }
    memo_[id] = r;
    return r;
  }

  void bind(std::size_t old_index, NodeId replacement) { var_map_[old_index] = replacement; }

  /// Keeps assignment `i` under its name and binds it to the new Var.
  void keep(std::size_t i, NodeId expr)
  {
    Assignment a = src_.assignments[i];
    a.expr = expr;
    out_.assignments.push_back(a);
    bind(i, out_.dag.var(out_.assignments.size() - 1, out_.dag.sort(expr)));
  }

private:
  const SsaProgram& src_;
  Rule rule_;
  SsaProgram out_;
  std::vector<std::optional<NodeId>> memo_;
  std::vector<std::optional<NodeId>> var_map_;
};

inline NodeId structural(SsaProgram& out, const Node& n, std::vector<NodeId> args) { return out.dag.make(n.op, std::move(args)); }

/// Exact result of a constant operation in the program's semantics.
inline Rational fold_arith(const Semantics& sem, Op op, const Rational& a, const Rational& b)
{
  auto go = [&](auto dom) {
    auto x = dom.from_exact(a), y = dom.from_exact(b);
    auto r = op == Op::Add ? dom.add(x, y) : dom.mul(x, y);
    auto e = dom.exact(r);
    if (!e)
      throw Error("constant folding produced NaN");
    return *e;
  };
  switch (sem.kind) {
  case NumericKind::Real: return go(RealDomain(nullptr));
  case NumericKind::Float32: {
    const float x = rational_to_float(a), y = rational_to_float(b);
    const float r = op == Op::Add ? x + y : x * y;
    if (!std::isfinite(r))
      throw Error("constant folding overflows float32");
    return rational_from_double(r);
  }
  case NumericKind::Fxp: return go(FxpDomain(sem, nullptr));
  }
  throw Error("unknown semantics");
}

inline std::optional<bool> bool_value(const ExprDag& d, NodeId id)
{
  const Node& n = d.node(id);
  if (n.op == Op::BoolConst)
    return n.flag;
  return std::nullopt;
}

inline const Rational* num_value(const ExprDag& d, NodeId id)
{
  const Node& n = d.node(id);
  return n.op == Op::Const ? &n.value : nullptr;
}

/// Local rewrite rules applied while rebuilding bottom-up.
inline NodeId simplify_node(SsaProgram& out, const Node& n, std::vector<NodeId> args)
{
  ExprDag& d = out.dag;
  const Semantics& sem = out.semantics;
  const bool exact_identities = sem.kind != NumericKind::Float32; // x+0, x*1, x*0 need no NaN or -0
  switch (n.op) {
  case Op::Add:
  case Op::Mul: {
    const Rational* a = num_value(d, args[0]);
    const Rational* b = num_value(d, args[1]);
    if (a && b)
      return d.constant(fold_arith(sem, n.op, *a, *b));
    if (exact_identities) {
      for (int k = 0; k < 2; ++k) {
        const Rational* c = k == 0 ? a : b;
        const NodeId other = args[1 - k];
        if (!c)
          continue;
        if (n.op == Op::Add && sgn(*c) == 0)
          return other;
        if (n.op == Op::Mul && *c == 1)
          return other;
        if (n.op == Op::Mul && sgn(*c) == 0)
          return d.constant(0);
      }
    }
    return d.make(n.op, std::move(args));
  }
  case Op::Lt:
  case Op::Le:
  case Op::Gt:
  case Op::Ge:
  case Op::Eq: {
    const Rational* a = num_value(d, args[0]);
    const Rational* b = num_value(d, args[1]);
    if (a && b)
      return d.boolean(compare(*a, to_cmp(n.op), *b));
    return d.make(n.op, std::move(args));
  }
  case Op::Ite: {
    if (auto c = bool_value(d, args[0]))
      return *c ? args[1] : args[2];
    if (args[1] == args[2])
      return args[1];
    if (d.sort(args[1]) == Sort::Bool) {
      // ite(f, f && a, b) -> ite(f, a, b)
      const Node& t = d.node(args[1]);
      if (t.op == Op::And && std::find(t.args.begin(), t.args.end(), args[0]) != t.args.end()) {
        std::vector<NodeId> rest;
        for (NodeId x : t.args)
          if (x != args[0])
            rest.push_back(x);
        args[1] = d.land(rest);
        return simplify_node(out, n, std::move(args));
      }
      auto tb = bool_value(d, args[1]);
      auto eb = bool_value(d, args[2]);
      if (tb && eb) // distinct constants
        return *tb ? args[0] : d.lnot(args[0]);
    }
    return d.make(Op::Ite, std::move(args));
  }
  case Op::Not: {
    if (auto c = bool_value(d, args[0]))
      return d.boolean(!*c);
    const Node& inner = d.node(args[0]);
    if (inner.op == Op::Not)
      return inner.args[0];
    return d.make(Op::Not, std::move(args));
  }
  case Op::And:
  case Op::Or: {
    const bool unit = n.op == Op::And; // neutral element
    std::vector<NodeId> kept;
    for (NodeId a : args) {
      if (auto c = bool_value(d, a)) {
        if (*c != unit)
          return d.boolean(!unit); // absorbing element
        continue;
      }
      if (std::find(kept.begin(), kept.end(), a) == kept.end())
        kept.push_back(a);
    }
    return n.op == Op::And ? d.land(kept) : d.lor(kept);
  }
  case Op::Xor: {
    bool parity = false;
    std::vector<NodeId> kept;
    for (NodeId a : args) {
      if (auto c = bool_value(d, a))
        parity = parity != *c;
      else
        kept.push_back(a);
    }
    if (kept.empty())
      return d.boolean(parity);
    NodeId x = d.lxor(kept);
    return parity ? simplify_node(out, Node{Op::Not, Sort::Bool, {}, {}, false, 0}, {x}) : x;
  }
  default: return d.make(n.op, std::move(args));
  }
}

inline std::string fingerprint(const SsaProgram& p) { return dump_ssa(p); }

inline SsaProgram simplify_once(const SsaProgram& src)
{
  Rewriter rw(src, simplify_node);
  rw.begin();
  for (std::size_t i = 0; i < src.assignments.size(); ++i) {
    const NodeId e = rw.rewrite(src.assignments[i].expr);
    const Op op = rw.out().dag.node(e).op;
    // Copy propagation; inputs stay as named assignments.
    if (op == Op::Const || op == Op::BoolConst || op == Op::Var)
      rw.bind(i, e);
    else
      rw.keep(i, e);
  }
  for (NodeId a : src.assumes) {
    const NodeId e = rw.rewrite(a);
    if (bool_value(rw.out().dag, e) == true)
      continue;
    rw.out().assumes.push_back(e);
  }
  for (NodeId a : src.asserts) {
    const NodeId e = rw.rewrite(a);
    if (bool_value(rw.out().dag, e) == true)
      continue;
    rw.out().asserts.push_back(e);
  }
  return std::move(rw.out());
}

/// Var indices referenced below `id` (not through other assignments).
inline void collect_vars(const ExprDag& d, NodeId id, std::vector<bool>& seen, std::set<std::size_t>& vars)
{
  if (seen[id])
    return;
  seen[id] = true;
  const Node& n = d.node(id);
  if (n.op == Op::Var)
    vars.insert(n.index);
  for (NodeId a : n.args)
    collect_vars(d, a, seen, vars);
}

inline std::set<std::size_t> vars_of(const ExprDag& d, NodeId id)
{
  std::vector<bool> seen(d.size(), false);
  std::set<std::size_t> vars;
  collect_vars(d, id, seen, vars);
  return vars;
}

/// Operands of a maximal chain of Add nodes, left to right.
inline void add_leaves(const ExprDag& d, NodeId id, std::vector<NodeId>& out)
{
  const Node& n = d.node(id);
  if (n.op != Op::Add) {
    out.push_back(id);
    return;
  }
  add_leaves(d, n.args[0], out);
  add_leaves(d, n.args[1], out);
}

} // namespace detail

/// Applies the rewrite rules and copy propagation until nothing changes.
inline SsaProgram simplify(const SsaProgram& p)
{
  SsaProgram cur = detail::simplify_once(p);
  for (int round = 0; round < 64; ++round) {
    SsaProgram next = detail::simplify_once(cur);
    const bool same = next.assignments.size() == cur.assignments.size() && next.assumes.size() == cur.assumes.size() &&
                      next.asserts.size() == cur.asserts.size() && detail::fingerprint(next) == detail::fingerprint(cur);
    cur = std::move(next);
    if (same)
      break;
  }
  return cur;
}

/// Keeps the assignments the asserts depend on, plus every assume that
/// mentions a kept variable together with that assume's own dependencies.
inline SsaProgram slice(const SsaProgram& p)
{
  const std::size_t n = p.assignments.size();
  std::vector<std::set<std::size_t>> deps(n);
  for (std::size_t i = 0; i < n; ++i)
    deps[i] = detail::vars_of(p.dag, p.assignments[i].expr);
  std::vector<std::set<std::size_t>> assume_vars;
  for (NodeId a : p.assumes)
    assume_vars.push_back(detail::vars_of(p.dag, a));

  std::vector<bool> in_cone(n, false);
  std::vector<std::size_t> work;
  auto add = [&](std::size_t v) {
    if (!in_cone[v]) {
      in_cone[v] = true;
      work.push_back(v);
    }
  };
  auto close = [&] {
    while (!work.empty()) {
      std::size_t v = work.back();
      work.pop_back();
      for (std::size_t d : deps[v])
        add(d);
    }
  };
  for (NodeId a : p.asserts)
    for (std::size_t v : detail::vars_of(p.dag, a))
      add(v);
  close();
  std::vector<bool> assume_kept(p.assumes.size(), false);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t k = 0; k < p.assumes.size(); ++k) {
      if (assume_kept[k])
        continue;
      bool touches = assume_vars[k].empty(); // constant assumes always stay
      for (std::size_t v : assume_vars[k])
        touches = touches || in_cone[v];
      if (!touches)
        continue;
      assume_kept[k] = true;
      changed = true;
      for (std::size_t v : assume_vars[k])
        add(v);
      close();
    }
  }

  detail::Rewriter rw(p, detail::structural);
  rw.begin();
  for (std::size_t i = 0; i < n; ++i)
    if (in_cone[i])
      rw.keep(i, rw.rewrite(p.assignments[i].expr));
  for (std::size_t k = 0; k < p.assumes.size(); ++k)
    if (assume_kept[k])
      rw.out().assumes.push_back(rw.rewrite(p.assumes[k]));
  for (NodeId a : p.asserts)
    rw.out().asserts.push_back(rw.rewrite(a));
  return std::move(rw.out());
}

/// Rebuilds every maximal addition chain as a balanced tree of depth
/// ceil(log2 n). Refuses non-associative semantics unless `unsafe`.
inline SsaProgram balance(const SsaProgram& p, bool unsafe = false)
{
  if (!p.semantics.associative() && !unsafe)
    throw Error("balance: addition is not associative in " + p.semantics.name());
  auto rule = [](SsaProgram& out, const Node& n, std::vector<NodeId> args) -> NodeId {
    if (n.op != Op::Add)
      return out.dag.make(n.op, std::move(args));
    // Children were rebuilt already; flatten through their Add nodes.
    std::vector<NodeId> leaves;
    for (NodeId a : args)
      detail::add_leaves(out.dag, a, leaves);
    std::function<NodeId(std::size_t, std::size_t)> build = [&](std::size_t lo, std::size_t hi) -> NodeId {
      if (hi - lo == 1)
        return leaves[lo];
      const std::size_t mid = lo + (hi - lo + 1) / 2;
      return out.dag.add(build(lo, mid), build(mid, hi));
    };
    return build(0, leaves.size());
  };
  detail::Rewriter rw(p, rule);
  rw.begin();
  for (std::size_t i = 0; i < p.assignments.size(); ++i)
    rw.keep(i, rw.rewrite(p.assignments[i].expr));
  for (NodeId a : p.assumes)
    rw.out().assumes.push_back(rw.rewrite(a));
  for (NodeId a : p.asserts)
    rw.out().asserts.push_back(rw.rewrite(a));
  return std::move(rw.out());
}

/// Longest chain of Add nodes in any expression of the program.
inline std::size_t add_depth(const SsaProgram& p)
{
  std::vector<std::optional<std::size_t>> memo(p.dag.size());
  std::function<std::size_t(NodeId)> depth = [&](NodeId id) -> std::size_t {
    if (memo[id])
      return *memo[id];
    const Node& n = p.dag.node(id);
    std::size_t best = 0;
    for (NodeId a : n.args)
      best = std::max(best, depth(a));
    if (n.op == Op::Add)
      ++best;
    memo[id] = best;
    return best;
  };
  std::size_t m = 0;
  for (const auto& a : p.assignments)
    m = std::max(m, depth(a.expr));
  return m;
}

} // namespace qnnv
