#pragma once

// Network + property -> SSA program.
//
// Assignment names: x{i} for inputs, u{L}_{j} and y{L}_{j} for the pre- and
// post-activation of neuron j in layer L (both 0-based). Comparisons against
// property constants are rewritten into exactly equivalent comparisons
// against representable thresholds, so no constant is ever rounded.

#include "qnnv/domains.hpp"
#include "qnnv/executor.hpp"
#include "qnnv/interval.hpp"
#include "qnnv/ir.hpp"
#include "qnnv/network.hpp"
#include "qnnv/property.hpp"

#include <cfloat>
#include <optional>
#include <string>
#include <vector>

namespace qnnv {

struct LowerOptions
{
  const IntervalBox* box = nullptr; ///< enables guard pruning, range assumes, table restriction
  bool interval_assumes = true;
  bool post_activation_assumes = false;
  bool discharge_asserts = true;
};

/// Boolean node equivalent to (u op c) for every value u of the semantics.
inline NodeId lower_comparison(ExprDag& dag, const Semantics& sem, NodeId u, CmpOp op, const Rational& c)
{
  switch (sem.kind) {
  case NumericKind::Real: return dag.cmp(op, u, dag.constant(c));

  case NumericKind::Fxp: {
    const FxpFormat& f = sem.format;
    const Rational scaled = c * Rational(pow2(static_cast<unsigned>(f.l)));
    const BigInt lo = f.min_raw(), hi = f.max_raw();
    auto at = [&](const BigInt& raw) { return dag.constant(Rational(raw) * f.ulp()); };
    switch (op) {
    case CmpOp::Ge: {
      const BigInt t = ceil_of(scaled);
      if (t > hi)
        return dag.boolean(false);
      if (t <= lo)
        return dag.boolean(true);
      return dag.cmp(CmpOp::Ge, u, at(t));
    }
    case CmpOp::Gt: {
      const BigInt t = floor_of(scaled);
      if (t >= hi)
        return dag.boolean(false);
      if (t < lo)
        return dag.boolean(true);
      return dag.cmp(CmpOp::Gt, u, at(t));
    }
    case CmpOp::Le: {
      const BigInt t = floor_of(scaled);
      if (t < lo)
        return dag.boolean(false);
      if (t >= hi)
        return dag.boolean(true);
      return dag.cmp(CmpOp::Le, u, at(t));
    }
    case CmpOp::Lt: {
      const BigInt t = ceil_of(scaled);
      if (t <= lo)
        return dag.boolean(false);
      if (t > hi)
        return dag.boolean(true);
      return dag.cmp(CmpOp::Lt, u, at(t));
    }
    case CmpOp::Eq:
      if (!is_integer(scaled) || scaled.get_num() < lo || scaled.get_num() > hi)
        return dag.boolean(false);
      return dag.cmp(CmpOp::Eq, u, dag.constant(c));
    }
    break;
  }

  case NumericKind::Float32: {
    const Rational fmax = rational_from_double(FLT_MAX);
    auto val = [&](float x) { return dag.constant(rational_from_double(x)); };
    const float up = rational_to_float(c, FloatDir::Up);
    const float down = rational_to_float(c, FloatDir::Down);
    switch (op) {
    case CmpOp::Ge:
      return std::isinf(up) ? dag.cmp(CmpOp::Gt, u, dag.constant(fmax)) : dag.cmp(CmpOp::Ge, u, val(up));
    case CmpOp::Gt:
      return std::isinf(down) ? dag.cmp(CmpOp::Ge, u, dag.constant(-fmax)) : dag.cmp(CmpOp::Gt, u, val(down));
    case CmpOp::Le:
      return std::isinf(down) ? dag.cmp(CmpOp::Lt, u, dag.constant(-fmax)) : dag.cmp(CmpOp::Le, u, val(down));
    case CmpOp::Lt:
      return std::isinf(up) ? dag.cmp(CmpOp::Le, u, dag.constant(fmax)) : dag.cmp(CmpOp::Lt, u, val(up));
    case CmpOp::Eq:
      if (up != down)
        return dag.boolean(false);
      return dag.cmp(CmpOp::Eq, u, val(up));
    }
    break;
  }
  }
  throw Error("unknown semantics");
}

namespace detail {

class Lowering
{
public:
  Lowering(const Network& net, const SafetyProperty& prop, const Semantics& sem, const TableSet& tables,
           const LowerOptions& opt)
    : net_(net), prop_(prop), tables_(tables), opt_(opt)
  {
    p_.semantics = sem;
    p_.num_inputs = net.input_dim();
  }

  SsaProgram run()
  {
    net_.validate();
    prop_.validate_against(net_);
    if (opt_.box && (opt_.box->pre.size() != net_.layers.size() || opt_.box->inputs.size() != net_.input_dim()))
      throw DimensionError("interval box does not match the network");
    lower_inputs();
    for (std::size_t li = 0; li < net_.layers.size(); ++li)
      lower_layer(li);
    lower_assertion();
    return std::move(p_);
  }

private:
  const Network& net_;
  const SafetyProperty& prop_;
  const TableSet& tables_;
  const LowerOptions& opt_;
  SsaProgram p_;
  std::vector<NodeId> cur_; ///< Var nodes of the previous layer's outputs

  ExprDag& dag() { return p_.dag; }
  const Semantics& sem() const { return p_.semantics; }

  NodeId assign(std::string name, NodeId expr, VarRole role, std::size_t layer, std::size_t neuron)
  {
    p_.assignments.push_back({std::move(name), expr, role, layer, neuron});
    return dag().var(p_.assignments.size() - 1, dag().sort(expr));
  }

  NodeId constant(double c, const std::string& what) { return dag().constant(quantize_constant_or_throw(sem(), c, what)); }

  NodeId within(NodeId v, const Rational& lo, const Rational& hi)
  {
    return dag().land({dag().cmp(CmpOp::Ge, v, dag().constant(lo)), dag().cmp(CmpOp::Le, v, dag().constant(hi))});
  }

  bool full_range(const RationalInterval& r) const
  {
    return sem().kind == NumericKind::Fxp && r.lo == sem().format.min_value() && r.hi == sem().format.max_value();
  }

  void lower_inputs()
  {
    const auto bounds = quantize_region(sem(), prop_.input_region);
    for (std::size_t i = 0; i < net_.input_dim(); ++i) {
      NodeId x = assign("x" + std::to_string(i), dag().input(i), VarRole::Input, 0, i);
      p_.assumes.push_back(within(x, bounds[i].first, bounds[i].second));
      cur_.push_back(x);
    }
  }

  void range_assume(NodeId v, const RationalInterval& r, bool risky)
  {
    if (risky || full_range(r))
      return;
    p_.assumes.push_back(within(v, r.lo, r.hi));
  }

  void lower_layer(std::size_t li)
  {
    const Layer& L = net_.layers[li];
    std::vector<NodeId> next;
    for (std::size_t j = 0; j < L.size(); ++j) {
      NodeId acc = 0;
      for (std::size_t i = 0; i < L.input_size(); ++i) {
        NodeId term = dag().mul(constant(L.weights(j, i), weight_site(li, j, i)), cur_[i]);
        acc = i == 0 ? term : dag().add(acc, term);
      }
      const NodeId b = constant(L.biases[j], bias_site(li, j));
      acc = L.input_size() ? dag().add(acc, b) : b;
      const std::string tag = std::to_string(li) + "_" + std::to_string(j);
      NodeId u = assign("u" + tag, acc, VarRole::PreActivation, li, j);

      const RationalInterval* range = opt_.box ? &opt_.box->pre[li][j] : nullptr;
      const bool risky = opt_.box && li < opt_.box->wrap_risk.size() && j < opt_.box->wrap_risk[li].size() &&
                         opt_.box->wrap_risk[li][j];
      if (range && opt_.interval_assumes)
        range_assume(u, *range, risky);

      NodeId y = assign("y" + tag, activation(L.activation, u, range), VarRole::PostActivation, li, j);
      if (opt_.box && opt_.interval_assumes && opt_.post_activation_assumes)
        range_assume(y, opt_.box->post[li][j], risky);
      next.push_back(y);
    }
    cur_ = std::move(next);
  }

  NodeId zero() { return dag().constant(0); }

  NodeId activation(const ActivationKind& a, NodeId u, const RationalInterval* range)
  {
    switch (a.kind) {
    case Activation::Identity: return u;
    case Activation::ReLU: {
      const GuardFact g = range ? classify_guard(*range) : GuardFact::Undecided;
      if (g == GuardFact::AlwaysActive)
        return u;
      if (g == GuardFact::AlwaysInactive)
        return zero();
      return dag().ite(dag().cmp(CmpOp::Lt, u, zero()), zero(), u);
    }
    case Activation::Sigmoid:
    case Activation::TanH: {
      const StepFunction& s = tables_.at(a).steps;
      std::size_t s0 = 0, s1 = s.thresholds.size();
      if (range) {
        s0 = s.segment(range->lo);
        s1 = s.segment(range->hi);
      }
      return table_tree(s, u, s0, s1);
    }
    case Activation::PiecewiseLinear: {
      const auto& p = a.points;
      auto segment = [&](std::size_t i) {
        NodeId shifted = dag().add(u, constant(-p[i].x, "pwl breakpoint"));
        return dag().add(dag().mul(constant(a.slope(i), "pwl slope"), shifted), constant(p[i].y, "pwl value"));
      };
      NodeId e = segment(0);
      for (std::size_t i = 1; i + 1 < p.size(); ++i)
        e = dag().ite(lower_comparison(dag(), sem(), u, CmpOp::Ge, rational_from_double(p[i].x)), segment(i), e);
      return e;
    }
    }
    throw Error("unsupported activation");
  }

  /// Balanced ite tree over segments [s0, s1].
  NodeId table_tree(const StepFunction& s, NodeId u, std::size_t s0, std::size_t s1)
  {
    if (s0 == s1)
      return dag().constant(s.values[s0]);
    const std::size_t mid = (s0 + s1 + 1) / 2; // first segment of the upper half
    const std::size_t t = mid - 1;
    NodeId c = lower_comparison(dag(), sem(), u, s.closed[t] ? CmpOp::Ge : CmpOp::Gt, s.thresholds[t]);
    return dag().ite(c, table_tree(s, u, mid, s1), table_tree(s, u, s0, t));
  }

  NodeId output(std::size_t k) { return cur_.at(k); }

  NodeId lower_node(const AssertionNode& n)
  {
    using K = AssertionNode::Kind;
    switch (n.kind) {
    case K::True: return dag().boolean(true);
    case K::False: return dag().boolean(false);
    case K::Compare: {
      if (n.lhs.is_output && n.rhs.is_output)
        return dag().cmp(n.op, output(n.lhs.index), output(n.rhs.index));
      if (n.lhs.is_output)
        return lower_comparison(dag(), sem(), output(n.lhs.index), n.op, rational_from_double(n.rhs.constant));
      if (n.rhs.is_output)
        return lower_comparison(dag(), sem(), output(n.rhs.index), mirror(n.op), rational_from_double(n.lhs.constant));
      return dag().boolean(compare(rational_from_double(n.lhs.constant), n.op, rational_from_double(n.rhs.constant)));
    }
    case K::Not: return dag().lnot(lower_node(n.children[0]));
    case K::And:
    case K::Or:
    case K::Xor: {
      std::vector<NodeId> kids;
      for (const auto& c : n.children)
        kids.push_back(lower_node(c));
      return n.kind == K::And ? dag().land(kids) : n.kind == K::Or ? dag().lor(kids) : dag().lxor(kids);
    }
    }
    throw Error("unsupported assertion node");
  }

  /// An atomic output-vs-constant conjunct is dropped when the output's
  /// interval proves it and the neuron carries no undecided ReLU guard.
  bool discharged(const AssertionNode& n) const
  {
    if (!opt_.box || !opt_.discharge_asserts || n.kind != AssertionNode::Kind::Compare)
      return false;
    if (n.lhs.is_output == n.rhs.is_output)
      return false;
    const std::size_t k = n.lhs.is_output ? n.lhs.index : n.rhs.index;
    const CmpOp op = n.lhs.is_output ? n.op : mirror(n.op);
    const Rational c = rational_from_double(n.lhs.is_output ? n.rhs.constant : n.lhs.constant);
    const std::size_t last = net_.layers.size() - 1;
    if (net_.layers[last].activation.kind == Activation::ReLU &&
        classify_guard(opt_.box->pre[last][k]) == GuardFact::Undecided)
      return false;
    const RationalInterval& y = opt_.box->post[last][k];
    switch (op) {
    case CmpOp::Lt: return y.hi < c;
    case CmpOp::Le: return y.hi <= c;
    case CmpOp::Gt: return y.lo > c;
    case CmpOp::Ge: return y.lo >= c;
    case CmpOp::Eq: return y.lo == c && y.hi == c;
    }
    return false;
  }

  void lower_assertion()
  {
    const AssertionNode& root = prop_.assertion.root;
    std::vector<const AssertionNode*> conjuncts;
    if (root.kind == AssertionNode::Kind::And)
      for (const auto& c : root.children)
        conjuncts.push_back(&c);
    else
      conjuncts.push_back(&root);
    for (const AssertionNode* c : conjuncts) {
      if (discharged(*c)) {
        ++p_.discharged_asserts;
        continue;
      }
      p_.asserts.push_back(lower_node(*c));
    }
  }
};

} // namespace detail

inline SsaProgram lower(const Network& net, const SafetyProperty& prop, const Semantics& sem, const TableSet& tables,
                        const LowerOptions& opt = {})
{
  return detail::Lowering(net, prop, sem, tables, opt).run();
}

} // namespace qnnv
