#pragma once

// Forward interval propagation over exact rationals. Every operation applies
// the run's rounding model to the exact result interval, so the bounds hold
// for the concrete executor and for the encoded program alike.

#include "qnnv/domains.hpp"
#include "qnnv/error.hpp"
#include "qnnv/executor.hpp"
#include "qnnv/network.hpp"
#include "qnnv/property.hpp"

#include <json.hpp>

#include <algorithm>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace qnnv {

struct RationalInterval
{
  Rational lo;
  Rational hi;

  static RationalInterval point(const Rational& v) { return {v, v}; }

  bool contains(const Rational& v) const { return lo <= v && v <= hi; }
  bool contains(const RationalInterval& o) const { return lo <= o.lo && o.hi <= hi; }
  Rational magnitude() const { return std::max(abs(lo), abs(hi)); }

  friend bool operator==(const RationalInterval&, const RationalInterval&) = default;
};

inline std::string to_string(const RationalInterval& i)
{
  return "[" + to_decimal(i.lo, 10) + ", " + to_decimal(i.hi, 10) + "]";
}

struct IntervalBox
{
  Semantics semantics;
  std::vector<RationalInterval> inputs;
  std::vector<std::vector<RationalInterval>> pre;  ///< [layer][neuron]
  std::vector<std::vector<RationalInterval>> post; ///< [layer][neuron]
  std::vector<std::vector<bool>> wrap_risk;        ///< fixed point only

  bool any_wrap_risk() const
  {
    for (const auto& l : wrap_risk)
      for (bool b : l)
        if (b)
          return true;
    return false;
  }
};

class IntervalDomain
{
public:
  using Value = RationalInterval;

  IntervalDomain(Semantics s, const TableSet* tables) : sem_(s), tables_(tables) {}

  void locate(std::size_t layer, std::size_t neuron)
  {
    layer_ = layer;
    neuron_ = neuron;
  }

  /// Set when an operation of the located neuron may leave the format range.
  std::vector<std::vector<bool>>* wrap_flags = nullptr;

  Value constant(double c, const std::string& what) const
  {
    return Value::point(quantize_constant_or_throw(sem_, c, what));
  }

  Value add(const Value& a, const Value& b) { return round(a.lo + b.lo, a.hi + b.hi); }

  Value mul(const Value& a, const Value& b)
  {
    const Rational c[4] = {a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi};
    return round(*std::min_element(c, c + 4), *std::max_element(c, c + 4));
  }

  Value zero() const { return Value::point(0); }

  Value activate(const ActivationKind& a, const Value& u)
  {
    switch (a.kind) {
    case Activation::ReLU: return {std::max(u.lo, Rational(0)), std::max(u.hi, Rational(0))};
    case Activation::Identity: return u;
    case Activation::Sigmoid:
    case Activation::TanH: {
      auto [lo, hi] = tables_->at(a).steps.range(u.lo, u.hi);
      return {lo, hi};
    }
    case Activation::PiecewiseLinear: return pwl(a, u);
    }
    return u;
  }

  const Semantics& semantics() const { return sem_; }

private:
  Semantics sem_;
  const TableSet* tables_;
  std::size_t layer_ = 0, neuron_ = 0;

  Value full_range() const { return {sem_.format.min_value(), sem_.format.max_value()}; }

  Value round(const Rational& lo, const Rational& hi)
  {
    switch (sem_.kind) {
    case NumericKind::Real: return {lo, hi};
    case NumericKind::Float32: {
      const float flo = rational_to_float(lo), fhi = rational_to_float(hi);
      if (!std::isfinite(flo) || !std::isfinite(fhi))
        throw Error("float32 overflow possible at layer " + std::to_string(layer_) + " neuron " +
                    std::to_string(neuron_) + "; interval analysis unavailable");
      return {rational_from_double(flo), rational_from_double(fhi)};
    }
    case NumericKind::Fxp: {
      const Rational scale(pow2(static_cast<unsigned>(sem_.format.l)));
      Value r{Rational(detail::round_rational(lo * scale, sem_.rounding)) / scale,
              Rational(detail::round_rational(hi * scale, sem_.rounding)) / scale};
      r.lo.canonicalize();
      r.hi.canonicalize();
      if (r.lo < sem_.format.min_value() || r.hi > sem_.format.max_value()) {
        if (wrap_flags)
          (*wrap_flags)[layer_][neuron_] = true;
        return full_range();
      }
      return r;
    }
    }
    return {lo, hi};
  }

  /// Union over the segments the interval meets.
  Value pwl(const ActivationKind& a, const Value& u)
  {
    const auto& p = a.points;
    const std::size_t segs = p.size() - 1;
    std::optional<Value> acc;
    for (std::size_t i = 0; i < segs; ++i) {
      Rational lo = u.lo, hi = u.hi;
      if (i > 0) {
        const Rational x = rational_from_double(p[i].x);
        if (hi < x)
          continue;
        lo = std::max(lo, x);
      }
      if (i + 1 < segs) {
        const Rational x = rational_from_double(p[i + 1].x);
        if (!(lo < x))
          continue;
        hi = std::min(hi, x);
      }
      const Value s = constant(a.slope(i), "pwl slope");
      const Value nx = constant(-p[i].x, "pwl breakpoint");
      const Value y0 = constant(p[i].y, "pwl value");
      const Value r = add(mul(s, add(Value{lo, hi}, nx)), y0);
      acc = acc ? Value{std::min(acc->lo, r.lo), std::max(acc->hi, r.hi)} : r;
    }
    return *acc;
  }
};

inline IntervalBox propagate(const Network& net, const HyperRect& region, const Semantics& sem,
                             const TableSet& tables)
{
  net.validate();
  if (region.size() != net.input_dim())
    throw DimensionError("region has " + std::to_string(region.size()) + " dimensions, network has " +
                         std::to_string(net.input_dim()) + " inputs");
  IntervalBox box;
  box.semantics = sem;
  for (const auto& [lo, hi] : quantize_region(sem, region))
    box.inputs.push_back({lo, hi});
  for (const Layer& l : net.layers) {
    box.pre.emplace_back(l.size());
    box.post.emplace_back(l.size());
    box.wrap_risk.emplace_back(l.size(), false);
  }
  IntervalDomain dom(sem, &tables);
  dom.wrap_flags = &box.wrap_risk;
  auto layers = compile_layers(net, dom);
  run_layers(layers, dom, box.inputs,
             [&](std::size_t li, std::size_t j, const RationalInterval& u, const RationalInterval& y) {
               box.pre[li][j] = u;
               box.post[li][j] = y;
             });
  return box;
}

enum class GuardFact
{
  AlwaysActive,   ///< u >= 0 on the whole box: ReLU is the identity
  AlwaysInactive, ///< u < 0 on the whole box: ReLU is zero
  Undecided,
};

inline std::string_view guard_name(GuardFact g)
{
  switch (g) {
  case GuardFact::AlwaysActive: return "AlwaysActive";
  case GuardFact::AlwaysInactive: return "AlwaysInactive";
  case GuardFact::Undecided: return "Undecided";
  }
  return "?";
}

inline GuardFact classify_guard(const RationalInterval& u)
{
  if (sgn(u.lo) >= 0)
    return GuardFact::AlwaysActive;
  if (sgn(u.hi) < 0)
    return GuardFact::AlwaysInactive;
  return GuardFact::Undecided;
}

struct GuardInfo
{
  std::size_t layer = 0;
  std::size_t neuron = 0;
  GuardFact fact = GuardFact::Undecided;
};

/// One entry per ReLU neuron.
inline std::vector<GuardInfo> decidable_guards(const IntervalBox& box, const Network& net)
{
  if (box.pre.size() != net.layers.size())
    throw DimensionError("interval box does not match the network");
  std::vector<GuardInfo> out;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    if (net.layers[li].activation.kind != Activation::ReLU)
      continue;
    if (box.pre[li].size() != net.layers[li].size())
      throw DimensionError("interval box does not match the network");
    for (std::size_t j = 0; j < box.pre[li].size(); ++j)
      out.push_back({li, j, classify_guard(box.pre[li][j])});
  }
  return out;
}

struct RangeReport
{
  Rational global_max;                ///< over inputs, pre- and post-activations
  std::vector<Rational> layer_max;    ///< per layer, over pre- and post-activations
  std::vector<Rational> l1_first_layer; ///< sum |w|*max|x| + |b| per first-layer neuron
  Rational parameter_max;               ///< over all weights and biases
  int recommended_k = 1;                ///< holds both global_max and parameter_max
  std::optional<FxpFormat> candidate;
  std::vector<std::vector<bool>> wrap_risk; ///< for the candidate format
  IntervalBox box;                          ///< real-valued propagation
};

/// Real-valued propagation sizes the integer part; a candidate format is
/// additionally propagated to flag neurons that may wrap.
inline RangeReport range_report(const Network& net, const HyperRect& region, const TableSet& real_tables,
                                std::optional<FxpFormat> candidate = {}, const TableSet* candidate_tables = nullptr,
                                RoundingMode rounding = RoundingMode::TruncateTowardNegInf)
{
  RangeReport r;
  r.box = propagate(net, region, Semantics::real(), real_tables);
  r.global_max = 0;
  for (const auto& i : r.box.inputs)
    r.global_max = std::max(r.global_max, i.magnitude());
  for (std::size_t li = 0; li < r.box.pre.size(); ++li) {
    Rational m = 0;
    for (std::size_t j = 0; j < r.box.pre[li].size(); ++j)
      m = std::max({m, r.box.pre[li][j].magnitude(), r.box.post[li][j].magnitude()});
    r.layer_max.push_back(m);
    r.global_max = std::max(r.global_max, m);
  }
  const Layer& first = net.layers.front();
  for (std::size_t j = 0; j < first.size(); ++j) {
    Rational s = abs(rational_from_double(first.biases[j]));
    for (std::size_t i = 0; i < first.input_size(); ++i)
      s += abs(rational_from_double(first.weights(j, i))) * r.box.inputs[i].magnitude();
    r.l1_first_layer.push_back(s);
  }
  r.parameter_max = 0;
  for (const Layer& l : net.layers) {
    for (double w : l.weights.data)
      r.parameter_max = std::max(r.parameter_max, Rational(abs(rational_from_double(w))));
    for (double b : l.biases)
      r.parameter_max = std::max(r.parameter_max, Rational(abs(rational_from_double(b))));
  }
  r.recommended_k = std::max(min_integer_bits(r.global_max), min_integer_bits(r.parameter_max));
  if (candidate) {
    r.candidate = candidate;
    const Semantics sem = Semantics::fxp(*candidate, rounding);
    TableSet local;
    if (!candidate_tables)
      local = build_tables(net, sem, TableOptions{});
    r.wrap_risk = propagate(net, region, sem, candidate_tables ? *candidate_tables : local).wrap_risk;
  }
  return r;
}

inline void print_intervals(const IntervalBox& box, const Network& net, std::ostream& out)
{
  out << "semantics " << box.semantics.name() << "\n";
  for (std::size_t i = 0; i < box.inputs.size(); ++i)
    out << "  x" << i << "  " << to_string(box.inputs[i]) << "\n";
  for (std::size_t li = 0; li < box.pre.size(); ++li)
    for (std::size_t j = 0; j < box.pre[li].size(); ++j) {
      out << "  u" << li << "_" << j << "  " << to_string(box.pre[li][j]) << "  y" << li << "_" << j << "  "
          << to_string(box.post[li][j]);
      if (net.layers[li].activation.kind == Activation::ReLU)
        out << "  " << guard_name(classify_guard(box.pre[li][j]));
      if (box.wrap_risk[li][j])
        out << "  WRAP-RISK";
      out << "\n";
    }
}

namespace detail {

inline nlohmann::json interval_json(const RationalInterval& i) { return {i.lo.get_str(), i.hi.get_str()}; }

inline RationalInterval interval_from_json(const nlohmann::json& j)
{
  if (!j.is_array() || j.size() != 2)
    throw Error("interval must be a [lo, hi] pair");
  auto parse = [](const nlohmann::json& v) {
    Rational r;
    if (v.is_string()) {
      if (r.set_str(v.get<std::string>(), 10) != 0)
        throw Error("bad rational '" + v.get<std::string>() + "'");
      r.canonicalize();
      return r;
    }
    if (v.is_number())
      return rational_from_double(v.get<double>());
    throw Error("interval bound must be a rational string or a number");
  };
  RationalInterval r{parse(j[0]), parse(j[1])};
  if (r.lo > r.hi)
    throw Error("interval with lo > hi");
  return r;
}

} // namespace detail

/// Bounds are exact rational strings ("p/q").
inline nlohmann::json box_to_json(const IntervalBox& box)
{
  nlohmann::json j;
  j["semantics"] = box.semantics.name();
  j["inputs"] = nlohmann::json::array();
  for (const auto& i : box.inputs)
    j["inputs"].push_back(detail::interval_json(i));
  j["pre"] = nlohmann::json::array();
  j["post"] = nlohmann::json::array();
  j["wrap_risk"] = nlohmann::json::array();
  for (std::size_t li = 0; li < box.pre.size(); ++li) {
    nlohmann::json pre = nlohmann::json::array(), post = nlohmann::json::array();
    for (std::size_t n = 0; n < box.pre[li].size(); ++n) {
      pre.push_back(detail::interval_json(box.pre[li][n]));
      post.push_back(detail::interval_json(box.post[li][n]));
    }
    j["pre"].push_back(pre);
    j["post"].push_back(post);
    j["wrap_risk"].push_back(box.wrap_risk[li]);
  }
  return j;
}

inline IntervalBox box_from_json(const nlohmann::json& j, const Network& net, const Semantics& sem)
{
  IntervalBox box;
  box.semantics = sem;
  if (j.value("semantics", std::string()) != sem.name())
    throw Error("interval file was computed for '" + j.value("semantics", std::string("?")) + "', run uses '" +
                sem.name() + "'");
  for (const auto& i : j.at("inputs"))
    box.inputs.push_back(detail::interval_from_json(i));
  const auto& pre = j.at("pre");
  const auto& post = j.at("post");
  if (pre.size() != net.layers.size() || post.size() != net.layers.size() || box.inputs.size() != net.input_dim())
    throw DimensionError("interval file does not match the network shape");
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    if (pre[li].size() != net.layers[li].size() || post[li].size() != net.layers[li].size())
      throw DimensionError("interval file does not match layer " + std::to_string(li));
    box.pre.emplace_back();
    box.post.emplace_back();
    for (std::size_t n = 0; n < net.layers[li].size(); ++n) {
      box.pre.back().push_back(detail::interval_from_json(pre[li][n]));
      box.post.back().push_back(detail::interval_from_json(post[li][n]));
    }
    std::vector<bool> w(net.layers[li].size(), false);
    if (j.contains("wrap_risk"))
      for (std::size_t n = 0; n < w.size(); ++n)
        w[n] = j["wrap_risk"][li][n].get<bool>();
    box.wrap_risk.push_back(w);
  }
  return box;
}

} // namespace qnnv
