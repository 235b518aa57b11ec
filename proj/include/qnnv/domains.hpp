#pragma once

// Numeric semantics of a verification run and the concrete value domains
// implementing them. The executor, the interval analysis and the encoder all
// follow the same operation order:
//   u = w0*x0; u = u + w_i*x_i (i = 1..n-1, input order); u = u + b
// so one domain type per semantics is enough to make them agree.

#include "qnnv/activation_lut.hpp"
#include "qnnv/error.hpp"
#include "qnnv/fixed_point.hpp"
#include "qnnv/float32.hpp"
#include "qnnv/network.hpp"
#include "qnnv/property.hpp"
#include "qnnv/rational.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qnnv {

enum class NumericKind
{
  Real,    ///< exact rationals
  Float32, ///< IEEE binary32, round-to-nearest-even
  Fxp,     ///< two's-complement fixed point
};

struct Semantics
{
  NumericKind kind = NumericKind::Fxp;
  FxpFormat format{4, 6};
  RoundingMode rounding = RoundingMode::TruncateTowardNegInf;

  static Semantics real() { return {NumericKind::Real, {}, RoundingMode::TruncateTowardNegInf}; }
  static Semantics float32() { return {NumericKind::Float32, {}, RoundingMode::TruncateTowardNegInf}; }
  static Semantics fxp(FxpFormat f, RoundingMode r = RoundingMode::TruncateTowardNegInf) { return {NumericKind::Fxp, f, r}; }

  std::string name() const
  {
    switch (kind) {
    case NumericKind::Real: return "real";
    case NumericKind::Float32: return "float32";
    case NumericKind::Fxp: return format.name() + "/" + std::string(rounding_name(rounding));
    }
    return "?";
  }

  /// Whether reassociating sums preserves results.
  bool associative() const { return kind != NumericKind::Float32; }
};

/// Exact value of constant c in the semantics, or nullopt when c is not
/// representable (out of fixed-point range, or overflows binary32).
inline std::optional<Rational> quantize_constant(const Semantics& s, double c)
{
  switch (s.kind) {
  case NumericKind::Real: return rational_from_double(c);
  case NumericKind::Float32: {
    const float f = static_cast<float>(c);
    if (!std::isfinite(f))
      return std::nullopt;
    return rational_from_double(f);
  }
  case NumericKind::Fxp: {
    WrapCounter w;
    FxpValue v = fxp_from_real(c, s.format, s.rounding, &w);
    if (w.count)
      return std::nullopt;
    return v.value();
  }
  }
  return std::nullopt;
}

inline Rational quantize_constant_or_throw(const Semantics& s, double c, const std::string& what)
{
  auto q = quantize_constant(s, c);
  if (!q)
    throw Error(what + ": value " + std::to_string(c) + " is not representable in " + s.name());
  return *q;
}

/// Quantized image [q(lo), q(hi)] of each region dimension.
inline std::vector<std::pair<Rational, Rational>> quantize_region(const Semantics& s, const HyperRect& region)
{
  std::vector<std::pair<Rational, Rational>> out;
  for (std::size_t i = 0; i < region.size(); ++i) {
    const std::string what = "input " + std::to_string(i) + " bound";
    out.emplace_back(quantize_constant_or_throw(s, region[i].lo, what),
                     quantize_constant_or_throw(s, region[i].hi, what));
  }
  return out;
}

struct TableOptions
{
  double epsilon = 0.01;
  double cutoff = 6.0;
  std::optional<double> grid_step; ///< replaces the epsilon-derived sample count
};

/// One activation's table in every representation a run can need.
struct ActivationTable
{
  LookupTable real;
  std::optional<FxpLookupTable> fxp;
  std::optional<Float32LookupTable> f32;
  StepFunction steps; ///< in the run's value domain
};

class TableSet
{
public:
  void add(Activation kind, ActivationTable t) { tables_[kind] = std::move(t); }

  const ActivationTable& at(const ActivationKind& a) const
  {
    auto it = tables_.find(a.kind);
    if (it == tables_.end())
      throw Error("missing lookup table for activation '" + a.name() + "'");
    return it->second;
  }

  bool empty() const { return tables_.empty(); }
  const std::map<Activation, ActivationTable>& all() const { return tables_; }

  std::vector<std::string> warnings;

private:
  std::map<Activation, ActivationTable> tables_;
};

inline TableSet build_tables(const Network& net, const Semantics& sem, const TableOptions& opt)
{
  TableSet set;
  std::map<Activation, bool> seen;
  for (const Layer& l : net.layers) {
    if (!l.activation.is_tabled() || seen[l.activation.kind])
      continue;
    seen[l.activation.kind] = true;
    const PiecewiseSpec spec = default_spec(l.activation, opt.cutoff);
    ActivationTable t{opt.grid_step ? build_table_with_step(spec, *opt.grid_step) : build_table(spec, opt.epsilon),
                      std::nullopt, std::nullopt, {}};
    switch (sem.kind) {
    case NumericKind::Real: t.steps = step_function(t.real); break;
    case NumericKind::Float32:
      t.f32 = lut_to_float32(t.real);
      t.steps = step_function(*t.f32);
      break;
    case NumericKind::Fxp:
      t.fxp = lut_to_fxp(t.real, sem.format, sem.rounding);
      t.steps = step_function(*t.fxp);
      for (const auto& w : t.fxp->warnings)
        set.warnings.push_back(l.activation.name() + ": " + w);
      break;
    }
    set.add(l.activation.kind, std::move(t));
  }
  return set;
}

struct WrapEvent
{
  std::size_t layer = 0;
  std::size_t neuron = 0;
  std::string op; ///< "mul", "add", "bias", "activation", "input"
};

/// Piecewise-linear activation through domain operations:
/// y = s_i * (u + (-x_i)) + y_i, segment i chosen by u >= x_{i} thresholds.
template <class D>
typename D::Value pwl_activate(D& dom, const ActivationKind& a, const typename D::Value& u)
{
  const auto& p = a.points;
  std::size_t seg = 0;
  while (seg + 2 < p.size() && dom.compare_const(u, CmpOp::Ge, rational_from_double(p[seg + 1].x)))
    ++seg;
  const auto s = dom.constant(a.slope(seg), "pwl slope");
  const auto nx = dom.constant(-p[seg].x, "pwl breakpoint");
  const auto y0 = dom.constant(p[seg].y, "pwl value");
  return dom.add(dom.mul(s, dom.add(u, nx)), y0);
}

class FxpDomain
{
public:
  using Value = std::int64_t;

  FxpDomain(Semantics s, const TableSet* tables, std::vector<WrapEvent>* events = nullptr)
    : sem_(s), tables_(tables), events_(events)
  {}

  const Semantics& semantics() const { return sem_; }
  void locate(std::size_t layer, std::size_t neuron)
  {
    layer_ = layer;
    neuron_ = neuron;
  }

  Value constant(double c, const std::string& what) const
  {
    return to_raw(quantize_constant_or_throw(sem_, c, what));
  }

  Value input(double x)
  {
    WrapCounter w;
    auto v = fxp_from_real(x, sem_.format, sem_.rounding, &w).raw;
    note(w, "input");
    return v;
  }

  Value from_exact(const Rational& v) const { return to_raw(v); }

  Value add(Value a, Value b)
  {
    WrapCounter w;
    auto r = fxp_add({a, sem_.format}, {b, sem_.format}, &w).raw;
    note(w, "add");
    return r;
  }

  Value mul(Value a, Value b)
  {
    WrapCounter w;
    auto r = fxp_mult({a, sem_.format}, {b, sem_.format}, sem_.rounding, &w).raw;
    note(w, "mul");
    return r;
  }

  Value zero() const { return 0; }
  bool is_negative(Value v) const { return v < 0; }

  bool compare_const(Value u, CmpOp op, const Rational& c) const
  {
    const Rational scaled = c * Rational(pow2(static_cast<unsigned>(sem_.format.l)));
    return compare(Rational(BigInt(u)), op, scaled);
  }

  static bool compare_values(Value a, CmpOp op, Value b) { return compare(a, op, b); }

  Value activate(const ActivationKind& a, Value u)
  {
    switch (a.kind) {
    case Activation::ReLU: return u < 0 ? 0 : u;
    case Activation::Identity: return u;
    case Activation::Sigmoid:
    case Activation::TanH: return lut_eval_fxp(*tables_->at(a).fxp, u);
    case Activation::PiecewiseLinear: return pwl_activate(*this, a, u);
    }
    return u;
  }

  std::optional<Rational> exact(Value v) const { return Rational(BigInt(v)) * sem_.format.ulp(); }
  double approx(Value v) const { return std::ldexp(static_cast<double>(v), -sem_.format.l); }

  std::uint64_t wrap_count() const { return wraps_; }

private:
  Semantics sem_;
  const TableSet* tables_;
  std::vector<WrapEvent>* events_;
  std::size_t layer_ = 0, neuron_ = 0;
  std::uint64_t wraps_ = 0;

  Value to_raw(const Rational& v) const
  {
    const Rational r = v * Rational(pow2(static_cast<unsigned>(sem_.format.l)));
    if (!is_integer(r))
      throw Error("value " + to_string(v) + " is not on the " + sem_.format.name() + " lattice");
    return to_int64(r.get_num());
  }

  void note(const WrapCounter& w, const char* op)
  {
    if (!w.count)
      return;
    ++wraps_;
    if (events_)
      events_->push_back({layer_, neuron_, op});
  }
};

class Float32Domain
{
public:
  using Value = float;

  Float32Domain(const TableSet* tables) : tables_(tables) {}

  void locate(std::size_t, std::size_t) {}

  Value constant(double c, const std::string& what) const
  {
    return static_cast<float>(to_double(quantize_constant_or_throw(Semantics::float32(), c, what)));
  }
  Value input(double x) const { return static_cast<float>(x); }
  Value from_exact(const Rational& v) const { return rational_to_float(v); }

  Value add(Value a, Value b) const { return a + b; }
  Value mul(Value a, Value b) const { return a * b; }
  Value zero() const { return 0.0f; }
  bool is_negative(Value v) const { return v < 0; }

  /// Exact; NaN compares false.
  bool compare_const(Value u, CmpOp op, const Rational& c) const
  {
    if (std::isnan(u))
      return false;
    if (std::isinf(u))
      return op == CmpOp::Eq ? false : compare(u > 0 ? 1 : -1, op, 0);
    return compare(rational_from_double(u), op, c);
  }

  static bool compare_values(Value a, CmpOp op, Value b) { return compare(a, op, b); }

  Value activate(const ActivationKind& a, Value u)
  {
    switch (a.kind) {
    case Activation::ReLU: return u < 0 ? 0.0f : u;
    case Activation::Identity: return u;
    case Activation::Sigmoid:
    case Activation::TanH: return lut_eval_float32(*tables_->at(a).f32, u);
    case Activation::PiecewiseLinear: return pwl_activate(*this, a, u);
    }
    return u;
  }

  /// NaN has no exact value. Infinities map to +-2^1100, beyond every
  /// double, so exact comparisons order them like the IEEE comparisons do.
  std::optional<Rational> exact(Value v) const
  {
    if (std::isnan(v))
      return std::nullopt;
    if (std::isinf(v))
      return v > 0 ? infinity() : Rational(-infinity());
    return rational_from_double(v);
  }
  double approx(Value v) const { return v; }

  static Rational infinity() { return Rational(pow2(1100)); }

private:
  const TableSet* tables_;
};

class RealDomain
{
public:
  using Value = Rational;

  RealDomain(const TableSet* tables) : tables_(tables) {}

  void locate(std::size_t, std::size_t) {}

  Value constant(double c, const std::string&) const { return rational_from_double(c); }
  Value input(double x) const { return rational_from_double(x); }
  Value from_exact(const Rational& v) const { return v; }

  Value add(const Value& a, const Value& b) const { return a + b; }
  Value mul(const Value& a, const Value& b) const { return a * b; }
  Value zero() const { return 0; }
  bool is_negative(const Value& v) const { return sgn(v) < 0; }
  bool compare_const(const Value& u, CmpOp op, const Rational& c) const { return compare(u, op, c); }
  static bool compare_values(const Value& a, CmpOp op, const Value& b) { return compare(a, op, b); }

  Value activate(const ActivationKind& a, const Value& u)
  {
    switch (a.kind) {
    case Activation::ReLU: return sgn(u) < 0 ? Value(0) : u;
    case Activation::Identity: return u;
    case Activation::Sigmoid:
    case Activation::TanH: return tables_->at(a).steps.eval(u);
    case Activation::PiecewiseLinear: return pwl_activate(*this, a, u);
    }
    return u;
  }

  std::optional<Rational> exact(const Value& v) const { return v; }
  double approx(const Value& v) const { return to_double(v); }

private:
  const TableSet* tables_;
};

} // namespace qnnv
