#pragma once

// Bit-exact concrete execution of a network under a numeric semantics.

#include "qnnv/domains.hpp"
#include "qnnv/error.hpp"
#include "qnnv/network.hpp"
#include "qnnv/property.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace qnnv {

template <class D>
struct CompiledLayer
{
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<typename D::Value> w; ///< row-major
  std::vector<typename D::Value> b;
  ActivationKind act;
};

inline std::string weight_site(std::size_t layer, std::size_t neuron, std::size_t input)
{
  return "layer " + std::to_string(layer) + " neuron " + std::to_string(neuron) + " weight " + std::to_string(input);
}

inline std::string bias_site(std::size_t layer, std::size_t neuron)
{
  return "layer " + std::to_string(layer) + " neuron " + std::to_string(neuron) + " bias";
}

/// Quantizes every weight and bias once; throws naming the first
/// unrepresentable coefficient.
template <class D>
std::vector<CompiledLayer<D>> compile_layers(const Network& net, const D& dom)
{
  net.validate();
  std::vector<CompiledLayer<D>> out;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const Layer& l = net.layers[li];
    CompiledLayer<D> c;
    c.rows = l.size();
    c.cols = l.input_size();
    c.act = l.activation;
    for (std::size_t r = 0; r < c.rows; ++r)
      for (std::size_t k = 0; k < c.cols; ++k)
        c.w.push_back(dom.constant(l.weights(r, k), weight_site(li, r, k)));
    for (std::size_t r = 0; r < c.rows; ++r)
      c.b.push_back(dom.constant(l.biases[r], bias_site(li, r)));
    out.push_back(std::move(c));
  }
  return out;
}

/// Runs the MAC loop in input order, bias last. visit(layer, neuron, u, y)
/// sees every pre- and post-activation value.
template <class D, class Visit>
std::vector<typename D::Value> run_layers(const std::vector<CompiledLayer<D>>& layers, D& dom,
                                          std::vector<typename D::Value> cur, Visit&& visit)
{
  using V = typename D::Value;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const CompiledLayer<D>& L = layers[li];
    if (cur.size() != L.cols)
      throw DimensionError("layer " + std::to_string(li) + " expects " + std::to_string(L.cols) + " inputs, got " +
                           std::to_string(cur.size()));
    std::vector<V> next;
    next.reserve(L.rows);
    for (std::size_t j = 0; j < L.rows; ++j) {
      dom.locate(li, j);
      V acc = L.cols ? dom.mul(L.w[j * L.cols], cur[0]) : dom.zero();
      for (std::size_t i = 1; i < L.cols; ++i)
        acc = dom.add(acc, dom.mul(L.w[j * L.cols + i], cur[i]));
      acc = dom.add(acc, L.b[j]);
      V y = dom.activate(L.act, acc);
      visit(li, j, acc, y);
      next.push_back(std::move(y));
    }
    cur = std::move(next);
  }
  return cur;
}

struct TraceValue
{
  double approx = 0;
  std::optional<Rational> exact; ///< empty for NaN
  std::int64_t raw = 0;          ///< fixed-point raw bits; 0 otherwise
};

struct Trace
{
  Semantics semantics;
  std::vector<TraceValue> inputs;
  std::vector<std::vector<TraceValue>> pre;  ///< [layer][neuron]
  std::vector<std::vector<TraceValue>> post; ///< [layer][neuron]
  std::vector<WrapEvent> wraps;

  const std::vector<TraceValue>& outputs() const { return post.back(); }

  std::vector<std::optional<Rational>> exact_outputs() const
  {
    std::vector<std::optional<Rational>> y;
    for (const auto& v : outputs())
      y.push_back(v.exact);
    return y;
  }
};

namespace detail {

template <class D>
TraceValue trace_value(const D& dom, const typename D::Value& v)
{
  TraceValue t{dom.approx(v), dom.exact(v), 0};
  if constexpr (std::is_same_v<D, FxpDomain>)
    t.raw = v;
  return t;
}

template <class D>
Trace trace_run(const Network& net, D& dom, const Semantics& sem, std::vector<typename D::Value> x,
                std::vector<WrapEvent>& events)
{
  Trace t;
  t.semantics = sem;
  for (const auto& v : x)
    t.inputs.push_back(trace_value(dom, v));
  auto layers = compile_layers(net, dom);
  for (const auto& l : layers) {
    t.pre.emplace_back(l.rows);
    t.post.emplace_back(l.rows);
  }
  run_layers(layers, dom, std::move(x),
             [&](std::size_t li, std::size_t j, const typename D::Value& u, const typename D::Value& y) {
               t.pre[li][j] = trace_value(dom, u);
               t.post[li][j] = trace_value(dom, y);
             });
  t.wraps = events;
  return t;
}

template <class D>
std::vector<typename D::Value> quantize_inputs(D& dom, const Network& net, std::span<const double> x)
{
  if (x.size() != net.input_dim())
    throw DimensionError("input has " + std::to_string(x.size()) + " entries, network expects " +
                         std::to_string(net.input_dim()));
  std::vector<typename D::Value> v;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dom.locate(0, i);
    v.push_back(dom.input(x[i]));
  }
  return v;
}

} // namespace detail

/// Inputs, weights and biases are quantized with the same rounding mode.
inline Trace forward_fxp(const Network& net, std::span<const double> x, const FxpFormat& fmt, RoundingMode mode,
                         const TableSet& tables)
{
  std::vector<WrapEvent> events;
  const Semantics sem = Semantics::fxp(fmt, mode);
  FxpDomain dom(sem, &tables, &events);
  auto in = detail::quantize_inputs(dom, net, x);
  return detail::trace_run(net, dom, sem, std::move(in), events);
}

inline Trace forward_float32(const Network& net, std::span<const double> x, const TableSet& tables)
{
  std::vector<WrapEvent> events;
  Float32Domain dom(&tables);
  auto in = detail::quantize_inputs(dom, net, x);
  return detail::trace_run(net, dom, Semantics::float32(), std::move(in), events);
}

/// Exact rational execution; tabled activations go through the real table.
inline Trace forward_exact(const Network& net, std::span<const double> x, const TableSet& tables)
{
  std::vector<WrapEvent> events;
  RealDomain dom(&tables);
  auto in = detail::quantize_inputs(dom, net, x);
  return detail::trace_run(net, dom, Semantics::real(), std::move(in), events);
}

inline Trace execute(const Network& net, std::span<const double> x, const Semantics& sem, const TableSet& tables)
{
  switch (sem.kind) {
  case NumericKind::Real: return forward_exact(net, x, tables);
  case NumericKind::Float32: return forward_float32(net, x, tables);
  case NumericKind::Fxp: return forward_fxp(net, x, sem.format, sem.rounding, tables);
  }
  throw Error("unknown semantics");
}

/// Runs from inputs already in the value domain (exact lattice points,
/// floats, or rationals), e.g. inputs decoded from a solver model.
inline Trace execute_values(const Network& net, const std::vector<Rational>& values, const Semantics& sem,
                            const TableSet& tables)
{
  if (values.size() != net.input_dim())
    throw DimensionError("input has " + std::to_string(values.size()) + " entries, network expects " +
                         std::to_string(net.input_dim()));
  std::vector<WrapEvent> events;
  auto go = [&](auto dom) {
    std::vector<typename decltype(dom)::Value> in;
    for (const auto& v : values)
      in.push_back(dom.from_exact(v));
    return detail::trace_run(net, dom, sem, std::move(in), events);
  };
  switch (sem.kind) {
  case NumericKind::Real: return go(RealDomain(&tables));
  case NumericKind::Float32: return go(Float32Domain(&tables));
  case NumericKind::Fxp: return go(FxpDomain(sem, &tables, &events));
  }
  throw Error("unknown semantics");
}

enum class PropertyStatus
{
  Holds,
  Violated,
};

inline std::string_view status_name(PropertyStatus s) { return s == PropertyStatus::Holds ? "Holds" : "Violated"; }

/// Compares output values against the property's constants exactly, so a
/// constant that is not representable never weakens the condition.
inline PropertyStatus check_property(const Trace& trace, const SafetyProperty& prop)
{
  if (prop.assertion.arity_needed() > trace.outputs().size())
    throw DimensionError("property references more outputs than the trace has");
  const auto y = trace.exact_outputs();
  return evaluate(prop.assertion, y) ? PropertyStatus::Holds : PropertyStatus::Violated;
}

/// Trace-free evaluation for bulk sampling.
template <class D>
class CompiledNetwork
{
public:
  using Value = typename D::Value;

  CompiledNetwork(const Network& net, D dom) : dom_(std::move(dom)), layers_(compile_layers(net, dom_)) {}

  std::vector<Value> run(std::span<const double> x)
  {
    std::vector<Value> in;
    for (double v : x)
      in.push_back(dom_.input(v));
    return run_layers(layers_, dom_, std::move(in), [](auto, auto, const auto&, const auto&) {});
  }

  template <class Visit>
  std::vector<Value> run(std::span<const double> x, Visit&& visit)
  {
    std::vector<Value> in;
    for (double v : x)
      in.push_back(dom_.input(v));
    return run_layers(layers_, dom_, std::move(in), visit);
  }

  D& domain() { return dom_; }
  const std::vector<CompiledLayer<D>>& layers() const { return layers_; }

private:
  D dom_;
  std::vector<CompiledLayer<D>> layers_;
};

inline std::vector<double> sample_region(const HyperRect& region, std::mt19937_64& rng)
{
  std::vector<double> x;
  for (const Bound& b : region) {
    std::uniform_real_distribution<double> d(b.lo, b.hi);
    x.push_back(b.lo == b.hi ? b.lo : std::min(d(rng), b.hi));
  }
  return x;
}

struct SamplingResult
{
  std::size_t samples = 0;
  std::size_t violations = 0;
  std::optional<std::vector<double>> first_violation;
};

/// Uniform random search for property violations inside the input region.
inline SamplingResult sample_property(const Network& net, const SafetyProperty& prop, const Semantics& sem,
                                      const TableSet& tables, std::size_t samples, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  SamplingResult res;
  auto loop = [&](auto dom) {
    CompiledNetwork cn(net, std::move(dom));
    std::vector<std::optional<Rational>> y;
    for (std::size_t s = 0; s < samples; ++s) {
      auto x = sample_region(prop.input_region, rng);
      auto out = cn.run(x);
      y.clear();
      for (const auto& v : out)
        y.push_back(cn.domain().exact(v));
      ++res.samples;
      if (!evaluate(prop.assertion, y)) {
        if (!res.first_violation)
          res.first_violation = x;
        ++res.violations;
      }
    }
  };
  switch (sem.kind) {
  case NumericKind::Real: loop(RealDomain(&tables)); break;
  case NumericKind::Float32: loop(Float32Domain(&tables)); break;
  case NumericKind::Fxp: loop(FxpDomain(sem, &tables)); break;
  }
  return res;
}

} // namespace qnnv
