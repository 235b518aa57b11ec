#pragma once

// Error-bounded lookup tables for Lipschitz activations.
//
// The activation's domain is split into disjoint intervals U_i with Lipschitz
// constants lambda_i. A finite interval of length L_i sampled uniformly at
// N_i >= 1 + L_i * lambda_i / eps points (endpoints included) keeps the
// nearest-sample approximation within eps of the activation. Unbounded
// intervals must have lambda_i = 0 and are represented by one constant.

#include "qnnv/error.hpp"
#include "qnnv/fixed_point.hpp"
#include "qnnv/network.hpp"
#include "qnnv/rational.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace qnnv {

enum class Approximator
{
  ConstantAt,  ///< every u in the piece maps to one anchor point
  UniformGrid, ///< nearest sample of a uniform grid, ties toward zero
};

struct Piece
{
  double lo = 0; ///< may be -infinity
  double hi = 0; ///< may be +infinity
  bool lo_closed = false;
  bool hi_closed = false;
  double lipschitz = 0;
  Approximator approximator = Approximator::UniformGrid;
  double anchor = 0; ///< ConstantAt only

  double length() const { return hi - lo; }
  bool finite() const { return std::isfinite(lo) && std::isfinite(hi); }

  bool contains(double u) const
  {
    const bool above = lo_closed ? u >= lo : u > lo;
    const bool below = hi_closed ? u <= hi : u < hi;
    return above && below;
  }
};

struct PiecewiseSpec
{
  ActivationKind source;
  std::vector<Piece> pieces;

  void validate() const
  {
    if (pieces.empty())
      throw Error("piecewise spec has no pieces");
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      const Piece& p = pieces[i];
      if (!(p.lo <= p.hi) || std::isnan(p.lo) || std::isnan(p.hi))
        throw Error("piece " + std::to_string(i) + ": bad interval");
      if (!(p.lipschitz >= 0))
        throw Error("piece " + std::to_string(i) + ": Lipschitz constant must be >= 0");
      if (i > 0) {
        const Piece& q = pieces[i - 1];
        if (q.hi > p.lo || (q.hi == p.lo && q.hi_closed && p.lo_closed))
          throw Error("pieces " + std::to_string(i - 1) + " and " + std::to_string(i) + " overlap or are unordered");
      }
    }
  }
};

inline long double exact_activation(const ActivationKind& a, long double u) { return apply_activation(a, u); }

/// Three pieces (-inf,-c], (-c,c), [c,inf) with constant tails anchored at
/// the cutoffs and a uniform grid in the middle.
inline PiecewiseSpec default_spec(const ActivationKind& kind, double cutoff)
{
  if (!kind.is_tabled())
    throw Error("activation '" + kind.name() + "' is exact, no table");
  if (!(cutoff > 0) || !std::isfinite(cutoff))
    throw Error("cutoff must be a positive finite number");
  const double lambda = kind.kind == Activation::Sigmoid ? 0.25 : 1.0;
  constexpr double inf = std::numeric_limits<double>::infinity();
  PiecewiseSpec s;
  s.source = kind;
  s.pieces.push_back({-inf, -cutoff, false, true, 0.0, Approximator::ConstantAt, -cutoff});
  s.pieces.push_back({-cutoff, cutoff, false, false, lambda, Approximator::UniformGrid, 0.0});
  s.pieces.push_back({cutoff, inf, true, false, 0.0, Approximator::ConstantAt, cutoff});
  return s;
}

/// ceil(1 + L * lambda / eps). Quotients within 1e-9 (relative) of an
/// integer are snapped to it so decimal inputs such as 0.01 behave as written.
inline std::size_t required_samples(double length, double lambda, double epsilon)
{
  if (!(epsilon > 0))
    throw Error("epsilon must be positive");
  if (!(length >= 0) || !(lambda >= 0))
    throw Error("length and Lipschitz constant must be non-negative");
  if (lambda == 0 || length == 0)
    return 1;
  if (std::isinf(length))
    throw Error("an unbounded piece with positive Lipschitz constant cannot be sampled");
  double q = length * lambda / epsilon;
  const double r = std::round(q);
  if (std::fabs(q - r) <= 1e-9 * std::max(1.0, std::fabs(q)))
    q = r;
  return 1 + static_cast<std::size_t>(std::ceil(q));
}

struct TablePiece
{
  Piece piece;
  std::vector<double> inputs;  ///< sorted; one entry (the anchor) for ConstantAt
  std::vector<double> outputs; ///< exact activation at each input
};

struct LookupTable
{
  ActivationKind source;
  double epsilon = 0;
  std::vector<TablePiece> pieces;

  std::size_t grid_samples() const
  {
    std::size_t n = 0;
    for (const auto& p : pieces)
      if (p.piece.approximator == Approximator::UniformGrid)
        n += p.inputs.size();
    return n;
  }
};

namespace detail {

inline std::vector<double> uniform_grid(double lo, double hi, std::size_t n)
{
  std::vector<double> g(n);
  if (n == 1) {
    g[0] = lo + (hi - lo) / 2;
    return g;
  }
  const long double span = static_cast<long double>(hi) - lo;
  for (std::size_t i = 0; i < n; ++i)
    g[i] = static_cast<double>(lo + span * static_cast<long double>(i) / static_cast<long double>(n - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

inline TablePiece sample_piece(const PiecewiseSpec& spec, const Piece& p, std::size_t n)
{
  TablePiece tp{p, {}, {}};
  if (p.approximator == Approximator::ConstantAt) {
    tp.inputs = {p.anchor};
  } else {
    if (!p.finite())
      throw Error("a uniform grid needs a finite interval");
    tp.inputs = uniform_grid(p.lo, p.hi, n);
  }
  for (double u : tp.inputs)
    tp.outputs.push_back(static_cast<double>(exact_activation(spec.source, u)));
  return tp;
}

} // namespace detail

inline LookupTable build_table(const PiecewiseSpec& spec, double epsilon)
{
  spec.validate();
  if (!(epsilon > 0))
    throw Error("epsilon must be positive");
  LookupTable t{spec.source, epsilon, {}};
  for (const Piece& p : spec.pieces) {
    if (!p.finite() && p.lipschitz > 0)
      throw Error("cannot bound an unbounded piece with positive Lipschitz constant");
    std::size_t n = p.approximator == Approximator::ConstantAt ? 1 : required_samples(p.length(), p.lipschitz, epsilon);
    t.pieces.push_back(detail::sample_piece(spec, p, n));
  }
  return t;
}

/// Grid-step parameterization: every finite grid piece is sampled every
/// `step` units (rounded to a whole number of intervals). Epsilon is reported
/// as the resulting Lipschitz bound of the worst piece.
inline LookupTable build_table_with_step(const PiecewiseSpec& spec, double step)
{
  spec.validate();
  if (!(step > 0))
    throw Error("grid step must be positive");
  LookupTable t{spec.source, 0.0, {}};
  for (const Piece& p : spec.pieces) {
    std::size_t n = 1;
    if (p.approximator == Approximator::UniformGrid) {
      if (!p.finite())
        throw Error("a uniform grid needs a finite interval");
      n = 1 + static_cast<std::size_t>(std::llround(p.length() / step));
      if (n > 1)
        t.epsilon = std::max(t.epsilon, p.length() / static_cast<double>(n - 1) * p.lipschitz);
    }
    t.pieces.push_back(detail::sample_piece(spec, p, n));
  }
  return t;
}

namespace detail {

/// Index of the sample nearest to u in a sorted grid; ties go to the sample
/// with smaller magnitude (the non-negative one when magnitudes match).
inline std::size_t nearest_index(const std::vector<double>& g, double u)
{
  auto it = std::lower_bound(g.begin(), g.end(), u);
  if (it == g.begin())
    return 0;
  if (it == g.end())
    return g.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - g.begin());
  const std::size_t lo = hi - 1;
  const Rational ru = rational_from_double(u);
  const Rational dlo = ru - rational_from_double(g[lo]);
  const Rational dhi = rational_from_double(g[hi]) - ru;
  if (dlo < dhi)
    return lo;
  if (dhi < dlo)
    return hi;
  const double alo = std::fabs(g[lo]), ahi = std::fabs(g[hi]);
  if (alo < ahi)
    return lo;
  return hi;
}

} // namespace detail

inline double lut_eval(const LookupTable& table, double u)
{
  for (const TablePiece& tp : table.pieces) {
    if (!tp.piece.contains(u))
      continue;
    return tp.outputs[detail::nearest_index(tp.inputs, u)];
  }
  // Outside every piece (custom specs that do not cover R): clamp to the
  // nearest piece end.
  if (u < table.pieces.front().piece.lo)
    return table.pieces.front().outputs.front();
  return table.pieces.back().outputs.back();
}

inline void write_csv(const LookupTable& table, std::ostream& out)
{
  out << "piece,input,output\n";
  out.precision(17);
  for (std::size_t i = 0; i < table.pieces.size(); ++i)
    for (std::size_t j = 0; j < table.pieces[i].inputs.size(); ++j)
      out << i << "," << table.pieces[i].inputs[j] << "," << table.pieces[i].outputs[j] << "\n";
}

/// Exact step function u -> value. Segment s (0-based) is selected when u
/// has passed exactly s thresholds; u passes threshold t_i when u > t_i, or
/// u >= t_i if closed[i].
struct StepFunction
{
  std::vector<Rational> thresholds;
  std::vector<bool> closed;
  std::vector<Rational> values; ///< thresholds.size() + 1 entries

  static bool passes(const Rational& u, const Rational& t, bool is_closed) { return is_closed ? u >= t : u > t; }

  std::size_t segment(const Rational& u) const
  {
    std::size_t lo = 0, hi = thresholds.size();
    while (lo < hi) {
      std::size_t mid = (lo + hi) / 2;
      if (passes(u, thresholds[mid], closed[mid]))
        lo = mid + 1;
      else
        hi = mid;
    }
    return lo;
  }

  const Rational& eval(const Rational& u) const { return values[segment(u)]; }

  /// Smallest and largest value over u in [a, b].
  std::pair<Rational, Rational> range(const Rational& a, const Rational& b) const
  {
    std::size_t s0 = segment(a), s1 = segment(b);
    Rational mn = values[s0], mx = values[s0];
    for (std::size_t s = s0 + 1; s <= s1; ++s) {
      if (values[s] < mn)
        mn = values[s];
      if (values[s] > mx)
        mx = values[s];
    }
    return {mn, mx};
  }

  bool monotone_non_decreasing() const
  {
    for (std::size_t i = 1; i < values.size(); ++i)
      if (values[i] < values[i - 1])
        return false;
    return true;
  }

  /// Drops thresholds whose neighbouring segments hold the same value.
  void compact()
  {
    StepFunction out;
    out.values.push_back(values[0]);
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (values[i + 1] == out.values.back())
        continue;
      out.thresholds.push_back(thresholds[i]);
      out.closed.push_back(closed[i]);
      out.values.push_back(values[i + 1]);
    }
    *this = std::move(out);
  }
};

namespace detail {

/// Nearest-point selection over sorted distinct points, as a step function.
inline StepFunction nearest_point_steps(const std::vector<Rational>& points, const std::vector<Rational>& outputs)
{
  StepFunction f;
  f.values.push_back(outputs.front());
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    Rational mid = (points[i] + points[i + 1]) / 2;
    mid.canonicalize();
    const Rational alo = abs(points[i]), ahi = abs(points[i + 1]);
    // Tie goes to the smaller magnitude; equal magnitudes go to the upper
    // (non-negative) point.
    const bool tie_to_upper = !(alo < ahi);
    f.thresholds.push_back(mid);
    f.closed.push_back(tie_to_upper);
    f.values.push_back(outputs[i + 1]);
  }
  return f;
}

} // namespace detail

/// Exact step-function form of a real-domain table.
inline StepFunction step_function(const LookupTable& table)
{
  StepFunction f;
  for (std::size_t pi = 0; pi < table.pieces.size(); ++pi) {
    const TablePiece& tp = table.pieces[pi];
    std::vector<Rational> pts, outs;
    for (std::size_t j = 0; j < tp.inputs.size(); ++j) {
      pts.push_back(rational_from_double(tp.inputs[j]));
      outs.push_back(rational_from_double(tp.outputs[j]));
    }
    StepFunction local = detail::nearest_point_steps(pts, outs);
    if (pi == 0) {
      f = std::move(local);
      continue;
    }
    // Boundary with the previous piece at its lower end.
    f.thresholds.push_back(rational_from_double(tp.piece.lo));
    f.closed.push_back(tp.piece.lo_closed);
    f.values.push_back(local.values.front());
    for (std::size_t j = 0; j < local.thresholds.size(); ++j) {
      f.thresholds.push_back(local.thresholds[j]);
      f.closed.push_back(local.closed[j]);
      f.values.push_back(local.values[j + 1]);
    }
  }
  f.compact();
  return f;
}

/// Table re-expressed on a fixed-point lattice: grid inputs snapped to the
/// lattice (nearest, deduplicated), outputs quantized from the activation at
/// the snapped input. Lookup picks the nearest snapped input.
struct FxpLookupTable
{
  ActivationKind source;
  FxpFormat format;
  std::vector<std::int64_t> inputs; ///< raw, strictly increasing
  std::vector<std::int64_t> outputs;
  std::size_t dropped_out_of_range = 0;
  std::vector<std::string> warnings;
};

inline FxpLookupTable lut_to_fxp(const LookupTable& table, const FxpFormat& fmt,
                                 RoundingMode output_rounding = RoundingMode::TruncateTowardNegInf)
{
  fmt.validate();
  FxpLookupTable out{table.source, fmt, {}, {}, 0, {}};
  const Rational lo = fmt.min_value(), hi = fmt.max_value();
  for (const TablePiece& tp : table.pieces) {
    for (double u : tp.inputs) {
      const Rational ru = rational_from_double(u);
      if (ru < lo || ru > hi) {
        ++out.dropped_out_of_range;
        continue;
      }
      const FxpValue snapped = fxp_from_real(u, fmt, RoundingMode::NearestTiesTowardZero);
      if (!out.inputs.empty() && snapped.raw <= out.inputs.back())
        continue; // deduplicate; snapping is monotone
      out.inputs.push_back(snapped.raw);
      const double at = snapped.to_double();
      out.outputs.push_back(
        fxp_from_real(static_cast<double>(exact_activation(table.source, at)), fmt, output_rounding).raw);
    }
  }
  if (out.inputs.empty())
    throw Error("no table sample is representable in " + fmt.name());
  if (out.dropped_out_of_range > 0)
    out.warnings.push_back(std::to_string(out.dropped_out_of_range) + " table samples lie outside the range of " +
                           fmt.name() + " and were dropped; lookups clamp to the representable end");
  if (table.epsilon > 0 && table.epsilon < std::ldexp(1.0, -fmt.l))
    out.warnings.push_back("table accuracy " + std::to_string(table.epsilon) + " is finer than the " + fmt.name() +
                           " quantization step; the format dominates the table error");
  return out;
}

/// Nearest snapped input with ties toward zero, all in integers.
inline std::int64_t lut_eval_fxp(const FxpLookupTable& t, std::int64_t u)
{
  auto it = std::lower_bound(t.inputs.begin(), t.inputs.end(), u);
  if (it == t.inputs.begin())
    return t.outputs.front();
  if (it == t.inputs.end())
    return t.outputs.back();
  const std::size_t hi = static_cast<std::size_t>(it - t.inputs.begin());
  const std::size_t lo = hi - 1;
  const __int128 twice_u = static_cast<__int128>(u) * 2;
  const __int128 sum = static_cast<__int128>(t.inputs[lo]) + t.inputs[hi];
  if (twice_u < sum)
    return t.outputs[lo];
  if (twice_u > sum)
    return t.outputs[hi];
  const auto alo = t.inputs[lo] < 0 ? -static_cast<__int128>(t.inputs[lo]) : static_cast<__int128>(t.inputs[lo]);
  const auto ahi = t.inputs[hi] < 0 ? -static_cast<__int128>(t.inputs[hi]) : static_cast<__int128>(t.inputs[hi]);
  return alo < ahi ? t.outputs[lo] : t.outputs[hi];
}

inline StepFunction step_function(const FxpLookupTable& t)
{
  std::vector<Rational> pts, outs;
  const Rational ulp = t.format.ulp();
  for (std::size_t i = 0; i < t.inputs.size(); ++i) {
    pts.push_back(Rational(BigInt(t.inputs[i])) * ulp);
    outs.push_back(Rational(BigInt(t.outputs[i])) * ulp);
  }
  StepFunction f = detail::nearest_point_steps(pts, outs);
  f.compact();
  return f;
}

/// Table re-expressed over binary32: inputs rounded to float (nearest-even),
/// outputs the float nearest the activation at that input.
struct Float32LookupTable
{
  ActivationKind source;
  std::vector<float> inputs;
  std::vector<float> outputs;
};

inline Float32LookupTable lut_to_float32(const LookupTable& table)
{
  Float32LookupTable out{table.source, {}, {}};
  for (const TablePiece& tp : table.pieces)
    for (double u : tp.inputs) {
      const float f = static_cast<float>(u);
      if (!out.inputs.empty() && f <= out.inputs.back())
        continue;
      out.inputs.push_back(f);
      out.outputs.push_back(static_cast<float>(exact_activation(table.source, f)));
    }
  return out;
}

/// Midpoints of adjacent floats are exact in double, so this is exact. NaN
/// passes no threshold and selects the first sample, as the ite encoding does.
inline float lut_eval_float32(const Float32LookupTable& t, float u)
{
  if (std::isnan(u))
    return t.outputs.front();
  auto it = std::lower_bound(t.inputs.begin(), t.inputs.end(), u);
  if (it == t.inputs.begin())
    return t.outputs.front();
  if (it == t.inputs.end())
    return t.outputs.back();
  const std::size_t hi = static_cast<std::size_t>(it - t.inputs.begin());
  const std::size_t lo = hi - 1;
  const double mid = (static_cast<double>(t.inputs[lo]) + static_cast<double>(t.inputs[hi])) / 2;
  if (u < mid)
    return t.outputs[lo];
  if (u > mid)
    return t.outputs[hi];
  return std::fabs(t.inputs[lo]) < std::fabs(t.inputs[hi]) ? t.outputs[lo] : t.outputs[hi];
}

inline StepFunction step_function(const Float32LookupTable& t)
{
  std::vector<Rational> pts, outs;
  for (std::size_t i = 0; i < t.inputs.size(); ++i) {
    pts.push_back(rational_from_double(t.inputs[i]));
    outs.push_back(rational_from_double(t.outputs[i]));
  }
  StepFunction f = detail::nearest_point_steps(pts, outs);
  f.compact();
  return f;
}

} // namespace qnnv
