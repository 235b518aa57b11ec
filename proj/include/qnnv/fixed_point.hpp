#pragma once

// Two's-complement fixed-point implementation model.
//
// A format <k,l> stores a value in k+l bits: k bits for sign and integer
// part, l fractional bits, value = raw * 2^-l. Overflow wraps modulo
// 2^(k+l); nothing saturates. Every operation that wraps bumps an optional
// WrapCounter so callers can surface potential overflow.

#include "qnnv/rational.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qnnv {

struct FxpFormat
{
  int k = 1; ///< integer bits, sign included
  int l = 0; ///< fractional bits

  constexpr int total_bits() const { return k + l; }

  bool valid() const { return k >= 1 && l >= 0 && k + l <= 64; }

  void validate() const
  {
    if (!valid())
      throw std::invalid_argument("invalid fixed-point format " + name() +
                                  " (need k >= 1, l >= 0, k + l <= 64)");
  }

  std::int64_t min_raw() const
  {
    return total_bits() == 64 ? INT64_MIN : -(std::int64_t{1} << (total_bits() - 1));
  }

  std::int64_t max_raw() const
  {
    return total_bits() == 64 ? INT64_MAX : (std::int64_t{1} << (total_bits() - 1)) - 1;
  }

  Rational ulp() const { return pow2_rational(-l); }
  Rational min_value() const { return Rational(BigInt(min_raw())) * ulp(); }
  Rational max_value() const { return Rational(BigInt(max_raw())) * ulp(); }

  std::string name() const { return "Q" + std::to_string(k) + "." + std::to_string(l); }

  friend bool operator==(const FxpFormat&, const FxpFormat&) = default;
};

/// Parses "Q4.6" (the leading Q is optional, case-insensitive).
inline FxpFormat parse_format(std::string_view text)
{
  std::string_view s = text;
  if (!s.empty() && (s.front() == 'Q' || s.front() == 'q'))
    s.remove_prefix(1);
  auto dot = s.find('.');
  if (dot == std::string_view::npos)
    throw std::invalid_argument("fixed-point format must look like Q<k>.<l>, got '" + std::string(text) + "'");
  FxpFormat f;
  auto parse_int = [&](std::string_view part, int& out) {
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    if (ec != std::errc{} || ptr != part.data() + part.size() || part.empty())
      throw std::invalid_argument("bad number in fixed-point format '" + std::string(text) + "'");
  };
  parse_int(s.substr(0, dot), f.k);
  parse_int(s.substr(dot + 1), f.l);
  f.validate();
  return f;
}

enum class RoundingMode
{
  TruncateTowardNegInf,
  NearestTiesTowardZero,
};

inline std::string_view rounding_name(RoundingMode m)
{
  return m == RoundingMode::TruncateTowardNegInf ? "trunc" : "nearest";
}

inline RoundingMode parse_rounding(std::string_view s)
{
  if (s == "trunc" || s == "truncate" || s == "floor")
    return RoundingMode::TruncateTowardNegInf;
  if (s == "nearest")
    return RoundingMode::NearestTiesTowardZero;
  throw std::invalid_argument("unknown rounding mode '" + std::string(s) + "' (expected trunc or nearest)");
}

struct WrapCounter
{
  std::uint64_t count = 0;
  void bump(bool wrapped)
  {
    if (wrapped)
      ++count;
  }
};

struct FxpValue
{
  std::int64_t raw = 0;
  FxpFormat format;

  Rational value() const { return Rational(BigInt(raw)) * format.ulp(); }
  double to_double() const { return std::ldexp(static_cast<double>(raw), -format.l); }

  /// Bit pattern split as integer|fraction, e.g. 00011|010 for +3.25 in Q5.3.
  std::string bits() const
  {
    const int n = format.total_bits();
    const auto u = static_cast<std::uint64_t>(raw);
    std::string s;
    s.reserve(static_cast<std::size_t>(n) + 1);
    for (int i = n - 1; i >= 0; --i) {
      s.push_back(((u >> i) & 1u) ? '1' : '0');
      if (i == format.l)
        s.push_back('|');
    }
    if (format.l == 0)
      s.push_back('|');
    return s;
  }

  friend bool operator==(const FxpValue&, const FxpValue&) = default;
};

namespace detail {

inline bool fits(__int128 v, const FxpFormat& f)
{
  return v >= f.min_raw() && v <= f.max_raw();
}

/// Low n bits of v, reinterpreted as signed.
inline std::int64_t wrap_raw(__int128 v, int n)
{
  auto u = static_cast<std::uint64_t>(static_cast<unsigned __int128>(v));
  if (n == 64)
    return static_cast<std::int64_t>(u);
  const std::uint64_t mask = (std::uint64_t{1} << n) - 1;
  u &= mask;
  if (u & (std::uint64_t{1} << (n - 1)))
    return static_cast<std::int64_t>(u) - (std::int64_t{1} << n);
  return static_cast<std::int64_t>(u);
}

/// p / 2^shift rounded per mode. Nearest breaks ties toward zero.
inline __int128 round_shift(__int128 p, int shift, RoundingMode mode)
{
  if (shift == 0)
    return p;
  __int128 q = p >> shift; // arithmetic shift: floor division
  if (mode == RoundingMode::TruncateTowardNegInf)
    return q;
  const __int128 rem = p - (q << shift);
  const __int128 half = __int128{1} << (shift - 1);
  if (rem > half || (rem == half && p < 0))
    ++q;
  return q;
}

inline BigInt round_rational(const Rational& v, RoundingMode mode)
{
  BigInt f = floor_of(v);
  if (mode == RoundingMode::TruncateTowardNegInf)
    return f;
  Rational frac = v - Rational(f);
  Rational half(1, 2);
  if (frac > half || (frac == half && sgn(v) < 0))
    f += 1;
  return f;
}

inline std::int64_t wrap_big(const BigInt& v, int n)
{
  BigInt m = pow2(static_cast<unsigned>(n));
  BigInt r;
  mpz_fdiv_r(r.get_mpz_t(), v.get_mpz_t(), m.get_mpz_t());
  if (r >= (m >> 1))
    r -= m;
  return to_int64(r);
}

} // namespace detail

/// Quantizes an exact rational; wraps when out of range.
inline FxpValue fxp_from_rational(const Rational& x, const FxpFormat& fmt, RoundingMode mode,
                                  WrapCounter* wraps = nullptr)
{
  BigInt r = detail::round_rational(x * Rational(pow2(static_cast<unsigned>(fmt.l))), mode);
  const bool in_range = r >= BigInt(fmt.min_raw()) && r <= BigInt(fmt.max_raw());
  if (wraps)
    wraps->bump(!in_range);
  return {in_range ? to_int64(r) : detail::wrap_big(r, fmt.total_bits()), fmt};
}

inline FxpValue fxp_from_real(double x, const FxpFormat& fmt, RoundingMode mode, WrapCounter* wraps = nullptr)
{
  if (!std::isfinite(x))
    throw std::invalid_argument("cannot quantize a non-finite value");
  const double v = std::ldexp(x, fmt.l);
  if (std::fabs(v) >= 0x1p62)
    return fxp_from_rational(rational_from_double(x), fmt, mode, wraps);
  double f = std::floor(v);
  if (mode == RoundingMode::NearestTiesTowardZero) {
    const double frac = v - f; // exact: |v| < 2^62 and f is integral
    if (frac > 0.5 || (frac == 0.5 && v < 0))
      f += 1.0;
  }
  const auto r = static_cast<__int128>(static_cast<std::int64_t>(f));
  const bool in_range = detail::fits(r, fmt);
  if (wraps)
    wraps->bump(!in_range);
  return {detail::wrap_raw(r, fmt.total_bits()), fmt};
}

inline FxpValue fxp_add(const FxpValue& a, const FxpValue& b, WrapCounter* wraps = nullptr)
{
  if (!(a.format == b.format))
    throw std::invalid_argument("fxp_add: format mismatch");
  const __int128 s = static_cast<__int128>(a.raw) + b.raw;
  if (wraps)
    wraps->bump(!detail::fits(s, a.format));
  return {detail::wrap_raw(s, a.format.total_bits()), a.format};
}

/// Exact 2(k+l)-bit product, shifted right by l with rounding, wrapped to k+l bits.
inline FxpValue fxp_mult(const FxpValue& a, const FxpValue& b, RoundingMode mode, WrapCounter* wraps = nullptr)
{
  if (!(a.format == b.format))
    throw std::invalid_argument("fxp_mult: format mismatch");
  const __int128 p = static_cast<__int128>(a.raw) * b.raw;
  const __int128 q = detail::round_shift(p, a.format.l, mode);
  if (wraps)
    wraps->bump(!detail::fits(q, a.format));
  return {detail::wrap_raw(q, a.format.total_bits()), a.format};
}

/// Smallest k (sign bit included) such that max_abs < 2^(k-1).
inline int min_integer_bits(double max_abs)
{
  if (!(max_abs >= 0) || std::isinf(max_abs))
    throw std::invalid_argument("min_integer_bits: need a finite, non-negative magnitude");
  int k = 1;
  while (!(max_abs < std::ldexp(1.0, k - 1)))
    ++k;
  return k;
}

inline int min_integer_bits(const Rational& max_abs)
{
  if (sgn(max_abs) < 0)
    throw std::invalid_argument("min_integer_bits: negative magnitude");
  int k = 1;
  while (!(max_abs < pow2_rational(k - 1)))
    ++k;
  return k;
}

} // namespace qnnv
