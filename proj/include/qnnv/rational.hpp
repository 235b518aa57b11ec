#pragma once

// Exact rational helpers on top of GMP. Every finite double is a dyadic
// rational, so conversions from double are exact.

#include <gmpxx.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace qnnv {

using Rational = mpq_class;
using BigInt = mpz_class;

inline Rational rational_from_double(double x)
{
  if (!std::isfinite(x))
    throw std::invalid_argument("non-finite value has no rational form");
  Rational r(x);
  r.canonicalize();
  return r;
}

inline Rational rational_from_long_double(long double x)
{
  if (!std::isfinite(x))
    throw std::invalid_argument("non-finite value has no rational form");
  // Split into two doubles; the 64-bit mantissa needs at most two pieces.
  double hi = static_cast<double>(x);
  double lo = static_cast<double>(x - static_cast<long double>(hi));
  Rational r = rational_from_double(hi) + rational_from_double(lo);
  r.canonicalize();
  return r;
}

inline BigInt pow2(unsigned e)
{
  BigInt r;
  mpz_ui_pow_ui(r.get_mpz_t(), 2, e);
  return r;
}

inline Rational pow2_rational(int e)
{
  if (e >= 0)
    return Rational(pow2(static_cast<unsigned>(e)));
  Rational r(BigInt(1), pow2(static_cast<unsigned>(-e)));
  r.canonicalize();
  return r;
}

inline BigInt floor_of(const Rational& q)
{
  BigInt r;
  mpz_fdiv_q(r.get_mpz_t(), q.get_num_mpz_t(), q.get_den_mpz_t());
  return r;
}

inline BigInt ceil_of(const Rational& q)
{
  BigInt r;
  mpz_cdiv_q(r.get_mpz_t(), q.get_num_mpz_t(), q.get_den_mpz_t());
  return r;
}

inline bool is_integer(const Rational& q) { return q.get_den() == 1; }

inline __int128 to_int128(const BigInt& z)
{
  // Callers guarantee |z| < 2^127.
  BigInt a = abs(z);
  BigInt hi = a >> 64;
  BigInt lo = a - (hi << 64);
  unsigned __int128 mag = (static_cast<unsigned __int128>(hi.get_ui()) << 64) | lo.get_ui();
  if (sizeof(unsigned long) < 8)
    throw std::logic_error("64-bit unsigned long required");
  return sgn(z) < 0 ? -static_cast<__int128>(mag) : static_cast<__int128>(mag);
}

inline BigInt from_int128(__int128 v)
{
  bool neg = v < 0;
  unsigned __int128 mag = neg ? -static_cast<unsigned __int128>(v) : static_cast<unsigned __int128>(v);
  BigInt hi(static_cast<unsigned long>(mag >> 64));
  BigInt lo(static_cast<unsigned long>(static_cast<std::uint64_t>(mag)));
  BigInt r = (hi << 64) + lo;
  return neg ? BigInt(-r) : r;
}

inline std::int64_t to_int64(const BigInt& z)
{
  if (!z.fits_slong_p())
    throw std::overflow_error("integer does not fit in 64 bits");
  return z.get_si();
}

inline double to_double(const Rational& q) { return q.get_d(); }

inline std::string to_string(const Rational& q) { return q.get_str(); }

// Decimal rendering with a fixed number of digits, for human output only.
inline std::string to_decimal(const Rational& q, int digits = 6)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, q.get_d());
  return buf;
}

} // namespace qnnv
