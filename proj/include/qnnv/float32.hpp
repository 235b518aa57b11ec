#pragma once

// binary32 helpers: directed and nearest rounding of exact rationals, and
// bit-level access for SMT-LIB constants.

#include "qnnv/rational.hpp"

#include <bit>
#include <cfloat>
#include <cmath>
#include <cstdint>
#include <limits>

namespace qnnv {

enum class FloatDir
{
  Nearest, ///< ties to even
  Down,
  Up,
};

inline float rational_to_float(const Rational& q, FloatDir dir = FloatDir::Nearest)
{
  if (sgn(q) == 0)
    return 0.0f;
  const bool neg = sgn(q) < 0;
  const Rational a = abs(q);
  // e = floor(log2 a)
  long e = static_cast<long>(mpz_sizeinbase(a.get_num_mpz_t(), 2)) -
           static_cast<long>(mpz_sizeinbase(a.get_den_mpz_t(), 2));
  while (a < pow2_rational(static_cast<int>(e)))
    --e;
  while (a >= pow2_rational(static_cast<int>(e + 1)))
    ++e;
  if (e > 200)
    e = 200; // far beyond FLT_MAX; the overflow branch below handles it
  const int quantum = e < -126 ? -149 : static_cast<int>(e) - 23;
  const Rational m = a * pow2_rational(-quantum);
  BigInt mf = floor_of(m);
  const Rational rem = m - Rational(mf);
  const bool away = (dir == FloatDir::Up && !neg) || (dir == FloatDir::Down && neg);
  if (sgn(rem) != 0) {
    if (dir == FloatDir::Nearest) {
      const Rational half(1, 2);
      if (rem > half || (rem == half && mpz_odd_p(mf.get_mpz_t())))
        mf += 1;
    } else if (away) {
      mf += 1;
    }
  }
  const double mag = std::ldexp(mf.get_d(), quantum);
  float r;
  if (mag > static_cast<double>(FLT_MAX)) {
    // Nearest overflows at 2^128 exactly in this representation.
    const bool to_inf = dir == FloatDir::Nearest || away;
    r = to_inf ? std::numeric_limits<float>::infinity() : FLT_MAX;
  } else {
    r = static_cast<float>(mag);
  }
  return neg ? -r : r;
}

inline std::uint32_t float_bits(float f) { return std::bit_cast<std::uint32_t>(f); }
inline float float_from_bits(std::uint32_t b) { return std::bit_cast<float>(b); }

} // namespace qnnv
