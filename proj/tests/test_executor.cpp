#include "qnnv/bundled.hpp"
#include "qnnv/executor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace qnnv;

namespace {

// Independent fixed-point reference: exact rational MAC steps, each followed
// by explicit rounding and modular reduction on big integers.
struct RefFxp
{
  FxpFormat f;
  RoundingMode mode;

  BigInt wrap(BigInt v) const
  {
    const BigInt m = pow2(static_cast<unsigned>(f.total_bits()));
    v %= m;
    if (v < 0)
      v += m;
    if (v >= m / 2)
      v -= m;
    return v;
  }

  BigInt round(const Rational& x) const
  {
    BigInt lo = floor_of(x), hi = ceil_of(x);
    if (mode == RoundingMode::TruncateTowardNegInf || lo == hi)
      return lo;
    Rational dlo = x - Rational(lo), dhi = Rational(hi) - x;
    if (dlo != dhi)
      return dlo < dhi ? lo : hi;
    return abs(lo) < abs(hi) ? lo : hi;
  }

  BigInt q(double x) const { return wrap(round(rational_from_double(x) * Rational(pow2(f.l)))); }
  BigInt mul(const BigInt& a, const BigInt& b) const { return wrap(round(Rational(a * b) / Rational(pow2(f.l)))); }
  BigInt add(const BigInt& a, const BigInt& b) const { return wrap(a + b); }

  std::vector<BigInt> run(const Network& n, const std::vector<double>& x) const
  {
    std::vector<BigInt> cur;
    for (double v : x)
      cur.push_back(q(v));
    for (const Layer& L : n.layers) {
      std::vector<BigInt> next;
      for (std::size_t j = 0; j < L.size(); ++j) {
        BigInt acc = mul(q(L.weights(j, 0)), cur[0]);
        for (std::size_t i = 1; i < L.input_size(); ++i)
          acc = add(acc, mul(q(L.weights(j, i)), cur[i]));
        acc = add(acc, q(L.biases[j]));
        if (L.activation.kind == Activation::ReLU && acc < 0)
          acc = 0;
        next.push_back(acc);
      }
      cur = next;
    }
    return cur;
  }
};

} // namespace

TEST(Executor, TruncationFlipsTheVerdict)
{
  const Network net = bundled::flip_network();
  const SafetyProperty prop = bundled::flip_property();
  TableSet none;
  std::vector<double> x{0.749, 0.498};

  Trace fx = forward_fxp(net, x, {4, 6}, RoundingMode::TruncateTowardNegInf, none);
  EXPECT_EQ(fx.inputs[0].raw, 47);
  EXPECT_EQ(fx.inputs[1].raw, 31);
  EXPECT_EQ(*fx.outputs()[0].exact, Rational(43, 16)); // 2.6875
  EXPECT_EQ(fx.outputs()[0].approx, 2.6875);
  EXPECT_EQ(check_property(fx, prop), PropertyStatus::Violated);

  Trace re = forward_exact(net, x, none);
  EXPECT_NEAR(re.outputs()[0].approx, 2.745, 1e-12);
  EXPECT_EQ(check_property(re, prop), PropertyStatus::Holds);

  Trace fl = forward_float32(net, x, none);
  EXPECT_NEAR(fl.outputs()[0].approx, 2.745, 1e-6);
  EXPECT_EQ(check_property(fl, prop), PropertyStatus::Holds);
}

TEST(Executor, FixedPointMatchesReferenceOnRandomNetworks)
{
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(-2, 2);
  TableSet none;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Network net = bundled::random_network(seed, {3, 5, 4, 2});
    for (FxpFormat f : {FxpFormat{4, 4}, FxpFormat{3, 6}, FxpFormat{8, 8}})
      for (auto mode : {RoundingMode::TruncateTowardNegInf, RoundingMode::NearestTiesTowardZero}) {
        RefFxp ref{f, mode};
        for (int s = 0; s < 50; ++s) {
          std::vector<double> x{d(rng), d(rng), d(rng)};
          Trace t = forward_fxp(net, x, f, mode, none);
          auto want = ref.run(net, x);
          for (std::size_t k = 0; k < want.size(); ++k)
            ASSERT_EQ(BigInt(t.outputs()[k].raw), want[k]) << f.name() << " seed " << seed;
        }
      }
  }
}

TEST(Executor, Float32MatchesPlainFloatLoop)
{
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(-3, 3);
  TableSet none;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Network net = bundled::random_network(seed, {4, 6, 3});
    net.layers[0].weights(0, 0) = 0.1; // not a float; rounds once at load
    for (int s = 0; s < 100; ++s) {
      std::vector<double> x{d(rng), d(rng), d(rng), d(rng)};
      std::vector<float> cur(x.begin(), x.end());
      for (const Layer& L : net.layers) {
        std::vector<float> next;
        for (std::size_t j = 0; j < L.size(); ++j) {
          volatile float acc = static_cast<float>(L.weights(j, 0)) * cur[0];
          for (std::size_t i = 1; i < L.input_size(); ++i) {
            volatile float prod = static_cast<float>(L.weights(j, i)) * cur[i];
            acc = acc + prod;
          }
          acc = acc + static_cast<float>(L.biases[j]);
          float v = acc;
          if (L.activation.kind == Activation::ReLU && v < 0)
            v = 0;
          next.push_back(v);
        }
        cur = next;
      }
      Trace t = forward_float32(net, x, none);
      for (std::size_t k = 0; k < cur.size(); ++k)
        ASSERT_EQ(static_cast<float>(t.outputs()[k].approx), cur[k]);
    }
  }
}

TEST(Executor, WrapEventsNameTheNeuron)
{
  Network net;
  net.layers.push_back({Matrix({{4, 4}}), {0}, ActivationKind::identity()});
  std::vector<double> x{1.5, 1.0};
  TableSet none;
  Trace t = forward_fxp(net, x, {4, 4}, RoundingMode::TruncateTowardNegInf, none);
  // 4*1.5 = 6, 4*1 = 4, 6 + 4 = 10 wraps to -6 in Q4.4
  EXPECT_EQ(*t.outputs()[0].exact, Rational(-6));
  ASSERT_EQ(t.wraps.size(), 1u);
  EXPECT_EQ(t.wraps[0].layer, 0u);
  EXPECT_EQ(t.wraps[0].neuron, 0u);
  EXPECT_EQ(t.wraps[0].op, "add");
}

TEST(Executor, UnrepresentableWeightIsAnError)
{
  Network net = bundled::flip_network();
  net.layers[1].weights(0, 1) = 100;
  TableSet none;
  std::vector<double> x{0.5, 0.5};
  try {
    forward_fxp(net, x, {4, 4}, RoundingMode::TruncateTowardNegInf, none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1 neuron 0 weight 1"), std::string::npos) << e.what();
  }
  std::vector<double> three{1, 2, 3};
  EXPECT_THROW(forward_fxp(bundled::flip_network(), three, {4, 4}, RoundingMode::TruncateTowardNegInf, none),
               DimensionError);
}

TEST(Executor, Float32OverflowComparesLikeInfinity)
{
  Network net;
  net.layers.push_back({Matrix(std::vector<std::vector<double>>{{3e38}}), {0}, ActivationKind::identity()});
  std::vector<double> x{2.0};
  TableSet none;
  Trace t = forward_float32(net, x, none);
  EXPECT_TRUE(std::isinf(t.outputs()[0].approx));
  SafetyProperty big{{{2, 2}}, OutputAssertion::parse("y_0 > 1e300")};
  EXPECT_EQ(check_property(t, big), PropertyStatus::Holds);
  SafetyProperty small{{{2, 2}}, OutputAssertion::parse("y_0 <= 1e300")};
  EXPECT_EQ(check_property(t, small), PropertyStatus::Violated);
}

TEST(Executor, ExecuteValuesAgreesWithQuantizedInputs)
{
  Network net = bundled::random_network(3, {2, 4, 2}, ActivationKind::sigmoid());
  const Semantics sem = Semantics::fxp({4, 8});
  TableSet tables = build_tables(net, sem, {});
  std::vector<double> x{0.3, -0.7};
  Trace a = execute(net, x, sem, tables);
  std::vector<Rational> v{*a.inputs[0].exact, *a.inputs[1].exact};
  Trace b = execute_values(net, v, sem, tables);
  for (std::size_t k = 0; k < 2; ++k)
    EXPECT_EQ(a.outputs()[k].raw, b.outputs()[k].raw);
}

TEST(Executor, TabledActivationUsesTheFixedPointTable)
{
  Network net;
  net.layers.push_back({Matrix(std::vector<std::vector<double>>{{1}}), {0}, ActivationKind::sigmoid()});
  const Semantics sem = Semantics::fxp({4, 8});
  TableSet tables = build_tables(net, sem, {});
  for (int raw = -2048; raw < 2048; raw += 7) {
    std::vector<Rational> v{Rational(raw) / 256};
    Trace t = execute_values(net, v, sem, tables);
    EXPECT_EQ(t.outputs()[0].raw, lut_eval_fxp(*tables.at(ActivationKind::sigmoid()).fxp, raw));
    EXPECT_NEAR(t.outputs()[0].approx, 1 / (1 + std::exp(-raw / 256.0)), 0.01);
  }
}

TEST(Executor, SamplingFindsKnownViolation)
{
  Network net = bundled::guard_network();
  SafetyProperty p{{{0, 1}, {0, 1}}, OutputAssertion::parse("y_0 <= 1")};
  TableSet none;
  auto r = sample_property(net, p, Semantics::real(), none, 2000, 1);
  EXPECT_EQ(r.samples, 2000u);
  EXPECT_GT(r.violations, 0u);
  ASSERT_TRUE(r.first_violation);
  EXPECT_EQ(check_property(forward_exact(net, *r.first_violation, none), p), PropertyStatus::Violated);
  auto safe = sample_property(net, bundled::guard_property(), Semantics::fxp({4, 6}), none, 2000, 1);
  EXPECT_EQ(safe.violations, 0u);
}
