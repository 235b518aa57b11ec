#include "qnnv/bundled.hpp"
#include "qnnv/nnet.hpp"
#include "qnnv/property.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace qnnv;

namespace {

const char* kFlip = R"(// flip example
2,2,1,2,
2,2,1,
0,
0,0,
1,1,
0,0,0,
1,1,1,
2,-3,
1,4,
0,
0,
1,1,
0,
)";

} // namespace

TEST(Nnet, ParsesFlipNetwork)
{
  Network n = parse_nnet_string(kFlip, "flip");
  EXPECT_EQ(n.layers.size(), 2u);
  EXPECT_EQ(n.input_dim(), 2u);
  EXPECT_EQ(n.output_dim(), 1u);
  EXPECT_EQ(n.layers[0].activation.kind, Activation::ReLU);
  EXPECT_EQ(n.layers[1].activation.kind, Activation::Identity);
  EXPECT_EQ(n.layers[0].weights(0, 1), -3);
  EXPECT_EQ(n.normalization.means.size(), 3u);
  std::vector<double> x{0.749, 0.498};
  EXPECT_NEAR(static_cast<double>(forward_real(n, x)[0]), 2.745, 1e-12);
}

TEST(Nnet, WeightRowCountMismatchReportsLine)
{
  std::string bad = kFlip;
  bad.replace(bad.find("1,4,"), 4, "1,4,5,");
  try {
    parse_nnet_string(bad);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 10);
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos);
  }
}

TEST(Nnet, NonNumericAndTruncated)
{
  std::string bad = kFlip;
  bad.replace(bad.find("2,-3,"), 5, "2,abc,");
  EXPECT_THROW(parse_nnet_string(bad), ParseError);
  std::string trunc(kFlip, std::string(kFlip).find("1,1,\n0,\n"));
  try {
    parse_nnet_string(trunc);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Nnet, ZeroNetworkMapsToActivationOfZero)
{
  Network n;
  n.layers.push_back({Matrix(3, 2), {0, 0, 0}, ActivationKind::sigmoid()});
  Network back = parse_nnet_string(serialize_nnet_string(n));
  std::vector<double> x{0.3, -7};
  for (auto v : forward_real(back, x))
    EXPECT_EQ(v, 0.5L);
}

TEST(Nnet, RoundTrip)
{
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Network n = bundled::random_network(seed, {3, 4, 2}, ActivationKind::tanh());
    n.layers[0].weights(0, 0) = 0.1; // not dyadic, exercises shortest formatting
    Network back = parse_nnet_string(serialize_nnet_string(n), n.name);
    back.normalization = n.normalization;
    EXPECT_EQ(back, n);
  }
  Network p = bundled::flip_network();
  p.layers[0].activation = parse_activation("pwl(-1:0;0:0;1:2)");
  Network back = parse_nnet_string(serialize_nnet_string(p), p.name);
  EXPECT_EQ(back.layers[0].activation, p.layers[0].activation);
}

TEST(Network, ForwardRealExamples)
{
  std::vector<double> x{1, 1};
  auto y = forward_real(bundled::guard_network(), x);
  EXPECT_EQ(y[0], 0);
  EXPECT_EQ(y[1], 5);
  EXPECT_EQ(y[2], 4);
  Network z;
  z.layers.push_back({Matrix(2, 2), {0, 0}, ActivationKind::relu()});
  for (auto v : forward_real(z, x))
    EXPECT_EQ(v, 0);
  std::vector<double> three{1, 2, 3};
  EXPECT_THROW(forward_real(z, three), DimensionError);
}

TEST(Network, IdentityLayerIsAffine)
{
  Network n = bundled::random_network(3, {4, 3}, ActivationKind::identity());
  std::vector<double> x{0.25, -1.5, 3, 0.125};
  auto y = forward_real(n, x);
  for (std::size_t j = 0; j < 3; ++j) {
    long double e = n.layers[0].biases[j];
    for (std::size_t i = 0; i < 4; ++i)
      e += static_cast<long double>(n.layers[0].weights(j, i)) * x[i];
    EXPECT_EQ(y[j], e);
  }
}

TEST(Network, ValidationRejectsBadShapes)
{
  Network n = bundled::flip_network();
  n.layers[1].weights = Matrix(1, 3);
  EXPECT_THROW(n.validate(), DimensionError);
  n = bundled::flip_network();
  n.layers[0].biases.pop_back();
  EXPECT_THROW(n.validate(), DimensionError);
  n = bundled::flip_network();
  n.layers[0].weights(0, 0) = NAN;
  EXPECT_THROW(n.validate(), Error);
  EXPECT_THROW(ActivationKind::piecewise_linear({{1, 0}, {0, 1}}), Error);
}

TEST(Property, ParsesSingleton)
{
  std::istringstream in(R"({"input":[{"lo":0.749,"hi":0.749},{"lo":0.498,"hi":0.498}], "assert":"y_0 >= 2.7"})");
  SafetyProperty p = parse_property(in, bundled::flip_network());
  EXPECT_EQ(p.input_region.size(), 2u);
  EXPECT_EQ(p.input_region[0].lo, 0.749);
  EXPECT_EQ(p.assertion.str(), "y_0 >= 2.7");
}

TEST(Property, RobustClass)
{
  std::istringstream in(R"({"input":[{"lo":0,"hi":1},{"lo":0,"hi":1}], "assert":{"robust_class":0}})");
  SafetyProperty p = parse_property(in, std::optional<std::size_t>(3));
  std::vector<std::optional<Rational>> y{Rational(3), Rational(1), Rational(2)};
  EXPECT_TRUE(evaluate(p.assertion, y));
  y[2] = Rational(3);
  EXPECT_FALSE(evaluate(p.assertion, y)); // tie: not a unique argmax
  y[2] = std::nullopt;
  EXPECT_FALSE(evaluate(p.assertion, y));
}

TEST(Property, RobustClassMatchesUniqueArgmax)
{
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> d(0, 3);
  for (int t = 0; t < 2000; ++t) {
    std::vector<std::optional<Rational>> y;
    for (int i = 0; i < 4; ++i)
      y.push_back(Rational(d(rng)));
    for (std::size_t c = 0; c < 4; ++c) {
      bool unique = true;
      for (std::size_t j = 0; j < 4; ++j)
        if (j != c && !(*y[c] > *y[j]))
          unique = false;
      EXPECT_EQ(evaluate(OutputAssertion::robust_class(c, 4), y), unique);
    }
  }
}

TEST(Property, Errors)
{
  std::istringstream bad(R"({"input":[{"lo":1,"hi":0}], "assert":"y_0 > 0"})");
  EXPECT_THROW(parse_property(bad), Error);
  std::istringstream arity(R"({"input":[{"lo":0,"hi":1},{"lo":0,"hi":1}], "assert":"y_3 > 0"})");
  EXPECT_THROW(parse_property(arity, bundled::flip_network()), DimensionError);
  std::istringstream dims(R"({"input":[{"lo":0,"hi":1}], "assert":"y_0 > 0"})");
  EXPECT_THROW(parse_property(dims, bundled::flip_network()), DimensionError);
  EXPECT_THROW(OutputAssertion::parse("y_0 >"), Error);
  EXPECT_THROW(OutputAssertion::parse("1 < 2"), Error);
  EXPECT_THROW(OutputAssertion::parse("(y_0 > 1"), Error);
}

TEST(Property, ExpressionGrammar)
{
  auto a = OutputAssertion::parse("!(y0 < -1.5e0) && (y_1 >= y_0 || false) ^ y2 == 3");
  std::vector<std::optional<Rational>> y{Rational(0), Rational(1), Rational(3)};
  // && binds tighter than ^: (... && ...) ^ (y2 == 3) = true ^ true
  EXPECT_FALSE(evaluate(a, y));
  EXPECT_EQ(a.arity_needed(), 3u);
  auto b = OutputAssertion::parse(a.str());
  EXPECT_EQ(b.str(), a.str());
  EXPECT_TRUE(evaluate(OutputAssertion::parse("true"), y));
  EXPECT_TRUE(evaluate(OutputAssertion::parse("2 <= y_0 or y_1 = 1"), y));
}

TEST(Property, NormalizationRoundTrip)
{
  Network n = bundled::random_network(4, {2, 3, 1});
  n.normalization = {{-10, -10}, {10, 10}, {1, 2, 0.5}, {4, 8, 2}};
  SafetyProperty raw{{{1, 3}, {2, 6}}, OutputAssertion::parse("y_0 >= 1.5")};
  SafetyProperty norm = normalize_property(raw, n.normalization);
  EXPECT_DOUBLE_EQ(norm.input_region[0].lo, 0.0);
  EXPECT_DOUBLE_EQ(norm.input_region[1].hi, 0.5);
  EXPECT_EQ(norm.assertion.root.rhs.constant, 0.5);
  // Folding normalization into the weights gives the same outputs in raw units.
  Network folded = fold_input_normalization(n);
  std::vector<double> x{2, 4};
  std::vector<double> xn{(2 - 1) / 4.0, (4 - 2) / 8.0};
  long double yn = forward_real(n, xn)[0];
  EXPECT_NEAR(static_cast<double>(forward_real(folded, x)[0]), static_cast<double>(yn * 2 + 0.5), 1e-12);
}

TEST(Property, JsonRoundTrip)
{
  SafetyProperty p = bundled::guard_property();
  SafetyProperty q = parse_property_json(property_to_json(p));
  EXPECT_EQ(q.input_region, p.input_region);
  EXPECT_EQ(q.assertion.str(), p.assertion.str());
}
