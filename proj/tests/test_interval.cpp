#include "qnnv/bundled.hpp"
#include "qnnv/interval.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace qnnv;

namespace {

// Exact bounds of an affine neuron over a box: the extremes sit at corners.
std::pair<Rational, Rational> corner_bounds(const Layer& L, std::size_t j, const HyperRect& box)
{
  const std::size_t n = box.size();
  std::optional<Rational> lo, hi;
  for (std::size_t mask = 0; mask < (1u << n); ++mask) {
    Rational v = rational_from_double(L.biases[j]);
    for (std::size_t i = 0; i < n; ++i)
      v += rational_from_double(L.weights(j, i)) * rational_from_double((mask >> i) & 1 ? box[i].hi : box[i].lo);
    if (!lo || v < *lo)
      lo = v;
    if (!hi || v > *hi)
      hi = v;
  }
  return {*lo, *hi};
}

} // namespace

TEST(Interval, GuardNetworkBoundsAndGuards)
{
  const Network net = bundled::guard_network();
  TableSet none;
  for (Semantics sem : {Semantics::real(), Semantics::fxp({4, 6}), Semantics::float32()}) {
    IntervalBox box = propagate(net, bundled::guard_property().input_region, sem, none);
    EXPECT_EQ(box.pre[0][0], (RationalInterval{-3, 2})) << sem.name();
    EXPECT_EQ(box.pre[0][1], (RationalInterval{0, 5}));
    EXPECT_EQ(box.pre[0][2], (RationalInterval{0, 4}));
    EXPECT_EQ(box.post[0][0], (RationalInterval{0, 2}));
    auto g = decidable_guards(box, net);
    ASSERT_EQ(g.size(), 3u);
    EXPECT_EQ(g[0].fact, GuardFact::Undecided);
    EXPECT_EQ(g[1].fact, GuardFact::AlwaysActive);
    EXPECT_EQ(g[2].fact, GuardFact::AlwaysActive);
    EXPECT_FALSE(box.any_wrap_risk());
  }
}

TEST(Interval, FlipBoxMatchesCornerOracle)
{
  const Network net = bundled::flip_network();
  HyperRect region{{0, 1}, {0, 1}};
  TableSet none;
  IntervalBox box = propagate(net, region, Semantics::real(), none);
  for (std::size_t j = 0; j < 2; ++j) {
    auto [lo, hi] = corner_bounds(net.layers[0], j, region);
    EXPECT_EQ(box.pre[0][j].lo, lo);
    EXPECT_EQ(box.pre[0][j].hi, hi);
  }
  EXPECT_EQ(box.post[0][0], (RationalInterval{0, 2}));
  EXPECT_EQ(box.post[0][1], (RationalInterval{0, 5}));
  EXPECT_EQ(box.post[1][0], (RationalInterval{0, 7}));

  RangeReport ok = range_report(net, region, none, FxpFormat{4, 4});
  EXPECT_EQ(ok.global_max, Rational(7));
  EXPECT_EQ(ok.recommended_k, 4);
  EXPECT_EQ(ok.l1_first_layer[0], Rational(5));
  EXPECT_EQ(ok.l1_first_layer[1], Rational(5));
  for (const auto& l : ok.wrap_risk)
    for (bool b : l)
      EXPECT_FALSE(b);
  // On [0, 2]^2, B reaches 10 and f 14, beyond the [-8, 8) of Q4.4.
  RangeReport r = range_report(net, {{0, 2}, {0, 2}}, none, FxpFormat{4, 4});
  EXPECT_EQ(r.recommended_k, 5);
  EXPECT_FALSE(r.wrap_risk[0][0]);
  EXPECT_TRUE(r.wrap_risk[0][1]);
  EXPECT_TRUE(r.wrap_risk[1][0]);

  // Values stay below 4 at the singleton, but the weight 4 needs k = 4.
  RangeReport point = range_report(net, bundled::flip_property().input_region, none);
  EXPECT_EQ(min_integer_bits(point.global_max), 3);
  EXPECT_EQ(point.parameter_max, Rational(4));
  EXPECT_EQ(point.recommended_k, 4);
}

TEST(Interval, SoundOnRandomNetworks)
{
  std::mt19937_64 rng(21);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const bool tabled = seed % 4 == 0;
    Network net = bundled::random_network(seed, {3, 5, 4, 2}, tabled ? ActivationKind::sigmoid() : ActivationKind::relu());
    if (seed % 5 == 0)
      net.layers[1].activation = parse_activation("pwl(-1:-0.5;0:0;1:2)");
    HyperRect region;
    std::uniform_real_distribution<double> c(-1, 1), w(0, 0.5);
    for (int i = 0; i < 3; ++i) {
      double m = c(rng), r = w(rng);
      region.push_back({m - r, m + r});
    }
    for (Semantics sem : {Semantics::real(), Semantics::fxp({6, 8}), Semantics::fxp({4, 4}, RoundingMode::NearestTiesTowardZero),
                          Semantics::float32()}) {
      TableSet tables = build_tables(net, sem, {});
      IntervalBox box = propagate(net, region, sem, tables);
      auto dom_check = [&](auto dom) {
        CompiledNetwork cn(net, std::move(dom));
        std::mt19937_64 r2(seed);
        for (int s = 0; s < 2000; ++s) {
          auto x = sample_region(region, r2);
          cn.run(x, [&](std::size_t li, std::size_t j, const auto& u, const auto& y) {
            auto eu = cn.domain().exact(u), ey = cn.domain().exact(y);
            ASSERT_TRUE(eu && ey);
            ASSERT_TRUE(box.pre[li][j].contains(*eu)) << sem.name() << " seed " << seed << " L" << li << " n" << j;
            ASSERT_TRUE(box.post[li][j].contains(*ey)) << sem.name() << " seed " << seed;
          });
        }
      };
      switch (sem.kind) {
      case NumericKind::Real: dom_check(RealDomain(&tables)); break;
      case NumericKind::Float32: dom_check(Float32Domain(&tables)); break;
      case NumericKind::Fxp: dom_check(FxpDomain(sem, &tables)); break;
      }
    }
  }
}

TEST(Interval, WrapRiskWidensToFullRange)
{
  Network net;
  net.layers.push_back({Matrix({{4, 4}}), {0}, ActivationKind::identity()});
  TableSet none;
  IntervalBox box = propagate(net, {{0, 1.5}, {0, 1}}, Semantics::fxp({4, 4}), none);
  EXPECT_TRUE(box.wrap_risk[0][0]);
  EXPECT_EQ(box.pre[0][0], (RationalInterval{-8, Rational(127, 16)}));
}

TEST(Interval, Float32OverflowIsReported)
{
  Network net;
  net.layers.push_back({Matrix(std::vector<std::vector<double>>{{3e38}}), {0}, ActivationKind::identity()});
  TableSet none;
  EXPECT_THROW(propagate(net, {{0, 2}}, Semantics::float32(), none), Error);
}

TEST(Interval, JsonRoundTrip)
{
  const Network net = bundled::guard_network();
  TableSet none;
  IntervalBox box = propagate(net, {{0, 1}, {0, 1}}, Semantics::fxp({4, 6}), none);
  nlohmann::json j = box_to_json(box);
  IntervalBox back = box_from_json(j, net, Semantics::fxp({4, 6}));
  EXPECT_EQ(back.pre, box.pre);
  EXPECT_EQ(back.post, box.post);
  EXPECT_THROW(box_from_json(j, net, Semantics::real()), Error);
  EXPECT_THROW(box_from_json(j, bundled::flip_network(), Semantics::fxp({4, 6})), Error);
}

TEST(Interval, PrintListsGuards)
{
  const Network net = bundled::guard_network();
  TableSet none;
  std::ostringstream os;
  print_intervals(propagate(net, {{0, 1}, {0, 1}}, Semantics::real(), none), net, os);
  EXPECT_NE(os.str().find("u0_0  [-3, 2]"), std::string::npos) << os.str();
  EXPECT_NE(os.str().find("Undecided"), std::string::npos);
}
