#pragma once

// Deterministic example networks and properties.

#include "qnnv/network.hpp"
#include "qnnv/property.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace qnnv::bundled {

/// A = ReLU(2 x1 - 3 x2), B = ReLU(x1 + 4 x2), f = A + B.
inline Network flip_network()
{
  Network n;
  n.name = "flip";
  n.layers.push_back({Matrix({{2, -3}, {1, 4}}), {0, 0}, ActivationKind::relu()});
  n.layers.push_back({Matrix({{1, 1}}), {0}, ActivationKind::identity()});
  return n;
}

inline SafetyProperty flip_property()
{
  return {{{0.749, 0.749}, {0.498, 0.498}}, OutputAssertion::parse("y_0 >= 2.7")};
}

/// One ReLU layer: a = 2x - 3y, b = x + 4y, f = 3x + y.
inline Network guard_network()
{
  Network n;
  n.name = "guard";
  n.layers.push_back({Matrix({{2, -3}, {1, 4}, {3, 1}}), {0, 0, 0}, ActivationKind::relu()});
  return n;
}

inline SafetyProperty guard_property()
{
  return {{{0, 1}, {0, 1}}, OutputAssertion::parse("y_0 <= 2 && y_1 <= 5 && y_2 <= 4")};
}

/// Weights uniform in [-1, 1] and biases in [-1/2, 1/2], both on the 1/16
/// grid so every format with at least 4 fractional bits holds them exactly.
inline Network random_network(std::uint64_t seed, const std::vector<std::size_t>& sizes,
                              ActivationKind hidden = ActivationKind::relu(),
                              ActivationKind output = ActivationKind::identity())
{
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> w(-16, 16), b(-8, 8);
  Network n;
  n.name = "random-" + std::to_string(seed);
  for (std::size_t li = 1; li < sizes.size(); ++li) {
    Layer l;
    l.weights = Matrix(sizes[li], sizes[li - 1]);
    for (double& v : l.weights.data)
      v = w(rng) / 16.0;
    for (std::size_t j = 0; j < sizes[li]; ++j)
      l.biases.push_back(b(rng) / 16.0);
    l.activation = li + 1 == sizes.size() ? output : hidden;
    n.layers.push_back(std::move(l));
  }
  return n;
}

/// 25 inputs (a 5x5 image), hidden layers of 10 and 4 sigmoid neurons, 5
/// output scores.
inline Network vocalic_network(std::uint64_t seed = 2021)
{
  Network n = random_network(seed, {25, 10, 4, 5}, ActivationKind::sigmoid(), ActivationKind::identity());
  n.name = "vocalic-toy";
  return n;
}

/// Box of radius r around center c, clipped to [0, 1], asserting class cls.
inline SafetyProperty robustness_property(const std::vector<double>& c, double r, std::size_t cls, std::size_t outputs)
{
  SafetyProperty p;
  for (double v : c)
    p.input_region.push_back({std::max(0.0, v - r), std::min(1.0, v + r)});
  p.assertion = OutputAssertion::robust_class(cls, outputs);
  return p;
}

/// Fixed 5x5 pattern with pixels in {0, 0.1, ..., 1}.
inline std::vector<double> vocalic_center()
{
  std::vector<double> c(25);
  for (std::size_t i = 0; i < c.size(); ++i)
    c[i] = static_cast<double>((i * 7) % 11) / 10.0;
  return c;
}

/// Class 0 (the prediction at the centre) must survive a 0.3 perturbation.
/// Falsifiable under Q8.8 truncation.
inline SafetyProperty vocalic_property() { return robustness_property(vocalic_center(), 0.3, 0, 5); }

} // namespace qnnv::bundled
