#pragma once

// Dense feedforward networks: y = N(W x + b), layer by layer.

#include "qnnv/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace qnnv {

enum class Activation
{
  ReLU,
  Sigmoid,
  TanH,
  Identity,
  PiecewiseLinear,
};

struct PwlPoint
{
  double x = 0;
  double y = 0;
  friend bool operator==(const PwlPoint&, const PwlPoint&) = default;
};

/// Activation function of a layer. PiecewiseLinear interpolates between
/// breakpoints and extends the first and last segments beyond the ends.
struct ActivationKind
{
  Activation kind = Activation::ReLU;
  std::vector<PwlPoint> points; // PiecewiseLinear only

  static ActivationKind relu() { return {Activation::ReLU, {}}; }
  static ActivationKind sigmoid() { return {Activation::Sigmoid, {}}; }
  static ActivationKind tanh() { return {Activation::TanH, {}}; }
  static ActivationKind identity() { return {Activation::Identity, {}}; }
  static ActivationKind piecewise_linear(std::vector<PwlPoint> pts)
  {
    ActivationKind a{Activation::PiecewiseLinear, std::move(pts)};
    a.validate();
    return a;
  }

  bool is_tabled() const { return kind == Activation::Sigmoid || kind == Activation::TanH; }

  void validate() const
  {
    if (kind != Activation::PiecewiseLinear)
      return;
    if (points.size() < 2)
      throw Error("piecewise-linear activation needs at least two breakpoints");
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!std::isfinite(points[i].x) || !std::isfinite(points[i].y))
        throw Error("piecewise-linear breakpoints must be finite");
      if (i > 0 && !(points[i - 1].x < points[i].x))
        throw Error("piecewise-linear breakpoints must be strictly increasing");
    }
  }

  /// Slope of segment i (between points i and i+1).
  double slope(std::size_t i) const
  {
    return (points[i + 1].y - points[i].y) / (points[i + 1].x - points[i].x);
  }

  std::string name() const
  {
    switch (kind) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::TanH: return "tanh";
    case Activation::Identity: return "identity";
    case Activation::PiecewiseLinear: {
      std::ostringstream os;
      os.precision(17);
      os << "pwl(";
      for (std::size_t i = 0; i < points.size(); ++i)
        os << (i ? ";" : "") << points[i].x << ":" << points[i].y;
      os << ")";
      return os.str();
    }
    }
    return "?";
  }

  friend bool operator==(const ActivationKind&, const ActivationKind&) = default;
};

/// Accepts relu, sigmoid, tanh, identity (or linear), pwl(x:y;x:y;...).
inline ActivationKind parse_activation(std::string_view text)
{
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "relu")
    return ActivationKind::relu();
  if (s == "sigmoid" || s == "sigm")
    return ActivationKind::sigmoid();
  if (s == "tanh")
    return ActivationKind::tanh();
  if (s == "identity" || s == "linear" || s == "none")
    return ActivationKind::identity();
  if (s.rfind("pwl(", 0) == 0 && s.back() == ')') {
    std::vector<PwlPoint> pts;
    std::string body = s.substr(4, s.size() - 5);
    std::istringstream is(body);
    std::string item;
    while (std::getline(is, item, ';')) {
      auto colon = item.find(':');
      if (colon == std::string::npos)
        throw Error("bad pwl breakpoint '" + item + "'");
      try {
        pts.push_back({std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
      } catch (const std::exception&) {
        throw Error("bad pwl breakpoint '" + item + "'");
      }
    }
    return ActivationKind::piecewise_linear(std::move(pts));
  }
  throw Error("unknown activation '" + std::string(text) + "'");
}

/// Row-major dense matrix; row r holds the incoming weights of neuron r.
struct Matrix
{
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::vector<std::vector<double>> nested)
  {
    rows = nested.size();
    cols = rows ? nested[0].size() : 0;
    data.reserve(rows * cols);
    for (const auto& row : nested) {
      if (row.size() != cols)
        throw DimensionError("ragged weight matrix");
      data.insert(data.end(), row.begin(), row.end());
    }
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct Layer
{
  Matrix weights;
  std::vector<double> biases;
  ActivationKind activation;

  std::size_t input_size() const { return weights.cols; }
  std::size_t size() const { return weights.rows; }

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// NNet normalization metadata. Parsed and kept; never applied implicitly.
struct Normalization
{
  std::vector<double> input_mins;
  std::vector<double> input_maxes;
  std::vector<double> means;  ///< input_dim entries, then one for the outputs
  std::vector<double> ranges; ///< same layout as means

  bool present() const { return !means.empty(); }
  friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct Network
{
  std::string name;
  std::vector<Layer> layers;
  Normalization normalization;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().input_size(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().size(); }

  std::size_t neuron_count() const
  {
    std::size_t n = 0;
    for (const auto& l : layers)
      n += l.size();
    return n;
  }

  void validate() const
  {
    if (layers.empty())
      throw DimensionError("network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Layer& l = layers[i];
      const std::string where = "layer " + std::to_string(i);
      if (i > 0 && l.input_size() != layers[i - 1].size())
        throw DimensionError(where + ": expects " + std::to_string(l.input_size()) + " inputs but previous layer has " +
                             std::to_string(layers[i - 1].size()) + " neurons");
      if (l.biases.size() != l.size())
        throw DimensionError(where + ": bias count " + std::to_string(l.biases.size()) + " != neuron count " +
                             std::to_string(l.size()));
      if (l.weights.data.size() != l.weights.rows * l.weights.cols)
        throw DimensionError(where + ": weight storage size mismatch");
      for (double w : l.weights.data)
        if (!std::isfinite(w))
          throw Error(where + ": non-finite weight");
      for (double b : l.biases)
        if (!std::isfinite(b))
          throw Error(where + ": non-finite bias");
      l.activation.validate();
    }
    if (input_dim() == 0)
      throw DimensionError("network has zero inputs");
  }

  friend bool operator==(const Network&, const Network&) = default;
};

inline long double apply_activation(const ActivationKind& a, long double u)
{
  switch (a.kind) {
  case Activation::ReLU: return u < 0 ? 0.0L : u;
  case Activation::Identity: return u;
  case Activation::Sigmoid: return 1.0L / (1.0L + std::exp(-u));
  case Activation::TanH: return std::tanh(u);
  case Activation::PiecewiseLinear: {
    const auto& p = a.points;
    std::size_t seg = 0;
    while (seg + 2 < p.size() && u >= p[seg + 1].x)
      ++seg;
    return p[seg].y + static_cast<long double>(a.slope(seg)) * (u - p[seg].x);
  }
  }
  return u;
}

/// Reference evaluation in long double with exact (untabled) activations.
inline std::vector<long double> forward_real(const Network& net, std::span<const double> x)
{
  if (x.size() != net.input_dim())
    throw DimensionError("forward_real: input has " + std::to_string(x.size()) + " entries, network expects " +
                         std::to_string(net.input_dim()));
  std::vector<long double> cur(x.begin(), x.end());
  for (const Layer& layer : net.layers) {
    std::vector<long double> next(layer.size());
    for (std::size_t j = 0; j < layer.size(); ++j) {
      long double u = 0;
      auto w = layer.weights.row(j);
      for (std::size_t i = 0; i < w.size(); ++i)
        u += static_cast<long double>(w[i]) * cur[i];
      u += layer.biases[j];
      next[j] = apply_activation(layer.activation, u);
    }
    cur = std::move(next);
  }
  return cur;
}

} // namespace qnnv
