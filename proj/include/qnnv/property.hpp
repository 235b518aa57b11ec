#pragma once

// Safety properties x in H => f(x) in G, with H a closed hyperrectangle and G
// a boolean combination of comparisons over the outputs.

#include "qnnv/error.hpp"
#include "qnnv/network.hpp"
#include "qnnv/rational.hpp"

#include <json.hpp>

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qnnv {

enum class CmpOp
{
  Lt,
  Le,
  Gt,
  Ge,
  Eq,
};

inline std::string_view cmp_symbol(CmpOp op)
{
  switch (op) {
  case CmpOp::Lt: return "<";
  case CmpOp::Le: return "<=";
  case CmpOp::Gt: return ">";
  case CmpOp::Ge: return ">=";
  case CmpOp::Eq: return "==";
  }
  return "?";
}

/// a op b  <=>  b (mirror op) a
inline CmpOp mirror(CmpOp op)
{
  switch (op) {
  case CmpOp::Lt: return CmpOp::Gt;
  case CmpOp::Le: return CmpOp::Ge;
  case CmpOp::Gt: return CmpOp::Lt;
  case CmpOp::Ge: return CmpOp::Le;
  case CmpOp::Eq: return CmpOp::Eq;
  }
  return op;
}

template <class T>
bool compare(const T& a, CmpOp op, const T& b)
{
  switch (op) {
  case CmpOp::Lt: return a < b;
  case CmpOp::Le: return a <= b;
  case CmpOp::Gt: return a > b;
  case CmpOp::Ge: return a >= b;
  case CmpOp::Eq: return a == b;
  }
  return false;
}

struct Operand
{
  bool is_output = false;
  std::size_t index = 0; ///< output index when is_output
  double constant = 0;

  static Operand output(std::size_t i) { return {true, i, 0}; }
  static Operand value(double c) { return {false, 0, c}; }

  std::string str() const;
  friend bool operator==(const Operand&, const Operand&) = default;
};

struct AssertionNode
{
  enum class Kind
  {
    True,
    False,
    Compare,
    And,
    Or,
    Xor,
    Not,
  };

  Kind kind = Kind::True;
  CmpOp op = CmpOp::Ge;
  Operand lhs, rhs;
  std::vector<AssertionNode> children;

  static AssertionNode constant(bool b) { return {b ? Kind::True : Kind::False, CmpOp::Ge, {}, {}, {}}; }
  static AssertionNode compare(Operand a, CmpOp op, Operand b) { return {Kind::Compare, op, a, b, {}}; }
  static AssertionNode junction(Kind k, std::vector<AssertionNode> kids) { return {k, CmpOp::Ge, {}, {}, std::move(kids)}; }
  static AssertionNode negate(AssertionNode a) { return {Kind::Not, CmpOp::Ge, {}, {}, {std::move(a)}}; }

  friend bool operator==(const AssertionNode&, const AssertionNode&) = default;
};

inline std::string Operand::str() const
{
  if (is_output)
    return "y_" + std::to_string(index);
  // shortest text that reads back to the same double
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, constant);
  return std::string(buf, end);
}

inline std::string to_string(const AssertionNode& n)
{
  using K = AssertionNode::Kind;
  switch (n.kind) {
  case K::True: return "true";
  case K::False: return "false";
  case K::Compare: return n.lhs.str() + " " + std::string(cmp_symbol(n.op)) + " " + n.rhs.str();
  case K::Not: return "!(" + to_string(n.children[0]) + ")";
  case K::And:
  case K::Or:
  case K::Xor: {
    const char* sep = n.kind == K::And ? " && " : n.kind == K::Or ? " || " : " ^ ";
    std::string s = "(";
    for (std::size_t i = 0; i < n.children.size(); ++i)
      s += (i ? sep : "") + to_string(n.children[i]);
    return s + ")";
  }
  }
  return "?";
}

namespace detail {

class AssertionParser
{
public:
  explicit AssertionParser(std::string_view s) : src_(s) {}

  AssertionNode parse()
  {
    AssertionNode n = parse_or();
    skip_ws();
    if (pos_ != src_.size())
      fail("unexpected trailing input");
    return n;
  }

private:
  std::string_view src_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& msg) const
  {
    throw Error("assertion: " + msg + " at column " + std::to_string(pos_ + 1) + " in '" + std::string(src_) + "'");
  }

  void skip_ws()
  {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_])))
      ++pos_;
  }

  bool eat(std::string_view tok)
  {
    skip_ws();
    if (src_.substr(pos_, tok.size()) != tok)
      return false;
    // keywords must not run into an identifier
    if (std::isalpha(static_cast<unsigned char>(tok.back()))) {
      std::size_t end = pos_ + tok.size();
      if (end < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[end])) || src_[end] == '_'))
        return false;
    }
    pos_ += tok.size();
    return true;
  }

  AssertionNode parse_or()
  {
    std::vector<AssertionNode> kids{parse_xor()};
    while (eat("||") || eat("or"))
      kids.push_back(parse_xor());
    return kids.size() == 1 ? std::move(kids[0]) : AssertionNode::junction(AssertionNode::Kind::Or, std::move(kids));
  }

  AssertionNode parse_xor()
  {
    std::vector<AssertionNode> kids{parse_and()};
    while (eat("^") || eat("xor"))
      kids.push_back(parse_and());
    return kids.size() == 1 ? std::move(kids[0]) : AssertionNode::junction(AssertionNode::Kind::Xor, std::move(kids));
  }

  AssertionNode parse_and()
  {
    std::vector<AssertionNode> kids{parse_unary()};
    while (eat("&&") || eat("and"))
      kids.push_back(parse_unary());
    return kids.size() == 1 ? std::move(kids[0]) : AssertionNode::junction(AssertionNode::Kind::And, std::move(kids));
  }

  AssertionNode parse_unary()
  {
    skip_ws();
    if (src_.substr(pos_, 2) != "!=" && eat("!"))
      return AssertionNode::negate(parse_unary());
    if (eat("not"))
      return AssertionNode::negate(parse_unary());
    if (eat("(")) {
      AssertionNode n = parse_or();
      if (!eat(")"))
        fail("expected ')'");
      return n;
    }
    if (eat("true"))
      return AssertionNode::constant(true);
    if (eat("false"))
      return AssertionNode::constant(false);
    Operand a = parse_operand();
    CmpOp op = parse_cmp();
    Operand b = parse_operand();
    if (!a.is_output && !b.is_output)
      fail("comparison must mention at least one output");
    return AssertionNode::compare(a, op, b);
  }

  CmpOp parse_cmp()
  {
    if (eat("<="))
      return CmpOp::Le;
    if (eat(">="))
      return CmpOp::Ge;
    if (eat("=="))
      return CmpOp::Eq;
    if (eat("<"))
      return CmpOp::Lt;
    if (eat(">"))
      return CmpOp::Gt;
    if (eat("="))
      return CmpOp::Eq;
    fail("expected a comparison operator");
  }

  Operand parse_operand()
  {
    skip_ws();
    if (pos_ < src_.size() && (src_[pos_] == 'y' || src_[pos_] == 'Y')) {
      std::size_t p = pos_ + 1;
      if (p < src_.size() && src_[p] == '_')
        ++p;
      std::size_t start = p;
      while (p < src_.size() && std::isdigit(static_cast<unsigned char>(src_[p])))
        ++p;
      if (p == start)
        fail("expected output index after 'y'");
      std::size_t idx = std::stoul(std::string(src_.substr(start, p - start)));
      pos_ = p;
      return Operand::output(idx);
    }
    std::size_t p = pos_;
    if (p < src_.size() && (src_[p] == '-' || src_[p] == '+'))
      ++p;
    while (p < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[p])) || src_[p] == '.' || src_[p] == 'e' ||
                               src_[p] == 'E' ||
                               ((src_[p] == '-' || src_[p] == '+') && (src_[p - 1] == 'e' || src_[p - 1] == 'E'))))
      ++p;
    if (p == pos_)
      fail("expected an output y_<i> or a number");
    std::string tok(src_.substr(pos_, p - pos_));
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || !std::isfinite(v))
      fail("bad number '" + tok + "'");
    pos_ = p;
    return Operand::value(v);
  }
};

} // namespace detail

struct OutputAssertion
{
  AssertionNode root = AssertionNode::constant(true);

  /// y_i > y_j for every j != i.
  static OutputAssertion robust_class(std::size_t cls, std::size_t outputs)
  {
    if (cls >= outputs)
      throw Error("robust_class index " + std::to_string(cls) + " out of range for " + std::to_string(outputs) +
                  " outputs");
    std::vector<AssertionNode> kids;
    for (std::size_t j = 0; j < outputs; ++j)
      if (j != cls)
        kids.push_back(AssertionNode::compare(Operand::output(cls), CmpOp::Gt, Operand::output(j)));
    if (kids.empty())
      return {AssertionNode::constant(true)};
    if (kids.size() == 1)
      return {kids[0]};
    return {AssertionNode::junction(AssertionNode::Kind::And, std::move(kids))};
  }

  static OutputAssertion parse(std::string_view text) { return {detail::AssertionParser(text).parse()}; }

  /// Largest referenced output index + 1 (0 when none).
  std::size_t arity_needed() const
  {
    std::size_t m = 0;
    auto walk = [&](auto&& self, const AssertionNode& n) -> void {
      if (n.kind == AssertionNode::Kind::Compare) {
        if (n.lhs.is_output)
          m = std::max(m, n.lhs.index + 1);
        if (n.rhs.is_output)
          m = std::max(m, n.rhs.index + 1);
      }
      for (const auto& c : n.children)
        self(self, c);
    };
    walk(walk, root);
    return m;
  }

  std::string str() const { return to_string(root); }

  friend bool operator==(const OutputAssertion&, const OutputAssertion&) = default;
};

/// Evaluates with exact comparisons. An empty optional stands for NaN: every
/// comparison involving it is false, as in C and SMT-LIB floating point.
inline bool evaluate(const AssertionNode& n, std::span<const std::optional<Rational>> y)
{
  using K = AssertionNode::Kind;
  switch (n.kind) {
  case K::True: return true;
  case K::False: return false;
  case K::Compare: {
    auto get = [&](const Operand& o) -> std::optional<Rational> {
      if (o.is_output)
        return y[o.index];
      return rational_from_double(o.constant);
    };
    auto a = get(n.lhs);
    auto b = get(n.rhs);
    if (!a || !b)
      return false;
    return compare(*a, n.op, *b);
  }
  case K::Not: return !evaluate(n.children[0], y);
  case K::And:
    for (const auto& c : n.children)
      if (!evaluate(c, y))
        return false;
    return true;
  case K::Or:
    for (const auto& c : n.children)
      if (evaluate(c, y))
        return true;
    return false;
  case K::Xor: {
    bool acc = false;
    for (const auto& c : n.children)
      acc = acc != evaluate(c, y);
    return acc;
  }
  }
  return false;
}

inline bool evaluate(const OutputAssertion& a, std::span<const std::optional<Rational>> y)
{
  return evaluate(a.root, y);
}

struct Bound
{
  double lo = 0;
  double hi = 0;
  friend bool operator==(const Bound&, const Bound&) = default;
};

using HyperRect = std::vector<Bound>;

struct SafetyProperty
{
  HyperRect input_region;
  OutputAssertion assertion;

  void validate() const
  {
    for (std::size_t i = 0; i < input_region.size(); ++i) {
      const Bound& b = input_region[i];
      if (!std::isfinite(b.lo) || !std::isfinite(b.hi))
        throw Error("input " + std::to_string(i) + ": bounds must be finite");
      if (b.lo > b.hi)
        throw Error("input " + std::to_string(i) + ": lo > hi (empty region)");
    }
  }

  void validate_against(const Network& net) const
  {
    validate();
    if (input_region.size() != net.input_dim())
      throw DimensionError("property has " + std::to_string(input_region.size()) + " input bounds, network has " +
                           std::to_string(net.input_dim()) + " inputs");
    if (assertion.arity_needed() > net.output_dim())
      throw DimensionError("assertion references y_" + std::to_string(assertion.arity_needed() - 1) +
                           " but network has " + std::to_string(net.output_dim()) + " outputs");
  }

  std::vector<double> center() const
  {
    std::vector<double> c;
    for (const auto& b : input_region)
      c.push_back(b.lo + (b.hi - b.lo) / 2);
    return c;
  }
};

/// {"input": [{"lo": r, "hi": r}, ...], "assert": "<expr>" | {"robust_class": i}}
/// robust_class needs the output count; pass it or cross-validate later.
inline SafetyProperty parse_property_json(const nlohmann::json& j, std::optional<std::size_t> output_dim = {})
{
  SafetyProperty p;
  if (!j.is_object() || !j.contains("input") || !j.contains("assert"))
    throw Error("property JSON needs 'input' and 'assert' members");
  for (const auto& b : j.at("input")) {
    if (!b.contains("lo") || !b.contains("hi") || !b.at("lo").is_number() || !b.at("hi").is_number())
      throw Error("each input bound needs numeric 'lo' and 'hi'");
    p.input_region.push_back({b.at("lo").get<double>(), b.at("hi").get<double>()});
  }
  const auto& a = j.at("assert");
  if (a.is_string()) {
    p.assertion = OutputAssertion::parse(a.get<std::string>());
  } else if (a.is_boolean()) {
    p.assertion = {AssertionNode::constant(a.get<bool>())};
  } else if (a.is_object() && a.contains("robust_class")) {
    const auto cls = a.at("robust_class").get<std::size_t>();
    std::size_t n = output_dim ? *output_dim : a.value("outputs", std::size_t{0});
    if (n == 0)
      throw Error("robust_class needs the network output count (cross-validate with a network)");
    p.assertion = OutputAssertion::robust_class(cls, n);
  } else {
    throw Error("'assert' must be an expression string or {\"robust_class\": i}");
  }
  p.validate();
  return p;
}

inline SafetyProperty parse_property(std::istream& in, std::optional<std::size_t> output_dim = {})
{
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("property JSON: ") + e.what());
  }
  return parse_property_json(j, output_dim);
}

inline SafetyProperty parse_property(std::istream& in, const Network& net)
{
  SafetyProperty p = parse_property(in, std::optional<std::size_t>(net.output_dim()));
  p.validate_against(net);
  return p;
}

inline nlohmann::json property_to_json(const SafetyProperty& p)
{
  nlohmann::json j;
  j["input"] = nlohmann::json::array();
  for (const auto& b : p.input_region)
    j["input"].push_back({{"lo", b.lo}, {"hi", b.hi}});
  j["assert"] = p.assertion.str();
  return j;
}

/// Maps a raw-unit property into the network's normalized units using the
/// NNet metadata: inputs are clamped to [min, max] then (x - mean) / range;
/// output constants become (c - mean_out) / range_out.
inline SafetyProperty normalize_property(const SafetyProperty& p, const Normalization& nz)
{
  if (!nz.present())
    throw Error("network carries no normalization metadata");
  const std::size_t n = p.input_region.size();
  if (nz.means.size() != n + 1 || nz.ranges.size() != n + 1)
    throw DimensionError("normalization metadata does not match property dimension");
  SafetyProperty out = p;
  for (std::size_t i = 0; i < n; ++i) {
    auto norm = [&](double v) {
      v = std::clamp(v, nz.input_mins[i], nz.input_maxes[i]);
      return (v - nz.means[i]) / nz.ranges[i];
    };
    out.input_region[i] = {norm(p.input_region[i].lo), norm(p.input_region[i].hi)};
  }
  const double mo = nz.means[n], ro = nz.ranges[n];
  if (!(ro > 0))
    throw Error("output range must be positive to normalize constants");
  auto walk = [&](auto&& self, AssertionNode& a) -> void {
    if (a.kind == AssertionNode::Kind::Compare) {
      if (!a.lhs.is_output)
        a.lhs.constant = (a.lhs.constant - mo) / ro;
      if (!a.rhs.is_output)
        a.rhs.constant = (a.rhs.constant - mo) / ro;
    }
    for (auto& c : a.children)
      self(self, c);
  };
  walk(walk, out.assertion.root);
  return out;
}

/// Folds normalization into the weights so raw-unit inputs can be fed
/// directly: w' = w / range, b' = b - sum w * mean / range on the first layer,
/// and y = y_norm * range_out + mean_out on an identity output layer.
/// Input clamping is not representable this way and is dropped.
inline Network fold_input_normalization(const Network& net)
{
  const Normalization& nz = net.normalization;
  if (!nz.present())
    throw Error("network carries no normalization metadata");
  Network out = net;
  Layer& first = out.layers.front();
  for (std::size_t r = 0; r < first.size(); ++r) {
    double shift = 0;
    for (std::size_t c = 0; c < first.input_size(); ++c) {
      first.weights(r, c) = net.layers.front().weights(r, c) / nz.ranges[c];
      shift += first.weights(r, c) * nz.means[c];
    }
    first.biases[r] -= shift;
  }
  Layer& last = out.layers.back();
  if (last.activation.kind == Activation::Identity) {
    const std::size_t n = net.input_dim();
    for (double& w : last.weights.data)
      w *= nz.ranges[n];
    for (double& b : last.biases)
      b = b * nz.ranges[n] + nz.means[n];
  }
  return out;
}

} // namespace qnnv
