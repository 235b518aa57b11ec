#pragma once

// Reader and writer for the NNet text format (github.com/sisl/NNet).
//
//   // comment lines
//   numLayers,inputSize,outputSize,maxLayerSize,
//   size_0,size_1,...,size_numLayers,
//   0,                          (legacy flag)
//   input mins / input maxes / means / ranges
//   per layer: one row per neuron of weights, then one row per neuron of bias
//
// NNet carries no activation information; hidden layers default to ReLU and
// the output layer to identity. A comment line of the form
//   // qnnv-activations: relu,sigmoid,identity
// overrides that and is ignored by other NNet readers.

#include "qnnv/error.hpp"
#include "qnnv/network.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace qnnv {

namespace detail {

inline std::vector<double> nnet_numbers(const std::string& line, int line_no)
{
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos)
      comma = line.size();
    std::string tok = line.substr(pos, comma - pos);
    auto b = tok.find_first_not_of(" \t\r");
    auto e = tok.find_last_not_of(" \t\r");
    if (b != std::string::npos) {
      tok = tok.substr(b, e - b + 1);
      double v = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || ptr != tok.data() + tok.size())
        throw ParseError("non-numeric token '" + tok + "'", line_no);
      out.push_back(v);
    }
    pos = comma + 1;
  }
  return out;
}

inline std::string format_double(double v)
{
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::vector<ActivationKind> parse_activation_list(const std::string& spec, int line_no)
{
  std::vector<ActivationKind> acts;
  std::string item;
  std::size_t depth = 0;
  for (char c : spec) {
    if (c == '(')
      ++depth;
    if (c == ')' && depth > 0)
      --depth;
    if (c == ',' && depth == 0) {
      acts.push_back(parse_activation(item));
      item.clear();
    } else if (c != ' ' && c != '\t' && c != '\r') {
      item.push_back(c);
    }
  }
  if (!item.empty())
    acts.push_back(parse_activation(item));
  if (acts.empty())
    throw ParseError("empty activation list", line_no);
  return acts;
}

} // namespace detail

inline Network parse_nnet(std::istream& in, std::string name = {})
{
  Network net;
  net.name = std::move(name);
  std::vector<ActivationKind> declared_acts;
  int acts_line = 0;

  std::string line;
  int line_no = 0;
  auto next_data_line = [&](const char* what) {
    while (std::getline(in, line)) {
      ++line_no;
      auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos)
        continue;
      if (line.compare(b, 2, "//") == 0) {
        const std::string tag = "qnnv-activations:";
        auto t = line.find(tag);
        if (t != std::string::npos) {
          acts_line = line_no;
          try {
            declared_acts = detail::parse_activation_list(line.substr(t + tag.size()), line_no);
          } catch (const ParseError&) {
            throw;
          } catch (const Error& e) {
            throw ParseError(e.what(), line_no);
          }
        }
        continue;
      }
      return detail::nnet_numbers(line, line_no);
    }
    throw ParseError(std::string("truncated file: expected ") + what, line_no + 1);
  };

  auto header = next_data_line("header line");
  if (header.size() < 4)
    throw ParseError("header needs numLayers,inputSize,outputSize,maxLayerSize", line_no);
  auto as_count = [&](double v, const char* what) {
    if (v < 0 || v != static_cast<double>(static_cast<long long>(v)))
      throw ParseError(std::string(what) + " must be a non-negative integer", line_no);
    return static_cast<std::size_t>(v);
  };
  const std::size_t num_layers = as_count(header[0], "numLayers");
  const std::size_t input_size = as_count(header[1], "inputSize");
  const std::size_t output_size = as_count(header[2], "outputSize");
  if (num_layers == 0)
    throw ParseError("numLayers must be at least 1", line_no);

  auto sizes_d = next_data_line("layer sizes");
  if (sizes_d.size() != num_layers + 1)
    throw ParseError("dimension mismatch: expected " + std::to_string(num_layers + 1) + " layer sizes, found " +
                       std::to_string(sizes_d.size()),
                     line_no);
  std::vector<std::size_t> sizes;
  for (double v : sizes_d)
    sizes.push_back(as_count(v, "layer size"));
  if (sizes.front() != input_size || sizes.back() != output_size)
    throw ParseError("dimension mismatch: layer sizes disagree with inputSize/outputSize", line_no);

  next_data_line("legacy flag line");

  auto expect_len = [&](std::vector<double> v, std::size_t n, const char* what) {
    if (v.size() != n)
      throw ParseError(std::string("dimension mismatch: ") + what + " has " + std::to_string(v.size()) +
                         " entries, expected " + std::to_string(n),
                       line_no);
    return v;
  };
  net.normalization.input_mins = expect_len(next_data_line("input minimums"), input_size, "input minimums");
  net.normalization.input_maxes = expect_len(next_data_line("input maximums"), input_size, "input maximums");
  net.normalization.means = expect_len(next_data_line("means"), input_size + 1, "means");
  net.normalization.ranges = expect_len(next_data_line("ranges"), input_size + 1, "ranges");

  for (std::size_t li = 0; li < num_layers; ++li) {
    Layer layer;
    const std::size_t rows = sizes[li + 1];
    const std::size_t cols = sizes[li];
    layer.weights = Matrix(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      auto row = next_data_line("weight row");
      if (row.size() != cols)
        throw ParseError("dimension mismatch: layer " + std::to_string(li) + " weight row " + std::to_string(r) +
                           " has " + std::to_string(row.size()) + " entries, expected " + std::to_string(cols),
                         line_no);
      std::copy(row.begin(), row.end(), layer.weights.data.begin() + static_cast<std::ptrdiff_t>(r * cols));
    }
    for (std::size_t r = 0; r < rows; ++r) {
      auto b = next_data_line("bias row");
      if (b.size() != 1)
        throw ParseError("dimension mismatch: layer " + std::to_string(li) + " bias row " + std::to_string(r) +
                           " has " + std::to_string(b.size()) + " entries, expected 1",
                         line_no);
      layer.biases.push_back(b[0]);
    }
    layer.activation = li + 1 == num_layers ? ActivationKind::identity() : ActivationKind::relu();
    net.layers.push_back(std::move(layer));
  }

  // Anything but blank lines and comments after the last bias is an error.
  while (std::getline(in, line)) {
    ++line_no;
    auto b = line.find_first_not_of(" \t\r");
    if (b != std::string::npos && line.compare(b, 2, "//") != 0)
      throw ParseError("dimension mismatch: unexpected data after the last layer", line_no);
  }

  if (!declared_acts.empty()) {
    if (declared_acts.size() != num_layers)
      throw ParseError("activation list names " + std::to_string(declared_acts.size()) + " layers, file has " +
                         std::to_string(num_layers),
                       acts_line);
    for (std::size_t i = 0; i < num_layers; ++i)
      net.layers[i].activation = declared_acts[i];
  }

  try {
    net.validate();
  } catch (const Error& e) {
    throw ParseError(e.what(), 0);
  }
  return net;
}

inline Network parse_nnet_string(const std::string& text, std::string name = {})
{
  std::istringstream is(text);
  return parse_nnet(is, std::move(name));
}

inline void serialize_nnet(const Network& net, std::ostream& out)
{
  net.validate();
  using detail::format_double;
  const std::size_t n_in = net.input_dim();
  out << "// " << (net.name.empty() ? "network" : net.name) << "\n";
  out << "// qnnv-activations: ";
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    out << (i ? "," : "") << net.layers[i].activation.name();
  out << "\n";

  std::size_t max_size = n_in;
  for (const auto& l : net.layers)
    max_size = std::max(max_size, l.size());
  out << net.layers.size() << "," << n_in << "," << net.output_dim() << "," << max_size << ",\n";
  out << n_in << ",";
  for (const auto& l : net.layers)
    out << l.size() << ",";
  out << "\n0,\n";

  auto write_row = [&](const std::vector<double>& v) {
    for (double x : v)
      out << format_double(x) << ",";
    out << "\n";
  };
  const Normalization& nz = net.normalization;
  if (nz.present()) {
    write_row(nz.input_mins);
    write_row(nz.input_maxes);
    write_row(nz.means);
    write_row(nz.ranges);
  } else {
    write_row(std::vector<double>(n_in, -1e30));
    write_row(std::vector<double>(n_in, 1e30));
    write_row(std::vector<double>(n_in + 1, 0.0));
    write_row(std::vector<double>(n_in + 1, 1.0));
  }
  for (const auto& l : net.layers) {
    for (std::size_t r = 0; r < l.size(); ++r) {
      for (double w : l.weights.row(r))
        out << format_double(w) << ",";
      out << "\n";
    }
    for (double b : l.biases)
      out << format_double(b) << ",\n";
  }
}

inline std::string serialize_nnet_string(const Network& net)
{
  std::ostringstream os;
  serialize_nnet(net, os);
  return os.str();
}

} // namespace qnnv
