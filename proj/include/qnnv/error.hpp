#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace qnnv {

struct Error : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

struct ParseError : Error
{
  int line = 0; ///< 1-based; 0 when the location is unknown

  ParseError(const std::string& what, int line_no)
    : Error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + what : what)
    , line(line_no)
  {}
};

struct DimensionError : Error
{
  using Error::Error;
};

/// An error raised inside a named pipeline stage; what() is "<stage>: <cause>".
struct StageError : Error
{
  std::string stage;

  StageError(std::string stage_name, const std::string& cause)
    : Error(stage_name + ": " + cause)
    , stage(std::move(stage_name))
  {}
};

} // namespace qnnv
