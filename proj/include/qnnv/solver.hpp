#pragma once

// External SMT solver process, its output, and model decoding.

#include "qnnv/domains.hpp"
#include "qnnv/error.hpp"
#include "qnnv/float32.hpp"
#include "qnnv/ir.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

namespace qnnv {

struct SolverConfig
{
  std::string path = "z3";
  std::vector<std::string> args;   ///< empty: chosen from the executable name
  double timeout_seconds = 60;

  std::vector<std::string> effective_args() const
  {
    if (!args.empty())
      return args;
    const std::string base = std::filesystem::path(path).filename().string();
    if (base.find("z3") != std::string::npos)
      return {"-smt2"};
    if (base.find("cvc") != std::string::npos)
      return {"--lang=smt2"};
    return {};
  }
};

enum class SolverStatus
{
  Sat,
  Unsat,
  Unknown,
  Timeout,
  Error,
};

inline std::string_view solver_status_name(SolverStatus s)
{
  switch (s) {
  case SolverStatus::Sat: return "sat";
  case SolverStatus::Unsat: return "unsat";
  case SolverStatus::Unknown: return "unknown";
  case SolverStatus::Timeout: return "timeout";
  case SolverStatus::Error: return "error";
  }
  return "?";
}

class SolverError : public Error
{
public:
  using Error::Error;
};

// S-expressions ----------------------------------------------------------------

struct SExpr
{
  std::string atom;
  std::vector<SExpr> list;
  bool is_list = false;

  bool is_atom(std::string_view s) const { return !is_list && atom == s; }
  std::string str() const
  {
    if (!is_list)
      return atom;
    std::string s = "(";
    for (std::size_t i = 0; i < list.size(); ++i)
      s += (i ? " " : "") + list[i].str();
    return s + ")";
  }
};

/// Top-level expressions of a solver transcript.
inline std::vector<SExpr> parse_sexprs(std::string_view text)
{
  std::vector<SExpr> top;
  std::vector<SExpr> stack;
  std::size_t i = 0;
  auto emit = [&](SExpr e) {
    if (stack.empty())
      top.push_back(std::move(e));
    else
      stack.back().list.push_back(std::move(e));
  };
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == ';') {
      while (i < text.size() && text[i] != '\n')
        ++i;
    } else if (c == '(') {
      SExpr e;
      e.is_list = true;
      stack.push_back(std::move(e));
      ++i;
    } else if (c == ')') {
      if (stack.empty())
        throw SolverError("unbalanced ')' in solver output");
      SExpr e = std::move(stack.back());
      stack.pop_back();
      emit(std::move(e));
      ++i;
    } else if (c == '"' || c == '|') {
      std::size_t j = i + 1;
      while (j < text.size() && text[j] != c)
        j += (c == '"' && text[j] == '\\') ? 2 : 1;
      if (j >= text.size())
        throw SolverError("unterminated literal in solver output");
      emit(SExpr{std::string(text.substr(i, j - i + 1)), {}, false});
      i = j + 1;
    } else {
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && text[j] != '(' && text[j] != ')' &&
             text[j] != ';')
        ++j;
      emit(SExpr{std::string(text.substr(i, j - i)), {}, false});
      i = j;
    }
  }
  if (!stack.empty())
    throw SolverError("unbalanced '(' in solver output");
  return top;
}

struct SolverResult
{
  SolverStatus status = SolverStatus::Unknown;
  std::map<std::string, SExpr> model; ///< define-fun name -> value
  std::string message;                ///< error text or unknown reason
  std::string raw_output;
  double seconds = 0;
  long peak_memory_kb = 0;
};

/// Verdict and model from a solver transcript. An error reported before the
/// verdict makes the run an error; later errors (e.g. get-model after unsat)
/// are ignored.
inline SolverResult parse_solver_output(const std::string& out)
{
  SolverResult r;
  r.raw_output = out;
  std::vector<SExpr> top;
  try {
    top = parse_sexprs(out);
  } catch (const SolverError& e) {
    r.status = SolverStatus::Error;
    r.message = e.what();
    return r;
  }
  std::size_t k = 0;
  bool verdict = false;
  for (; k < top.size(); ++k) {
    const SExpr& e = top[k];
    if (e.is_list && !e.list.empty() && e.list[0].is_atom("error")) {
      r.status = SolverStatus::Error;
      r.message = e.list.size() > 1 ? e.list[1].atom : "solver error";
      return r;
    }
    if (e.is_atom("sat") || e.is_atom("unsat") || e.is_atom("unknown")) {
      r.status = e.atom == "sat" ? SolverStatus::Sat : e.atom == "unsat" ? SolverStatus::Unsat : SolverStatus::Unknown;
      verdict = true;
      ++k;
      break;
    }
  }
  if (!verdict) {
    r.status = SolverStatus::Error;
    r.message = "no verdict in solver output";
    return r;
  }
  if (r.status != SolverStatus::Sat)
    return r;
  for (; k < top.size(); ++k) {
    const SExpr& e = top[k];
    if (!e.is_list)
      continue;
    for (const SExpr& d : e.list) {
      // (define-fun name () Sort value)
      if (d.is_list && d.list.size() == 5 && d.list[0].is_atom("define-fun") && d.list[2].is_list &&
          d.list[2].list.empty())
        r.model[d.list[1].atom] = d.list[4];
    }
    if (!r.model.empty())
      break;
  }
  return r;
}

// Process ----------------------------------------------------------------------

namespace detail {

class TempFile
{
public:
  explicit TempFile(const std::string& suffix)
  {
    std::string tmpl = (std::filesystem::temp_directory_path() / ("qnnv-XXXXXX" + suffix)).string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    int fd = ::mkstemps(buf.data(), static_cast<int>(suffix.size()));
    if (fd < 0)
      throw Error("cannot create temporary file");
    ::close(fd);
    path_ = buf.data();
  }
  ~TempFile() { std::filesystem::remove(path_); }
  TempFile(const TempFile&) = delete;
  TempFile& operator=(const TempFile&) = delete;

  const std::string& path() const { return path_; }

private:
  std::string path_;
};

inline std::string read_file(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

} // namespace detail

/// Runs the solver on `script` with a wall-clock timeout. Peak memory is the
/// child's maximum resident set size.
inline SolverResult run_solver(const std::string& script, const SolverConfig& cfg)
{
  detail::TempFile in(".smt2"), out(".out");
  {
    std::ofstream f(in.path());
    f << script;
    if (!f)
      throw Error("cannot write solver input");
  }
  std::vector<std::string> argv_s{cfg.path};
  for (const auto& a : cfg.effective_args())
    argv_s.push_back(a);
  argv_s.push_back(in.path());
  std::vector<char*> argv;
  for (auto& s : argv_s)
    argv.push_back(s.data());
  argv.push_back(nullptr);

  const auto start = std::chrono::steady_clock::now();
  const pid_t pid = ::fork();
  if (pid < 0)
    throw Error("fork failed");
  if (pid == 0) {
    const int fd = ::open(out.path().c_str(), O_WRONLY | O_TRUNC);
    if (fd >= 0) {
      ::dup2(fd, 1);
      ::dup2(fd, 2);
      ::close(fd);
    }
    ::execvp(argv[0], argv.data());
    ::_exit(127);
  }

  int status = 0;
  rusage usage{};
  bool timed_out = false;
  for (;;) {
    const pid_t w = ::wait4(pid, &status, WNOHANG, &usage);
    if (w == pid)
      break;
    if (w < 0)
      throw Error("wait for solver failed");
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (cfg.timeout_seconds > 0 && elapsed > cfg.timeout_seconds) {
      ::kill(pid, SIGKILL);
      ::wait4(pid, &status, 0, &usage);
      timed_out = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(elapsed < 0.1 ? 1 : 10));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  SolverResult r;
  if (timed_out) {
    r.status = SolverStatus::Timeout;
    r.message = "timeout after " + std::to_string(cfg.timeout_seconds) + " s";
  } else if (WIFEXITED(status) && WEXITSTATUS(status) == 127) {
    r.status = SolverStatus::Error;
    r.message = "cannot execute solver '" + cfg.path + "'";
  } else {
    r = parse_solver_output(detail::read_file(out.path()));
  }
  r.seconds = secs;
  r.peak_memory_kb = usage.ru_maxrss;
  return r;
}

// Model values -------------------------------------------------------------------

namespace detail {

inline BigInt parse_bits(const std::string& a, int& width)
{
  BigInt v = 0;
  if (a.rfind("#b", 0) == 0) {
    width = static_cast<int>(a.size()) - 2;
    v.set_str(a.substr(2), 2);
  } else if (a.rfind("#x", 0) == 0) {
    width = 4 * (static_cast<int>(a.size()) - 2);
    v.set_str(a.substr(2), 16);
  } else {
    throw SolverError("unexpected bit-vector literal '" + a + "'");
  }
  return v;
}

inline BigInt bv_value(const SExpr& e, int& width)
{
  if (!e.is_list)
    return parse_bits(e.atom, width);
  // (_ bvN w)
  if (e.list.size() == 3 && e.list[0].is_atom("_") && e.list[1].atom.rfind("bv", 0) == 0) {
    width = std::stoi(e.list[2].atom);
    return BigInt(e.list[1].atom.substr(2));
  }
  throw SolverError("unexpected bit-vector value " + e.str());
}

inline Rational decimal_value(const std::string& s)
{
  const auto dot = s.find('.');
  if (s.empty() || s.find_first_not_of("0123456789.") != std::string::npos)
    throw SolverError("unexpected numeral '" + s + "'");
  if (dot == std::string::npos)
    return Rational(BigInt(s));
  const std::string frac = s.substr(dot + 1);
  const BigInt num(s.substr(0, dot) + frac);
  const BigInt den(std::string("1") + std::string(frac.size(), '0'));
  Rational r(num, den);
  r.canonicalize();
  return r;
}

inline Rational real_value(const SExpr& e)
{
  if (!e.is_list)
    return decimal_value(e.atom);
  if (e.list.size() == 2 && e.list[0].is_atom("-"))
    return -real_value(e.list[1]);
  if (e.list.size() == 3 && e.list[0].is_atom("/"))
    return real_value(e.list[1]) / real_value(e.list[2]);
  throw SolverError("unexpected real value " + e.str());
}

/// Empty for NaN; infinities are rejected.
inline std::optional<float> float_value(const SExpr& e)
{
  if (e.is_list && e.list.size() == 4 && e.list[0].is_atom("fp")) {
    int ws = 0, we = 0, wm = 0;
    const BigInt s = bv_value(e.list[1], ws), x = bv_value(e.list[2], we), m = bv_value(e.list[3], wm);
    if (ws != 1 || we != 8 || wm != 23)
      throw SolverError("float value has the wrong shape: " + e.str());
    const std::uint32_t bits =
        static_cast<std::uint32_t>((s.get_ui() << 31) | (x.get_ui() << 23) | m.get_ui());
    return float_from_bits(bits);
  }
  if (e.is_list && e.list.size() == 4 && e.list[0].is_atom("_")) {
    const std::string& k = e.list[1].atom;
    if (k == "+zero")
      return 0.0f;
    if (k == "-zero")
      return -0.0f;
    if (k == "NaN")
      return std::nullopt;
    if (k == "+oo" || k == "-oo")
      throw SolverError("model assigns an infinite input");
  }
  throw SolverError("unexpected float value " + e.str());
}

} // namespace detail

/// Exact domain value of a model constant.
inline std::optional<Rational> model_value(const SExpr& e, const Semantics& sem)
{
  switch (sem.kind) {
  case NumericKind::Fxp: {
    int w = 0;
    BigInt u = detail::bv_value(e, w);
    if (w != sem.format.total_bits())
      throw SolverError("model value has width " + std::to_string(w) + ", expected " +
                        std::to_string(sem.format.total_bits()));
    if (u >= pow2(static_cast<unsigned>(w - 1)))
      u -= pow2(static_cast<unsigned>(w));
    return Rational(u) * sem.format.ulp();
  }
  case NumericKind::Float32: {
    auto f = detail::float_value(e);
    if (!f)
      return std::nullopt;
    return rational_from_double(*f);
  }
  case NumericKind::Real: return detail::real_value(e);
  }
  throw Error("unknown semantics");
}

struct DecodedInputs
{
  std::vector<Rational> values; ///< in the value domain
  std::vector<double> reals;    ///< real inputs that quantize to `values`
  std::vector<bool> defaulted;  ///< input absent from the model
};

/// Reads nondet{i} from the model and checks it against the quantized input
/// region. `declared[i]` marks inputs present in the script (all when empty);
/// a declared input missing from the model is an error, an undeclared one
/// takes the lower bound.
inline DecodedInputs decode_model(const SolverResult& r, const Semantics& sem, const HyperRect& region,
                                  const std::vector<bool>& declared = {})
{
  if (!declared.empty() && declared.size() != region.size())
    throw DimensionError("declared-input mask does not match the input region");
  const auto bounds = quantize_region(sem, region);
  DecodedInputs d;
  for (std::size_t i = 0; i < region.size(); ++i) {
    const std::string name = "nondet" + std::to_string(i);
    auto it = r.model.find(name);
    Rational v = bounds[i].first;
    d.defaulted.push_back(it == r.model.end());
    if (it == r.model.end() && (declared.empty() || declared[i]))
      throw SolverError("model does not assign input " + name);
    if (it != r.model.end()) {
      auto mv = model_value(it->second, sem);
      if (!mv)
        throw SolverError("model assigns NaN to input " + std::to_string(i));
      v = *mv;
    }
    if (v < bounds[i].first || v > bounds[i].second)
      throw SolverError("model value " + to_string(v) + " for input " + std::to_string(i) +
                        " lies outside the input region");
    d.values.push_back(v);
    // The quantizer maps [lo, hi] onto [q(lo), q(hi)]; clamping a lattice
    // point into the region preserves its quantized value.
    const double x = to_double(v);
    d.reals.push_back(std::clamp(x, region[i].lo, region[i].hi));
  }
  return d;
}

} // namespace qnnv
