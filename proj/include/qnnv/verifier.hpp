#pragma once

// End-to-end verification: tables, intervals, lowering, passes, SMT,
// solver, and counterexample replay.

#include "qnnv/domains.hpp"
#include "qnnv/executor.hpp"
#include "qnnv/interval.hpp"
#include "qnnv/ir.hpp"
#include "qnnv/lower.hpp"
#include "qnnv/passes.hpp"
#include "qnnv/property.hpp"
#include "qnnv/smtlib.hpp"
#include "qnnv/solver.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace qnnv {

struct VerifyOptions
{
  Semantics semantics;
  TableOptions tables;
  SolverConfig solver;
  bool intervals = true;
  bool simplify = true;
  bool slice = true;
  bool balance = true;
  bool unsafe_balance = false; ///< allow balancing float32 sums
  bool post_activation_assumes = false;
  std::optional<IntervalBox> box; ///< imported instead of computed
};

enum class Verdict
{
  Safe,
  Falsified,
  Unknown,
};

inline std::string_view verdict_name(Verdict v)
{
  switch (v) {
  case Verdict::Safe: return "Safe";
  case Verdict::Falsified: return "Falsified";
  case Verdict::Unknown: return "Unknown";
  }
  return "?";
}

inline int exit_code(Verdict v)
{
  switch (v) {
  case Verdict::Safe: return 0;
  case Verdict::Falsified: return 1;
  case Verdict::Unknown: return 2;
  }
  return 3;
}

struct Counterexample
{
  std::vector<double> input;         ///< real-valued input inside the region
  std::vector<Rational> input_exact; ///< the same input in the value domain
  Trace trace;
  PropertyStatus status = PropertyStatus::Violated;
};

struct StageTiming
{
  std::string stage;
  double seconds = 0;
};

struct PassStats
{
  std::string pass;
  std::size_t nodes = 0;
  std::size_t assignments = 0;
  std::size_t assumes = 0;
  std::size_t asserts = 0;
};

struct VerificationReport
{
  Verdict verdict = Verdict::Unknown;
  std::string semantics;
  std::string reason;
  std::optional<Counterexample> counterexample;

  std::vector<StageTiming> timings;
  std::vector<PassStats> passes;
  bool intervals_used = false;
  std::size_t guards_active = 0, guards_inactive = 0, guards_undecided = 0;
  std::size_t discharged_asserts = 0;
  std::vector<std::string> wrap_risk; ///< "layer L neuron j"
  std::vector<std::string> warnings;

  std::optional<SolverStatus> solver_status;
  double solver_seconds = 0;
  long peak_memory_kb = 0;

  double total_seconds() const
  {
    double s = 0;
    for (const auto& t : timings)
      s += t.seconds;
    return s;
  }

  nlohmann::json to_json() const
  {
    nlohmann::json j;
    j["verdict"] = std::string(verdict_name(verdict));
    j["semantics"] = semantics;
    j["reason"] = reason;
    for (const auto& t : timings)
      j["timings"][t.stage] = t.seconds;
    for (const auto& p : passes)
      j["passes"].push_back(
          {{"pass", p.pass}, {"nodes", p.nodes}, {"assignments", p.assignments}, {"assumes", p.assumes}, {"asserts", p.asserts}});
    j["intervals_used"] = intervals_used;
    j["guards"] = {{"AlwaysActive", guards_active}, {"AlwaysInactive", guards_inactive}, {"Undecided", guards_undecided}};
    j["discharged_asserts"] = discharged_asserts;
    j["wrap_risk"] = wrap_risk;
    j["warnings"] = warnings;
    if (solver_status)
      j["solver"] = {{"status", std::string(solver_status_name(*solver_status))},
                     {"seconds", solver_seconds},
                     {"peak_memory_kb", peak_memory_kb}};
    if (counterexample) {
      j["counterexample"]["input"] = counterexample->input;
      std::vector<double> y;
      for (const auto& v : counterexample->trace.outputs())
        y.push_back(v.approx);
      j["counterexample"]["output"] = y;
      j["counterexample"]["replay"] = std::string(status_name(counterexample->status));
    }
    return j;
  }

  void print(std::ostream& out) const
  {
    out << "verdict: " << verdict_name(verdict) << "\n";
    out << "semantics: " << semantics << "\n";
    if (!reason.empty())
      out << "reason: " << reason << "\n";
    if (counterexample) {
      out << "counterexample:";
      for (double x : counterexample->input)
        out << " " << x;
      out << "\noutputs:";
      for (const auto& v : counterexample->trace.outputs())
        out << " " << v.approx;
      out << "\nreplay: " << status_name(counterexample->status) << "\n";
    }
    out << "intervals: " << (intervals_used ? "on" : "off");
    if (intervals_used)
      out << " (guards active " << guards_active << ", inactive " << guards_inactive << ", undecided "
          << guards_undecided << "; discharged asserts " << discharged_asserts << ")";
    out << "\n";
    for (const auto& w : wrap_risk)
      out << "wrap risk: " << w << "\n";
    for (const auto& w : warnings)
      out << "warning: " << w << "\n";
    for (const auto& p : passes)
      out << "pass " << p.pass << ": " << p.nodes << " nodes, " << p.assignments << " assignments, " << p.assumes
          << " assumes, " << p.asserts << " asserts\n";
    for (const auto& t : timings)
      out << "time " << t.stage << ": " << t.seconds << " s\n";
    if (solver_status)
      out << "solver: " << solver_status_name(*solver_status) << " in " << solver_seconds << " s, peak memory "
          << peak_memory_kb << " KiB\n";
  }
};

namespace detail {

class Stopwatch
{
public:
  Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
  double lap()
  {
    auto now = std::chrono::steady_clock::now();
    double s = std::chrono::duration<double>(now - t0_).count();
    t0_ = now;
    return s;
  }

private:
  std::chrono::steady_clock::time_point t0_;
};

template <class F>
auto staged(const char* stage, F&& f) -> decltype(f())
{
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e.what());
  }
}

inline PassStats stats(const std::string& pass, const SsaProgram& p)
{
  return {pass, p.node_count(), p.assignments.size(), p.assumes.size(), p.asserts.size()};
}

} // namespace detail

/// Everything up to (not including) SMT emission.
struct PreparedProgram
{
  SsaProgram program;
  TableSet tables;
  std::optional<IntervalBox> box;
};

inline PreparedProgram prepare(const Network& net, const SafetyProperty& prop, const VerifyOptions& opt,
                               VerificationReport& rep)
{
  using detail::staged;
  detail::Stopwatch sw;
  staged("input", [&] {
    net.validate();
    prop.validate_against(net);
  });
  const Semantics& sem = opt.semantics;
  rep.semantics = sem.name();

  PreparedProgram out;
  out.tables = staged("tables", [&] { return build_tables(net, sem, opt.tables); });
  rep.warnings = out.tables.warnings;
  rep.timings.push_back({"tables", sw.lap()});

  if (opt.box) {
    if (opt.box->semantics.name() != sem.name())
      throw StageError("intervals", "imported interval box is for " + opt.box->semantics.name() + ", run uses " +
                                        sem.name());
    out.box = opt.box;
  } else if (opt.intervals) {
    try {
      out.box = propagate(net, prop.input_region, sem, out.tables);
    } catch (const DimensionError& e) {
      throw StageError("intervals", e.what());
    } catch (const Error& e) {
      rep.warnings.push_back(std::string(e.what()));
    }
  }
  if (out.box) {
    rep.intervals_used = true;
    for (const auto& g : decidable_guards(*out.box, net)) {
      if (g.fact == GuardFact::AlwaysActive)
        ++rep.guards_active;
      else if (g.fact == GuardFact::AlwaysInactive)
        ++rep.guards_inactive;
      else
        ++rep.guards_undecided;
    }
    for (std::size_t li = 0; li < out.box->wrap_risk.size(); ++li)
      for (std::size_t j = 0; j < out.box->wrap_risk[li].size(); ++j)
        if (out.box->wrap_risk[li][j])
          rep.wrap_risk.push_back("layer " + std::to_string(li) + " neuron " + std::to_string(j));
  }
  rep.timings.push_back({"intervals", sw.lap()});

  LowerOptions lo;
  lo.box = out.box ? &*out.box : nullptr;
  lo.post_activation_assumes = opt.post_activation_assumes;
  SsaProgram p = staged("lower", [&] { return lower(net, prop, sem, out.tables, lo); });
  rep.discharged_asserts = p.discharged_asserts;
  rep.passes.push_back(detail::stats("lower", p));
  rep.timings.push_back({"lower", sw.lap()});

  if (opt.simplify) {
    p = staged("simplify", [&] { return simplify(p); });
    rep.passes.push_back(detail::stats("simplify", p));
    rep.timings.push_back({"simplify", sw.lap()});
  }
  if (opt.slice) {
    p = staged("slice", [&] { return slice(p); });
    rep.passes.push_back(detail::stats("slice", p));
    rep.timings.push_back({"slice", sw.lap()});
  }
  if (opt.balance) {
    if (sem.associative() || opt.unsafe_balance) {
      p = staged("balance", [&] { return balance(p, opt.unsafe_balance); });
      rep.passes.push_back(detail::stats("balance", p));
    } else {
      rep.warnings.push_back("balance skipped: float32 addition is not associative (use --unsafe-balance)");
    }
    rep.timings.push_back({"balance", sw.lap()});
  }
  out.program = std::move(p);
  return out;
}

/// Replays domain-valued inputs on the concrete executor.
inline Counterexample replay_inputs(const Network& net, const SafetyProperty& prop, const Semantics& sem,
                                    const TableSet& tables, const std::vector<Rational>& exact,
                                    const std::vector<double>& reals)
{
  Counterexample c;
  c.input = reals;
  c.input_exact = exact;
  c.trace = execute_values(net, exact, sem, tables);
  c.status = check_property(c.trace, prop);
  return c;
}

inline VerificationReport verify(const Network& net, const SafetyProperty& prop, const VerifyOptions& opt)
{
  VerificationReport rep;
  PreparedProgram pp = prepare(net, prop, opt, rep);
  detail::Stopwatch sw;
  if (pp.program.asserts.empty()) {
    rep.verdict = Verdict::Safe;
    rep.reason = "every assertion discharged before solving";
    return rep;
  }
  const std::string script = detail::staged("emit", [&] { return emit_smtlib(pp.program); });
  rep.timings.push_back({"emit", sw.lap()});

  SolverResult r = run_solver(script, opt.solver);
  rep.timings.push_back({"solve", sw.lap()});
  rep.solver_status = r.status;
  rep.solver_seconds = r.seconds;
  rep.peak_memory_kb = r.peak_memory_kb;

  switch (r.status) {
  case SolverStatus::Unsat: rep.verdict = Verdict::Safe; break;
  case SolverStatus::Sat: {
    try {
      const DecodedInputs d =
          decode_model(r, opt.semantics, prop.input_region, detail::referenced_inputs(pp.program));
      Counterexample c = replay_inputs(net, prop, opt.semantics, pp.tables, d.values, d.reals);
      // The real-valued input must reproduce the same domain values.
      if (opt.semantics.kind != NumericKind::Real) {
        const Trace t = execute(net, d.reals, opt.semantics, pp.tables);
        for (std::size_t i = 0; i < d.values.size(); ++i)
          if (t.inputs[i].exact != d.values[i])
            throw SolverError("input " + std::to_string(i) + " does not quantize back to the model value");
      }
      rep.verdict = c.status == PropertyStatus::Violated ? Verdict::Falsified : Verdict::Unknown;
      if (rep.verdict == Verdict::Unknown)
        rep.reason = "solver model does not violate the property on the executor";
      rep.counterexample = std::move(c);
    } catch (const SolverError& e) {
      rep.verdict = Verdict::Unknown;
      rep.reason = e.what();
    } catch (const Error& e) {
      rep.verdict = Verdict::Unknown;
      rep.reason = std::string("replay: ") + e.what();
    }
    rep.timings.push_back({"replay", sw.lap()});
    break;
  }
  case SolverStatus::Timeout:
    rep.verdict = Verdict::Unknown;
    rep.reason = r.message;
    break;
  case SolverStatus::Unknown:
    rep.verdict = Verdict::Unknown;
    rep.reason = "solver returned unknown";
    break;
  case SolverStatus::Error:
    rep.verdict = Verdict::Unknown;
    rep.reason = "solver error: " + r.message;
    break;
  }
  return rep;
}

/// SMT-LIB script of the prepared program, without running a solver.
inline std::string emit_query(const Network& net, const SafetyProperty& prop, const VerifyOptions& opt)
{
  VerificationReport rep;
  return emit_smtlib(prepare(net, prop, opt, rep).program);
}

// Sweep ----------------------------------------------------------------------

struct SweepRow
{
  int width = 0;
  std::string format;
  Verdict verdict = Verdict::Unknown;
  double seconds = 0;
  std::size_t nodes = 0;
  bool wrap_risk = false;
  std::string reason;
  std::optional<Counterexample> counterexample; ///< replayed; set on Falsified
};

/// One verification per width n in [min_width, max_width] with k integer
/// bits (l = n - k). A row that fails reports Unknown with the error.
inline std::vector<SweepRow> sweep(const Network& net, const SafetyProperty& prop, const VerifyOptions& base, int k,
                                   int min_width = 6, int max_width = 16, unsigned workers = 1)
{
  if (min_width > max_width)
    throw Error("sweep: empty width range");
  std::vector<SweepRow> rows(static_cast<std::size_t>(max_width - min_width + 1));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) {
      SweepRow& row = rows[i];
      row.width = min_width + static_cast<int>(i);
      const auto t0 = std::chrono::steady_clock::now();
      try {
        if (row.width < k)
          throw Error("width " + std::to_string(row.width) + " is below the " + std::to_string(k) + " integer bits");
        VerifyOptions o = base;
        o.semantics = Semantics::fxp({k, row.width - k}, base.semantics.rounding);
        row.format = o.semantics.format.name();
        VerificationReport rep = verify(net, prop, o);
        row.verdict = rep.verdict;
        row.reason = rep.reason;
        row.nodes = rep.passes.empty() ? 0 : rep.passes.back().nodes;
        row.wrap_risk = !rep.wrap_risk.empty();
        if (rep.verdict == Verdict::Falsified)
          row.counterexample = std::move(rep.counterexample);
      } catch (const std::exception& e) {
        row.verdict = Verdict::Unknown;
        row.reason = e.what();
      }
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(rows.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t)
    pool.emplace_back(work);
  work();
  for (auto& t : pool)
    t.join();
  return rows;
}

inline std::string csv_field(const std::string& s)
{
  if (s.find_first_of(",\"\n") == std::string::npos)
    return s;
  std::string q = "\"";
  for (char c : s)
    q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out)
{
  out << "width,format,verdict,seconds,nodes,wrap_risk,reason\n";
  for (const auto& r : rows)
    out << r.width << "," << r.format << "," << verdict_name(r.verdict) << "," << r.seconds << "," << r.nodes << ","
        << (r.wrap_risk ? "yes" : "no") << "," << csv_field(r.reason) << "\n";
}

// Counterexample export --------------------------------------------------------

inline nlohmann::json counterexample_json(const Counterexample& c, const SafetyProperty& prop, Verdict v)
{
  nlohmann::json j;
  j["verdict"] = std::string(verdict_name(v));
  j["semantics"] = c.trace.semantics.name();
  j["input"] = c.input;
  std::vector<std::string> exact;
  for (const auto& q : c.input_exact)
    exact.push_back(q.get_str());
  j["input_exact"] = exact;
  if (c.trace.semantics.kind == NumericKind::Fxp) {
    std::vector<std::int64_t> raw;
    for (const auto& t : c.trace.inputs)
      raw.push_back(t.raw);
    j["input_raw"] = raw;
    raw.clear();
    for (const auto& t : c.trace.outputs())
      raw.push_back(t.raw);
    j["output_raw"] = raw;
  }
  std::vector<double> y;
  std::vector<std::string> yx;
  for (const auto& t : c.trace.outputs()) {
    y.push_back(t.approx);
    yx.push_back(t.exact ? t.exact->get_str() : "NaN");
  }
  j["output"] = y;
  j["output_exact"] = yx;
  j["status"] = std::string(status_name(c.status));
  j["property"] = property_to_json(prop);
  return j;
}

/// Binary PGM of the input; pixels scale the region's overall range to 0..255.
inline void write_pgm(const Counterexample& c, const SafetyProperty& prop, std::size_t height, std::size_t width,
                      std::ostream& out)
{
  if (height * width != c.input.size())
    throw DimensionError("image shape " + std::to_string(height) + "x" + std::to_string(width) + " does not match " +
                         std::to_string(c.input.size()) + " inputs");
  double lo = prop.input_region.front().lo, hi = prop.input_region.front().hi;
  for (const auto& b : prop.input_region) {
    lo = std::min(lo, b.lo);
    hi = std::max(hi, b.hi);
  }
  out << "P5\n" << width << " " << height << "\n255\n";
  for (double x : c.input) {
    const double t = hi > lo ? (x - lo) / (hi - lo) : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0))));
  }
}

struct ExportedFiles
{
  std::string json;
  std::optional<std::string> pgm;
};

/// Writes <stem>.json and, when a shape is given, <stem>.pgm.
inline ExportedFiles export_counterexample(const VerificationReport& rep, const SafetyProperty& prop,
                                           const std::filesystem::path& stem,
                                           std::optional<std::pair<std::size_t, std::size_t>> shape = {})
{
  if (!rep.counterexample)
    throw Error("report has no counterexample to export");
  const Counterexample& c = *rep.counterexample;
  if (shape && shape->first * shape->second != c.input.size())
    throw DimensionError("image shape " + std::to_string(shape->first) + "x" + std::to_string(shape->second) +
                         " does not match " + std::to_string(c.input.size()) + " inputs");
  ExportedFiles files;
  files.json = stem.string() + ".json";
  {
    std::ofstream f(files.json);
    f << counterexample_json(c, prop, rep.verdict).dump(2) << "\n";
    if (!f)
      throw Error("cannot write " + files.json);
  }
  if (shape) {
    files.pgm = stem.string() + ".pgm";
    std::ofstream f(*files.pgm, std::ios::binary);
    write_pgm(c, prop, shape->first, shape->second, f);
    if (!f)
      throw Error("cannot write " + *files.pgm);
  }
  return files;
}

/// Re-executes an exported counterexample. Exact inputs are used when present.
inline Counterexample replay_json(const nlohmann::json& j, const Network& net, const SafetyProperty& prop,
                                  const Semantics& sem, const TableSet& tables)
{
  if (j.contains("semantics") && j["semantics"].get<std::string>() != sem.name())
    throw Error("counterexample was produced under " + j["semantics"].get<std::string>() + ", replaying under " +
                sem.name());
  const auto reals = j.at("input").get<std::vector<double>>();
  if (reals.size() != net.input_dim())
    throw DimensionError("counterexample has " + std::to_string(reals.size()) + " inputs, network expects " +
                         std::to_string(net.input_dim()));
  if (j.contains("input_exact")) {
    std::vector<Rational> exact;
    for (const auto& s : j["input_exact"].get<std::vector<std::string>>()) {
      Rational q(s);
      q.canonicalize();
      exact.push_back(q);
    }
    return replay_inputs(net, prop, sem, tables, exact, reals);
  }
  Counterexample c;
  c.input = reals;
  c.trace = execute(net, reals, sem, tables);
  for (const auto& t : c.trace.inputs)
    c.input_exact.push_back(t.exact.value_or(Rational(0)));
  c.status = check_property(c.trace, prop);
  return c;
}

} // namespace qnnv
