#include "qnnv/bundled.hpp"
#include "qnnv/verifier.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

using namespace qnnv;
namespace fs = std::filesystem;

namespace {

VerifyOptions opts(Semantics sem)
{
  VerifyOptions o;
  o.semantics = sem;
  o.solver.path = QNNV_SOLVER;
  o.solver.timeout_seconds = 60;
  return o;
}

fs::path scratch(const std::string& name)
{
  fs::path d = fs::temp_directory_path() / ("qnnv-test-" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d / name;
}

// Executor oracle: Falsified is possible only if some grid point of the
// singleton region violates. For singleton regions the grid is the point.
PropertyStatus singleton_status(const Network& net, const SafetyProperty& p, const Semantics& sem)
{
  std::vector<double> x;
  for (const auto& b : p.input_region)
    x.push_back(b.lo);
  TableSet none;
  return check_property(execute(net, x, sem, none), p);
}

} // namespace

TEST(Verify, FlipNetworkFlipsUnderTruncation)
{
  const Network net = bundled::flip_network();
  const SafetyProperty prop = bundled::flip_property();

  VerificationReport q = verify(net, prop, opts(Semantics::fxp({4, 6})));
  ASSERT_EQ(q.verdict, Verdict::Falsified) << q.reason;
  ASSERT_TRUE(q.counterexample);
  EXPECT_EQ(q.counterexample->status, PropertyStatus::Violated);
  EXPECT_EQ(*q.counterexample->trace.outputs()[0].exact, Rational(43, 16));
  EXPECT_EQ(q.counterexample->input, (std::vector<double>{0.749, 0.498}));
  EXPECT_EQ(exit_code(q.verdict), 1);

  for (Semantics sem : {Semantics::real(), Semantics::float32(), Semantics::fxp({4, 6}, RoundingMode::NearestTiesTowardZero)}) {
    VerificationReport r = verify(net, prop, opts(sem));
    EXPECT_EQ(r.verdict, Verdict::Safe) << sem.name() << " " << r.reason;
    EXPECT_EQ(singleton_status(net, prop, sem), PropertyStatus::Holds);
  }
}

TEST(Verify, GuardNetworkSafeWithAndWithoutIntervals)
{
  const Network net = bundled::guard_network();
  for (bool iv : {true, false}) {
    VerifyOptions o = opts(Semantics::fxp({4, 6}));
    o.intervals = iv;
    VerificationReport r = verify(net, bundled::guard_property(), o);
    EXPECT_EQ(r.verdict, Verdict::Safe) << r.reason;
    EXPECT_EQ(r.intervals_used, iv);
    if (iv) {
      EXPECT_EQ(r.guards_active, 2u);
      EXPECT_EQ(r.guards_undecided, 1u);
      EXPECT_EQ(r.discharged_asserts, 2u);
      EXPECT_EQ(r.passes.back().assignments, 4u);
    }
  }
  SafetyProperty bad{{{0, 1}, {0, 1}}, OutputAssertion::parse("y_0 <= 1")};
  VerificationReport f = verify(net, bad, opts(Semantics::real()));
  ASSERT_EQ(f.verdict, Verdict::Falsified);
  EXPECT_GT(f.counterexample->trace.outputs()[0].approx, 1.0);
}

TEST(Verify, TrivialAssertionIsSafeWithoutSolver)
{
  SafetyProperty p{{{0, 1}, {0, 1}}, OutputAssertion::parse("true")};
  VerifyOptions o = opts(Semantics::fxp({4, 6}));
  o.solver.path = "/nonexistent";
  VerificationReport r = verify(bundled::flip_network(), p, o);
  EXPECT_EQ(r.verdict, Verdict::Safe);
  EXPECT_FALSE(r.solver_status);
  EXPECT_LT(r.total_seconds(), 1.0);
}

TEST(Verify, ToggleCombinationsAgree)
{
  std::mt19937_64 rng(3);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    Network net = bundled::random_network(seed, {3, 4, 2});
    std::vector<double> c{0.5, 0.5, 0.5};
    SafetyProperty p = bundled::robustness_property(c, 0.05 * static_cast<double>(seed), 0, 2);
    for (Semantics sem : {Semantics::fxp({4, 4}), Semantics::real()}) {
      std::optional<Verdict> first;
      for (int mask = 0; mask < 16; ++mask) {
        VerifyOptions o = opts(sem);
        o.simplify = mask & 1;
        o.slice = mask & 2;
        o.balance = mask & 4;
        o.intervals = mask & 8;
        VerificationReport r = verify(net, p, o);
        ASSERT_NE(r.verdict, Verdict::Unknown) << r.reason;
        if (!first)
          first = r.verdict;
        EXPECT_EQ(r.verdict, *first) << "seed " << seed << " " << sem.name() << " mask " << mask;
      }
    }
  }
}

TEST(Verify, Float32BalanceIsSkippedWithAWarning)
{
  VerificationReport r = verify(bundled::flip_network(), bundled::flip_property(), opts(Semantics::float32()));
  bool warned = false;
  for (const auto& w : r.warnings)
    warned |= w.find("balance skipped") != std::string::npos;
  EXPECT_TRUE(warned);
  for (const auto& p : r.passes)
    EXPECT_NE(p.pass, "balance");
}

TEST(Verify, SolverFailuresAreUnknown)
{
  SafetyProperty p{{{0, 1}, {0, 1}}, OutputAssertion::parse("y_0 >= 0.5")};
  VerifyOptions o = opts(Semantics::fxp({4, 6}));
  o.intervals = false;
  o.solver = {"/bin/sh", {"-c", "sleep 5"}, 0.2};
  VerificationReport t = verify(bundled::guard_network(), p, o);
  EXPECT_EQ(t.verdict, Verdict::Unknown);
  EXPECT_EQ(t.solver_status, SolverStatus::Timeout);
  EXPECT_EQ(exit_code(t.verdict), 2);

  o.solver = {"/nonexistent/z3", {}, 5};
  VerificationReport e = verify(bundled::guard_network(), p, o);
  EXPECT_EQ(e.verdict, Verdict::Unknown);
  EXPECT_NE(e.reason.find("solver error"), std::string::npos);

  // A solver that claims sat with an input that does not violate.
  o.solver = {"/bin/sh", {"-c", "echo sat; echo '((define-fun nondet0 () (_ BitVec 10) #b0000000000)"
                                " (define-fun nondet1 () (_ BitVec 10) #b0000000000))'"}, 5};
  SafetyProperty holds{{{0, 1}, {0, 1}}, OutputAssertion::parse("y_0 <= 2")};
  VerificationReport lie = verify(bundled::guard_network(), holds, o);
  EXPECT_EQ(lie.verdict, Verdict::Unknown);
  ASSERT_TRUE(lie.counterexample);
  EXPECT_EQ(lie.counterexample->status, PropertyStatus::Holds);
}

TEST(Verify, UnrepresentableRegionBoundIsAnError)
{
  SafetyProperty p{{{0, 20}, {0, 1}}, OutputAssertion::parse("y_0 >= 0")};
  EXPECT_THROW(verify(bundled::flip_network(), p, opts(Semantics::fxp({4, 6}))), Error);
}

TEST(Sweep, RowsMatchTheExecutorOracle)
{
  const Network net = bundled::flip_network();
  const SafetyProperty prop = bundled::flip_property();
  VerifyOptions base = opts(Semantics::fxp({4, 4}));
  auto rows = sweep(net, prop, base, 4, 6, 16, 2);
  ASSERT_EQ(rows.size(), 11u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SweepRow& r = rows[i];
    EXPECT_EQ(r.width, 6 + static_cast<int>(i));
    EXPECT_EQ(r.format, "Q4." + std::to_string(r.width - 4));
    const PropertyStatus want = singleton_status(net, prop, Semantics::fxp({4, r.width - 4}));
    EXPECT_EQ(r.verdict, want == PropertyStatus::Violated ? Verdict::Falsified : Verdict::Safe)
        << r.format << " " << r.reason;
    EXPECT_EQ(r.counterexample.has_value(), r.verdict == Verdict::Falsified);
    if (r.counterexample) {
      EXPECT_EQ(r.counterexample->status, PropertyStatus::Violated);
    }
  }
  std::ostringstream csv;
  write_sweep_csv(rows, csv);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "width,format,verdict,seconds,nodes,wrap_risk,reason");
  int n = 0;
  while (std::getline(in, line))
    ++n;
  EXPECT_EQ(n, 11);

  auto narrow = sweep(net, prop, base, 8, 6, 8);
  EXPECT_EQ(narrow[0].verdict, Verdict::Unknown);
  EXPECT_NE(narrow[0].reason.find("below"), std::string::npos);
  EXPECT_EQ(csv_field("a,\"b\""), "\"a,\"\"b\"\"\"");
}

TEST(Sweep, SingleWidthEqualsVerify)
{
  VerifyOptions base = opts(Semantics::fxp({4, 6}));
  auto rows = sweep(bundled::flip_network(), bundled::flip_property(), base, 4, 10, 10);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].verdict, verify(bundled::flip_network(), bundled::flip_property(), base).verdict);
}

TEST(Export, JsonAndPgmRoundTrip)
{
  const Network net = bundled::vocalic_network();
  TableSet tables = build_tables(net, Semantics::fxp({8, 8}), {});
  std::vector<double> x(25, 0.5);
  Trace t = execute(net, x, Semantics::fxp({8, 8}), tables);
  std::size_t best = 0;
  for (std::size_t k = 1; k < 5; ++k)
    if (t.outputs()[k].approx > t.outputs()[best].approx)
      best = k;
  // Claiming the runner-up class makes the centre itself a counterexample.
  const SafetyProperty prop = bundled::robustness_property(x, 0.0, (best + 1) % 5, 5);

  VerificationReport rep = verify(net, prop, opts(Semantics::fxp({8, 8})));
  ASSERT_EQ(rep.verdict, Verdict::Falsified) << rep.reason;
  const fs::path stem = scratch("ce");
  EXPECT_THROW(export_counterexample(rep, prop, stem, std::pair<std::size_t, std::size_t>{2, 2}), DimensionError);
  ExportedFiles files = export_counterexample(rep, prop, stem, std::pair<std::size_t, std::size_t>{5, 5});
  ASSERT_TRUE(files.pgm);

  std::ifstream pgm(*files.pgm, std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  pgm >> magic >> w >> h >> maxv;
  pgm.get();
  std::string pixels((std::istreambuf_iterator<char>(pgm)), std::istreambuf_iterator<char>());
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 5);
  EXPECT_EQ(h, 5);
  EXPECT_EQ(maxv, 255);
  EXPECT_EQ(pixels.size(), 25u);

  std::ifstream jf(files.json);
  nlohmann::json j = nlohmann::json::parse(jf);
  EXPECT_EQ(j["verdict"], "Falsified");
  EXPECT_EQ(j["input_raw"].size(), 25u);
  Counterexample back = replay_json(j, net, prop, Semantics::fxp({8, 8}), tables);
  EXPECT_EQ(back.status, PropertyStatus::Violated);
  for (std::size_t k = 0; k < 5; ++k)
    EXPECT_EQ(back.trace.outputs()[k].raw, rep.counterexample->trace.outputs()[k].raw);
  EXPECT_THROW(replay_json(j, net, prop, Semantics::fxp({8, 6}), tables), Error);

  VerificationReport safe;
  EXPECT_THROW(export_counterexample(safe, prop, stem), Error);
  fs::remove_all(stem.parent_path());
}

TEST(Export, RealModeReplayUsesExactInputs)
{
  SafetyProperty bad{{{0, 1}, {0, 1}}, OutputAssertion::parse("y_0 <= 1")};
  VerificationReport r = verify(bundled::guard_network(), bad, opts(Semantics::real()));
  ASSERT_EQ(r.verdict, Verdict::Falsified);
  nlohmann::json j = counterexample_json(*r.counterexample, bad, r.verdict);
  TableSet none;
  EXPECT_EQ(replay_json(j, bundled::guard_network(), bad, Semantics::real(), none).status, PropertyStatus::Violated);
}

TEST(EmitQuery, PreparedScriptIsSelfContained)
{
  const std::string s = emit_query(bundled::guard_network(), bundled::guard_property(), opts(Semantics::fxp({4, 6})));
  EXPECT_EQ(s.rfind("(set-option :produce-models true)", 0), 0u);
  EXPECT_NE(s.find("(check-sat)"), std::string::npos);
  EXPECT_EQ(s.find("u0_1"), std::string::npos); // sliced away
}

TEST(Report, JsonCarriesStagesAndVerdict)
{
  VerificationReport r = verify(bundled::flip_network(), bundled::flip_property(), opts(Semantics::fxp({4, 6})));
  nlohmann::json j = r.to_json();
  EXPECT_EQ(j["verdict"], "Falsified");
  EXPECT_EQ(j["semantics"], "Q4.6/trunc");
  EXPECT_TRUE(j["timings"].contains("solve"));
  EXPECT_EQ(j["passes"][0]["pass"], "lower");
  EXPECT_EQ(j["counterexample"]["replay"], "Violated");
  std::ostringstream os;
  r.print(os);
  EXPECT_NE(os.str().find("verdict: Falsified"), std::string::npos);
}

#ifdef QNNV_CLI
namespace {
int cli(const std::string& args)
{
  const std::string cmd = std::string(QNNV_CLI) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}
} // namespace

TEST(Cli, ExitCodes)
{
  const std::string models = QNNV_MODELS_DIR;
  const std::string solver = std::string(" --solver ") + QNNV_SOLVER;
  EXPECT_EQ(cli("verify --net " + models + "/flip.nnet --prop " + models + "/flip.prop.json --fxp Q4.6" + solver), 1);
  EXPECT_EQ(cli("verify --net " + models + "/flip.nnet --prop " + models + "/flip.prop.json --real" + solver), 0);
  EXPECT_EQ(cli("verify --net " + models + "/guard.nnet --prop " + models +
                "/guard.prop.json --fxp Q4.6 --no-intervals --timeout 0.2 --solver /bin/false"),
            2);
  EXPECT_GT(cli("verify --net /nonexistent.nnet --prop " + models + "/flip.prop.json --real"), 2);
  EXPECT_GT(cli("verify --fxp Q4"), 2);
}
#endif
