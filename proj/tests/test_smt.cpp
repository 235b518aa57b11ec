#include "qnnv/bundled.hpp"
#include "qnnv/lower.hpp"
#include "qnnv/smtlib.hpp"
#include "qnnv/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace qnnv;

namespace {

SolverConfig z3()
{
  SolverConfig c;
  c.path = QNNV_SOLVER;
  c.timeout_seconds = 120;
  return c;
}

bool have_solver() { return std::filesystem::exists(QNNV_SOLVER); }

// Program whose asserts claim `node == expected` for each case; the query
// is unsat exactly when the encoding agrees on every case.
struct Claims
{
  SsaProgram p;
  explicit Claims(Semantics s) { p.semantics = s; }

  void num(NodeId expr, const Rational& expected)
  {
    p.assignments.push_back({"r" + std::to_string(p.assignments.size()), expr, VarRole::Other, 0, 0});
    NodeId v = p.dag.var(p.assignments.size() - 1, Sort::Num);
    p.asserts.push_back(p.dag.cmp(CmpOp::Eq, v, p.dag.constant(expected)));
  }

  void truth(NodeId expr, bool expected) { p.asserts.push_back(expected ? expr : p.dag.lnot(expr)); }
};

} // namespace

TEST(SmtEmit, PreambleAndLiterals)
{
  TableSet none;
  SsaProgram p = lower(bundled::flip_network(), bundled::flip_property(), Semantics::fxp({4, 4}), none);
  const std::string s = emit_smtlib(p);
  EXPECT_EQ(s.rfind("(set-option :produce-models true)\n(set-logic QF_BV)\n", 0), 0u);
  EXPECT_NE(s.find("(declare-const nondet0 (_ BitVec 8))"), std::string::npos);
  EXPECT_NE(s.find("(_ bv208 8)"), std::string::npos); // -3 in Q4.4
  EXPECT_NE(s.find("(check-sat)\n(get-model)\n"), std::string::npos);

  SsaProgram f = lower(bundled::flip_network(), bundled::flip_property(), Semantics::float32(), none);
  const std::string fs = emit_smtlib(f);
  EXPECT_NE(fs.find("(set-logic QF_FP)"), std::string::npos);
  EXPECT_NE(fs.find("(fp #b0 #b10000000 #b00000000000000000000000)"), std::string::npos); // 2.0
  EXPECT_NE(fs.find("fp.mul RNE"), std::string::npos);

  SsaProgram r = lower(bundled::flip_network(), bundled::flip_property(), Semantics::real(), none);
  const std::string rs = emit_smtlib(r);
  EXPECT_NE(rs.find("(set-logic QF_LRA)"), std::string::npos);
  EXPECT_NE(rs.find("(- 3.0)"), std::string::npos);
  EXPECT_EQ(detail::real_literal(Rational(-3, 4)), "(- (/ 3.0 4.0))");

  SsaProgram empty = r;
  empty.asserts.clear();
  EXPECT_NE(emit_smtlib(empty).find("(assert false)"), std::string::npos);
}

TEST(SolverOutput, VerdictAndModel)
{
  auto r = parse_solver_output("sat\n(\n  (define-fun nondet1 () (_ BitVec 8)\n    #x1f)\n  (define-fun nondet0 () (_ BitVec 8) "
                               "#b00101111)\n  (define-fun y () Bool true)\n)\n");
  EXPECT_EQ(r.status, SolverStatus::Sat);
  ASSERT_EQ(r.model.size(), 3u);
  EXPECT_EQ(*model_value(r.model.at("nondet0"), Semantics::fxp({4, 4})), Rational(47, 16));
  EXPECT_EQ(*model_value(r.model.at("nondet1"), Semantics::fxp({4, 4})), Rational(31, 16));

  auto old = parse_solver_output("sat\n(model (define-fun a () Real (- (/ 1.0 3.0))))");
  EXPECT_EQ(*model_value(old.model.at("a"), Semantics::real()), Rational(-1, 3));
  EXPECT_EQ(parse_solver_output("unsat\n(error \"model is not available\")\n").status, SolverStatus::Unsat);
  auto err = parse_solver_output("(error \"line 3: unknown constant\")\nsat\n");
  EXPECT_EQ(err.status, SolverStatus::Error);
  EXPECT_NE(err.message.find("unknown constant"), std::string::npos);
  EXPECT_EQ(parse_solver_output("unknown\n").status, SolverStatus::Unknown);
  EXPECT_EQ(parse_solver_output("").status, SolverStatus::Error);
  EXPECT_EQ(parse_solver_output("sat\n(").status, SolverStatus::Error);
}

TEST(SolverOutput, ModelValueForms)
{
  auto one = [](const std::string& s) { return parse_sexprs(s).at(0); };
  const Semantics q = Semantics::fxp({4, 4});
  EXPECT_EQ(*model_value(one("#xff"), q), Rational(-1, 16));
  EXPECT_EQ(*model_value(one("(_ bv128 8)"), q), Rational(-8));
  EXPECT_THROW(model_value(one("#b101"), q), SolverError);
  const Semantics f = Semantics::float32();
  EXPECT_EQ(*model_value(one("(fp #b1 #b01111111 #b10000000000000000000000)"), f), Rational(-3, 2));
  EXPECT_EQ(*model_value(one("(_ -zero 8 24)"), f), 0);
  EXPECT_FALSE(model_value(one("(_ NaN 8 24)"), f));
  EXPECT_THROW(model_value(one("(_ +oo 8 24)"), f), SolverError);
  const Semantics r = Semantics::real();
  EXPECT_EQ(*model_value(one("2.125"), r), Rational(17, 8));
  EXPECT_EQ(*model_value(one("(/ 7 2)"), r), Rational(7, 2));
  EXPECT_EQ(*model_value(one("(- 4.0)"), r), -4);
  EXPECT_THROW(model_value(one("abc"), r), SolverError);
}

TEST(SolverProcess, TimeoutMissingBinaryAndErrors)
{
  SolverConfig slow{"/bin/sh", {"-c", "sleep 5"}, 0.3};
  auto t0 = std::chrono::steady_clock::now();
  SolverResult r = run_solver("(check-sat)", slow);
  EXPECT_EQ(r.status, SolverStatus::Timeout);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 3.0);

  SolverConfig missing{"/nonexistent/solver", {}, 5};
  EXPECT_EQ(run_solver("(check-sat)", missing).status, SolverStatus::Error);

  SolverConfig noisy{"/bin/sh", {"-c", "echo '(error \"boom\")'; echo sat"}, 5};
  SolverResult e = run_solver("", noisy);
  EXPECT_EQ(e.status, SolverStatus::Error);
  EXPECT_EQ(e.message, "\"boom\"");
}

TEST(SmtDifferential, FixedPointArithmeticExhaustiveQ33)
{
  if (!have_solver())
    GTEST_SKIP() << "no solver";
  for (auto mode : {RoundingMode::TruncateTowardNegInf, RoundingMode::NearestTiesTowardZero}) {
    const Semantics sem = Semantics::fxp({3, 3}, mode);
    Claims c(sem);
    auto k = [&](int raw) { return c.p.dag.constant(Rational(raw) / 8); };
    for (int a = -32; a < 32; ++a)
      for (int b = -32; b < 32; ++b) {
        c.num(c.p.dag.mul(k(a), k(b)), fxp_mult({a, sem.format}, {b, sem.format}, mode).value());
        if (mode == RoundingMode::TruncateTowardNegInf) {
          c.num(c.p.dag.add(k(a), k(b)), fxp_add({a, sem.format}, {b, sem.format}).value());
          c.truth(c.p.dag.cmp(CmpOp::Lt, k(a), k(b)), a < b);
          c.truth(c.p.dag.cmp(CmpOp::Ge, k(a), k(b)), a >= b);
        }
      }
    SolverResult r = run_solver(emit_smtlib(c.p), z3());
    EXPECT_EQ(r.status, SolverStatus::Unsat) << rounding_name(mode) << " " << r.message;
  }
}

TEST(SmtDifferential, Float32ArithmeticRandom)
{
  if (!have_solver())
    GTEST_SKIP() << "no solver";
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> mant(-2, 2);
  std::uniform_int_distribution<int> ex(-30, 30);
  Claims c(Semantics::float32());
  auto k = [&](float v) { return c.p.dag.constant(rational_from_double(v)); };
  int cases = 0;
  while (cases < 600) {
    const float a = static_cast<float>(std::ldexp(mant(rng), ex(rng)));
    const float b = static_cast<float>(std::ldexp(mant(rng), ex(rng)));
    volatile float s = a + b, p = a * b;
    c.num(c.p.dag.add(k(a), k(b)), rational_from_double(s));
    c.num(c.p.dag.mul(k(a), k(b)), rational_from_double(p));
    c.truth(c.p.dag.cmp(CmpOp::Le, k(a), k(b)), a <= b);
    ++cases;
  }
  // Subnormal results round like the hardware does.
  c.num(c.p.dag.mul(k(1e-20f), k(1e-20f)), rational_from_double(1e-20f * 1e-20f));
  SolverResult r = run_solver(emit_smtlib(c.p), z3());
  EXPECT_EQ(r.status, SolverStatus::Unsat) << r.message;
}

TEST(SmtDifferential, FlipModelDecodesToTheQuantizedInput)
{
  if (!have_solver())
    GTEST_SKIP() << "no solver";
  TableSet none;
  const SafetyProperty prop = bundled::flip_property();
  SsaProgram p = lower(bundled::flip_network(), prop, Semantics::fxp({4, 6}), none);
  SolverResult r = run_solver(emit_smtlib(p), z3());
  ASSERT_EQ(r.status, SolverStatus::Sat) << r.raw_output;
  EXPECT_GT(r.peak_memory_kb, 0);
  DecodedInputs d = decode_model(r, Semantics::fxp({4, 6}), prop.input_region);
  EXPECT_EQ(d.values[0], Rational(47, 64));
  EXPECT_EQ(d.values[1], Rational(31, 64));
  EXPECT_EQ(d.reals[0], 0.749);
  EXPECT_EQ(d.reals[1], 0.498);

  SsaProgram q = lower(bundled::flip_network(), prop, Semantics::real(), none);
  EXPECT_EQ(run_solver(emit_smtlib(q), z3()).status, SolverStatus::Unsat);
}

TEST(SolverOutput, ModelOutsideRegionOrMissingIsRejected)
{
  SolverResult r = parse_solver_output("sat\n((define-fun nondet0 () (_ BitVec 8) #x7f))");
  EXPECT_THROW(decode_model(r, Semantics::fxp({4, 4}), {{0, 1}}), SolverError);
  SolverResult absent = parse_solver_output("sat\n()");
  EXPECT_THROW(decode_model(absent, Semantics::fxp({4, 4}), {{0.25, 1}}), SolverError);
  DecodedInputs d = decode_model(absent, Semantics::fxp({4, 4}), {{0.25, 1}}, {false});
  EXPECT_TRUE(d.defaulted[0]);
  EXPECT_EQ(d.values[0], Rational(1, 4));
}
