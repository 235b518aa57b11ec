// qnnv: command-line front end for the verifier.
//
// Exit codes: 0 Safe, 1 Falsified, 2 Unknown, 3 and above usage or I/O error.

#include "qnnv/qnnv.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace qnnv;
namespace fs = std::filesystem;

namespace {

constexpr int kErrorExit = 3;

struct Settings
{
  std::string net_path, prop_path, box_path, config_path;
  std::string fxp;
  bool float32 = false, real = false;
  std::string rounding = "trunc";
  double epsilon = 0.01, cutoff = 6.0;
  std::optional<double> grid_step;
  std::string solver = "z3";
  double timeout = 60;
  unsigned workers = 1;
  bool no_slice = false, no_simplify = false, no_balance = false, no_intervals = false;
  bool unsafe_balance = false, post_assumes = false;
  std::string normalize = "none";

  Semantics semantics() const
  {
    if (!fxp.empty())
      return Semantics::fxp(parse_format(fxp), parse_rounding(rounding));
    if (float32)
      return Semantics::float32();
    return Semantics::real();
  }

  TableOptions tables() const { return {epsilon, cutoff, grid_step}; }

  VerifyOptions verify_options() const
  {
    VerifyOptions o;
    o.semantics = semantics();
    o.tables = tables();
    o.solver.path = solver;
    o.solver.timeout_seconds = timeout;
    o.simplify = !no_simplify;
    o.slice = !no_slice;
    o.balance = !no_balance;
    o.intervals = !no_intervals;
    o.unsafe_balance = unsafe_balance;
    o.post_activation_assumes = post_assumes;
    return o;
  }
};

std::ifstream open_in(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw Error("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out)
{
  std::ofstream out(path, mode);
  if (!out)
    throw Error("cannot write " + path);
  return out;
}

nlohmann::json read_json(const std::string& path)
{
  auto in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

struct Problem
{
  Network net;
  SafetyProperty prop;
};

Network load_network(const std::string& path)
{
  if (path.empty())
    throw Error("--net is required");
  auto in = open_in(path);
  try {
    return parse_nnet(in, fs::path(path).stem().string());
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

Problem load_problem(const Settings& s)
{
  Problem p{load_network(s.net_path), {}};
  if (s.prop_path.empty())
    throw Error("--prop is required");
  auto in = open_in(s.prop_path);
  try {
    p.prop = parse_property(in, p.net);
  } catch (const Error& e) {
    throw Error(s.prop_path + ": " + e.what());
  }
  if (s.normalize == "region")
    p.prop = normalize_property(p.prop, p.net.normalization);
  else if (s.normalize == "fold")
    p.net = fold_input_normalization(p.net);
  return p;
}

// Flags given on the command line win over the config file.
void apply_config(CLI::App& app, const std::string& path)
{
  const nlohmann::json j = read_json(path);
  if (!j.is_object())
    throw Error(path + ": expected a JSON object");
  bool mode_on_cli = false;
  for (const char* m : {"--fxp", "--float32", "--real"})
    if (auto* o = app.get_option_no_throw(m); o && o->count() > 0)
      mode_on_cli = true;
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = app.get_option_no_throw("--" + key);
    if (!opt || key == "config")
      throw Error(path + ": unknown setting \"" + key + "\" for " + app.get_name());
    if (opt->count() > 0)
      continue;
    if (mode_on_cli && (key == "fxp" || key == "float32" || key == "real"))
      continue;
    std::string v;
    if (value.is_string())
      v = value.get<std::string>();
    else if (value.is_boolean())
      v = value.get<bool>() ? "true" : "false";
    else if (value.is_number())
      v = value.dump();
    else
      throw Error(path + ": setting \"" + key + "\" must be a string, number or boolean");
    opt->add_result(v);
    opt->run_callback();
  }
}

void add_problem_options(CLI::App* app, Settings& s, bool need_prop = true)
{
  app->add_option("--net", s.net_path, "network in .nnet format")->required();
  if (need_prop)
    app->add_option("--prop", s.prop_path, "property JSON")->required();
}

void add_mode_options(CLI::App* app, Settings& s)
{
  auto* fxp = app->add_option("--fxp", s.fxp, "fixed-point format Q<k>.<l>");
  auto* f32 = app->add_flag("--float32", s.float32, "IEEE binary32 semantics");
  auto* real = app->add_flag("--real", s.real, "exact rational semantics (default)");
  fxp->excludes(f32)->excludes(real);
  f32->excludes(real);
  app->add_option("--rounding", s.rounding, "fixed-point rounding")->check(CLI::IsMember({"trunc", "nearest"}));
  app->add_option("--epsilon", s.epsilon, "activation table error bound")->check(CLI::PositiveNumber);
  app->add_option("--cutoff", s.cutoff, "tails beyond +-cutoff are constant")->check(CLI::PositiveNumber);
  app->add_option("--grid-step", s.grid_step, "fixed table grid spacing (overrides --epsilon)")
      ->check(CLI::PositiveNumber);
  app->add_option("--normalize", s.normalize, "apply NNet normalization: none, region or fold")
      ->check(CLI::IsMember({"none", "region", "fold"}));
}

void add_solver_options(CLI::App* app, Settings& s)
{
  app->add_option("--solver", s.solver, "SMT solver executable");
  app->add_option("--timeout", s.timeout, "solver wall-clock limit in seconds")->check(CLI::PositiveNumber);
  app->add_flag("--no-slice", s.no_slice, "keep assignments outside the assertion cone");
  app->add_flag("--no-simplify", s.no_simplify, "skip constant folding and rewriting");
  app->add_flag("--no-balance", s.no_balance, "keep sums as left-leaning chains");
  app->add_flag("--no-intervals", s.no_intervals, "skip interval analysis");
  app->add_flag("--unsafe-balance", s.unsafe_balance, "balance float32 sums (changes rounding)");
  app->add_flag("--post-assumes", s.post_assumes, "also assume post-activation intervals");
  app->add_option("--box", s.box_path, "interval box JSON to use instead of computing one");
}

void add_config_option(CLI::App* app, Settings& s)
{
  app->add_option("--config", s.config_path, "JSON settings; command-line flags win");
}

std::pair<std::size_t, std::size_t> parse_shape(const std::string& text)
{
  const auto x = text.find('x');
  try {
    if (x != std::string::npos) {
      std::size_t used = 0;
      const auto h = std::stoul(text.substr(0, x), &used);
      if (used == x) {
        const std::string rest = text.substr(x + 1);
        const auto w = std::stoul(rest, &used);
        if (used == rest.size() && h > 0 && w > 0)
          return {h, w};
      }
    }
  } catch (const std::exception&) {
  }
  throw Error("shape must look like HxW, got \"" + text + "\"");
}

std::vector<double> parse_input_list(const std::string& text)
{
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used])))
        ++used;
      if (used != item.size())
        throw Error("");
    } catch (const std::exception&) {
      throw Error("bad input value \"" + item + "\"");
    }
  }
  return out;
}

VerifyOptions options_with_box(const Settings& s, const Problem& p)
{
  VerifyOptions o = s.verify_options();
  if (!s.box_path.empty())
    o.box = box_from_json(read_json(s.box_path), p.net, o.semantics);
  return o;
}

void print_trace(const Trace& t, std::ostream& out)
{
  const bool fxp = t.semantics.kind == NumericKind::Fxp;
  auto value = [&](const TraceValue& v) {
    std::ostringstream s;
    s << std::setprecision(10) << v.approx;
    if (fxp)
      s << " (raw " << v.raw << ")";
    return s.str();
  };
  for (std::size_t i = 0; i < t.inputs.size(); ++i)
    out << "x" << i << " = " << value(t.inputs[i]) << "\n";
  for (std::size_t li = 0; li < t.pre.size(); ++li)
    for (std::size_t j = 0; j < t.pre[li].size(); ++j)
      out << "u" << li << "_" << j << " = " << value(t.pre[li][j]) << "    y" << li << "_" << j << " = "
          << value(t.post[li][j]) << "\n";
}

int run_verify(const Settings& s, const std::string& json_out, const std::string& export_stem,
               const std::string& shape)
{
  Problem p = load_problem(s);
  VerificationReport rep = verify(p.net, p.prop, options_with_box(s, p));
  rep.print(std::cout);
  if (!json_out.empty())
    open_out(json_out) << rep.to_json().dump(2) << "\n";
  if (!export_stem.empty() && rep.counterexample && rep.verdict == Verdict::Falsified) {
    std::optional<std::pair<std::size_t, std::size_t>> sh;
    if (!shape.empty())
      sh = parse_shape(shape);
    ExportedFiles f = export_counterexample(rep, p.prop, export_stem, sh);
    std::cout << "wrote " << f.json << "\n";
    if (f.pgm)
      std::cout << "wrote " << *f.pgm << "\n";
  }
  return exit_code(rep.verdict);
}

int run_export(const Settings& s, const std::string& stem, const std::string& shape)
{
  Problem p = load_problem(s);
  std::optional<std::pair<std::size_t, std::size_t>> sh;
  if (!shape.empty()) {
    sh = parse_shape(shape);
    if (sh->first * sh->second != p.net.input_dim())
      throw DimensionError("shape " + shape + " does not match " + std::to_string(p.net.input_dim()) + " inputs");
  }
  VerificationReport rep = verify(p.net, p.prop, options_with_box(s, p));
  if (rep.verdict != Verdict::Falsified) {
    std::cout << "verdict: " << verdict_name(rep.verdict) << "; nothing to export\n";
    if (!rep.reason.empty())
      std::cout << "reason: " << rep.reason << "\n";
    return exit_code(rep.verdict);
  }
  ExportedFiles f = export_counterexample(rep, p.prop, stem, sh);
  std::cout << "verdict: Falsified\nwrote " << f.json << "\n";
  if (f.pgm)
    std::cout << "wrote " << *f.pgm << "\n";
  return exit_code(rep.verdict);
}

int run_sweep(const Settings& s, std::optional<int> k, int min_width, int max_width, const std::string& csv_path)
{
  Problem p = load_problem(s);
  VerifyOptions base = s.verify_options();
  base.semantics = Semantics::fxp({1, 1}, parse_rounding(s.rounding));
  if (!k) {
    TableSet real_tables = build_tables(p.net, Semantics::real(), s.tables());
    k = range_report(p.net, p.prop.input_region, real_tables).recommended_k;
    std::cout << "integer bits: " << *k << " (from interval ranges)\n";
  }
  auto rows = sweep(p.net, p.prop, base, *k, min_width, max_width, s.workers);
  std::cout << std::left << std::setw(6) << "width" << std::setw(10) << "format" << std::setw(11) << "verdict"
            << std::setw(10) << "seconds" << std::setw(8) << "nodes" << std::setw(6) << "wrap"
            << "reason\n";
  for (const auto& r : rows) {
    std::ostringstream secs;
    secs << std::fixed << std::setprecision(3) << r.seconds;
    std::cout << std::left << std::setw(6) << r.width << std::setw(10) << r.format << std::setw(11)
              << verdict_name(r.verdict) << std::setw(10) << secs.str() << std::setw(8) << r.nodes << std::setw(6)
              << (r.wrap_risk ? "yes" : "no") << r.reason << "\n";
  }
  if (!csv_path.empty()) {
    if (csv_path == "-")
      write_sweep_csv(rows, std::cout);
    else {
      auto out = open_out(csv_path);
      write_sweep_csv(rows, out);
    }
  }
  return 0;
}

int run_intervals(const Settings& s, const std::string& json_out)
{
  Problem p = load_problem(s);
  const Semantics sem = s.semantics();
  TableSet tables = build_tables(p.net, sem, s.tables());
  IntervalBox box = propagate(p.net, p.prop.input_region, sem, tables);
  print_intervals(box, p.net, std::cout);

  TableSet real_tables = build_tables(p.net, Semantics::real(), s.tables());
  std::optional<FxpFormat> cand;
  if (sem.kind == NumericKind::Fxp)
    cand = sem.format;
  RangeReport rr = range_report(p.net, p.prop.input_region, real_tables, cand,
                                sem.kind == NumericKind::Fxp ? &tables : nullptr, sem.rounding);
  std::cout << "max |value|: " << to_double(rr.global_max) << "\n";
  std::cout << "recommended integer bits: " << rr.recommended_k << "\n";
  if (cand)
    std::cout << cand->name() << (box.any_wrap_risk() ? " may wrap" : " does not wrap") << "\n";
  if (!json_out.empty())
    open_out(json_out) << box_to_json(box).dump(2) << "\n";
  return 0;
}

int run_replay(const Settings& s, const std::string& input, const std::string& ce_path, bool trace)
{
  Network net = load_network(s.net_path);
  std::optional<SafetyProperty> prop;
  if (!s.prop_path.empty()) {
    auto in = open_in(s.prop_path);
    prop = parse_property(in, net);
    if (s.normalize == "region")
      prop = normalize_property(*prop, net.normalization);
  }
  if (s.normalize == "fold")
    net = fold_input_normalization(net);
  const Semantics sem = s.semantics();
  TableSet tables = build_tables(net, sem, s.tables());

  Trace t;
  if (!ce_path.empty()) {
    const nlohmann::json j = read_json(ce_path);
    if (!prop)
      prop = parse_property_json(j.at("property"), net.output_dim());
    t = replay_json(j, net, *prop, sem, tables).trace;
  } else {
    if (input.empty())
      throw Error("replay needs --input or --ce");
    std::vector<double> x = parse_input_list(input);
    t = execute(net, x, sem, tables);
  }
  std::cout << "semantics: " << sem.name() << "\n";
  if (trace)
    print_trace(t, std::cout);
  std::cout << "outputs:";
  for (const auto& v : t.outputs())
    std::cout << " " << std::setprecision(10) << v.approx;
  std::cout << "\n";
  for (const auto& w : t.wraps)
    std::cout << "wrap: layer " << w.layer << " neuron " << w.neuron << " (" << w.op << ")\n";
  if (!prop)
    return 0;
  const PropertyStatus st = check_property(t, *prop);
  std::cout << "property: " << status_name(st) << "\n";
  return st == PropertyStatus::Violated ? 1 : 0;
}

int run_lut(const Settings& s, const std::string& activation, const std::string& csv_path)
{
  const ActivationKind kind = parse_activation(activation);
  if (!kind.is_tabled())
    throw Error(activation + " needs no table");
  const PiecewiseSpec spec = default_spec(kind, s.cutoff);
  const LookupTable t = s.grid_step ? build_table_with_step(spec, *s.grid_step) : build_table(spec, s.epsilon);
  std::cout << "activation: " << activation << "\n";
  if (s.grid_step)
    std::cout << "grid step: " << *s.grid_step << "\n";
  else
    std::cout << "epsilon: " << s.epsilon << "\n";
  std::size_t constants = 0;
  for (const auto& p : t.pieces) {
    const bool grid = p.piece.approximator == Approximator::UniformGrid;
    std::cout << "piece " << (p.piece.lo_closed ? "[" : "(") << p.piece.lo << ", " << p.piece.hi
              << (p.piece.hi_closed ? "]" : ")") << ": ";
    if (grid)
      std::cout << p.inputs.size() << " samples, lipschitz " << p.piece.lipschitz << "\n";
    else {
      ++constants;
      std::cout << "constant " << std::setprecision(10) << p.outputs.front() << "\n";
    }
  }
  std::cout << "grid samples: " << t.grid_samples() << "\n";
  std::cout << "tail constants: " << constants << "\n";
  if (!csv_path.empty()) {
    auto out = open_out(csv_path);
    write_csv(t, out);
  }
  return 0;
}

int run_emit(const Settings& s, const std::string& out_path, const std::string& ssa_path, const std::string& dot_path)
{
  Problem p = load_problem(s);
  VerificationReport rep;
  PreparedProgram pp = prepare(p.net, p.prop, options_with_box(s, p), rep);
  for (const auto& w : rep.warnings)
    std::cerr << "warning: " << w << "\n";
  if (!ssa_path.empty()) {
    auto out = open_out(ssa_path);
    dump_ssa(pp.program, out);
  }
  if (!dot_path.empty()) {
    auto out = open_out(dot_path);
    dump_dot(pp.program, out);
  }
  if (out_path.empty() || out_path == "-")
    emit_smtlib(pp.program, std::cout);
  else {
    auto out = open_out(out_path);
    emit_smtlib(pp.program, out);
  }
  return 0;
}

int run_bundled(const std::string& dir)
{
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    open_out((fs::path(dir) / name).string()) << text;
    std::cout << "wrote " << (fs::path(dir) / name).string() << "\n";
  };
  write("flip.nnet", serialize_nnet_string(bundled::flip_network()));
  write("flip.prop.json", property_to_json(bundled::flip_property()).dump(2) + "\n");
  write("guard.nnet", serialize_nnet_string(bundled::guard_network()));
  write("guard.prop.json", property_to_json(bundled::guard_property()).dump(2) + "\n");
  write("vocalic_toy.nnet", serialize_nnet_string(bundled::vocalic_network()));
  write("vocalic_toy.prop.json", property_to_json(bundled::vocalic_property()).dump(2) + "\n");
  return 0;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Bit-precise verification of quantized neural networks"};
  app.require_subcommand(1);
  Settings s;

  std::string json_out, export_stem, shape, csv_path, input, ce_path, activation = "sigmoid", out_path, ssa_path,
                                                                          dot_path, models_dir = "models";
  std::optional<int> k;
  int min_width = 6, max_width = 16;
  bool trace = false;

  auto* verify_cmd = app.add_subcommand("verify", "check a property; exit 0 Safe, 1 Falsified, 2 Unknown");
  add_problem_options(verify_cmd, s);
  add_mode_options(verify_cmd, s);
  add_solver_options(verify_cmd, s);
  add_config_option(verify_cmd, s);
  verify_cmd->add_option("--json", json_out, "write the report as JSON");
  verify_cmd->add_option("--export", export_stem, "on Falsified, write <stem>.json (and .pgm with --shape)");
  verify_cmd->add_option("--shape", shape, "image shape HxW for the PGM");

  auto* sweep_cmd = app.add_subcommand("sweep", "verify once per total bit width");
  add_problem_options(sweep_cmd, s);
  add_mode_options(sweep_cmd, s);
  add_solver_options(sweep_cmd, s);
  add_config_option(sweep_cmd, s);
  sweep_cmd->add_option("--k", k, "integer bits (default: from interval ranges)")->check(CLI::Range(1, 62));
  sweep_cmd->add_option("--min-width", min_width, "smallest total width")->check(CLI::Range(2, 63));
  sweep_cmd->add_option("--max-width", max_width, "largest total width")->check(CLI::Range(2, 63));
  sweep_cmd->add_option("--workers", s.workers, "parallel verifications")->check(CLI::Range(1u, 256u));
  sweep_cmd->add_option("--csv", csv_path, "write rows as CSV ('-' for stdout)");

  auto* iv_cmd = app.add_subcommand("intervals", "propagate input bounds through the network");
  add_problem_options(iv_cmd, s);
  add_mode_options(iv_cmd, s);
  add_config_option(iv_cmd, s);
  iv_cmd->add_option("--json", json_out, "write the interval box as JSON");

  auto* replay_cmd = app.add_subcommand("replay", "run the network on one input");
  add_problem_options(replay_cmd, s, false);
  add_mode_options(replay_cmd, s);
  add_config_option(replay_cmd, s);
  replay_cmd->add_option("--prop", s.prop_path, "property JSON to check the outputs against");
  auto* input_opt = replay_cmd->add_option("--input", input, "comma-separated input values");
  replay_cmd->add_option("--ce", ce_path, "exported counterexample JSON")->excludes(input_opt);
  replay_cmd->add_flag("--trace", trace, "print every neuron");

  auto* lut_cmd = app.add_subcommand("lut", "activation lookup tables");
  lut_cmd->require_subcommand(1);
  auto* lut_build = lut_cmd->add_subcommand("build", "sample a table and report its size");
  lut_build->add_option("--activation", activation, "sigmoid or tanh");
  lut_build->add_option("--epsilon", s.epsilon, "maximum absolute error")->check(CLI::PositiveNumber);
  lut_build->add_option("--cutoff", s.cutoff, "tails beyond +-cutoff are constant")->check(CLI::PositiveNumber);
  lut_build->add_option("--grid-step", s.grid_step, "fixed grid spacing")->check(CLI::PositiveNumber);
  lut_build->add_option("--csv", csv_path, "write the table as CSV");
  add_config_option(lut_build, s);

  auto* emit_cmd = app.add_subcommand("emit-smt", "write the SMT-LIB query without solving");
  add_problem_options(emit_cmd, s);
  add_mode_options(emit_cmd, s);
  add_solver_options(emit_cmd, s);
  add_config_option(emit_cmd, s);
  emit_cmd->add_option("--out", out_path, "output file (default stdout)");
  emit_cmd->add_option("--ssa", ssa_path, "also write the SSA listing");
  emit_cmd->add_option("--dot", dot_path, "also write the expression DAG as DOT");

  auto* export_cmd = app.add_subcommand("export-ce", "verify and write the counterexample as JSON and PGM");
  add_problem_options(export_cmd, s);
  add_mode_options(export_cmd, s);
  add_solver_options(export_cmd, s);
  add_config_option(export_cmd, s);
  export_cmd->add_option("--out", export_stem, "output stem")->required();
  export_cmd->add_option("--shape", shape, "image shape HxW");

  auto* bundled_cmd = app.add_subcommand("bundled", "write the bundled example networks and properties");
  bundled_cmd->add_option("--out", models_dir, "target directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : std::max(code, kErrorExit);
  }

  try {
    for (CLI::App* sub : {verify_cmd, sweep_cmd, iv_cmd, replay_cmd, lut_build, emit_cmd, export_cmd})
      if (sub->parsed() && !s.config_path.empty())
        apply_config(*sub, s.config_path);
    if (verify_cmd->parsed())
      return run_verify(s, json_out, export_stem, shape);
    if (sweep_cmd->parsed())
      return run_sweep(s, k, min_width, max_width, csv_path);
    if (iv_cmd->parsed())
      return run_intervals(s, json_out);
    if (replay_cmd->parsed())
      return run_replay(s, input, ce_path, trace);
    if (lut_build->parsed())
      return run_lut(s, activation, csv_path);
    if (emit_cmd->parsed())
      return run_emit(s, out_path, ssa_path, dot_path);
    if (export_cmd->parsed())
      return run_export(s, export_stem, shape);
    if (bundled_cmd->parsed())
      return run_bundled(models_dir);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kErrorExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kErrorExit;
  }
  return kErrorExit;
}
