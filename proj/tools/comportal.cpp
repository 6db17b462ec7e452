// comportal: command-line front end for the compartmental stability toolkit.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "comportal/json_io.hpp"

namespace fs = std::filesystem;
using namespace comportal;

namespace {

constexpr int kUsage = 64;

struct Globals {
  bool json_mode = false;
  double tol = 1e-9;
  std::uint64_t seed = 1;
  std::size_t samples = 4096;
  double horizon = 20.0;
  double step = 0.01;
  std::string out = ".";
};

std::uint64_t env_seed() {
  if (const char* s = std::getenv("COMPORTAL_SEED")) {
    try {
      return std::stoull(s);
    } catch (...) {
      throw InvalidArgument("COMPORTAL_SEED must be a nonnegative integer");
    }
  }
  return 1;
}

/// Human mode: one "path: value" line per scalar, arrays of numbers inline.
void render(std::ostream& os, const json& j, const std::string& prefix = "") {
  auto numeric_array = [](const json& a) {
    if (!a.is_array()) return false;
    for (const auto& e : a)
      if (!e.is_number() && !e.is_null() && !e.is_boolean()) return false;
    return true;
  };
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) render(os, v, prefix.empty() ? k : prefix + "." + k);
  } else if (j.is_array() && !numeric_array(j)) {
    for (std::size_t i = 0; i < j.size(); ++i) render(os, j[i], prefix + "[" + std::to_string(i + 1) + "]");
  } else {
    os << prefix << ": " << (j.is_string() ? j.get<std::string>() : j.dump()) << '\n';
  }
}

void emit(const Globals& g, const json& report) {
  if (g.json_mode) std::cout << report.dump(2) << '\n';
  else render(std::cout, report);
}

fs::path out_file(const Globals& g, const std::string& name) {
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  return v;
}

bool looks_structured(const json& j) { return j.is_object() && j.contains("capacities"); }

IntegratorOptions integrator(const Globals& g) {
  IntegratorOptions o;
  o.step = g.step;
  return o;
}

SamplingOptions sampling(const Globals& g) {
  SamplingOptions o;
  o.seed = g.seed;
  o.samples = g.samples;
  o.horizon = g.horizon;
  o.tol = g.tol;
  return o;
}

// ---------------------------------------------------------------------------

int cmd_check(const Globals& g, const std::string& path, const std::string& dot) {
  const Matrix m = matrix_from_json(read_json_file(path));
  const auto val = validate_compartmental(m, g.tol);
  json rep{{"schema", schema("check")}, {"input", path}, {"compartmental", val.accepted()}};
  rep["violations"] = json::array();
  for (const auto& v : val.violations) rep["violations"].push_back(to_json(v));
  if (!val.accepted()) {
    emit(g, rep);
    return 3;
  }
  const auto graph = build_graph(*val.matrix);
  const auto trap = check_outflow_connected(graph);
  rep["graph"] = to_json(graph, trap);
  json minimal = json::array();
  for (const auto& t : minimal_traps(graph)) minimal.push_back(one_based(t));
  rep["graph"]["minimal_traps"] = minimal;
  rep["canonical"] = to_json(check_canonical(*val.matrix));
  if (!dot.empty()) {
    std::ofstream(out_file(g, dot)) << to_dot(graph);
    rep["dot"] = (fs::path(g.out) / dot).string();
  }
  emit(g, rep);
  return 0;
}

int cmd_canonicalize(const Globals& g, const std::string& path) {
  const auto F = CompartmentalMatrix::from(matrix_from_json(read_json_file(path)), g.tol);
  try {
    emit(g, to_json(canonicalize(F)));
    return 0;
  } catch (const NotOutflowConnectedError& e) {
    emit(g, json{{"schema", schema("canonicalization")},
                 {"error", e.what()},
                 {"trap", one_based(*e.report().trap)}});
    return 3;
  }
}

int cmd_certify(const Globals& g, const std::string& path, const std::string& sigma) {
  const json in = read_json_file(path);
  const auto policy = sigma == "balanced" ? SigmaPolicy::balanced() : SigmaPolicy::ones();
  if (in.is_object() && in.contains("family") && !in.contains("entries") && !in.contains("matrix")) {
    const auto fam = family_from_json(in.at("family"));
    const auto cert = theorem1_certificate(fam, policy.resolve(fam));
    std::mt19937_64 rng(g.seed);
    double worst = std::numeric_limits<double>::infinity();
    bool ok = true;
    for (std::size_t k = 0; k < g.samples; ++k) {
      const auto chk = verify_certificate(random_family_member(fam, rng), cert, g.tol);
      worst = std::min(worst, chk.worst_margin);
      ok = ok && chk.ok;
    }
    emit(g, json{{"schema", schema("certificate")},
                 {"mode", "family"},
                 {"family", to_json(fam)},
                 {"certificate", to_json(cert)},
                 {"sampled_members", g.samples},
                 {"seed", g.seed},
                 {"all_members_verified", ok},
                 {"worst_margin", worst}});
    return ok ? 0 : 2;
  }
  const auto F = CompartmentalMatrix::from(matrix_from_json(in), g.tol);
  const auto trap = check_outflow_connected(build_graph(F));
  if (!trap.is_outflow_connected) {
    emit(g, json{{"schema", schema("certificate")},
                 {"mode", "matrix"},
                 {"verdict", to_string(Verdict::CertifiedNotAS)},
                 {"trap", one_based(*trap.trap)},
                 {"detail", "mass inside the trap never decreases"}});
    return 3;
  }
  const auto cc = certify_via_canonical(F, policy);
  json rep{{"schema", schema("certificate")},
           {"mode", "matrix"},
           {"verdict", to_string(cc.check.ok ? Verdict::CertifiedES : Verdict::Inconclusive)},
           {"canonical", to_json(cc.canonical)},
           {"family", to_json(cc.family)},
           {"certificate", to_json(cc.certificate)},
           {"check", to_json(cc.check)}};
  const auto lin = linear_inverse_certificate(F);
  rep["linear_inverse"] = {{"certificate", to_json(lin)}, {"check", to_json(verify_certificate(F, lin))}};
  emit(g, rep);
  return cc.check.ok ? 0 : 2;
}

int cmd_simulate(const Globals& g, const std::string& path, const std::string& xi_text) {
  const json in = read_json_file(path);
  Trajectory tr;
  if (looks_structured(in)) {
    const auto sys = structured_from_json(in);
    Vector xi = sys.capacity;
    if (!xi_text.empty()) {
      const auto v = parse_list(xi_text);
      if (static_cast<int>(v.size()) != sys.n) throw InvalidArgument("--xi needs one value per compartment");
      xi = Eigen::Map<const Vector>(v.data(), sys.n);
    }
    tr = integrate(sys, xi, 0.0, g.horizon, integrator(g));
  } else {
    const auto F = CompartmentalMatrix::from(matrix_from_json(in), g.tol);
    const auto xs = xi_text.empty() ? std::vector<double>(F.size(), 1.0) : parse_list(xi_text);
    if (static_cast<int>(xs.size()) != F.size()) throw InvalidArgument("--xi needs one value per compartment");
    const auto sys = SystemSpec::linear(F.matrix());
    tr = integrate(sys, Eigen::Map<const Vector>(xs.data(), F.size()), 0.0, g.horizon, integrator(g));
  }
  const auto file = out_file(g, "trajectory.csv");
  std::ofstream os(file);
  write_csv(os, tr);
  emit(g, json{{"schema", schema("simulation")},
               {"trajectory_csv", file.string()},
               {"points", tr.size()},
               {"final_state", to_json(tr.final_state())},
               {"integrator", to_json(tr.meta)},
               {"decay_fit", to_json(measure_norm_decay(tr))}});
  return 0;
}

IESOptions ies_options(const Globals& g, double tau, double s_fraction) {
  IESOptions o;
  o.sampling = sampling(g);
  o.box.tau = tau;
  o.box.s_fraction = s_fraction;
  o.box.horizon = std::max(g.horizon, tau);
  o.box.seed = g.seed;
  o.box.integrator = integrator(g);
  return o;
}

int cmd_ies(const Globals& g, const std::string& path, double tau, double s_fraction) {
  const auto sys = structured_from_json(read_json_file(path));
  const auto rep = certify_IES(sys, ies_options(g, tau, s_fraction));
  emit(g, to_json(rep));
  return exit_code(rep.verdict);
}

struct TrmArgs {
  std::string h = "vf*(1-x/rho_max)";
  int n = 10;
  double rho_max = 1.0;
  std::string boundary_in = "0";
  std::string boundary_out = "0";
  std::string boundary_out_csv;
  std::vector<std::string> consts;
  std::optional<double> h_lip;
  double tau = 5.0;
  double s_fraction = 0.5;
};

TRMConfig trm_config(const Globals& g, const TrmArgs& a) {
  ParseContext ctx;
  ctx.constants = {{"rho_max", a.rho_max}, {"vf", 1.0}};
  for (const auto& c : a.consts) {
    const auto eq = c.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--const expects name=value, got '" + c + "'");
    ctx.constants[c.substr(0, eq)] = std::stod(c.substr(eq + 1));
  }
  TRMConfig cfg;
  cfg.n = a.n;
  cfg.rho_max = a.rho_max;
  cfg.h = TRMConfig::parse_h(a.h, ctx);
  cfg.h_source = a.h;
  cfg.h_lipschitz = a.h_lip;
  cfg.horizon = g.horizon;
  cfg.rho_in = BoundarySignal::expression(a.boundary_in, ctx);
  if (!a.boundary_out_csv.empty()) {
    std::ifstream in(a.boundary_out_csv);
    if (!in) throw InvalidArgument("cannot open " + a.boundary_out_csv);
    cfg.rho_out = BoundarySignal::series(TimeSeries::read_csv(in), a.boundary_out_csv);
  } else {
    cfg.rho_out = BoundarySignal::expression(a.boundary_out, ctx);
  }
  return cfg;
}

int cmd_trm(const Globals& g, const TrmArgs& a) {
  const auto cfg = trm_config(g, a);
  const auto sys = build_trm(cfg);
  const auto cond = check_ies_conditions(cfg);
  const auto rep = certify_IES(sys, ies_options(g, a.tau, a.s_fraction));
  const auto tr = integrate(sys, sys.capacity, 0.0, g.horizon, integrator(g));
  const auto file = out_file(g, "trm_trajectory.csv");
  std::ofstream os(file);
  write_csv(os, tr);
  json out{{"schema", schema("trm")},
           {"h", a.h},
           {"n", a.n},
           {"rho_max", a.rho_max},
           {"boundary_in", cfg.rho_in.description},
           {"boundary_out", cfg.rho_out.description},
           {"conditions", to_json(cond)},
           {"ies", to_json(rep)},
           {"trajectory_csv", file.string()},
           {"seed", g.seed}};
  out["ies"].erase("assumptions");
  emit(g, out);
  return exit_code(rep.verdict);
}

int cmd_estimate(const Globals& g, const TrmArgs& a, std::uint64_t truth_seed, const std::string& init) {
  const auto cfg = trm_config(g, a);
  const auto sys = build_trm(cfg);
  const auto cond = check_ies_conditions(cfg);
  const auto rep = certify_IES(sys, ies_options(g, a.tau, a.s_fraction));
  std::optional<Vector> est;
  if (!init.empty()) {
    const auto v = parse_list(init);
    if (static_cast<int>(v.size()) != sys.n) throw InvalidArgument("--init needs one value per cell");
    est = Eigen::Map<const Vector>(v.data(), sys.n);
  }
  const auto run = run_estimator(sys, truth_seed, est, g.horizon, integrator(g), &rep);
  const auto file = out_file(g, "estimator.dat");
  std::ofstream os(file);
  std::vector<std::vector<double>> cols{run.error};
  std::vector<std::string> names{"error_l1"};
  if (run.envelope) {
    cols.push_back(*run.envelope);
    names.push_back("certified_envelope");
  }
  write_gnuplot(os, run.truth.times, cols, names);
  std::ofstream(out_file(g, "truth.csv")) << [&] {
    std::ostringstream s;
    write_csv(s, run.truth);
    return s.str();
  }();
  std::ofstream(out_file(g, "estimate.csv")) << [&] {
    std::ostringstream s;
    write_csv(s, run.estimate);
    return s.str();
  }();
  json out = to_json(run);
  out["conditions"] = to_json(cond);
  out["verdict"] = to_string(rep.verdict);
  out["error_series"] = file.string();
  if (!cond.passed) out["warning"] = "boundary conditions not met: convergence is not certified";
  emit(g, out);
  return exit_code(rep.verdict);
}

void add_trm_options(CLI::App* sub, TrmArgs& a) {
  sub->set_help_flag("--help", "print this help message and exit");  // frees -h for --h
  sub->add_option("--h", a.h, "speed factor h(x), an expression in x");
  sub->add_option("--n", a.n, "number of cells")->check(CLI::PositiveNumber);
  sub->add_option("--rho-max", a.rho_max, "jam density")->check(CLI::PositiveNumber);
  sub->add_option("--boundary-in", a.boundary_in, "upstream density rho_0(t), expression in t");
  sub->add_option("--boundary-out", a.boundary_out, "downstream density rho_{n+1}(t), expression in t");
  sub->add_option("--boundary-out-csv", a.boundary_out_csv, "downstream density as CSV with header t,rho");
  sub->add_option("--const", a.consts, "named constant name=value (vf defaults to 1)");
  sub->add_option("--h-lip", a.h_lip, "declared Lipschitz constant of h");
  sub->add_option("--tau", a.tau, "entry time of the absorbing box")->check(CLI::PositiveNumber);
  sub->add_option("--s-fraction", a.s_fraction, "position of s_i inside its admissible interval")
      ->check(CLI::Range(0.0, 1.0));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"comportal: stability certificates for compartmental systems"};
  app.require_subcommand(1);
  Globals g;
  try {
    g.seed = env_seed();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  app.add_flag("--json", g.json_mode, "machine-readable JSON output");
  app.add_option("--tol", g.tol, "numerical tolerance")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", g.seed, "random seed (default: COMPORTAL_SEED or 1)");
  app.add_option("--samples", g.samples, "sample count for sampled checks");
  app.add_option("--horizon", g.horizon, "time horizon")->check(CLI::PositiveNumber);
  app.add_option("--step", g.step, "integrator step")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory for data files");

  std::string file, dot, sigma = "ones", xi, init;
  double tau = 5.0, s_fraction = 0.5;
  std::uint64_t truth_seed = 7;
  TrmArgs trm_args;

  auto* check = app.add_subcommand("check", "validate a matrix and report its flow graph");
  check->add_option("file", file, "matrix JSON")->required();
  check->add_option("--dot", dot, "also write the flow graph in DOT format to this file name");
  auto* canon = app.add_subcommand("canonicalize", "permute a matrix into outflow canonical form");
  canon->add_option("file", file, "matrix JSON")->required();
  auto* cert = app.add_subcommand("certify", "exponential-stability certificate for a matrix or a family");
  cert->add_option("file", file, "matrix JSON or {\"family\": {...}}")->required();
  cert->add_option("--sigma", sigma, "weight parameter: ones or balanced")
      ->check(CLI::IsMember({"ones", "balanced"}));
  auto* sim = app.add_subcommand("simulate", "integrate a linear or structured system");
  sim->add_option("file", file, "matrix JSON or system JSON")->required();
  sim->add_option("--xi", xi, "initial state, comma separated (default: ones or capacities)");
  auto* ies = app.add_subcommand("ies", "incremental stability report for a structured system");
  ies->add_option("file", file, "system JSON")->required();
  ies->add_option("--tau", tau, "entry time of the absorbing box")->check(CLI::PositiveNumber);
  ies->add_option("--s-fraction", s_fraction, "position of s_i inside its admissible interval")
      ->check(CLI::Range(0.0, 1.0));
  auto* trm = app.add_subcommand("trm", "build, check, certify and simulate a traffic reaction model");
  add_trm_options(trm, trm_args);
  auto* est = app.add_subcommand("estimate", "run the state estimator on a traffic reaction model");
  add_trm_options(est, trm_args);
  est->add_option("--truth-seed", truth_seed, "seed of the hidden initial state");
  est->add_option("--init", init, "estimator initial state (default: zero)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*check) return cmd_check(g, file, dot);
    if (*canon) return cmd_canonicalize(g, file);
    if (*cert) return cmd_certify(g, file, sigma);
    if (*sim) return cmd_simulate(g, file, xi);
    if (*ies) return cmd_ies(g, file, tau, s_fraction);
    if (*trm) return cmd_trm(g, trm_args);
    if (*est) return cmd_estimate(g, trm_args, truth_seed, init);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsage;
}
