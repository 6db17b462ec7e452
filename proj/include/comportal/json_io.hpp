#ifndef COMPORTAL_JSON_IO_HPP
#define COMPORTAL_JSON_IO_HPP

// JSON readers for matrices, families and structured systems, and writers for
// every report type. Indices in JSON are 1-based. Each top-level report
// carries a "schema" tag of the form "comportal.<artifact>/1".

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "comportal/stability.hpp"
#include "comportal/trm.hpp"

namespace comportal {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline std::string schema(const std::string& artifact) {
  return "comportal." + artifact + "/" + std::to_string(kSchemaVersion);
}

// ---------------------------------------------------------------------------
// Readers

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

/// {"n": int, "entries": [[row], ...]}; a "matrix" field or a bare array of
/// rows is accepted as well.
inline Matrix matrix_from_json(const json& j) {
  if (j.is_object() && !j.contains("entries") && !j.contains("matrix"))
    throw InvalidArgument("matrix JSON needs an \"entries\" field");
  const json& rows = j.is_object() ? (j.contains("entries") ? j.at("entries") : j.at("matrix")) : j;
  if (!rows.is_array()) throw InvalidArgument("matrix must be an array of rows");
  if (j.is_object() && j.contains("n") && j.at("n").get<int>() != static_cast<int>(rows.size()))
    throw InvalidArgument("\"n\" does not match the number of rows");
  std::vector<std::vector<double>> r;
  for (const auto& row : rows) {
    if (!row.is_array()) throw InvalidArgument("matrix rows must be arrays");
    r.push_back(row.get<std::vector<double>>());
  }
  return SquareMatrix::from_rows(r).matrix();
}

/// {"n", "l", "a": [...], "b"}.
inline FamilyParams family_from_json(const json& j) {
  FamilyParams f;
  f.n = j.at("n").get<int>();
  f.l = j.at("l").get<int>();
  const auto a = j.at("a").get<std::vector<double>>();
  f.a = Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
  f.b = j.at("b").get<double>();
  f.validate();
  return f;
}

/// {"v": [...], "lambda": x, "source": "..."}; gamma is recomputed from v.
inline LyapunovCertificate certificate_from_json(const json& j) {
  const auto v = j.at("v").get<std::vector<double>>();
  const std::string src = j.value("source", "user");
  const auto source = src == "theorem1"         ? LyapunovCertificate::Source::Theorem1
                      : src == "linear_inverse" ? LyapunovCertificate::Source::LinearInverse
                                                : LyapunovCertificate::Source::User;
  return LyapunovCertificate::make(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())),
                                   j.at("lambda").get<double>(), source);
}

/// {"n", "capacities", "f0": [expr...], "f": {"r,s": expr}, "g": [expr...],
///  "I": [expr...], "constants": {...}, "declared_lipschitz": {...}}.
/// Key "r,s" is the coefficient of the flow s -> r, a function of x_r.
/// Expressions see t, x, the named constants and c (capacity of the
/// compartment the coefficient depends on). Missing f0 / I default to 0,
/// missing g to x. Numbers are accepted in place of expressions.
inline StructuredSystem structured_from_json(const json& j, const std::map<std::string, double>& extra = {}) {
  const int n = j.at("n").get<int>();
  if (n < 1) throw InvalidArgument("system needs n >= 1");
  const auto caps = j.at("capacities").get<std::vector<double>>();
  if (static_cast<int>(caps.size()) != n) throw InvalidArgument("capacities must have n entries");
  auto sys = StructuredSystem::empty(Eigen::Map<const Vector>(caps.data(), n));
  ParseContext base;
  if (j.contains("constants"))
    for (const auto& [k, v] : j.at("constants").items()) base.constants[k] = v.get<double>();
  for (const auto& [k, v] : extra) base.constants[k] = v;

  auto make = [&](const json& e, int comp, const std::string& key) -> ScalarFn {
    if (e.is_number()) {
      sys.sources[key] = e.dump();
      return constant_fn(e.get<double>());
    }
    if (!e.is_string()) throw InvalidArgument(key + ": expected an expression string or a number");
    ParseContext ctx = base;
    ctx.constants["c"] = sys.capacity(comp);
    sys.sources[key] = e.get<std::string>();
    try {
      return expression_fn(Expression::parse(e.get<std::string>(), ctx));
    } catch (const ParseError& err) {
      throw ParseError(key + ": " + err.what(), err.position());
    }
  };
  auto per_compartment = [&](const char* field, std::vector<ScalarFn>& dst, auto keyfn) {
    if (!j.contains(field)) return;
    const auto& arr = j.at(field);
    if (!arr.is_array() || static_cast<int>(arr.size()) != n)
      throw InvalidArgument(std::string(field) + " must have n entries");
    for (int i = 0; i < n; ++i) dst[i] = make(arr[i], i, keyfn(i));
  };
  per_compartment("f0", sys.f0, f0_key);
  per_compartment("g", sys.g, g_key);
  per_compartment("I", sys.inflow, inflow_key);
  if (j.contains("f"))
    for (const auto& [k, v] : j.at("f").items()) {
      int r = 0, s = 0;
      char comma = 0;
      std::istringstream is(k);
      if (!(is >> r >> comma >> s) || comma != ',') throw InvalidArgument("flow key '" + k + "' must look like \"r,s\"");
      if (r < 1 || s < 1 || r > n || s > n || r == s)
        throw InvalidArgument("flow key '" + k + "' is not an off-diagonal index");
      sys.flow[{r - 1, s - 1}] = make(v, r - 1, flow_key(r - 1, s - 1));
    }
  if (j.contains("declared_lipschitz"))
    for (const auto& [k, v] : j.at("declared_lipschitz").items()) sys.declared_lipschitz[k] = v.get<double>();
  sys.validate();
  return sys;
}

// ---------------------------------------------------------------------------
// Writers

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline json one_based(const std::vector<int>& v) {
  json a = json::array();
  for (int x : v) a.push_back(x + 1);
  return a;
}

inline json matrix_json(const Matrix& m) { return {{"n", m.rows()}, {"entries", to_json(m)}}; }

inline json to_json(const Violation& v) {
  json j{{"kind", to_string(v.kind)}, {"col", v.col}, {"value", v.value}};
  if (v.row) j["row"] = v.row;
  return j;
}

inline json to_json(const FamilyParams& f) {
  return {{"n", f.n}, {"l", f.l}, {"a", to_json(f.a)}, {"b", f.b}};
}

inline json to_json(const LyapunovCertificate& c) {
  return {{"v", to_json(c.v)}, {"lambda", c.lambda}, {"gamma", c.gamma}, {"source", to_string(c.source)}};
}

inline json to_json(const CertificateCheck& c) {
  return {{"ok", c.ok}, {"margins", to_json(c.margins)}, {"worst_margin", c.worst_margin},
          {"worst_column", c.worst_column}};
}

inline json to_json(const MembershipEvidence& e) {
  json j{{"bound", to_string(e.bound)}, {"col", e.col}, {"value", e.value}, {"limit", e.limit}, {"margin", e.margin}};
  if (e.row) j["row"] = e.row;
  return j;
}

inline json to_json(const MembershipResult& m) {
  json j{{"member", m.member}, {"worst_margin", m.worst_margin}};
  j["violations"] = json::array();
  for (const auto& v : m.violations) j["violations"].push_back(to_json(v));
  j["binding"] = json::array();
  for (const auto& v : m.binding) j["binding"].push_back(to_json(v));
  return j;
}

inline json to_json(const CanonicalWitness& w) {
  json neg = json::array(), down = json::array();
  for (bool b : w.negative_column) neg.push_back(b);
  for (int d : w.downstream) down.push_back(d < 0 ? json(nullptr) : json(d + 1));
  return {{"is_canonical", w.is_canonical}, {"l", w.l}, {"negative_column", neg}, {"downstream", down}};
}

inline json to_json(const Canonicalization& c) {
  return {{"schema", schema("canonicalization")},
          {"r", one_based(c.r.image())},
          {"l", c.witness.l},
          {"P", to_json(c.P)},
          {"A", to_json(c.A.matrix())},
          {"witness", to_json(c.witness)}};
}

inline json to_json(const FlowGraph& g, const TrapReport& t) {
  json edges = json::array();
  for (int i = 0; i < g.n; ++i)
    for (int j : g.out[i]) edges.push_back({i + 1, j + 1});
  json j{{"n", g.n},
         {"edges", edges},
         {"outflow_vertices", one_based(g.outflow_vertices())},
         {"outflow_connected", t.is_outflow_connected}};
  j["trap"] = t.trap ? one_based(*t.trap) : json(nullptr);
  return j;
}

inline json to_json(const SampledVerdict& v) {
  json j{{"verdict", v.label()}, {"samples", v.samples}, {"worst_margin", v.worst_margin}, {"seed", v.seed}};
  if (v.witness)
    j["witness"] = {{"t", v.witness->t},
                    {"a", to_json(v.witness->a)},
                    {"b", to_json(v.witness->b)},
                    {"component", v.witness->component},
                    {"margin", v.witness->margin}};
  return j;
}

inline json to_json(const AssumptionCheck& a) {
  return {{"assumption", a.assumption}, {"subject", a.subject}, {"passed", a.passed}, {"advisory", a.advisory},
          {"detail", a.detail}};
}

inline json to_json(const ESReport& r) {
  json j{{"schema", schema("es-report")},
         {"verdict", to_string(r.verdict)},
         {"exit_code", exit_code(r.verdict)},
         {"samples", r.samples},
         {"seed", r.seed},
         {"log", r.log}};
  if (r.certificate) j["certificate"] = to_json(*r.certificate);
  if (r.family) j["family"] = to_json(*r.family);
  if (r.trap) j["trap"] = one_based(*r.trap);
  if (r.permutation) j["permutation"] = one_based(r.permutation->image());
  if (std::isfinite(r.worst_membership_margin)) j["worst_membership_margin"] = r.worst_membership_margin;
  if (std::isfinite(r.worst_certificate_margin)) j["worst_certificate_margin"] = r.worst_certificate_margin;
  if (r.witness) j["witness"] = {{"t", r.witness->t}, {"x", to_json(r.witness->x)}, {"detail", r.witness->detail}};
  return j;
}

inline json to_json(const AbsorbingBox& b) {
  json thr = json::array();
  for (int i = 0; i < b.threshold.size(); ++i)
    thr.push_back(std::isnan(b.threshold(i)) ? json(nullptr) : json(b.threshold(i)));
  return {{"s", to_json(b.s)},
          {"thresholds", thr},
          {"corner_at_tau", to_json(b.corner_at_tau)},
          {"tau", b.tau},
          {"ensemble_passed", b.ensemble_passed},
          {"ensemble_size", b.ensemble_size},
          {"ensemble_worst_margin", b.ensemble_worst_margin}};
}

inline json to_json(const IESReport& r) {
  json j{{"schema", schema("ies-report")},
         {"verdict", to_string(r.verdict)},
         {"exit_code", exit_code(r.verdict)},
         {"seed", r.seed},
         {"samples", r.samples},
         {"tau", r.tau},
         {"lambda", r.lambda},
         {"gamma", r.gamma},
         {"b_tilde", r.b_tilde},
         {"worst_residual", r.worst_residual},
         {"log", r.log}};
  if (r.s.size()) j["absorbing_box_upper"] = to_json(r.s);
  if (!r.stage.empty()) j["stage"] = r.stage;
  if (!r.detail.empty()) j["detail"] = r.detail;
  if (r.absorbing_box) j["absorbing_box"] = to_json(*r.absorbing_box);
  if (r.family) j["family"] = to_json(*r.family);
  if (r.permutation) j["permutation"] = one_based(r.permutation->image());
  if (r.certificate) j["certificate"] = to_json(*r.certificate);
  if (std::isfinite(r.worst_membership_margin)) j["worst_membership_margin"] = r.worst_membership_margin;
  if (std::isfinite(r.worst_certificate_margin)) j["worst_certificate_margin"] = r.worst_certificate_margin;
  j["assumptions"] = json::array();
  for (const auto& a : r.assumptions) j["assumptions"].push_back(to_json(a));
  return j;
}

inline json to_json(const DecayFit& f) {
  return {{"schema", schema("decay-fit")}, {"gamma_hat", f.gamma_hat}, {"lambda_hat", f.lambda_hat},
          {"residual", f.residual},        {"points", f.points},        {"window", {f.window_begin, f.window_end}},
          {"exact_zero", f.exact_zero},    {"degenerate", f.degenerate}};
}

inline json to_json(const Trajectory::Meta& m) {
  return {{"method", to_string(m.method)},         {"step", m.step},
          {"proj_tol", m.proj_tol},                {"accepted_steps", m.accepted_steps},
          {"rejected_steps", m.rejected_steps},    {"projection_events", m.projections.size()},
          {"projected_mass", m.projected_mass}};
}

inline json to_json(const IESConditions& c) {
  return {{"passed", c.passed},   {"boundary_ok", c.boundary_ok}, {"h_positive_ok", c.h_positive_ok},
          {"epsilon", c.epsilon}, {"max_boundary", c.max_boundary}, {"a_n", c.a_n},
          {"detail", c.detail}};
}

inline json to_json(const EstimatorRun& r) {
  json j{{"schema", schema("estimator-run")},
         {"seed", r.seed},
         {"truth_init", to_json(r.truth_init)},
         {"estimate_init", to_json(r.estimate_init)},
         {"initial_error", r.error.front()},
         {"final_error", r.error.back()},
         {"certified", r.certified}};
  j["reached_1e-3_at"] = r.reached_time ? json(*r.reached_time) : json(nullptr);
  if (r.certified) {
    j["lambda"] = r.lambda;
    j["gamma"] = r.gamma;
    j["time_bound"] = r.time_bound;
    j["below_envelope"] = r.below_envelope;
  }
  return j;
}

}  // namespace comportal

#endif  // COMPORTAL_JSON_IO_HPP
