#ifndef COMPORTAL_TRM_HPP
#define COMPORTAL_TRM_HPP

// Traffic reaction model on n unit-length cells:
//   rho_i' = rho_{i-1} h(rho_i) - rho_i h(rho_{i+1}),
// with boundary densities rho_0(t) upstream and rho_{n+1}(t) downstream, and
// the state estimator built from it (a copy of the model started anywhere).

#include <algorithm>
#include <cmath>
#include <future>
#include <istream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "comportal/expression.hpp"
#include "comportal/ode.hpp"
#include "comportal/stability.hpp"
#include "comportal/system.hpp"

namespace comportal {

/// Sampled signal "t,rho" with linear interpolation, held constant outside its range.
struct TimeSeries {
  std::vector<double> times;
  std::vector<double> values;

  double at(double t) const {
    if (times.empty()) throw InvalidArgument("empty time series");
    if (t <= times.front()) return values.front();
    if (t >= times.back()) return values.back();
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t k = static_cast<std::size_t>(it - times.begin()) - 1;
    const double w = (t - times[k]) / (times[k + 1] - times[k]);
    return (1 - w) * values[k] + w * values[k + 1];
  }

  /// Header "t,rho", then strictly increasing times.
  static TimeSeries read_csv(std::istream& in) {
    TimeSeries ts;
    std::string line;
    if (!std::getline(in, line)) throw InvalidArgument("boundary CSV is empty");
    line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }), line.end());
    if (line != "t,rho") throw InvalidArgument("boundary CSV header must be \"t,rho\"");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream row(line);
      double t = 0, v = 0;
      char comma = 0;
      if (!(row >> t >> comma >> v) || comma != ',')
        throw InvalidArgument("malformed boundary CSV row " + std::to_string(lineno));
      if (!ts.times.empty() && !(t > ts.times.back()))
        throw InvalidArgument("boundary CSV times must increase (row " + std::to_string(lineno) + ")");
      ts.times.push_back(t);
      ts.values.push_back(v);
    }
    if (ts.times.empty()) throw InvalidArgument("boundary CSV has no rows");
    return ts;
  }
};

struct BoundarySignal {
  std::function<double(double)> fn;
  std::string description;

  double operator()(double t) const { return fn(t); }

  static BoundarySignal constant(double v) {
    std::ostringstream os;
    os << v;
    return {[v](double) { return v; }, os.str()};
  }
  /// Expression in t (named constants allowed).
  static BoundarySignal expression(const std::string& src, const ParseContext& ctx = {}) {
    ParseContext c = ctx;
    c.variables = {"t"};
    auto e = Expression::parse(src, c);
    return {[e](double t) {
              const double v[1] = {t};
              return e.evaluate(std::span<const double>(v, 1));
            },
            src};
  }
  static BoundarySignal series(TimeSeries ts, std::string name = "csv") {
    return {[ts = std::move(ts)](double t) { return ts.at(t); }, std::move(name)};
  }
};

struct TRMConfig {
  int n = 10;
  double rho_max = 1.0;
  std::function<double(double)> h;  // speed-like factor, h(rho_max) = 0
  std::string h_source;
  std::optional<double> h_lipschitz;  // declared; otherwise estimated
  BoundarySignal rho_in = BoundarySignal::constant(0.0);
  BoundarySignal rho_out = BoundarySignal::constant(0.0);
  double horizon = 50.0;  // time range over which boundary signals are sampled

  /// h from an expression in x; constants such as vf and rho_max come from ctx.
  static std::function<double(double)> parse_h(const std::string& src, const ParseContext& ctx) {
    auto e = Expression::parse(src, ctx);
    return [e](double z) { return e(0.0, z); };
  }
};

inline TRMConfig greenshields(int n, double vf, double rho_max, double rho_out) {
  TRMConfig cfg;
  cfg.n = n;
  cfg.rho_max = rho_max;
  cfg.h = [vf, rho_max](double z) { return vf * (1 - z / rho_max); };
  cfg.h_source = "vf*(1-x/rho_max)";
  cfg.h_lipschitz = vf / rho_max;
  cfg.rho_out = BoundarySignal::constant(rho_out);
  return cfg;
}

/// h nonincreasing on [0, rho_max], h(rho_max) = 0, boundary signals in [0, rho_max].
inline void validate_trm(const TRMConfig& cfg, std::size_t samples = 513) {
  if (cfg.n < 1) throw InvalidArgument("TRM needs n >= 1 cells");
  if (!(cfg.rho_max > 0)) throw InvalidArgument("rho_max must be positive");
  if (!cfg.h) throw InvalidArgument("TRM needs a function h");
  const auto mono = check_monotonicity(cfg.h, 0.0, cfg.rho_max, Monotonicity::Nonincreasing, samples);
  if (!mono.passed)
    throw AssumptionViolation("A4", "h increases between " + std::to_string(mono.witness->first) + " and " +
                                        std::to_string(mono.witness->second));
  if (std::abs(cfg.h(cfg.rho_max)) > 1e-9) throw AssumptionViolation("A2", "h(rho_max) must vanish");
  if (cfg.h(0.0) < 0) throw AssumptionViolation("A1", "h must be nonnegative");
  for (double t : time_grid(cfg.horizon, 257))
    for (const auto* sig : {&cfg.rho_in, &cfg.rho_out}) {
      const double v = (*sig)(t);
      if (v < 0 || v > cfg.rho_max) throw InvalidArgument("boundary density " + std::to_string(v) + " at t=" +
                                                          std::to_string(t) + " is outside [0, rho_max]");
    }
}

/// g = x, I_1 = rho_0(t) h(x_1), f_{i,i-1}(t, x_i) = h(x_i), f0_n = h(rho_{n+1}(t)).
inline StructuredSystem build_trm(const TRMConfig& cfg) {
  validate_trm(cfg);
  const int n = cfg.n;
  auto sys = StructuredSystem::empty(Vector::Constant(n, cfg.rho_max));
  const auto h = cfg.h;
  const auto in = cfg.rho_in;
  const auto out = cfg.rho_out;
  sys.inflow[0] = [h, in](double t, double x) { return in(t) * h(x); };
  sys.sources[inflow_key(0)] = "(" + in.description + ")*h(x)";
  for (int i = 1; i < n; ++i) {
    sys.flow[{i, i - 1}] = [h](double, double x) { return h(x); };
    sys.sources[flow_key(i, i - 1)] = "h(x)";
    if (cfg.h_lipschitz) sys.declared_lipschitz[flow_key(i, i - 1)] = *cfg.h_lipschitz;
  }
  sys.f0[n - 1] = [h, out](double t, double) { return h(out(t)); };
  sys.sources[f0_key(n - 1)] = "h(" + out.description + ")";
  if (cfg.h_lipschitz) {
    double sup_in = 0.0;
    for (double t : time_grid(cfg.horizon, 257)) sup_in = std::max(sup_in, in(t));
    sys.declared_lipschitz[inflow_key(0)] = sup_in * *cfg.h_lipschitz;
    sys.declared_lipschitz[f0_key(n - 1)] = 0.0;
  }
  return sys;
}

struct IESConditions {
  bool passed = false;
  bool boundary_ok = false;
  bool h_positive_ok = false;
  double epsilon = 0.0;
  double max_boundary = 0.0;
  double a_n = 0.0;  // h(rho_max - epsilon) when passed
  std::string detail;
};

/// rho_{n+1}(t) <= rho_max - epsilon at sampled t and h > 0 on [0, rho_max).
/// Without an explicit epsilon the largest admissible one is used.
inline IESConditions check_ies_conditions(const TRMConfig& cfg, std::optional<double> epsilon = std::nullopt,
                                          std::size_t samples = 1025) {
  IESConditions c;
  for (double t : time_grid(cfg.horizon, static_cast<int>(samples)))
    c.max_boundary = std::max(c.max_boundary, cfg.rho_out(t));
  c.epsilon = epsilon ? *epsilon : cfg.rho_max - c.max_boundary;
  c.boundary_ok = c.epsilon > 0 && c.max_boundary <= cfg.rho_max - c.epsilon + 1e-12;
  c.h_positive_ok = true;
  for (std::size_t k = 0; k < samples; ++k) {
    const double z = cfg.rho_max * static_cast<double>(k) / static_cast<double>(samples);
    if (!(cfg.h(z) > 0)) {
      c.h_positive_ok = false;
      c.detail = "h(" + std::to_string(z) + ") <= 0";
      break;
    }
  }
  if (!c.boundary_ok && c.detail.empty())
    c.detail = "downstream density reaches " + std::to_string(c.max_boundary) + ", no positive margin below rho_max";
  c.passed = c.boundary_ok && c.h_positive_ok;
  if (c.passed) c.a_n = cfg.h(cfg.rho_max - c.epsilon);
  return c;
}

struct EstimatorRun {
  Trajectory truth;
  Trajectory estimate;
  std::vector<double> error;                    // |x_hat(t) - x(t)|_1 on the truth grid
  std::optional<std::vector<double>> envelope;  // gamma e^{-lambda t} |xi_hat - xi|_1
  Vector truth_init;
  Vector estimate_init;
  std::uint64_t seed = 0;
  bool certified = false;
  double lambda = 0.0;
  double gamma = 0.0;
  double time_bound = 0.0;                      // ln(gamma * 1e3) / lambda
  std::optional<double> reached_time;           // first t with error < 1e-3 * error(0)
  bool below_envelope = true;
};

/// Truth from a seeded uniform state in [0, rho_max]^n, estimate from
/// `estimate_init` (all zero by default); both run concurrently.
inline EstimatorRun run_estimator(const StructuredSystem& sys, std::uint64_t truth_seed,
                                  std::optional<Vector> estimate_init, double horizon,
                                  const IntegratorOptions& iopt = {}, const IESReport* ies = nullptr) {
  EstimatorRun run;
  run.seed = truth_seed;
  std::mt19937_64 rng(truth_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  run.truth_init = Vector(sys.n);
  for (int i = 0; i < sys.n; ++i) run.truth_init(i) = u(rng) * sys.capacity(i);
  run.estimate_init = estimate_init ? *estimate_init : Vector::Zero(sys.n);
  auto ft = std::async(std::launch::async, [&] { return integrate(sys, run.truth_init, 0.0, horizon, iopt); });
  auto fe = std::async(std::launch::async, [&] { return integrate(sys, run.estimate_init, 0.0, horizon, iopt); });
  run.truth = ft.get();
  run.estimate = fe.get();
  run.error = pairwise_distance(run.truth, run.estimate);
  const double e0 = run.error.front();
  for (std::size_t k = 0; k < run.error.size(); ++k)
    if (run.error[k] < 1e-3 * e0) {
      run.reached_time = run.truth.times[k];
      break;
    }
  if (ies && ies->verdict == Verdict::CertifiedIES) {
    run.certified = true;
    run.lambda = ies->lambda;
    run.gamma = ies->gamma;
    run.time_bound = std::log(run.gamma * 1e3) / run.lambda;
    std::vector<double> env(run.error.size());
    for (std::size_t k = 0; k < env.size(); ++k) {
      env[k] = run.gamma * std::exp(-run.lambda * run.truth.times[k]) * e0;
      if (run.error[k] > env[k] * (1 + 1e-9) + 1e-12) run.below_envelope = false;
    }
    run.envelope = std::move(env);
  }
  return run;
}

}  // namespace comportal

#endif  // COMPORTAL_TRM_HPP
