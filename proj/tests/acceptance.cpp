// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <complex>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "comportal/canonical.hpp"
#include "comportal/certificate.hpp"
#include "comportal/graph.hpp"
#include "comportal/ode.hpp"
#include "comportal/stability.hpp"
#include "comportal/trm.hpp"

using namespace comportal;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::printf("%s %2d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Off-diagonal flows and leaks drawn as 0 (probability 1 - density) or U[0.1, 1].
CompartmentalMatrix random_compartmental(int n, double density, double leak_density, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0), coin(0.0, 1.0);
  FlowParams p{Vector::Zero(n), Matrix::Zero(n, n)};
  for (int i = 0; i < n; ++i) {
    if (coin(rng) < leak_density) p.f0(i) = mag(rng);
    for (int j = 0; j < n; ++j)
      if (i != j && coin(rng) < density) p.f(i, j) = mag(rng);
  }
  return CompartmentalMatrix::from(p.to_matrix());
}

/// Greedy nearest matching of two spectra; returns the largest relative gap.
double spectrum_gap(const Matrix& a, const Matrix& b) {
  const Eigen::VectorXcd ea = Eigen::EigenSolver<Matrix>(a, false).eigenvalues();
  Eigen::VectorXcd eb = Eigen::EigenSolver<Matrix>(b, false).eigenvalues();
  std::vector<bool> used(eb.size(), false);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < ea.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = -1;
    for (Eigen::Index j = 0; j < eb.size(); ++j)
      if (!used[j] && std::abs(ea(i) - eb(j)) < best) {
        best = std::abs(ea(i) - eb(j));
        arg = j;
      }
    used[arg] = true;
    worst = std::max(worst, best / std::max(1.0, std::abs(ea(i))));
  }
  return worst;
}

Vector random_state(const Vector& cap, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector x(cap.size());
  for (int i = 0; i < cap.size(); ++i) x(i) = u(rng) * cap(i);
  return x;
}

const Matrix kF1 = (Matrix(2, 2) << -1, 0, 1, -1).finished();
const Matrix kF2 = (Matrix(2, 2) << -1, 1, 0, -1).finished();

}  // namespace

int main() {
  report(1, "canonicalization soundness", [] {
    std::mt19937_64 rng(101);
    const auto t0 = Clock::now();
    int done = 0, bad = 0, reordered = 0;
    double worst = 0.0;
    while (done < 600) {
      const int n = 2 + done % 7;
      const auto F = random_compartmental(n, 0.3, 0.3, rng);
      if (!check_outflow_connected(build_graph(F)).is_outflow_connected) continue;
      ++done;
      const auto c = canonicalize(F);
      if (!c.r.is_identity()) ++reordered;
      const double gap = spectrum_gap(F.matrix(), c.A.matrix());
      worst = std::max(worst, gap);
      if (!check_canonical(c.A).is_canonical || gap > 1e-8 || c.A.matrix() != c.P * F.matrix() * c.P.transpose())
        ++bad;
    }
    const double secs = elapsed(t0);
    return Outcome{bad == 0 && secs < 5.0,
                   fmt("%d matrices (n=2..8, %d permuted), %d failures, worst spectral gap %.2e, %.2f s < 5 s", done,
                       reordered, bad, worst, secs)};
  });

  report(2, "closed-form certificate soundness", [] {
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto t0 = Clock::now();
    int families = 0, members = 0, bad = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (; families < 24; ++families) {
      FamilyParams fam;
      fam.n = 2 + families % 7;
      fam.l = 1 + static_cast<int>(u(rng) * fam.n);
      fam.a = Vector(fam.l);
      for (int i = 0; i < fam.l; ++i) fam.a(i) = 0.2 + 1.8 * u(rng);
      fam.b = families % 4 == 0 ? 0.0 : 1.5 * u(rng);
      const auto cert = theorem1_certificate(fam);
      for (int k = 0; k < 1000; ++k, ++members) {
        const auto chk = verify_certificate(random_family_member(fam, rng), cert, 1e-9);
        worst = std::min(worst, chk.worst_margin / cert.v.maxCoeff());
        if (!chk.ok) ++bad;
      }
    }
    const double secs = elapsed(t0);
    return Outcome{bad == 0 && secs < 30.0,
                   fmt("%d families (n<=8), %d members, %d failures, worst scaled margin %.2e, %.2f s < 30 s", families,
                       members, bad, worst, secs)};
  });

  report(3, "outflow connected iff nonsingular", [] {
    std::mt19937_64 rng(303);
    int disagree = 0, connected = 0;
    const int total = 600;
    for (int k = 0; k < total; ++k) {
      const int n = 1 + k % 6;
      const auto F = random_compartmental(n, 0.35, 0.25, rng);
      const bool graph = check_outflow_connected(build_graph(F)).is_outflow_connected;
      const double scale = std::max(1.0, F.matrix().cwiseAbs().maxCoeff());
      const bool nonsingular = std::abs((F.matrix() / scale).determinant()) > 1e-9;
      connected += graph;
      disagree += graph != nonsingular;
    }
    return Outcome{disagree == 0,
                   fmt("%d matrices (n<=6, %d outflow connected), %d disagreements", total, connected, disagree)};
  });

  report(4, "trap mass conservation", [] {
    std::mt19937_64 rng(404);
    int runs = 0, bad = 0;
    double worst = std::numeric_limits<double>::infinity();
    while (runs < 100) {
      const int n = 2 + runs % 5;
      const auto F = random_compartmental(n, 0.35, 0.2, rng);
      const auto trap = check_outflow_connected(build_graph(F));
      if (trap.is_outflow_connected) continue;
      ++runs;
      const auto& K = *trap.trap;
      const auto tr = integrate(SystemSpec::linear(F.matrix()), random_state(Vector::Ones(n), rng), 0.0, 5.0);
      auto mass = [&](const Vector& x) {
        double s = 0;
        for (int k : K) s += x(k);
        return s;
      };
      bool ok = true;
      for (std::size_t k = 1; k < tr.size(); ++k) {
        const double dm = mass(tr.states[k]) - mass(tr.states[k - 1]);
        const double slack = 1e-8 * (tr.times[k] - tr.times[k - 1]);
        worst = std::min(worst, dm + slack);
        if (dm < -slack) ok = false;
      }
      bad += !ok;
    }
    return Outcome{bad == 0, fmt("%d runs with a detected trap, %d decreasing, worst step change %.2e", runs, bad,
                                 worst)};
  });

  report(5, "exponential envelope for the F1 system", [] {
    const auto cc = certify_via_canonical(CompartmentalMatrix::from(kF1));
    if (!cc.check.ok) return Outcome{false, "F1 certificate does not verify"};
    const Vector v = cc.certificate.v;
    const double lambda = cc.certificate.lambda;
    std::mt19937_64 rng(505);
    int bad = 0;
    double min_rate = std::numeric_limits<double>::infinity(), worst_ratio = 0.0;
    for (int k = 0; k < 100; ++k) {
      const Vector xi = random_state(Vector::Ones(2), rng);
      const auto tr = integrate(SystemSpec::linear(kF1), xi, 0.0, 10.0);
      const double v0 = v.dot(xi);
      for (std::size_t s = 0; s < tr.size(); ++s) {
        const double bound = v0 * std::exp(-lambda * tr.times[s]);
        worst_ratio = std::max(worst_ratio, v.dot(tr.states[s]) / bound);
        if (v.dot(tr.states[s]) > bound * (1 + 1e-6)) ++bad;
      }
      const auto fit = measure_norm_decay(tr, v);
      min_rate = std::min(min_rate, fit.lambda_hat);
    }
    return Outcome{bad == 0 && min_rate >= 0.45 && std::abs(lambda - 0.5) < 1e-15,
                   fmt("v=(%g,%g), rate %g; 100 runs, %d grid violations, max v.q/envelope %.6f, min fitted rate %.4f "
                       ">= 0.45",
                       v(0), v(1), lambda, bad, worst_ratio, min_rate)};
  });

  report(6, "worked examples", [] {
    const auto F1 = CompartmentalMatrix::from(kF1), F2 = CompartmentalMatrix::from(kF2);
    const bool f1 = check_canonical(F1).is_canonical, f2 = check_canonical(F2).is_canonical;
    const auto c = canonicalize(F2);
    const bool swap = c.r.one_based() == std::vector<int>{2, 1} && c.A.matrix() == kF1;

    auto sys = StructuredSystem::empty(Vector::Ones(2));
    sys.flow[{1, 0}] = [](double, double x) { return 1 - x; };
    sys.f0[1] = constant_fn(1.0);
    const auto rep = certify_IES(sys);
    const bool ies = rep.verdict == Verdict::CertifiedIES && rep.absorbing_box && rep.s(1) < 1.0;
    return Outcome{f1 && !f2 && swap && ies,
                   fmt("F1 canonical=%d, F2 canonical=%d, r=(2,1) maps F2 to F1 exactly=%d; two-state system %s with "
                       "s2=%.4f < 1, rate %.4g",
                       f1, f2, swap, to_string(rep.verdict).c_str(), rep.s(1), rep.lambda)};
  });

  report(7, "difference factorization on a Greenshields chain", [] {
    const auto sys = build_trm(greenshields(5, 1.0, 1.0, 0.5));
    const double bt = compute_b_tilde(sys);
    std::mt19937_64 rng(707);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int bad = 0;
    double worst_res = 0.0, worst_upper = 0.0;
    for (int k = 0; k < 1000; ++k) {
      const Vector a = random_state(sys.capacity, rng), b = random_state(sys.capacity, rng);
      const auto [x, y] = bracket(a, b);
      const auto d = build_D(sys, 50.0 * u(rng), x, y);
      worst_res = std::max(worst_res, d.residual);
      double upper = 0.0;
      for (int j = 0; j < 5; ++j)
        for (int i = 0; i < j; ++i) upper = std::max(upper, d.D(i, j));
      worst_upper = std::max(worst_upper, upper);
      if (d.residual >= 1e-10 || !validate_compartmental(d.D, 1e-12).accepted() || upper > bt + 1e-12) ++bad;
    }
    return Outcome{bad == 0, fmt("1000 ordered pairs, %d failures, max residual %.2e < 1e-10, max above-diagonal "
                                 "%.4f <= b~ = %.4f",
                                 bad, worst_res, worst_upper, bt)};
  });

  const auto trm = build_trm(greenshields(10, 1.0, 1.0, 0.5));
  std::optional<IESReport> trm_rep;

  report(8, "traffic model IES end to end", [&] {
    const auto t0 = Clock::now();
    trm_rep = certify_IES(trm);
    const auto& rep = *trm_rep;
    if (rep.verdict != Verdict::CertifiedIES || !(rep.lambda > 0))
      return Outcome{false, "verdict " + to_string(rep.verdict) + " at stage " + rep.stage + ": " + rep.detail};
    const Vector& v = rep.certificate->v;
    const double ratio = v.maxCoeff() / v.minCoeff();
    const double tau = rep.tau, T = tau + 40.0;
    // |x2-x1|_1(t) <= 1.02 (max v/min v) e^{-lambda (t - tau)} |xi2-xi1|_1 for t >= tau,
    // and no growth before tau.
    auto within = [&](const Trajectory& a, const Trajectory& b, double d0, double& worst) {
      const auto d = pairwise_distance(a, b);
      bool ok = true;
      for (std::size_t k = 0; k < d.size(); ++k) {
        const double t = a.times[k];
        const double env = t < tau ? d0 * (1 + 1e-9) : 1.02 * ratio * std::exp(-rep.lambda * (t - tau)) * d0;
        worst = std::max(worst, d[k] / env);
        if (d[k] > env + 1e-12) ok = false;
      }
      return ok;
    };
    std::mt19937_64 rng(808);
    int bad_ordered = 0, bad_unordered = 0;
    double worst_ordered = 0.0, worst_unordered = 0.0;
    for (int k = 0; k < 20; ++k) {
      const auto [lo, hi] = bracket(random_state(trm.capacity, rng), random_state(trm.capacity, rng));
      const auto a = integrate(trm, lo, 0.0, T), b = integrate(trm, hi, 0.0, T);
      if (!within(a, b, (hi - lo).lpNorm<1>(), worst_ordered) || !check_ordering(a, b).passed) ++bad_ordered;
    }
    for (int k = 0; k < 20; ++k) {
      const Vector p = random_state(trm.capacity, rng), q = random_state(trm.capacity, rng);
      const auto [lo, hi] = bracket(p, q);
      const auto xp = integrate(trm, p, 0.0, T), xq = integrate(trm, q, 0.0, T);
      const auto ylo = integrate(trm, lo, 0.0, T), yhi = integrate(trm, hi, 0.0, T);
      const auto dx = pairwise_distance(xp, xq), dy = pairwise_distance(ylo, yhi);
      bool ok = within(ylo, yhi, (hi - lo).lpNorm<1>(), worst_unordered);
      for (std::size_t s = 0; s < dx.size(); ++s) ok &= dx[s] <= dy[s] + 1e-9;
      bad_unordered += !ok;
    }
    const double secs = elapsed(t0);
    return Outcome{bad_ordered == 0 && bad_unordered == 0 && secs < 60.0,
                   fmt("rate %.3e > 0, overshoot %.4f, tau %.1f, %zu verified pairs; 20 ordered pairs %d violations "
                       "(max distance/envelope %.3f), 20 unordered pairs via bracket %d violations (max %.3f); %.1f s < "
                       "60 s",
                       rep.lambda, rep.gamma, rep.tau, rep.samples, bad_ordered, worst_ordered, bad_unordered,
                       worst_unordered, secs)};
  });

  report(9, "nonexpansiveness of the traffic model", [&] {
    std::mt19937_64 rng(909);
    int bad = 0;
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const auto a = integrate(trm, random_state(trm.capacity, rng), 0.0, 30.0);
      const auto b = integrate(trm, random_state(trm.capacity, rng), 0.0, 30.0);
      const auto d = pairwise_distance(a, b);
      bool ok = true;
      for (std::size_t s = 1; s < d.size(); ++s) {
        worst = std::max(worst, d[s] - d[s - 1]);
        if (d[s] > d[s - 1] + 1e-6) ok = false;
      }
      bad += !ok;
    }
    return Outcome{bad == 0, fmt("100 random pairs (n=10), %d violations, largest one-step increase %.2e <= 1e-6", bad,
                                 worst)};
  });

  report(10, "state estimator convergence", [&] {
    if (!trm_rep || trm_rep->verdict != Verdict::CertifiedIES) return Outcome{false, "traffic model not certified"};
    const auto run = run_estimator(trm, 7, std::nullopt, 200.0, {}, &*trm_rep);
    const bool ok = run.certified && run.envelope && run.envelope->size() == run.error.size() && run.reached_time &&
                    *run.reached_time <= run.time_bound && run.below_envelope;
    return Outcome{ok, fmt("initial error %.4f, reached 1e-3 of it at t=%.2f, certified bound %.3e, error below "
                           "envelope on all %zu grid points=%d",
                           run.error.front(), run.reached_time ? *run.reached_time : -1.0, run.time_bound,
                           run.error.size(), run.below_envelope)};
  });

  report(11, "integrator order", [] {
    auto err = [](double h) {
      IntegratorOptions o;
      o.step = h;
      const auto tr = integrate(SystemSpec::linear(kF1), Vector::Ones(2), 0.0, 1.0, o);
      const Vector exact = (Vector(2) << std::exp(-1.0), 2 * std::exp(-1.0)).finished();
      return (tr.final_state() - exact).lpNorm<Eigen::Infinity>();
    };
    const double e1 = err(0.1), e2 = err(0.05), e3 = err(0.025);
    const double r1 = e1 / e2, r2 = e2 / e3;
    return Outcome{r1 >= 12 && r1 <= 20 && r2 >= 12 && r2 <= 20,
                   fmt("errors %.3e, %.3e, %.3e; ratios %.2f and %.2f in [12, 20]", e1, e2, e3, r1, r2)};
  });

  std::printf("%s: %d of 11 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
