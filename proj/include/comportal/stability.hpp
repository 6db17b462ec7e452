#ifndef COMPORTAL_STABILITY_HPP
#define COMPORTAL_STABILITY_HPP

// Certification pipelines:
//   * exponential stability of the null solution for systems whose F(t,x)
//     stays inside a known family (sampled membership + closed-form weights);
//   * the bounded-coefficient classification (certified ES via the infimum
//     matrix, or certified not asymptotically stable via a trap);
//   * incremental exponential stability for the structured class, built from
//     the difference factorization F(y)g(y) - F(x)g(x) = (F(y)+D)(g(y)-g(x)),
//     an absorbing box found by simulating the top corner, and a sampled
//     verification of the certificate on F(y)+D.
//
// Every "certified" verdict is at-samples; the report carries seeds and margins.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "comportal/canonical.hpp"
#include "comportal/certificate.hpp"
#include "comportal/graph.hpp"
#include "comportal/ode.hpp"
#include "comportal/system.hpp"

namespace comportal {

enum class Verdict { CertifiedES, CertifiedIES, CertifiedNotAS, Inconclusive, Refuted };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::CertifiedES: return "certified-ES";
    case Verdict::CertifiedIES: return "certified-IES";
    case Verdict::CertifiedNotAS: return "certified-not-AS";
    case Verdict::Inconclusive: return "inconclusive";
    case Verdict::Refuted: return "refuted";
  }
  return "unknown";
}

/// 0 certified, 2 inconclusive, 3 refuted or certified-not-AS.
inline int exit_code(Verdict v) {
  switch (v) {
    case Verdict::CertifiedES:
    case Verdict::CertifiedIES: return 0;
    case Verdict::Inconclusive: return 2;
    case Verdict::CertifiedNotAS:
    case Verdict::Refuted: return 3;
  }
  return 2;
}

struct ESReport {
  Verdict verdict = Verdict::Inconclusive;
  std::optional<LyapunovCertificate> certificate;
  std::optional<FamilyParams> family;
  std::optional<std::vector<int>> trap;  // 0-based
  std::optional<Permutation> permutation;  // canonicalizing permutation, when one was used
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  double worst_membership_margin = std::numeric_limits<double>::infinity();
  double worst_certificate_margin = std::numeric_limits<double>::infinity();
  struct Witness {
    double t = 0.0;
    Vector x;
    std::string detail;
  };
  std::optional<Witness> witness;
  std::vector<std::string> log;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline std::string describe(const MembershipEvidence& e) {
  std::string s = to_string(e.bound);
  if (e.row) s += " (" + std::to_string(e.row) + "," + std::to_string(e.col) + ")";
  else s += " column " + std::to_string(e.col);
  return s + " value " + fmt(e.value) + " limit " + fmt(e.limit);
}

/// Sample points (t, x): box corners at t = 0 and t = horizon, then Halton points.
template <class Visit>
void for_each_state_sample(const BoxSpace& box, const SamplingOptions& opt, Visit&& visit) {
  if (!box.bounded()) throw InvalidArgument("sampling requires a bounded box");
  const int n = box.size();
  if (n <= opt.max_corner_dim)
    for (std::uint64_t m = 0; m < (std::uint64_t{1} << n); ++m) {
      visit(0.0, box.corner(m));
      visit(opt.horizon, box.corner(m));
    }
  HaltonSampler s(n + 1, opt.seed);
  for (std::size_t k = 1; k <= opt.samples; ++k) {
    const auto u = s.point(k);
    visit(opt.horizon * u[0], box_point(box, u, 1));
  }
}

}  // namespace detail

/// Null-solution ES when F(t,x) lies in `fam` at every sample. A membership
/// failure is inconclusive (the family may simply be the wrong one).
inline ESReport certify_null_ES(const SystemSpec& sys, const FamilyParams& fam, const SamplingOptions& opt = {}) {
  fam.validate();
  if (sys.n != fam.n) throw InvalidArgument("system dimension does not match family");
  ESReport rep;
  rep.seed = opt.seed;
  rep.family = fam;
  const auto cert = theorem1_certificate(fam);
  detail::for_each_state_sample(sys.space, opt, [&](double t, const Vector& x) {
    if (rep.witness) return;
    ++rep.samples;
    if (sys.I) {
      const Vector inflow = sys.I(t, x);
      if (inflow.cwiseAbs().maxCoeff() > opt.tol) {
        rep.witness = ESReport::Witness{t, x, "inflow I(t,x) is not zero"};
        return;
      }
    }
    const Vector gx = sys.g(t, x);
    for (int i = 0; i < sys.n; ++i)
      if (gx(i) < x(i) - opt.tol) {
        rep.witness = ESReport::Witness{t, x, "g_" + std::to_string(i + 1) + "(t,x) < x_" + std::to_string(i + 1)};
        return;
      }
    auto val = validate_compartmental(sys.F(t, x));
    if (!val.accepted()) {
      rep.witness = ESReport::Witness{t, x, "F(t,x) is not compartmental"};
      return;
    }
    const auto mem = family_membership(*val.matrix, fam, opt.tol);
    rep.worst_membership_margin = std::min(rep.worst_membership_margin, mem.worst_margin);
    if (!mem.member) {
      rep.witness = ESReport::Witness{t, x, "membership fails: " + detail::describe(mem.violations.front())};
      return;
    }
    const auto chk = verify_certificate(*val.matrix, cert);
    rep.worst_certificate_margin = std::min(rep.worst_certificate_margin, chk.worst_margin);
    if (!chk.ok) rep.witness = ESReport::Witness{t, x, "certificate fails at column " + std::to_string(chk.worst_column)};
  });
  if (rep.witness) {
    rep.verdict = Verdict::Inconclusive;
    rep.log.push_back("inconclusive at t=" + detail::fmt(rep.witness->t) + ": " + rep.witness->detail);
    return rep;
  }
  rep.verdict = Verdict::CertifiedES;
  rep.certificate = cert;
  rep.log.push_back("F(t,x) in family at " + std::to_string(rep.samples) + " samples (seed " +
                    std::to_string(opt.seed) + "); closed-form weights, rate " + detail::fmt(cert.lambda));
  return rep;
}

// ---------------------------------------------------------------------------
// Bounded coefficients

struct Interval {
  double inf = 0.0;
  double sup = 0.0;
  bool zero() const noexcept { return inf == 0.0 && sup == 0.0; }
};

/// Per-coefficient bounds for F(t,x): each f_rs (flow s -> r) and f0_i is
/// either identically zero ({0,0}) or satisfies 0 < inf <= sup < inf.
struct CoefficientBounds {
  int n = 0;
  std::map<std::pair<int, int>, Interval> flow;
  std::vector<Interval> f0;
  bool estimated = false;  // true when obtained by sampling rather than declared

  void validate() const {
    if (n < 1 || static_cast<int>(f0.size()) != n) throw InvalidArgument("coefficient bounds need n outflow entries");
    auto check = [](const Interval& b, const std::string& what) {
      if (!(b.inf <= b.sup)) throw InvalidArgument("inconsistent bounds for " + what + ": inf > sup");
      if (!b.zero() && !(b.inf > 0 && std::isfinite(b.sup)))
        throw InvalidArgument("bounds for " + what + " must be identically zero or 0 < inf <= sup < infinity");
    };
    for (int i = 0; i < n; ++i) check(f0[i], f0_key(i));
    for (const auto& [k, b] : flow) {
      if (k.first == k.second || k.first < 0 || k.second < 0 || k.first >= n || k.second >= n)
        throw InvalidArgument("flow bound key is not an off-diagonal index");
      check(b, flow_key(k.first, k.second));
    }
  }

  /// Matrix with off-diagonals `pick(bound)` and matching compartmental diagonal.
  template <class Pick>
  Matrix assemble(Pick pick) const {
    FlowParams p;
    p.f0 = Vector(n);
    for (int i = 0; i < n; ++i) p.f0(i) = pick(f0[i]);
    p.f = Matrix::Zero(n, n);
    for (const auto& [k, b] : flow) p.f(k.first, k.second) = pick(b);
    return p.to_matrix();
  }
};

/// Sampled inf/sup of every coefficient; values below `zero_tol` in absolute
/// value everywhere count as identically zero.
inline CoefficientBounds estimate_bounds(const StructuredSystem& sys, double horizon = 10.0, int time_samples = 17,
                                         std::size_t state_samples = 129, double zero_tol = 1e-12) {
  sys.validate();
  CoefficientBounds b;
  b.n = sys.n;
  b.estimated = true;
  auto range = [&](const ScalarFn& f, double c) {
    Interval r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (double t : time_grid(horizon, time_samples))
      for (std::size_t k = 0; k < state_samples; ++k) {
        const double v = f(t, c * static_cast<double>(k) / static_cast<double>(state_samples - 1));
        r.inf = std::min(r.inf, v);
        r.sup = std::max(r.sup, v);
      }
    if (std::abs(r.inf) <= zero_tol && std::abs(r.sup) <= zero_tol) return Interval{};
    return r;
  };
  for (int i = 0; i < sys.n; ++i) b.f0.push_back(range(sys.f0[i], sys.capacity(i)));
  for (const auto& [k, f] : sys.flow) b.flow[k] = range(f, sys.capacity(k.first));
  return b;
}

/// G = matrix of infima. Outflow connected: canonicalize G and certify the
/// whole family of matrices between the infimum and supremum assemblies.
/// Otherwise: the trap of G conserves mass, so the null solution is not AS.
inline ESReport classify_bounded_coefficients(const CoefficientBounds& bounds, std::size_t verify_samples = 512,
                                              std::uint64_t seed = 1) {
  bounds.validate();
  ESReport rep;
  rep.seed = seed;
  if (bounds.estimated) rep.log.push_back("bounds estimated by sampling, not declared");
  const auto G = CompartmentalMatrix::from(bounds.assemble([](const Interval& b) { return b.inf; }));
  const Matrix Gsup = bounds.assemble([](const Interval& b) { return b.sup; });
  const auto trap = check_outflow_connected(build_graph(G));
  if (!trap.is_outflow_connected) {
    rep.verdict = Verdict::CertifiedNotAS;
    rep.trap = trap.trap;
    std::string k;
    for (int v : *trap.trap) k += (k.empty() ? "" : ",") + std::to_string(v + 1);
    rep.log.push_back("G has trap K={" + k + "}: no positive infimum leaves K, so sum over K of q_i(t) >= sum over K of xi_i");
    return rep;
  }
  const auto canon = canonicalize(G);
  auto fam = fit_family(canon.A, canon.witness.l);
  const Matrix sup_canon = conjugate(Gsup, canon.r);
  for (int j = 0; j < fam.n; ++j)
    for (int i = 0; i < j; ++i) fam.b = std::max(fam.b, sup_canon(i, j));
  auto cert_c = theorem1_certificate(fam);
  const auto cert_b = theorem1_certificate(fam, SigmaPolicy::balanced().resolve(fam));
  if (cert_b.lambda > cert_c.lambda) cert_c = cert_b;
  Vector v(fam.n);
  for (int i = 0; i < fam.n; ++i) v(canon.r(i)) = cert_c.v(i);
  auto cert = LyapunovCertificate::make(std::move(v), cert_c.lambda, LyapunovCertificate::Source::Theorem1);

  // Every matrix with coefficients inside the declared intervals.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < verify_samples + 2; ++k) {
    const Matrix M = k == 0 ? G.matrix()
                     : k == 1 ? Gsup
                              : bounds.assemble([&](const Interval& b) { return b.inf + u(rng) * (b.sup - b.inf); });
    const auto chk = verify_certificate(M, cert);
    ++rep.samples;
    rep.worst_certificate_margin = std::min(rep.worst_certificate_margin, chk.worst_margin);
    if (!chk.ok) {
      rep.verdict = Verdict::Inconclusive;
      rep.log.push_back("certificate fails on a coefficient sample, column " + std::to_string(chk.worst_column));
      return rep;
    }
  }
  rep.verdict = Verdict::CertifiedES;
  rep.family = fam;
  rep.certificate = cert;
  rep.permutation = canon.r;
  rep.log.push_back("G outflow connected; canonical index l=" + std::to_string(fam.l) + ", rate " +
                    detail::fmt(cert.lambda));
  return rep;
}

// ---------------------------------------------------------------------------
// Difference factorization

struct DMatrixFactorization {
  Matrix D;
  double residual = 0.0;  // |F(y)g(y) - F(x)g(x) - (F(y)+D)(g(y)-g(x))|_inf
  double b_tilde = std::numeric_limits<double>::quiet_NaN();
};

/// For x <= y:
///   D_ij = g_i(x_i) (f_ji(x_j) - f_ji(y_j)) / (g_j(y_j) - g_j(x_j))   (i != j, x_j < y_j)
///   d0_i = g_i(x_i) (f0_i(y_i) - f0_i(x_i)) / (g_i(y_i) - g_i(x_i))
///   D_ii = -d0_i - sum_{j != i} D_ji
/// so every column of D sums to -d0_i. Negative terms name the assumption
/// (slope of g, monotone f, monotone f0) that failed.
inline DMatrixFactorization build_D(const StructuredSystem& sys, double t, const Vector& x, const Vector& y,
                                    double tol = 1e-12) {
  const int n = sys.n;
  if (x.size() != n || y.size() != n) throw InvalidArgument("state dimension does not match system");
  if (((y - x).array() < 0).any()) throw PreconditionError("build_D requires x <= y componentwise");
  const Vector gx = sys.gvec(t, x), gy = sys.gvec(t, y);
  const Vector dg = gy - gx;
  for (int i = 0; i < n; ++i)
    if (dg(i) < (y(i) - x(i)) - tol * std::max(1.0, std::abs(gy(i))))
      throw AssumptionViolation("A3", "g_" + std::to_string(i + 1) + " grows slower than its argument between " +
                                          detail::fmt(x(i)) + " and " + detail::fmt(y(i)));
  DMatrixFactorization out;
  out.D = Matrix::Zero(n, n);
  for (const auto& [key, f] : sys.flow) {
    // key (j, i): coefficient f_ji(t, x_j), contributes to D_ij.
    const int j = key.first, i = key.second;
    if (!(dg(j) > 0)) continue;
    const double num = f(t, x(j)) - f(t, y(j));
    if (num < -tol)
      throw AssumptionViolation("A4", flow_key(j, i) + " increases between " + detail::fmt(x(j)) + " and " +
                                          detail::fmt(y(j)));
    out.D(i, j) = gx(i) * std::max(num, 0.0) / dg(j);
  }
  for (int i = 0; i < n; ++i) {
    double d0 = 0.0;
    if (dg(i) > 0) {
      const double num = sys.f0[i](t, y(i)) - sys.f0[i](t, x(i));
      if (num < -tol)
        throw AssumptionViolation("A5", f0_key(i) + " decreases between " + detail::fmt(x(i)) + " and " +
                                            detail::fmt(y(i)));
      d0 = gx(i) * std::max(num, 0.0) / dg(i);
    }
    double off = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) off += out.D(j, i);
    out.D(i, i) = -d0 - off;
  }
  const Matrix Fx = sys.F(t, x), Fy = sys.F(t, y);
  out.residual = (Fy * gy - Fx * gx - (Fy + out.D) * dg).lpNorm<Eigen::Infinity>();
  return out;
}

/// b~ = max over i != j of sup g_i * Lip(f_ji). Restricted to i < j when
/// `upper_only` (the above-diagonal bound used by the family).
inline double compute_b_tilde(const StructuredSystem& sys, double horizon = 10.0, bool upper_only = true) {
  double b = 0.0;
  for (const auto& [key, f] : sys.flow) {
    const int j = key.first, i = key.second;
    if (upper_only && !(i < j)) continue;
    double gbar = 0.0;
    for (double t : time_grid(horizon, 9)) gbar = std::max(gbar, sys.g[i](t, sys.capacity(i)));
    b = std::max(b, gbar * lipschitz_estimate(sys, flow_key(j, i), f, sys.capacity(j), horizon));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Absorbing box

/// Constants for the top-corner argument on a chain 1 -> 2 -> ... -> n:
///   L_i bounds the growth of x_i near capacity, x_i' <= L_i (c_i - x_i) - x_i h_{i+1}(x_{i+1}),
///   a_n bounds the outflow coefficient of the last compartment from below,
///   h[i] (i >= 1) bounds f_{i,i-1} from below as a function of x_i.
struct AbsorbingBoxBounds {
  Vector L;
  double a_n = 0.0;
  std::vector<std::function<double(double)>> h;  // h[0] unused
};

struct AbsorbingBox {
  Vector s;           // upper corner of S; s(0) = c_1
  Vector threshold;   // b_i; threshold(0) unused (NaN)
  Vector corner_at_tau;
  double tau = 0.0;
  bool ensemble_passed = false;
  std::size_t ensemble_size = 0;
  double ensemble_worst_margin = std::numeric_limits<double>::infinity();  // min of s_i - phi_i(t), t >= tau
  std::vector<std::string> log;
};

class AbsorbingBoxError : public PreconditionError {
public:
  using PreconditionError::PreconditionError;
};

/// Chain structure: f_{i+1,i} present for every i < n, and the last compartment
/// leaks. Returns the bounds with L_i = sup-rate of inflow plus incoming
/// coupling, or nullopt when the system is not a chain or a_n <= 0.
inline std::optional<AbsorbingBoxBounds> derive_absorbing_box_bounds(const StructuredSystem& sys, double horizon,
                                                                     std::vector<std::string>* why = nullptr) {
  const int n = sys.n;
  auto note = [&](const std::string& s) {
    if (why) why->push_back(s);
  };
  for (int i = 0; i + 1 < n; ++i)
    if (!sys.flow_fn(i + 1, i)) {
      note("no coefficient " + flow_key(i + 1, i) + "; the system is not a chain");
      return std::nullopt;
    }
  const auto ts = time_grid(horizon, 33);
  AbsorbingBoxBounds b;
  b.a_n = std::numeric_limits<double>::infinity();
  for (double t : ts) b.a_n = std::min(b.a_n, sys.f0[n - 1](t, 0.0));
  if (!(b.a_n > 0)) {
    note("outflow of the last compartment has infimum " + detail::fmt(b.a_n) + " <= 0");
    return std::nullopt;
  }
  b.L = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    double L = lipschitz_estimate(sys, inflow_key(i), sys.inflow[i], sys.capacity(i), horizon);
    for (const auto& [key, f] : sys.flow) {
      if (key.first != i) continue;
      const int j = key.second;
      double gbar = 0.0;
      for (double t : ts) gbar = std::max(gbar, sys.g[j](t, sys.capacity(j)));
      L += lipschitz_estimate(sys, flow_key(i, j), f, sys.capacity(i), horizon) * gbar;
    }
    b.L(i) = L;
  }
  b.h.resize(n);
  for (int i = 1; i < n; ++i) {
    const ScalarFn f = *sys.flow_fn(i, i - 1);
    b.h[i] = [f, ts](double z) {
      double m = std::numeric_limits<double>::infinity();
      for (double t : ts) m = std::min(m, f(t, z));
      return m;
    };
  }
  return b;
}

struct AbsorbingBoxOptions {
  double tau = 5.0;
  double s_fraction = 0.5;         // s_i = lo + s_fraction (c_i - lo); 0.5 is the midpoint
  double horizon = 20.0;           // ensemble checks phi_i(t) <= s_i on [tau, horizon]
  std::size_t ensemble = 32;       // random initial states besides the corners
  std::uint64_t seed = 1;
  IntegratorOptions integrator{};
  double tol = 1e-7;
};

/// Backward from i = n: b_i = c_i L_i / (L_i + h_{i+1}(s_{i+1})) (with
/// h_{n+1}(s_{n+1}) := a_n), s_i inside (max(b_i, y_i(tau)), c_i) where
/// y is the trajectory from the top corner. Once y_{i+1} <= s_{i+1}, x_i > b_i
/// forces x_i' < 0, so y_i never returns above s_i.
inline AbsorbingBox compute_absorbing_box(const StructuredSystem& sys, const AbsorbingBoxBounds& bounds,
                                          const AbsorbingBoxOptions& opt = {}) {
  const int n = sys.n;
  if (bounds.L.size() != n || static_cast<int>(bounds.h.size()) != n)
    throw InvalidArgument("absorbing-box bounds need n entries");
  if (!(opt.tau > 0)) throw InvalidArgument("tau must be positive");
  if (!(opt.s_fraction > 0 && opt.s_fraction < 1)) throw InvalidArgument("s_fraction must lie in (0, 1)");
  AbsorbingBox box;
  box.tau = opt.tau;
  const Vector c = sys.capacity;
  const auto corner = integrate(sys, c, 0.0, opt.tau, opt.integrator);
  box.corner_at_tau = corner.final_state();
  box.s = c;
  box.threshold = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
  for (int i = n - 1; i >= 1; --i) {
    const double pull = i == n - 1 ? bounds.a_n : bounds.h[i + 1](box.s(i + 1));
    const double L = bounds.L(i);
    const double b = L == 0.0 ? 0.0 : c(i) * L / (L + pull);
    box.threshold(i) = b;
    const double lo = std::max(b, box.corner_at_tau(i));
    if (!(lo < c(i)))
      throw AbsorbingBoxError("tau too small for these bounds: compartment " + std::to_string(i + 1) +
                              " has threshold " + detail::fmt(b) + " and corner value " +
                              detail::fmt(box.corner_at_tau(i)) + " against capacity " + detail::fmt(c(i)));
    box.s(i) = lo + opt.s_fraction * (c(i) - lo);
    box.log.push_back("s_" + std::to_string(i + 1) + " = " + detail::fmt(box.s(i)) + " (threshold " + detail::fmt(b) +
                      ", corner at tau " + detail::fmt(box.corner_at_tau(i)) + ")");
  }
  if (n == 1) box.log.push_back("n = 1: the absorbing box is the whole state space");

  // Ensemble: every corner for n <= 6, otherwise the top corner plus random
  // corners; then random interior states.
  std::vector<Vector> starts;
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (n <= 6) {
    for (std::uint64_t m = 0; m < (std::uint64_t{1} << n); ++m) starts.push_back(sys.space().corner(m));
  } else {
    starts.push_back(c);
    std::uniform_int_distribution<std::uint64_t> mask(0, (std::uint64_t{1} << std::min(n, 62)) - 1);
    for (std::size_t k = 0; k < opt.ensemble; ++k) starts.push_back(sys.space().corner(mask(rng)));
  }
  for (std::size_t k = 0; k < opt.ensemble; ++k) {
    Vector x(n);
    for (int i = 0; i < n; ++i) x(i) = u(rng) * c(i);
    starts.push_back(x);
  }
  const auto trajs = integrate_ensemble([&sys](double t, const Vector& x) { return sys.rhs(t, x); }, sys.space(),
                                        starts, 0.0, std::max(opt.horizon, opt.tau), opt.integrator);
  for (const auto& tr : trajs)
    for (std::size_t k = 0; k < tr.size(); ++k) {
      if (tr.times[k] < opt.tau) continue;
      box.ensemble_worst_margin = std::min(box.ensemble_worst_margin, (box.s - tr.states[k]).minCoeff());
    }
  box.ensemble_size = starts.size();
  box.ensemble_passed = box.ensemble_worst_margin >= -opt.tol;
  box.log.push_back("ensemble of " + std::to_string(starts.size()) + " trajectories stays in S after tau: " +
                    (box.ensemble_passed ? "yes" : "no") + " (worst margin " +
                    detail::fmt(box.ensemble_worst_margin) + ")");
  box.log.push_back("the top-corner trajectory dominates every trajectory by the ordering property of cooperative systems");
  return box;
}

// ---------------------------------------------------------------------------
// Incremental exponential stability

struct IESOptions {
  SamplingOptions sampling{};         // pair samples for the final verification
  std::size_t precheck_samples = 1024;
  AbsorbingBoxOptions box{};
  int time_samples = 33;              // grid for infima/suprema over time
  bool use_absorbing_box = true;
};

struct IESReport {
  Verdict verdict = Verdict::Inconclusive;
  std::string stage;   // failing stage when inconclusive
  std::string detail;  // witness or reason
  std::optional<AbsorbingBox> absorbing_box;
  Vector s;            // upper corner of S
  double tau = 0.0;
  std::optional<FamilyParams> family;
  std::optional<Permutation> permutation;
  std::optional<LyapunovCertificate> certificate;
  double lambda = 0.0;
  double gamma = 0.0;  // e^{lambda tau} max v / min v
  double b_tilde = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  double worst_membership_margin = std::numeric_limits<double>::infinity();
  double worst_certificate_margin = std::numeric_limits<double>::infinity();
  double worst_residual = 0.0;
  std::vector<AssumptionCheck> assumptions;
  std::vector<std::string> log;
};

/// Family for F(t,y)+D(t,x,y) over ordered pairs in S = [0, s]. Under the
/// monotone assumptions the binding values sit at the corners: downstream
/// coefficients are smallest at y = s, outflows at y = 0, and above-diagonal
/// coefficients largest at y = 0 (then inflated by b~).
inline Canonicalization structured_lower_matrix(const StructuredSystem& sys, const Vector& s, int time_samples,
                                                double horizon, Vector& leaks, Matrix& upper) {
  const int n = sys.n;
  const auto ts = time_grid(horizon, time_samples);
  FlowParams p;
  p.f0 = Vector(n);
  p.f = Matrix::Zero(n, n);
  upper = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double m = std::numeric_limits<double>::infinity();
    for (double t : ts) m = std::min(m, sys.f0[i](t, 0.0));
    p.f0(i) = std::max(m, 0.0);
  }
  for (const auto& [key, f] : sys.flow) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (double t : ts) {
      lo = std::min(lo, f(t, s(key.first)));
      hi = std::max(hi, f(t, 0.0));
    }
    p.f(key.first, key.second) = std::max(lo, 0.0);
    upper(key.first, key.second) = hi;
  }
  leaks = p.f0;
  return canonicalize(CompartmentalMatrix::from(p.to_matrix()));
}

inline IESReport certify_IES(const StructuredSystem& sys, const IESOptions& opt = {}) {
  sys.validate();
  IESReport rep;
  rep.seed = opt.sampling.seed;
  const double T = opt.sampling.horizon;
  auto fail = [&](std::string stage, std::string detail) {
    rep.verdict = Verdict::Inconclusive;
    rep.stage = std::move(stage);
    rep.detail = std::move(detail);
    rep.log.push_back("stage " + rep.stage + ": " + rep.detail);
    return rep;
  };

  // Structural assumptions and sampled cooperativity / nonexpansiveness.
  rep.assumptions = check_structure(sys, T);
  for (const auto& a : rep.assumptions)
    if (!a.passed && !a.advisory) return fail("assumptions", a.assumption + " fails for " + a.subject + ": " + a.detail);
  for (const auto& a : rep.assumptions)
    if (!a.passed && a.advisory) rep.log.push_back("advisory: " + a.assumption + " fails for " + a.subject);
  const auto spec = sys.to_system_spec();
  SamplingOptions pre = opt.sampling;
  pre.samples = opt.precheck_samples;
  const auto tk = check_type_K(spec, pre);
  if (!tk.passed) return fail("type-K", "cooperativity violated in component " + std::to_string(tk.witness->component));
  const auto ne = check_nonexpansive_condition(spec, pre);
  if (!ne.passed) return fail("nonexpansive", "sum condition violated, margin " + detail::fmt(ne.worst_margin));
  rep.log.push_back("type K and nonexpansive sum condition hold at " + std::to_string(tk.samples) + " and " +
                    std::to_string(ne.samples) + " samples");

  // Absorbing box.
  rep.s = sys.capacity;
  rep.tau = 0.0;
  if (opt.use_absorbing_box) {
    std::vector<std::string> why;
    if (auto bounds = derive_absorbing_box_bounds(sys, T, &why)) {
      try {
        auto box = compute_absorbing_box(sys, *bounds, opt.box);
        if (!box.ensemble_passed) return fail("absorbing-box", "ensemble leaves S after tau");
        rep.s = box.s;
        rep.tau = box.tau;
        for (const auto& l : box.log) rep.log.push_back(l);
        rep.absorbing_box = std::move(box);
      } catch (const AbsorbingBoxError& e) {
        return fail("absorbing-box", e.what());
      }
    } else {
      for (const auto& w : why) rep.log.push_back("absorbing box skipped: " + w);
    }
  }

  // Family on S.
  rep.b_tilde = compute_b_tilde(sys, T);
  Vector leaks;
  Matrix upper;
  std::optional<Canonicalization> canon;
  try {
    canon = structured_lower_matrix(sys, rep.s, opt.time_samples, T, leaks, upper);
  } catch (const NotOutflowConnectedError&) {
    return fail("family", "the lower-bound matrix on S is not outflow connected (no leak reachable)");
  }
  FamilyParams fam;
  try {
    fam = fit_family(canon->A, canon->witness.l);
  } catch (const InvalidArgument& e) {
    return fail("family", e.what());
  }
  const Matrix upper_c = conjugate(upper, canon->r);
  double b = 0.0;
  for (int j = 0; j < sys.n; ++j)
    for (int i = 0; i < j; ++i) b = std::max(b, upper_c(i, j));
  fam.b = b + rep.b_tilde;
  rep.family = fam;
  rep.permutation = canon->r;

  // Certificate (better rate of the two sigma choices).
  auto cert_c = theorem1_certificate(fam);
  const auto alt = theorem1_certificate(fam, SigmaPolicy::balanced().resolve(fam));
  if (alt.lambda > cert_c.lambda) cert_c = alt;
  Vector v(sys.n);
  for (int i = 0; i < sys.n; ++i) v(canon->r(i)) = cert_c.v(i);
  v /= v.maxCoeff();  // scale-free; keeps the verification tolerance absolute
  auto cert = LyapunovCertificate::make(std::move(v), cert_c.lambda, LyapunovCertificate::Source::Theorem1);

  // Verification on ordered pairs in S.
  const BoxSpace S{Vector::Zero(sys.n), rep.s};
  std::string failure;
  SamplingOptions ver = opt.sampling;
  detail::for_each_ordered_pair(S, ver, [&](double t, const Vector& x, const Vector& y) {
    if (!failure.empty()) return;
    ++rep.samples;
    DMatrixFactorization d;
    try {
      d = build_D(sys, t, x, y);
    } catch (const AssumptionViolation& e) {
      failure = e.what();
      return;
    }
    rep.worst_residual = std::max(rep.worst_residual, d.residual);
    const Matrix M = sys.F(t, y) + d.D;
    auto val = validate_compartmental(M, 1e-10);
    if (!val.accepted()) {
      failure = "F(y)+D is not compartmental at t=" + detail::fmt(t);
      return;
    }
    const auto mem = family_membership(conjugate_by_permutation(*val.matrix, canon->r), fam, opt.sampling.tol);
    rep.worst_membership_margin = std::min(rep.worst_membership_margin, mem.worst_margin);
    if (!mem.member) {
      failure = "F(y)+D leaves the family: " + detail::describe(mem.violations.front());
      return;
    }
    const auto chk = verify_certificate(M, cert);
    rep.worst_certificate_margin = std::min(rep.worst_certificate_margin, chk.worst_margin);
    if (!chk.ok) failure = "certificate fails at column " + std::to_string(chk.worst_column);
  });
  if (!failure.empty()) return fail("verification", failure);

  rep.certificate = cert;
  rep.lambda = cert.lambda;
  rep.gamma = std::exp(cert.lambda * rep.tau) * cert.v.maxCoeff() / cert.v.minCoeff();
  rep.verdict = Verdict::CertifiedIES;
  rep.log.push_back("certified at " + std::to_string(rep.samples) + " ordered pairs in S (seed " +
                    std::to_string(rep.seed) + "): rate " + detail::fmt(rep.lambda) + ", overshoot " +
                    detail::fmt(rep.gamma));
  return rep;
}

}  // namespace comportal

#endif  // COMPORTAL_STABILITY_HPP
