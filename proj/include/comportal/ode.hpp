#ifndef COMPORTAL_ODE_HPP
#define COMPORTAL_ODE_HPP

// Explicit Runge-Kutta integration on a box with project-or-reject handling
// of box exits, plus trajectory-level measurements (decay fits, pairwise
// distances, ordering checks) and plain-text exports.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "comportal/system.hpp"

namespace comportal {

using Rhs = std::function<Vector(double, const Vector&)>;

enum class Method { RK4, DormandPrince45 };

inline std::string to_string(Method m) { return m == Method::RK4 ? "rk4" : "dopri45"; }

struct IntegratorOptions {
  Method method = Method::RK4;
  double step = 1e-2;        // fixed step (RK4) or initial step (adaptive)
  double rtol = 1e-8;        // adaptive only
  double atol = 1e-10;       // adaptive only
  double max_step = 0.1;     // adaptive only
  double proj_tol = 1e-9;    // exits up to this size are projected back
  double min_step = 1e-12;
  std::size_t record_every = 1;  // keep every k-th accepted step (endpoints always kept)
};

/// h = min(0.01, 0.1 / Lipschitz estimate).
inline double default_step(double lipschitz) {
  return lipschitz > 0 ? std::min(0.01, 0.1 / lipschitz) : 0.01;
}

struct ProjectionEvent {
  double t;
  int component;  // 1-based
  double amount;  // distance moved back into the box
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Vector> derivs;  // rhs at each stored state, for Hermite output
  struct Meta {
    Method method = Method::RK4;
    double step = 0.0;
    double proj_tol = 0.0;
    std::size_t accepted_steps = 0;
    std::size_t rejected_steps = 0;
    std::vector<ProjectionEvent> projections;
    double projected_mass = 0.0;
  } meta;

  std::size_t size() const noexcept { return times.size(); }
  int dim() const { return states.empty() ? 0 : static_cast<int>(states.front().size()); }
  double t0() const { return times.front(); }
  double t1() const { return times.back(); }
  const Vector& final_state() const { return states.back(); }

  /// Cubic Hermite interpolation between stored grid points.
  Vector at(double t) const {
    if (times.empty()) throw InvalidArgument("empty trajectory");
    if (t <= times.front()) return states.front();
    if (t >= times.back()) return states.back();
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t k = static_cast<std::size_t>(it - times.begin()) - 1;
    const double h = times[k + 1] - times[k];
    const double s = (t - times[k]) / h;
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
    return h00 * states[k] + h10 * h * derivs[k] + h01 * states[k + 1] + h11 * h * derivs[k + 1];
  }
};

namespace detail {

inline Vector rk4_step(const Rhs& f, double t, const Vector& x, const Vector& k1, double h) {
  const Vector k2 = f(t + h / 2, x + h / 2 * k1);
  const Vector k3 = f(t + h / 2, x + h / 2 * k2);
  const Vector k4 = f(t + h, x + h * k3);
  return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
}

/// Returns the 5th-order solution; `err` receives the embedded error estimate.
inline Vector dopri_step(const Rhs& f, double t, const Vector& x, const Vector& k1, double h, Vector& err) {
  const Vector k2 = f(t + h / 5, x + h * (k1 / 5));
  const Vector k3 = f(t + 3 * h / 10, x + h * (3.0 / 40 * k1 + 9.0 / 40 * k2));
  const Vector k4 = f(t + 4 * h / 5, x + h * (44.0 / 45 * k1 - 56.0 / 15 * k2 + 32.0 / 9 * k3));
  const Vector k5 = f(t + 8 * h / 9, x + h * (19372.0 / 6561 * k1 - 25360.0 / 2187 * k2 + 64448.0 / 6561 * k3 -
                                              212.0 / 729 * k4));
  const Vector k6 = f(t + h, x + h * (9017.0 / 3168 * k1 - 355.0 / 33 * k2 + 46732.0 / 5247 * k3 +
                                      49.0 / 176 * k4 - 5103.0 / 18656 * k5));
  const Vector y5 =
      x + h * (35.0 / 384 * k1 + 500.0 / 1113 * k3 + 125.0 / 192 * k4 - 2187.0 / 6784 * k5 + 11.0 / 84 * k6);
  const Vector k7 = f(t + h, y5);
  const Vector y4 = x + h * (5179.0 / 57600 * k1 + 7571.0 / 16695 * k3 + 393.0 / 640 * k4 -
                             92097.0 / 339200 * k5 + 187.0 / 2100 * k6 + 1.0 / 40 * k7);
  err = y5 - y4;
  return y5;
}

/// Largest exit of x from the box and its component, or (0, -1).
inline std::pair<double, int> box_exit(const BoxSpace& box, const Vector& x) {
  double worst = 0.0;
  int comp = -1;
  for (int i = 0; i < x.size(); ++i) {
    const double e = std::max(box.lower(i) - x(i), x(i) - box.upper(i));
    if (e > worst) {
      worst = e;
      comp = i;
    }
  }
  return {worst, comp};
}

}  // namespace detail

/// Integrates x' = f(t, x) from xi over [t0, t1]. After every step a state
/// that left the box by at most proj_tol is projected back (and logged);
/// larger exits reject the step and halve it. Throws StepUnderflowError once
/// the step would drop below min_step.
inline Trajectory integrate(const Rhs& f, const BoxSpace& box, const Vector& xi, double t0, double t1,
                            const IntegratorOptions& opt = {}) {
  if (!(t1 > t0)) throw InvalidArgument("integration needs t1 > t0");
  if (xi.size() != box.size()) throw InvalidArgument("initial state dimension does not match box");
  if (!box.contains(xi, opt.proj_tol)) throw InvalidArgument("initial state lies outside the box");
  if (!(opt.step > 0)) throw InvalidArgument("step must be positive");

  Trajectory tr;
  tr.meta.method = opt.method;
  tr.meta.step = opt.step;
  tr.meta.proj_tol = opt.proj_tol;
  Vector x = xi.cwiseMax(box.lower).cwiseMin(box.upper);
  double t = t0;
  Vector k1 = f(t, x);
  tr.times.push_back(t);
  tr.states.push_back(x);
  tr.derivs.push_back(k1);

  double h = std::min(opt.step, t1 - t0);
  std::size_t since_record = 0;
  // Consecutive accepted steps that had to be shrunk and then projected: the
  // field keeps pointing out of the box, so progress would stall at ~proj_tol.
  int forced_projections = 0;
  constexpr int kMaxForcedProjections = 64;
  bool shrunk_for_exit = false;
  const double t_eps = 1e-12 * std::max(1.0, std::abs(t1));
  while (t1 - t > t_eps) {
    const double h_try = std::min(h, t1 - t);
    Vector x_new;
    double err_norm = 0.0;
    if (opt.method == Method::RK4) {
      x_new = detail::rk4_step(f, t, x, k1, h_try);
    } else {
      Vector err;
      x_new = detail::dopri_step(f, t, x, k1, h_try, err);
      const Vector scale = (opt.atol + opt.rtol * x.cwiseAbs().cwiseMax(x_new.cwiseAbs()).array()).matrix();
      err_norm = std::sqrt((err.array() / scale.array()).square().mean());
    }
    const auto [exit, comp] = detail::box_exit(box, x_new);
    const bool exit_bad = exit > opt.proj_tol;
    const bool err_bad = opt.method == Method::DormandPrince45 && err_norm > 1.0;
    if (exit_bad || err_bad || !x_new.allFinite()) {
      ++tr.meta.rejected_steps;
      shrunk_for_exit |= exit_bad;
      h = h_try / 2;
      if (err_bad && !exit_bad) h = h_try * std::max(0.2, 0.9 * std::pow(err_norm, -0.2));
      if (h < opt.min_step)
        throw StepUnderflowError("step underflow: state leaves the box at component " + std::to_string(comp + 1) +
                                     " near t=" + std::to_string(t),
                                 comp + 1, t);
      continue;
    }
    forced_projections = exit > 0 && shrunk_for_exit ? forced_projections + 1 : 0;
    shrunk_for_exit = false;
    if (forced_projections > kMaxForcedProjections)
      throw StepUnderflowError("state keeps leaving the box at component " + std::to_string(comp + 1) +
                                   " near t=" + std::to_string(t),
                               comp + 1, t);
    if (exit > 0) {
      for (int i = 0; i < x_new.size(); ++i) {
        const double moved = std::max(box.lower(i) - x_new(i), x_new(i) - box.upper(i));
        if (moved > 0) {
          tr.meta.projections.push_back({t + h_try, i + 1, moved});
          tr.meta.projected_mass += moved;
        }
      }
      x_new = x_new.cwiseMax(box.lower).cwiseMin(box.upper);
    }
    t += h_try;
    x = std::move(x_new);
    k1 = f(t, x);
    ++tr.meta.accepted_steps;
    const bool last = !(t1 - t > t_eps);
    if (++since_record >= opt.record_every || last) {
      since_record = 0;
      tr.times.push_back(last ? t1 : t);
      tr.states.push_back(x);
      tr.derivs.push_back(k1);
    }
    if (opt.method == Method::RK4) {
      h = opt.step;
    } else {
      const double grow = err_norm > 0 ? 0.9 * std::pow(err_norm, -0.2) : 5.0;
      h = std::min(opt.max_step, h_try * std::clamp(grow, 0.2, 5.0));
    }
  }
  return tr;
}

inline Trajectory integrate(const SystemSpec& sys, const Vector& xi, double t0, double t1,
                            const IntegratorOptions& opt = {}) {
  return integrate([&sys](double t, const Vector& x) { return sys.rhs(t, x); }, sys.space, xi, t0, t1, opt);
}

inline Trajectory integrate(const StructuredSystem& sys, const Vector& xi, double t0, double t1,
                            const IntegratorOptions& opt = {}) {
  return integrate([&sys](double t, const Vector& x) { return sys.rhs(t, x); }, sys.space(), xi, t0, t1, opt);
}

/// Integrates every initial state; runs concurrently, results in input order.
inline std::vector<Trajectory> integrate_ensemble(const Rhs& f, const BoxSpace& box, const std::vector<Vector>& initials,
                                                  double t0, double t1, const IntegratorOptions& opt = {}) {
  const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<Trajectory> out(initials.size());
  for (std::size_t begin = 0; begin < initials.size(); begin += workers) {
    std::vector<std::future<Trajectory>> batch;
    const std::size_t end = std::min(initials.size(), begin + workers);
    for (std::size_t k = begin; k < end; ++k)
      batch.push_back(std::async(std::launch::async, [&, k] { return integrate(f, box, initials[k], t0, t1, opt); }));
    for (std::size_t k = begin; k < end; ++k) out[k] = batch[k - begin].get();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Measurements

struct DecayFit {
  double gamma_hat = 0.0;
  double lambda_hat = 0.0;
  double residual = 0.0;  // RMS of the log-linear fit
  std::size_t points = 0;
  double window_begin = 0.0;
  double window_end = 0.0;
  bool exact_zero = false;  // the measure vanished; fit uses the prefix before zero
  bool degenerate = false;  // fewer than two usable points
};

/// Least-squares fit of log m(t) = log gamma - lambda t over [w0, w1].
inline DecayFit fit_exponential(const std::vector<double>& times, const std::vector<double>& values, double w0,
                                double w1) {
  if (times.size() != values.size()) throw InvalidArgument("times and values differ in length");
  DecayFit fit;
  fit.window_begin = w0;
  fit.window_end = w1;
  std::vector<double> ts, ls;
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(values[k] > 0)) {
      fit.exact_zero = true;
      break;
    }
    if (times[k] < w0 || times[k] > w1) continue;
    ts.push_back(times[k]);
    ls.push_back(std::log(values[k]));
  }
  fit.points = ts.size();
  if (ts.size() < 2) {
    fit.degenerate = true;
    return fit;
  }
  const double n = static_cast<double>(ts.size());
  double st = 0, sl = 0, stt = 0, stl = 0;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    st += ts[k];
    sl += ls[k];
    stt += ts[k] * ts[k];
    stl += ts[k] * ls[k];
  }
  const double den = n * stt - st * st;
  if (!(den > 0)) {
    fit.degenerate = true;
    return fit;
  }
  const double slope = (n * stl - st * sl) / den;
  const double icpt = (sl - slope * st) / n;
  fit.lambda_hat = -slope;
  fit.gamma_hat = std::exp(icpt);
  double ss = 0;
  for (std::size_t k = 0; k < ts.size(); ++k) ss += std::pow(ls[k] - (icpt + slope * ts[k]), 2);
  fit.residual = std::sqrt(ss / n);
  return fit;
}

/// Fits the weighted mass sum_i v_i x_i(t) (the 1-norm when v is all ones)
/// over [t0 + 0.2 (T - t0), T] unless a window is given.
inline DecayFit measure_norm_decay(const Trajectory& tr, const std::optional<Vector>& weights = std::nullopt,
                                   std::optional<std::pair<double, double>> window = std::nullopt) {
  if (tr.size() == 0) throw InvalidArgument("empty trajectory");
  const Vector v = weights ? *weights : Vector::Ones(tr.dim());
  if (v.size() != tr.dim()) throw InvalidArgument("weight dimension does not match trajectory");
  std::vector<double> m(tr.size());
  for (std::size_t k = 0; k < tr.size(); ++k) m[k] = v.dot(tr.states[k]);
  const double span = tr.t1() - tr.t0();
  const auto w = window ? *window : std::make_pair(tr.t0() + 0.2 * span, tr.t1());
  auto fit = fit_exponential(tr.times, m, w.first, w.second);
  if (fit.exact_zero && fit.degenerate) {
    // Vanishing before the window: fall back to the whole nonzero prefix.
    auto prefix = fit_exponential(tr.times, m, tr.t0(), w.second);
    if (!prefix.degenerate) return prefix;
  }
  return fit;
}

/// |x1(t) - x2(t)|_1 on the grid of `a`; `b` is interpolated when grids differ.
inline std::vector<double> pairwise_distance(const Trajectory& a, const Trajectory& b) {
  if (a.dim() != b.dim()) throw InvalidArgument("trajectory dimensions differ");
  std::vector<double> d(a.size());
  const bool same = a.times == b.times;
  for (std::size_t k = 0; k < a.size(); ++k)
    d[k] = (a.states[k] - (same ? b.states[k] : b.at(a.times[k]))).lpNorm<1>();
  return d;
}

struct OrderingVerdict {
  bool passed = true;
  double worst_margin = std::numeric_limits<double>::infinity();  // min over grid of b - a
  double witness_time = 0.0;
  int witness_component = 0;  // 1-based
};

/// a(t) <= b(t) + tol componentwise at every grid time of `a`.
inline OrderingVerdict check_ordering(const Trajectory& a, const Trajectory& b, double tol = 1e-8) {
  if (a.dim() != b.dim()) throw InvalidArgument("trajectory dimensions differ");
  OrderingVerdict v;
  const bool same = a.times == b.times;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const Vector diff = (same ? b.states[k] : b.at(a.times[k])) - a.states[k];
    Eigen::Index i;
    const double m = diff.minCoeff(&i);
    if (m < v.worst_margin) {
      v.worst_margin = m;
      if (m < -tol && v.passed) {
        v.passed = false;
        v.witness_time = a.times[k];
        v.witness_component = static_cast<int>(i) + 1;
      }
    }
  }
  return v;
}

/// Componentwise min/max bracket of two initial states.
inline std::pair<Vector, Vector> bracket(const Vector& a, const Vector& b) { return {a.cwiseMin(b), a.cwiseMax(b)}; }

// ---------------------------------------------------------------------------
// Exports

/// Header "t,x1,...,xn"; values in %.17g so reruns are byte-identical.
inline void write_csv(std::ostream& os, const Trajectory& tr) {
  os << "t";
  for (int i = 0; i < tr.dim(); ++i) os << ",x" << i + 1;
  os << '\n';
  char buf[32];
  for (std::size_t k = 0; k < tr.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", tr.times[k]);
    os << buf;
    for (int i = 0; i < tr.dim(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", tr.states[k](i));
      os << ',' << buf;
    }
    os << '\n';
  }
}

/// Whitespace-separated columns for gnuplot; extra series are appended as columns.
inline void write_gnuplot(std::ostream& os, const std::vector<double>& times,
                          const std::vector<std::vector<double>>& series, const std::vector<std::string>& names) {
  os << "# t";
  for (const auto& n : names) os << ' ' << n;
  os << '\n';
  char buf[32];
  for (std::size_t k = 0; k < times.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", times[k]);
    os << buf;
    for (const auto& s : series) {
      std::snprintf(buf, sizeof buf, "%.17g", s[k]);
      os << ' ' << buf;
    }
    os << '\n';
  }
}

/// Largest sampled divided difference of the right-hand side over the box.
inline double estimate_lipschitz(const Rhs& f, const BoxSpace& box, double horizon = 10.0, std::size_t samples = 256,
                                 std::uint64_t seed = 1) {
  HaltonSampler s(2 * box.size() + 1, seed);
  double best = 0.0;
  for (std::size_t k = 1; k <= samples; ++k) {
    const auto u = s.point(k);
    const Vector p = detail::box_point(box, u, 1), q = detail::box_point(box, u, 1 + box.size());
    const double dx = (p - q).lpNorm<1>();
    if (dx <= 0) continue;
    const double t = horizon * u[0];
    best = std::max(best, (f(t, p) - f(t, q)).lpNorm<1>() / dx);
  }
  return best;
}

}  // namespace comportal

#endif  // COMPORTAL_ODE_HPP
