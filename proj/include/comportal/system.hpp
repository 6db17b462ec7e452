#ifndef COMPORTAL_SYSTEM_HPP
#define COMPORTAL_SYSTEM_HPP

// Time-varying compartmental systems  q' = F(t,q) g(t,q) + I(t,q)  on a box,
// the structured special case where every coefficient depends on time and a
// single compartment, and sampling-based checks of the structural hypotheses
// (cooperativity, nonexpansiveness, monotone coefficients).
//
// Every check here is a falsifier: a pass means "no violation at the sampled
// points", a failure carries a concrete witness.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "comportal/expression.hpp"
#include "comportal/matrix.hpp"

namespace comportal {

/// Coefficient function of time and one compartment's state.
using ScalarFn = std::function<double(double t, double x)>;

inline ScalarFn constant_fn(double c) {
  return [c](double, double) { return c; };
}
inline ScalarFn expression_fn(Expression e) {
  return [e = std::move(e)](double t, double x) { return e(t, x); };
}

struct BoxSpace {
  Vector lower;
  Vector upper;

  static BoxSpace unit(int n) { return {Vector::Zero(n), Vector::Ones(n)}; }
  static BoxSpace capacities(const Vector& c) { return {Vector::Zero(c.size()), c}; }
  static BoxSpace orthant(int n) {
    return {Vector::Zero(n), Vector::Constant(n, std::numeric_limits<double>::infinity())};
  }

  int size() const noexcept { return static_cast<int>(lower.size()); }
  bool bounded() const { return upper.allFinite() && lower.allFinite(); }
  bool contains(const Vector& x, double tol = 0.0) const {
    return ((x - lower).array() >= -tol).all() && ((upper - x).array() >= -tol).all();
  }
  Vector corner(std::uint64_t mask) const {
    Vector x = lower;
    for (int i = 0; i < size(); ++i)
      if (mask >> i & 1u) x(i) = upper(i);
    return x;
  }
  void validate() const {
    if (lower.size() != upper.size() || lower.size() < 1) throw InvalidArgument("box bounds must have equal length n >= 1");
    if (!((upper - lower).array() >= 0).all()) throw InvalidArgument("box lower bound exceeds upper bound");
  }
};

/// General system given by evaluators.
struct SystemSpec {
  int n = 0;
  BoxSpace space;
  std::function<Matrix(double, const Vector&)> F;
  std::function<Vector(double, const Vector&)> g;
  std::function<Vector(double, const Vector&)> I;

  Vector rhs(double t, const Vector& x) const {
    Vector out = F(t, x) * g(t, x);
    if (I) out += I(t, x);
    return out;
  }

  /// q' = F q on the nonnegative orthant.
  static SystemSpec linear(const Matrix& F, BoxSpace space) {
    SystemSpec s;
    s.n = static_cast<int>(F.rows());
    s.space = std::move(space);
    s.F = [F](double, const Vector&) { return F; };
    s.g = [](double, const Vector& x) { return x; };
    s.I = [n = s.n](double, const Vector&) { return Vector::Zero(n); };
    return s;
  }
  static SystemSpec linear(const Matrix& F) { return linear(F, BoxSpace::orthant(static_cast<int>(F.rows()))); }
};

/// Structured class: F(r,s)(t,x) = f_rs(t, x_r) for r != s (flow from s into
/// r, modulated by the receiving compartment), F(s,s) = -f0_s(t,x_s) -
/// sum_r f_rs(t,x_r); g and I act componentwise. Indices are 0-based.
struct StructuredSystem {
  int n = 0;
  Vector capacity;
  std::vector<ScalarFn> f0;
  std::map<std::pair<int, int>, ScalarFn> flow;  // key (r, s): flow s -> r
  std::vector<ScalarFn> g;
  std::vector<ScalarFn> inflow;
  /// Optional source text for reports, keyed like the JSON format ("f0.1", "f.2,1", ...).
  std::map<std::string, std::string> sources;
  /// Declared Lipschitz constants, same keys as `sources`. Declared values take
  /// precedence over sampled estimates.
  std::map<std::string, double> declared_lipschitz;

  static StructuredSystem empty(const Vector& capacity) {
    StructuredSystem s;
    s.n = static_cast<int>(capacity.size());
    s.capacity = capacity;
    s.f0.assign(s.n, constant_fn(0.0));
    s.g.assign(s.n, [](double, double x) { return x; });
    s.inflow.assign(s.n, constant_fn(0.0));
    return s;
  }

  void validate() const {
    if (n < 1 || capacity.size() != n) throw InvalidArgument("structured system needs n >= 1 capacities");
    if (!(capacity.array() > 0).all()) throw InvalidArgument("capacities must be positive");
    if (static_cast<int>(f0.size()) != n || static_cast<int>(g.size()) != n || static_cast<int>(inflow.size()) != n)
      throw InvalidArgument("f0, g and I need one function per compartment");
    for (const auto& [key, fn] : flow)
      if (key.first == key.second || key.first < 0 || key.second < 0 || key.first >= n || key.second >= n)
        throw InvalidArgument("flow key (" + std::to_string(key.first + 1) + "," + std::to_string(key.second + 1) +
                              ") is not an off-diagonal index");
  }

  BoxSpace space() const { return BoxSpace::capacities(capacity); }

  Matrix F(double t, const Vector& x) const {
    Matrix m = Matrix::Zero(n, n);
    for (const auto& [key, fn] : flow) m(key.first, key.second) = fn(t, x(key.first));
    for (int s = 0; s < n; ++s) {
      double off = 0.0;
      for (int r = 0; r < n; ++r)
        if (r != s) off += m(r, s);
      m(s, s) = -f0[s](t, x(s)) - off;
    }
    return m;
  }
  Vector gvec(double t, const Vector& x) const {
    Vector out(n);
    for (int i = 0; i < n; ++i) out(i) = g[i](t, x(i));
    return out;
  }
  Vector Ivec(double t, const Vector& x) const {
    Vector out(n);
    for (int i = 0; i < n; ++i) out(i) = inflow[i](t, x(i));
    return out;
  }
  Vector rhs(double t, const Vector& x) const { return F(t, x) * gvec(t, x) + Ivec(t, x); }

  /// Coefficient f_rs or nullptr.
  const ScalarFn* flow_fn(int r, int s) const {
    const auto it = flow.find({r, s});
    return it == flow.end() ? nullptr : &it->second;
  }

  SystemSpec to_system_spec() const {
    SystemSpec s;
    s.n = n;
    s.space = space();
    s.F = [self = *this](double t, const Vector& x) { return self.F(t, x); };
    s.g = [self = *this](double t, const Vector& x) { return self.gvec(t, x); };
    s.I = [self = *this](double t, const Vector& x) { return self.Ivec(t, x); };
    return s;
  }
};

inline std::string flow_key(int r, int s) { return "f." + std::to_string(r + 1) + "," + std::to_string(s + 1); }
inline std::string f0_key(int i) { return "f0." + std::to_string(i + 1); }
inline std::string inflow_key(int i) { return "I." + std::to_string(i + 1); }
inline std::string g_key(int i) { return "g." + std::to_string(i + 1); }

// ---------------------------------------------------------------------------
// Sampling

/// Halton sequence with a seeded Cranley-Patterson rotation: low-discrepancy
/// points in [0,1)^dim, deterministic for a given seed.
class HaltonSampler {
public:
  HaltonSampler(int dim, std::uint64_t seed) : dim_(dim), shift_(dim) {
    static constexpr std::array<int, 48> primes{2,   3,   5,   7,   11,  13,  17,  19,  23,  29,  31,  37,
                                                41,  43,  47,  53,  59,  61,  67,  71,  73,  79,  83,  89,
                                                97,  101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151,
                                                157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223};
    if (dim < 1) throw InvalidArgument("sampler dimension must be >= 1");
    bases_.resize(dim);
    for (int d = 0; d < dim; ++d) bases_[d] = d < static_cast<int>(primes.size()) ? primes[d] : 0;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& s : shift_) s = u(rng);
    fallback_.seed(seed ^ 0x9e3779b97f4a7c15ull);
  }

  int dim() const noexcept { return dim_; }

  /// Point with index k (k >= 1 recommended; index 0 is the pure shift).
  std::vector<double> point(std::uint64_t k) {
    std::vector<double> p(dim_);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int d = 0; d < dim_; ++d) {
      double r = 0.0;
      if (bases_[d] > 0) {
        double f = 1.0;
        for (std::uint64_t i = k; i > 0; i /= bases_[d]) {
          f /= bases_[d];
          r += f * static_cast<double>(i % bases_[d]);
        }
      } else {
        r = u(fallback_);  // beyond the prime table
      }
      r += shift_[d];
      p[d] = r - std::floor(r);
    }
    return p;
  }

private:
  int dim_;
  std::vector<int> bases_;
  std::vector<double> shift_;
  std::mt19937_64 fallback_;
};

struct SamplingOptions {
  double horizon = 10.0;  // times sampled in [0, horizon]
  std::size_t samples = 4096;
  std::uint64_t seed = 1;
  double tol = 1e-9;
  int max_corner_dim = 12;  // enumerate 2^n corners only up to this n
};

/// Outcome of a sampled check. `passed` never claims a proof.
struct SampledVerdict {
  bool passed = true;
  std::size_t samples = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  struct Witness {
    double t = 0.0;
    Vector a, b;
    int component = 0;  // 1-based, 0 when the check is not per-component
    double margin = 0.0;
  };
  std::optional<Witness> witness;  // worst sample when failed

  std::string label() const { return passed ? "passed-at-samples" : "violated"; }
};

// ---------------------------------------------------------------------------
// Monotonicity of scalar functions

enum class Monotonicity { Nonincreasing, Nondecreasing, SlopeAtLeastOne };

struct MonotonicityVerdict {
  bool passed = true;
  std::size_t samples = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  std::optional<std::pair<double, double>> witness;  // x1 < x2 violating the direction
  std::string label() const { return passed ? "passed-at-samples" : "violated"; }
};

/// Uniform grid of `samples` points on [lo, hi] plus the midpoint of every
/// grid cell; every adjacent pair of the refined grid is compared.
inline MonotonicityVerdict check_monotonicity(const std::function<double(double)>& f, double lo, double hi,
                                              Monotonicity dir, std::size_t samples = 256, double tol = 1e-12) {
  if (!(hi >= lo)) throw InvalidArgument("monotonicity interval must satisfy lo <= hi");
  MonotonicityVerdict v;
  const std::size_t cells = std::max<std::size_t>(samples, 2) - 1;
  std::vector<double> xs;
  xs.reserve(2 * cells + 1);
  for (std::size_t k = 0; k <= 2 * cells; ++k)
    xs.push_back(k == 2 * cells ? hi : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(2 * cells));
  std::vector<double> ys(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) ys[k] = f(xs[k]);
  v.samples = xs.size();
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    const double dy = ys[k + 1] - ys[k];
    const double dx = xs[k + 1] - xs[k];
    const double scale = tol * std::max({1.0, std::abs(ys[k]), std::abs(ys[k + 1])});
    double margin = 0.0;
    switch (dir) {
      case Monotonicity::Nonincreasing: margin = -dy; break;
      case Monotonicity::Nondecreasing: margin = dy; break;
      case Monotonicity::SlopeAtLeastOne: margin = dy - dx; break;
    }
    if (margin < v.worst_margin) v.worst_margin = margin;
    if (margin < -scale && v.passed) {
      v.passed = false;
      v.witness = std::make_pair(xs[k], xs[k + 1]);
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Cooperativity and nonexpansiveness

namespace detail {

inline Vector box_point(const BoxSpace& box, const std::vector<double>& u, std::size_t offset) {
  Vector x(box.size());
  for (int i = 0; i < box.size(); ++i) x(i) = box.lower(i) + u[offset + i] * (box.upper(i) - box.lower(i));
  return x;
}

/// Ordered pairs a <= b: box-corner pairs first, then low-discrepancy pairs.
template <class Visit>
void for_each_ordered_pair(const BoxSpace& box, const SamplingOptions& opt, Visit&& visit) {
  if (!box.bounded()) throw InvalidArgument("sampling requires a bounded box");
  const int n = box.size();
  HaltonSampler sampler(2 * n + 1, opt.seed);
  std::size_t k = 1;
  if (n <= opt.max_corner_dim) {
    const std::uint64_t corners = std::uint64_t{1} << n;
    for (std::uint64_t m = 0; m < corners; ++m) {
      const double t = opt.horizon * sampler.point(k++)[0];
      const Vector c = box.corner(m);
      visit(t, box.lower, c);
      visit(t, c, box.upper);
    }
  }
  for (std::size_t s = 0; s < opt.samples; ++s) {
    const auto u = sampler.point(k++);
    const Vector p = box_point(box, u, 1), q = box_point(box, u, 1 + n);
    visit(opt.horizon * u[0], p.cwiseMin(q), p.cwiseMax(q));
  }
}

}  // namespace detail

/// Type K: Q_i(t,a) <= Q_i(t,b) whenever a <= b and a_i = b_i. For each
/// sampled ordered pair and each i the pair is modified so that both share
/// the i-th coordinate of a.
inline SampledVerdict check_type_K(const std::function<Vector(double, const Vector&)>& rhs, const BoxSpace& box,
                                   const SamplingOptions& opt = {}) {
  SampledVerdict v;
  v.seed = opt.seed;
  const int n = box.size();
  if (n == 1) {
    v.worst_margin = 0.0;
    return v;  // no pair with a_i = b_i can differ
  }
  detail::for_each_ordered_pair(box, opt, [&](double t, const Vector& a, const Vector& b) {
    for (int i = 0; i < n; ++i) {
      Vector bi = b;
      bi(i) = a(i);
      const double margin = rhs(t, bi)(i) - rhs(t, a)(i);
      ++v.samples;
      if (margin < v.worst_margin) {
        v.worst_margin = margin;
        if (margin < -opt.tol) v.witness = SampledVerdict::Witness{t, a, bi, i + 1, margin};
      }
    }
  });
  v.passed = !(v.worst_margin < -opt.tol);
  if (v.passed) v.witness.reset();
  return v;
}

inline SampledVerdict check_type_K(const SystemSpec& sys, const SamplingOptions& opt = {}) {
  return check_type_K([&](double t, const Vector& x) { return sys.rhs(t, x); }, sys.space, opt);
}

/// sum_i Q_i(t, xi2) - Q_i(t, xi1) <= 0 for xi1 <= xi2. Margin is the negated sum.
inline SampledVerdict check_nonexpansive_condition(const std::function<Vector(double, const Vector&)>& rhs,
                                                   const BoxSpace& box, const SamplingOptions& opt = {}) {
  SampledVerdict v;
  v.seed = opt.seed;
  detail::for_each_ordered_pair(box, opt, [&](double t, const Vector& a, const Vector& b) {
    const double margin = -(rhs(t, b) - rhs(t, a)).sum();
    ++v.samples;
    if (margin < v.worst_margin) {
      v.worst_margin = margin;
      if (margin < -opt.tol) v.witness = SampledVerdict::Witness{t, a, b, 0, margin};
    }
  });
  v.passed = !(v.worst_margin < -opt.tol);
  if (v.passed) v.witness.reset();
  return v;
}

inline SampledVerdict check_nonexpansive_condition(const SystemSpec& sys, const SamplingOptions& opt = {}) {
  return check_nonexpansive_condition([&](double t, const Vector& x) { return sys.rhs(t, x); }, sys.space, opt);
}

// ---------------------------------------------------------------------------
// Structural assumptions of the structured class

struct AssumptionCheck {
  std::string assumption;  // "A1".."A6", plus "A2-inflow-at-zero" (advisory)
  std::string subject;     // coefficient key, e.g. "f.2,1"
  bool passed = true;
  bool advisory = false;   // reported but not required by the certification pipeline
  std::string detail{};
};

inline std::vector<double> time_grid(double horizon, int count) {
  std::vector<double> ts;
  for (int k = 0; k < count; ++k) ts.push_back(count == 1 ? 0.0 : horizon * k / (count - 1));
  return ts;
}

/// Nonnegativity, boundary identities and monotone directions of every
/// coefficient, checked on a time grid and a refined state grid.
inline std::vector<AssumptionCheck> check_structure(const StructuredSystem& sys, double horizon = 10.0,
                                                    int time_samples = 9, std::size_t state_samples = 129,
                                                    double tol = 1e-9) {
  sys.validate();
  std::vector<AssumptionCheck> out;
  const auto ts = time_grid(horizon, time_samples);

  auto monotone = [&](const std::string& a, const std::string& key, const ScalarFn& f, double c, Monotonicity dir) {
    AssumptionCheck chk{a, key};
    for (double t : ts) {
      const auto v = check_monotonicity([&](double x) { return f(t, x); }, 0.0, c, dir, state_samples, tol);
      if (!v.passed) {
        chk.passed = false;
        chk.detail = "t=" + std::to_string(t) + " x1=" + std::to_string(v.witness->first) +
                     " x2=" + std::to_string(v.witness->second);
        break;
      }
    }
    out.push_back(chk);
  };
  auto nonnegative = [&](const std::string& key, const ScalarFn& f, double c) {
    AssumptionCheck chk{"A1", key};
    for (double t : ts) {
      for (std::size_t k = 0; k < state_samples && chk.passed; ++k) {
        const double x = c * static_cast<double>(k) / static_cast<double>(state_samples - 1);
        if (f(t, x) < -tol) {
          chk.passed = false;
          chk.detail = "negative at t=" + std::to_string(t) + " x=" + std::to_string(x);
        }
      }
    }
    out.push_back(chk);
  };
  auto vanishes = [&](const std::string& a, const std::string& key, const ScalarFn& f, double x, bool advisory) {
    AssumptionCheck chk{a, key, true, advisory};
    for (double t : ts)
      if (std::abs(f(t, x)) > tol) {
        chk.passed = false;
        chk.detail = "value " + std::to_string(f(t, x)) + " at t=" + std::to_string(t) + " x=" + std::to_string(x);
        break;
      }
    out.push_back(chk);
  };

  for (int i = 0; i < sys.n; ++i) {
    const double c = sys.capacity(i);
    nonnegative(f0_key(i), sys.f0[i], c);
    nonnegative(g_key(i), sys.g[i], c);
    nonnegative(inflow_key(i), sys.inflow[i], c);
    vanishes("A2", inflow_key(i), sys.inflow[i], c, false);
    vanishes("A2-inflow-at-zero", inflow_key(i), sys.inflow[i], 0.0, true);
    vanishes("A2", g_key(i), sys.g[i], 0.0, false);
    monotone("A3", g_key(i), sys.g[i], c, Monotonicity::SlopeAtLeastOne);
    monotone("A5", f0_key(i), sys.f0[i], c, Monotonicity::Nondecreasing);
    monotone("A6", inflow_key(i), sys.inflow[i], c, Monotonicity::Nonincreasing);
  }
  for (const auto& [key, fn] : sys.flow) {
    const double c = sys.capacity(key.first);
    const auto k = flow_key(key.first, key.second);
    nonnegative(k, fn, c);
    vanishes("A2", k, fn, c, false);
    monotone("A4", k, fn, c, Monotonicity::Nonincreasing);
  }
  return out;
}

/// Largest sampled divided difference of x -> f(t, x) on [0, c], times
/// `safety`. A declared value for `key` replaces the estimate.
inline double lipschitz_estimate(const StructuredSystem& sys, const std::string& key, const ScalarFn& f, double c,
                                 double horizon = 10.0, int time_samples = 9, std::size_t state_samples = 257,
                                 double safety = 1.25) {
  if (auto it = sys.declared_lipschitz.find(key); it != sys.declared_lipschitz.end()) return it->second;
  double best = 0.0;
  for (double t : time_grid(horizon, time_samples)) {
    double prev = f(t, 0.0);
    for (std::size_t k = 1; k < state_samples; ++k) {
      const double x0 = c * static_cast<double>(k - 1) / static_cast<double>(state_samples - 1);
      const double x1 = c * static_cast<double>(k) / static_cast<double>(state_samples - 1);
      const double y = f(t, x1);
      best = std::max(best, std::abs(y - prev) / (x1 - x0));
      prev = y;
    }
  }
  return best * safety;
}

}  // namespace comportal

#endif  // COMPORTAL_SYSTEM_HPP
