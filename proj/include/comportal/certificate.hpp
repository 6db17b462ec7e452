#ifndef COMPORTAL_CERTIFICATE_HPP
#define COMPORTAL_CERTIFICATE_HPP

// Linear Lyapunov certificates v^T F <= -lambda v^T for compartmental
// matrices: closed-form weights for a whole family of canonical-form
// matrices, the inverse formula for a single matrix, and a verifier.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "comportal/canonical.hpp"
#include "comportal/matrix.hpp"

namespace comportal {

/// Family F(a, b, l): compartmental n x n matrices with
///   F(i,j) <= b                     for i < j,
///   sum_{k > i} F(k,i) >= a_i       for i < l,
///   sum_k F(k,i) <= -a_l            for i >= l.
/// l is 1-based; l = 1 is the degenerate "every column leaks" family.
struct FamilyParams {
  int n = 0;
  int l = 0;
  Vector a;  // length l, all positive
  double b = 0.0;

  void validate() const {
    if (n < 1) throw InvalidArgument("family dimension must be >= 1");
    if (l < 1 || l > n) throw InvalidArgument("family index l must lie in {1..n}");
    if (a.size() != l) throw InvalidArgument("family needs exactly l lower bounds a_i");
    if (!(a.array() > 0).all() || !a.allFinite()) throw InvalidArgument("family bounds a_i must be positive");
    if (!(b >= 0) || !std::isfinite(b)) throw InvalidArgument("family bound b must be nonnegative");
  }
};

struct MembershipEvidence {
  enum class Bound { AboveDiagonal, DownstreamMass, ColumnSum };
  Bound bound;
  int row;     // 1-based, 0 for column-level bounds
  int col;     // 1-based
  double value;
  double limit;
  double margin;  // >= -tol means satisfied
};

inline std::string to_string(MembershipEvidence::Bound b) {
  switch (b) {
    case MembershipEvidence::Bound::AboveDiagonal: return "above_diagonal";
    case MembershipEvidence::Bound::DownstreamMass: return "downstream_mass";
    case MembershipEvidence::Bound::ColumnSum: return "column_sum";
  }
  return "unknown";
}

struct MembershipResult {
  bool member = false;
  double worst_margin = std::numeric_limits<double>::infinity();
  std::vector<MembershipEvidence> violations;
  /// Tightest entry of each bound kind (smallest margin), whether or not violated.
  std::vector<MembershipEvidence> binding;
};

inline MembershipResult family_membership(const CompartmentalMatrix& F, const FamilyParams& fam,
                                          double tol = 1e-12) {
  fam.validate();
  if (F.size() != fam.n) throw InvalidArgument("matrix dimension does not match family");
  const int n = fam.n;
  const int l0 = fam.l - 1;
  MembershipResult r;
  std::vector<MembershipEvidence> tightest(3);
  std::vector<bool> have(3, false);
  auto record = [&](MembershipEvidence e) {
    r.worst_margin = std::min(r.worst_margin, e.margin);
    const auto k = static_cast<std::size_t>(e.bound);
    if (!have[k] || e.margin < tightest[k].margin) {
      tightest[k] = e;
      have[k] = true;
    }
    if (e.margin < -tol) r.violations.push_back(e);
  };
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < j; ++i)
      record({MembershipEvidence::Bound::AboveDiagonal, i + 1, j + 1, F(i, j), fam.b, fam.b - F(i, j)});
  for (int i = 0; i < l0; ++i) {
    double mass = 0.0;
    for (int k = i + 1; k < n; ++k) mass += F(k, i);
    record({MembershipEvidence::Bound::DownstreamMass, 0, i + 1, mass, fam.a(i), mass - fam.a(i)});
  }
  for (int i = l0; i < n; ++i) {
    const double s = F.colsums()(i);
    record({MembershipEvidence::Bound::ColumnSum, 0, i + 1, s, -fam.a(l0), -fam.a(l0) - s});
  }
  for (std::size_t k = 0; k < 3; ++k)
    if (have[k]) r.binding.push_back(tightest[k]);
  r.member = r.violations.empty();
  return r;
}

struct LyapunovCertificate {
  enum class Source { Theorem1, LinearInverse, User };
  Vector v;
  double lambda = 0.0;
  double gamma = 1.0;
  Source source = Source::User;

  static LyapunovCertificate make(Vector v, double lambda, Source source) {
    if (v.size() < 1 || !(v.array() > 0).all() || !v.allFinite())
      throw InvalidArgument("certificate weights must be positive and finite");
    if (!(lambda > 0) || !std::isfinite(lambda)) throw InvalidArgument("certificate rate must be positive");
    LyapunovCertificate c;
    c.gamma = v.maxCoeff() / v.minCoeff();
    c.v = std::move(v);
    c.lambda = lambda;
    c.source = source;
    return c;
  }
};

inline std::string to_string(LyapunovCertificate::Source s) {
  switch (s) {
    case LyapunovCertificate::Source::Theorem1: return "theorem1";
    case LyapunovCertificate::Source::LinearInverse: return "linear_inverse";
    case LyapunovCertificate::Source::User: return "user";
  }
  return "user";
}

/// p_1 = sigma_1, p_i = sigma_i + (b / a_i) sum_{j<i} j p_j (j 1-based).
inline Vector theorem1_weights(const FamilyParams& fam, const Vector& sigma) {
  fam.validate();
  if (sigma.size() != fam.l) throw InvalidArgument("sigma must have length l");
  if (!(sigma.array() > 0).all() || !sigma.allFinite()) throw InvalidArgument("sigma must be positive");
  Vector p(fam.l);
  double weighted = 0.0;  // sum_{j<i} j p_j
  for (int i = 0; i < fam.l; ++i) {
    p(i) = sigma(i) + (i == 0 ? 0.0 : fam.b / fam.a(i) * weighted);
    weighted += (i + 1) * p(i);
  }
  return p;
}

/// Closed-form certificate valid for every member of the family:
///   v_i = p_i + ... + p_l (i < l),  v_i = p_l (i >= l),
///   lambda = min_i a_i sigma_i / (p_1 + ... + p_l).
inline LyapunovCertificate theorem1_certificate(const FamilyParams& fam, const Vector& sigma) {
  const Vector p = theorem1_weights(fam, sigma);
  Vector v(fam.n);
  double tail = 0.0;
  for (int i = fam.l - 1; i >= 0; --i) {
    tail += p(i);
    v(i) = tail;
  }
  for (int i = fam.l; i < fam.n; ++i) v(i) = p(fam.l - 1);
  const double rate = (fam.a.array() * sigma.array()).minCoeff() / p.sum();
  return LyapunovCertificate::make(std::move(v), rate, LyapunovCertificate::Source::Theorem1);
}

inline LyapunovCertificate theorem1_certificate(const FamilyParams& fam) {
  return theorem1_certificate(fam, Vector::Ones(fam.l));
}

struct CertificateCheck {
  bool ok = false;
  Vector margins;  // margins(k) = -lambda v_k - (v^T F)_k
  double worst_margin = 0.0;
  int worst_column = 0;  // 1-based
};

/// Checks v^T F <= -lambda v^T column by column. The tolerance is scaled by
/// max(1, max_i v_i) since certificate weights are only defined up to scale.
inline CertificateCheck verify_certificate(const Matrix& F, const LyapunovCertificate& cert, double tol = 1e-9) {
  if (F.rows() != cert.v.size() || F.cols() != cert.v.size())
    throw InvalidArgument("certificate dimension does not match matrix");
  CertificateCheck c;
  const Eigen::RowVectorXd vF = cert.v.transpose() * F;
  c.margins = -cert.lambda * cert.v - vF.transpose();
  Eigen::Index k;
  c.worst_margin = c.margins.minCoeff(&k);
  c.worst_column = static_cast<int>(k) + 1;
  c.ok = c.worst_margin >= -tol * std::max(1.0, cert.v.maxCoeff());
  return c;
}

inline CertificateCheck verify_certificate(const CompartmentalMatrix& F, const LyapunovCertificate& cert,
                                           double tol = 1e-9) {
  return verify_certificate(F.matrix(), cert, tol);
}

inline constexpr double kMinReciprocalCondition = 1e-12;

/// v^T = -(1,...,1) F^{-1}, solved as F^T v = -1; lambda = 1 / max_i v_i.
inline LyapunovCertificate linear_inverse_certificate(const CompartmentalMatrix& F) {
  const Eigen::PartialPivLU<Matrix> lu(F.matrix().transpose());
  const double rc = lu.rcond();
  if (!(rc >= kMinReciprocalCondition))
    throw SingularMatrixError("matrix is numerically singular (rcond=" + std::to_string(rc) +
                              "); it likely contains a trap, run trap detection");
  Vector v = lu.solve(-Vector::Ones(F.size()));
  if (!(v.array() > 0).all())
    throw SingularMatrixError("inverse weights are not positive; matrix is not outflow connected");
  const double rate = 1.0 / v.maxCoeff();
  return LyapunovCertificate::make(std::move(v), rate, LyapunovCertificate::Source::LinearInverse);
}

/// Tightest family containing A (assumed canonical with witness index l):
/// a_i = attained downstream mass / leak, b = largest above-diagonal entry.
inline FamilyParams fit_family(const CompartmentalMatrix& A, int l) {
  const int n = A.size();
  FamilyParams fam;
  fam.n = n;
  fam.l = l;
  fam.a.resize(l);
  for (int i = 0; i < l - 1; ++i) {
    double mass = 0.0;
    for (int k = i + 1; k < n; ++k) mass += A(k, i);
    fam.a(i) = mass;
  }
  double leak = std::numeric_limits<double>::infinity();
  for (int i = l - 1; i < n; ++i) leak = std::min(leak, -A.colsums()(i));
  fam.a(l - 1) = leak;
  fam.b = 0.0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < j; ++i) fam.b = std::max(fam.b, A(i, j));
  fam.validate();
  return fam;
}

/// How the free weight parameter sigma is chosen.
struct SigmaPolicy {
  enum class Kind { Ones, Balanced, Explicit };
  Kind kind = Kind::Ones;
  Vector values;  // used by Explicit

  static SigmaPolicy ones() { return {}; }
  /// sigma_i = 1 / a_i, so every a_i sigma_i equals 1.
  static SigmaPolicy balanced() { return {Kind::Balanced, {}}; }
  static SigmaPolicy explicit_values(Vector s) { return {Kind::Explicit, std::move(s)}; }

  Vector resolve(const FamilyParams& fam) const {
    switch (kind) {
      case Kind::Ones: return Vector::Ones(fam.l);
      case Kind::Balanced: return fam.a.cwiseInverse();
      case Kind::Explicit: return values;
    }
    return Vector::Ones(fam.l);
  }
};

struct CanonicalCertificate {
  Canonicalization canonical;
  FamilyParams family;
  LyapunovCertificate certificate;  // in the original coordinates
  CertificateCheck check;           // on the original matrix
};

/// canonicalize -> fit family -> closed-form certificate -> pull the weights
/// back with v_orig[r(i)] = v_canon[i].
inline CanonicalCertificate certify_via_canonical(const CompartmentalMatrix& F,
                                                  const SigmaPolicy& policy = SigmaPolicy::ones()) {
  auto canon = canonicalize(F);
  auto fam = fit_family(canon.A, canon.witness.l);
  const auto cert_canon = theorem1_certificate(fam, policy.resolve(fam));
  Vector v(F.size());
  for (int i = 0; i < F.size(); ++i) v(canon.r(i)) = cert_canon.v(i);
  auto cert = LyapunovCertificate::make(std::move(v), cert_canon.lambda, LyapunovCertificate::Source::Theorem1);
  auto check = verify_certificate(F, cert);
  return {std::move(canon), std::move(fam), std::move(cert), std::move(check)};
}

/// Random member of F(a, b, l). Starts from bounds that are attained exactly
/// (with some probability) and adds nonnegative noise; the diagonal absorbs
/// the column balance. Above-diagonal entries are drawn from [0, b].
template <class Rng>
CompartmentalMatrix random_family_member(const FamilyParams& fam, Rng& rng) {
  fam.validate();
  const int n = fam.n;
  const int l0 = fam.l - 1;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto tight_or = [&](double scale) { return unit(rng) < 0.25 ? 0.0 : scale * unit(rng); };
  for (;;) {
    Matrix F = Matrix::Zero(n, n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < j; ++i) F(i, j) = unit(rng) < 0.3 ? 0.0 : (unit(rng) < 0.2 ? fam.b : fam.b * unit(rng));
    for (int i = 0; i < n - 1; ++i) {
      double total = 0.0;
      for (int k = i + 1; k < n; ++k) {
        F(k, i) = unit(rng) < 0.4 ? 0.0 : unit(rng);
        total += F(k, i);
      }
      if (i < l0) {
        if (total == 0.0) {
          F(i + 1 + static_cast<int>(unit(rng) * (n - i - 1)) % (n - i - 1), i) = 1.0;
          total = 1.0;
        }
        const double target = fam.a(i) * (1.0 + tight_or(1.0));
        for (int k = i + 1; k < n; ++k) F(k, i) *= target / total;
      }
    }
    for (int i = 0; i < n; ++i) {
      double off = 0.0;
      for (int k = 0; k < n; ++k)
        if (k != i) off += F(k, i);
      const double leak = i < l0 ? tight_or(1.0) : fam.a(l0) * (1.0 + tight_or(1.0));
      F(i, i) = -off - leak;
    }
    auto v = validate_compartmental(F);
    if (!v.accepted()) continue;
    if (family_membership(*v.matrix, fam, 1e-12).member) return std::move(*v.matrix);
  }
}

}  // namespace comportal

#endif  // COMPORTAL_CERTIFICATE_HPP
