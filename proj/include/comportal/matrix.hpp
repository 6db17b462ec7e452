#ifndef COMPORTAL_MATRIX_HPP
#define COMPORTAL_MATRIX_HPP

// Validated compartmental matrices, their flow parametrization, and
// conjugation by permutations.
//
// Indices are 0-based in code. Anything user-facing (reports, JSON, error
// messages) is 1-based.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "comportal/error.hpp"

namespace comportal {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kDefaultValidationTol = 1e-12;

/// Square matrix with finite entries and n >= 1.
class SquareMatrix {
public:
  explicit SquareMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() < 1 || m_.rows() != m_.cols())
      throw InvalidArgument("matrix must be square with n >= 1, got " + std::to_string(m_.rows()) +
                            "x" + std::to_string(m_.cols()));
    for (Eigen::Index j = 0; j < m_.cols(); ++j)
      for (Eigen::Index i = 0; i < m_.rows(); ++i)
        if (!std::isfinite(m_(i, j)))
          throw InvalidArgument("non-finite entry at (" + std::to_string(i + 1) + "," +
                                std::to_string(j + 1) + ")");
  }

  static SquareMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    Matrix m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (static_cast<Eigen::Index>(rows[i].size()) != n)
        throw InvalidArgument("row " + std::to_string(i + 1) + " has " +
                              std::to_string(rows[i].size()) + " entries, expected " +
                              std::to_string(n));
      for (Eigen::Index j = 0; j < n; ++j) m(i, j) = rows[i][j];
    }
    return SquareMatrix(std::move(m));
  }

  int size() const noexcept { return static_cast<int>(m_.rows()); }
  double operator()(int i, int j) const { return m_(i, j); }
  const Matrix& matrix() const noexcept { return m_; }

private:
  Matrix m_;
};

/// One reason a matrix failed compartmental validation. Indices are 1-based;
/// `row` is 0 for column-sum violations.
struct Violation {
  enum class Kind { NegativeOffDiagonal, PositiveColumnSum, NonFinite };
  Kind kind;
  int row;
  int col;
  double value;
};

inline std::string to_string(Violation::Kind k) {
  switch (k) {
    case Violation::Kind::NegativeOffDiagonal: return "negative_off_diagonal";
    case Violation::Kind::PositiveColumnSum: return "positive_column_sum";
    case Violation::Kind::NonFinite: return "non_finite";
  }
  return "unknown";
}

struct ValidationResult;
class Permutation;

/// Metzler matrix with nonpositive column sums. Immutable.
class CompartmentalMatrix {
public:
  int size() const noexcept { return static_cast<int>(m_.rows()); }
  double operator()(int i, int j) const { return m_(i, j); }
  const Matrix& matrix() const noexcept { return m_; }
  /// Column sums, computed once at construction.
  const Vector& colsums() const noexcept { return colsums_; }
  /// f_{0i} = -(column sum i) >= 0.
  double outflow(int i) const { return -colsums_(i); }

  bool operator==(const CompartmentalMatrix& o) const { return m_ == o.m_; }

  /// Throws InvalidArgument listing the violations when `m` is not compartmental.
  static CompartmentalMatrix from(const Matrix& m, double tol = kDefaultValidationTol);

private:
  friend ValidationResult validate_compartmental(const Matrix&, double);
  friend CompartmentalMatrix conjugate_by_permutation(const CompartmentalMatrix&, const Permutation&);
  explicit CompartmentalMatrix(Matrix m) : m_(std::move(m)), colsums_(m_.colwise().sum().transpose()) {}
  CompartmentalMatrix(Matrix m, Vector colsums) : m_(std::move(m)), colsums_(std::move(colsums)) {}

  Matrix m_;
  Vector colsums_;
};

struct ValidationResult {
  std::optional<CompartmentalMatrix> matrix;  // set iff accepted
  std::vector<Violation> violations;

  bool accepted() const noexcept { return matrix.has_value(); }
};

/// Accepts `m` iff every off-diagonal entry is >= -tol and every column sum is
/// <= +tol. Entries inside the tolerance band are clamped: small negative
/// off-diagonals become 0, and a small positive column excess is removed from
/// the diagonal so the sum becomes exactly 0.
inline ValidationResult validate_compartmental(const Matrix& m, double tol = kDefaultValidationTol) {
  ValidationResult out;
  if (tol < 0) throw InvalidArgument("validation tolerance must be nonnegative");
  if (m.rows() < 1 || m.rows() != m.cols())
    throw InvalidArgument("matrix must be square with n >= 1");
  const auto n = m.rows();
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (!std::isfinite(m(i, j)))
        out.violations.push_back({Violation::Kind::NonFinite, int(i + 1), int(j + 1), m(i, j)});
  if (!out.violations.empty()) return out;

  Matrix c = m;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) continue;
      if (c(i, j) < -tol)
        out.violations.push_back({Violation::Kind::NegativeOffDiagonal, int(i + 1), int(j + 1), c(i, j)});
      else if (c(i, j) < 0)
        c(i, j) = 0.0;
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const double s = c.col(j).sum();
    if (s > tol)
      out.violations.push_back({Violation::Kind::PositiveColumnSum, 0, int(j + 1), s});
    else if (s > 0)
      c(j, j) -= s;
  }
  if (out.violations.empty()) out.matrix = CompartmentalMatrix(std::move(c));
  return out;
}

inline CompartmentalMatrix CompartmentalMatrix::from(const Matrix& m, double tol) {
  auto r = validate_compartmental(m, tol);
  if (!r.accepted()) {
    std::string msg = "matrix is not compartmental:";
    for (const auto& v : r.violations) {
      msg += " " + to_string(v.kind);
      msg += v.row ? " (" + std::to_string(v.row) + "," + std::to_string(v.col) + ")"
                   : " column " + std::to_string(v.col);
      msg += "=" + std::to_string(v.value) + ";";
    }
    throw InvalidArgument(msg);
  }
  return std::move(*r.matrix);
}

/// Outflow coefficients f0 and inter-compartment coefficients f.
/// f(j, i) is the flow coefficient from compartment i to j; its diagonal is 0.
struct FlowParams {
  Vector f0;
  Matrix f;

  /// Rebuilds F with F_ii = -f0_i - sum_{j != i} f_ji.
  Matrix to_matrix() const {
    Matrix m = f;
    for (Eigen::Index i = 0; i < f.cols(); ++i) {
      m(i, i) = 0.0;
      m(i, i) = -f0(i) - m.col(i).sum();
    }
    return m;
  }
};

inline FlowParams to_flow_params(const CompartmentalMatrix& F) {
  FlowParams p;
  p.f0 = -F.colsums();
  p.f = F.matrix();
  p.f.diagonal().setZero();
  return p;
}

/// Bijection of {0..n-1}. Conjugation uses A(i,j) = F(r(i), r(j)).
class Permutation {
public:
  explicit Permutation(std::vector<int> image) : image_(std::move(image)) {
    std::vector<char> seen(image_.size(), 0);
    for (int v : image_) {
      if (v < 0 || v >= static_cast<int>(image_.size()) || seen[v])
        throw InvalidArgument("not a permutation of {1.." + std::to_string(image_.size()) + "}");
      seen[v] = 1;
    }
  }

  static Permutation identity(int n) {
    std::vector<int> r(n);
    std::iota(r.begin(), r.end(), 0);
    return Permutation(std::move(r));
  }

  /// Build from 1-based images as written in reports.
  static Permutation from_one_based(const std::vector<int>& r) {
    std::vector<int> z(r.size());
    std::transform(r.begin(), r.end(), z.begin(), [](int v) { return v - 1; });
    return Permutation(std::move(z));
  }

  int size() const noexcept { return static_cast<int>(image_.size()); }
  int operator()(int i) const { return image_[i]; }
  const std::vector<int>& image() const noexcept { return image_; }

  std::vector<int> one_based() const {
    std::vector<int> r(image_.size());
    std::transform(image_.begin(), image_.end(), r.begin(), [](int v) { return v + 1; });
    return r;
  }

  Permutation inverse() const {
    std::vector<int> inv(image_.size());
    for (int i = 0; i < size(); ++i) inv[image_[i]] = i;
    return Permutation(std::move(inv));
  }

  /// (r.then(s))(i) = r(s(i)): conjugating by r and then by s equals conjugating by r.then(s).
  Permutation then(const Permutation& s) const {
    if (s.size() != size()) throw InvalidArgument("permutation size mismatch");
    std::vector<int> out(image_.size());
    for (int i = 0; i < size(); ++i) out[i] = image_[s(i)];
    return Permutation(std::move(out));
  }

  bool is_identity() const {
    for (int i = 0; i < size(); ++i)
      if (image_[i] != i) return false;
    return true;
  }

  /// P with P(i, r(i)) = 1.
  Matrix matrix() const {
    Matrix P = Matrix::Zero(size(), size());
    for (int i = 0; i < size(); ++i) P(i, image_[i]) = 1.0;
    return P;
  }

  bool operator==(const Permutation& o) const { return image_ == o.image_; }

private:
  std::vector<int> image_;
};

inline Matrix conjugate(const Matrix& F, const Permutation& r) {
  if (F.rows() != r.size()) throw InvalidArgument("permutation size does not match matrix");
  Matrix A(F.rows(), F.cols());
  for (int j = 0; j < r.size(); ++j)
    for (int i = 0; i < r.size(); ++i) A(i, j) = F(r(i), r(j));
  return A;
}

/// P F P^{-1}. Column j of the result holds the entries of column r(j) of F,
/// so the cached column sums are carried over instead of re-summed in a
/// different order (which could flip the sign of an exactly balanced column).
inline CompartmentalMatrix conjugate_by_permutation(const CompartmentalMatrix& F, const Permutation& r) {
  Matrix A = conjugate(F.matrix(), r);
  Vector sums(r.size());
  for (int j = 0; j < r.size(); ++j) sums(j) = F.colsums()(r(j));
  return CompartmentalMatrix(std::move(A), std::move(sums));
}

}  // namespace comportal

#endif  // COMPORTAL_MATRIX_HPP
