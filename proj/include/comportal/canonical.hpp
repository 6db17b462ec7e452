#ifndef COMPORTAL_CANONICAL_HPP
#define COMPORTAL_CANONICAL_HPP

// Outflow canonical form: the last columns n-l+1..n leak to the environment,
// every earlier compartment feeds some compartment further down the order.

#include <vector>

#include "comportal/graph.hpp"
#include "comportal/matrix.hpp"

namespace comportal {

struct CanonicalWitness {
  bool is_canonical = false;
  /// 1-based. 1 means every column sum is negative; otherwise the smallest
  /// valid l in {2..n}. 0 when not canonical.
  int l = 0;
  std::vector<bool> negative_column;
  /// downstream[i] = some j > i with F(j,i) > 0 (0-based), or -1.
  std::vector<int> downstream;
};

/// The smallest admissible l is the first index after the last column whose
/// sum is not negative; any larger l only adds columns that must feed
/// downstream, so it is the only candidate that needs checking.
inline CanonicalWitness check_canonical(const CompartmentalMatrix& F, double strict_tol = kDefaultStrictTol) {
  const int n = F.size();
  CanonicalWitness w;
  w.negative_column.resize(n);
  w.downstream.assign(n, -1);
  int last_nonnegative = -1;
  for (int i = 0; i < n; ++i) {
    w.negative_column[i] = F.colsums()(i) < -strict_tol;
    if (!w.negative_column[i]) last_nonnegative = i;
    for (int j = i + 1; j < n; ++j)
      if (F(j, i) > strict_tol) {
        w.downstream[i] = j;
        break;
      }
  }
  if (last_nonnegative < 0) {
    w.is_canonical = true;
    w.l = 1;
    return w;
  }
  if (last_nonnegative == n - 1) return w;  // column n must leak
  const int l0 = last_nonnegative + 1;      // 0-based first leaking column
  for (int i = 0; i < l0; ++i)
    if (w.downstream[i] < 0) return w;
  w.is_canonical = true;
  w.l = l0 + 1;
  return w;
}

struct Canonicalization {
  Permutation r;
  Matrix P;
  CompartmentalMatrix A;  // A(i,j) = F(r(i), r(j))
  CanonicalWitness witness;
};

/// Layers K_L, ..., K_1 concatenated, each ascending: compartments far from
/// the outflow come first, outflow compartments last.
inline Canonicalization canonicalize(const CompartmentalMatrix& F, double strict_tol = kDefaultStrictTol) {
  auto w = check_canonical(F, strict_tol);
  if (w.is_canonical) {
    auto r = Permutation::identity(F.size());
    Matrix P = r.matrix();
    return {std::move(r), std::move(P), F, std::move(w)};
  }
  const auto layers = layer_decomposition(build_graph(F, strict_tol));
  std::vector<int> order;
  order.reserve(F.size());
  for (auto it = layers.layers.rbegin(); it != layers.layers.rend(); ++it)
    order.insert(order.end(), it->begin(), it->end());
  Permutation r(std::move(order));
  auto A = conjugate_by_permutation(F, r);
  auto aw = check_canonical(A, strict_tol);
  if (!aw.is_canonical || aw.l != F.size() + 1 - static_cast<int>(layers.layers.front().size()))
    throw Error("internal: layer permutation did not produce outflow canonical form");
  Matrix P = r.matrix();
  return {std::move(r), std::move(P), std::move(A), std::move(aw)};
}

}  // namespace comportal

#endif  // COMPORTAL_CANONICAL_HPP
