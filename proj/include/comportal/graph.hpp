#ifndef COMPORTAL_GRAPH_HPP
#define COMPORTAL_GRAPH_HPP

// Flow graph of a compartmental matrix: an edge i -> j for every F(j,i) > 0
// and an outflow mark on every vertex with a strictly negative column sum.

#include <algorithm>
#include <deque>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "comportal/matrix.hpp"

namespace comportal {

inline constexpr double kDefaultStrictTol = 1e-12;

struct FlowGraph {
  int n = 0;
  std::vector<std::vector<int>> out;  // out[i]: targets j with F(j,i) > tol, ascending
  std::vector<bool> outflow;

  bool has_edge(int from, int to) const {
    return std::binary_search(out[from].begin(), out[from].end(), to);
  }
  std::vector<int> outflow_vertices() const {
    std::vector<int> v;
    for (int i = 0; i < n; ++i)
      if (outflow[i]) v.push_back(i);
    return v;
  }
  std::size_t edge_count() const {
    std::size_t e = 0;
    for (const auto& o : out) e += o.size();
    return e;
  }
};

/// Entries in (0, strict_tol] count as zero; a column sum counts as negative
/// only below -strict_tol.
inline FlowGraph build_graph(const CompartmentalMatrix& F, double strict_tol = kDefaultStrictTol) {
  FlowGraph g;
  g.n = F.size();
  g.out.resize(g.n);
  g.outflow.resize(g.n);
  for (int i = 0; i < g.n; ++i) {
    for (int j = 0; j < g.n; ++j)
      if (j != i && F(j, i) > strict_tol) g.out[i].push_back(j);
    g.outflow[i] = F.colsums()(i) < -strict_tol;
  }
  return g;
}

/// Either the graph is outflow connected, or `trap` holds the maximal trap:
/// every vertex without a path to an outflow vertex (sorted, 0-based).
struct TrapReport {
  bool is_outflow_connected = false;
  std::optional<std::vector<int>> trap;
};

namespace detail {

inline std::vector<bool> reaches_outflow(const FlowGraph& g) {
  std::vector<std::vector<int>> in(g.n);
  for (int i = 0; i < g.n; ++i)
    for (int j : g.out[i]) in[j].push_back(i);
  std::vector<bool> seen(g.n, false);
  std::deque<int> queue;
  for (int i = 0; i < g.n; ++i)
    if (g.outflow[i]) {
      seen[i] = true;
      queue.push_back(i);
    }
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    for (int u : in[v])
      if (!seen[u]) {
        seen[u] = true;
        queue.push_back(u);
      }
  }
  return seen;
}

}  // namespace detail

inline TrapReport check_outflow_connected(const FlowGraph& g) {
  const auto seen = detail::reaches_outflow(g);
  std::vector<int> trap;
  for (int i = 0; i < g.n; ++i)
    if (!seen[i]) trap.push_back(i);
  TrapReport r;
  r.is_outflow_connected = trap.empty();
  if (!trap.empty()) r.trap = std::move(trap);
  return r;
}

/// Checks the trap definition directly: nonempty, no outflow vertex inside,
/// and no edge leaving the set.
inline bool is_trap(const FlowGraph& g, const std::vector<int>& K) {
  if (K.empty()) return false;
  std::vector<bool> in(g.n, false);
  for (int k : K) {
    if (k < 0 || k >= g.n) return false;
    in[k] = true;
  }
  for (int k : K) {
    if (g.outflow[k]) return false;
    for (int j : g.out[k])
      if (!in[j]) return false;
  }
  return true;
}

/// Minimal traps: sink strongly connected components that contain no outflow
/// vertex. Debug aid; the maximal trap is what check_outflow_connected reports.
inline std::vector<std::vector<int>> minimal_traps(const FlowGraph& g) {
  // Iterative Tarjan.
  std::vector<int> index(g.n, -1), low(g.n, 0), comp(g.n, -1);
  std::vector<bool> on_stack(g.n, false);
  std::vector<int> stack;
  std::vector<std::vector<int>> sccs;
  int counter = 0;
  for (int root = 0; root < g.n; ++root) {
    if (index[root] != -1) continue;
    std::vector<std::pair<int, std::size_t>> call{{root, 0}};
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!call.empty()) {
      auto& [v, next] = call.back();
      if (next < g.out[v].size()) {
        const int w = g.out[v][next++];
        if (index[w] == -1) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = true;
          call.emplace_back(w, 0);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      if (low[v] == index[v]) {
        std::vector<int> scc;
        int w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          comp[w] = static_cast<int>(sccs.size());
          scc.push_back(w);
        } while (w != v);
        std::sort(scc.begin(), scc.end());
        sccs.push_back(std::move(scc));
      }
      const int finished = v;
      call.pop_back();
      if (!call.empty()) low[call.back().first] = std::min(low[call.back().first], low[finished]);
    }
  }
  std::vector<std::vector<int>> traps;
  for (std::size_t c = 0; c < sccs.size(); ++c) {
    bool sink = true;
    for (int v : sccs[c]) {
      if (g.outflow[v]) sink = false;
      for (int w : g.out[v])
        if (comp[w] != static_cast<int>(c)) sink = false;
    }
    if (sink) traps.push_back(sccs[c]);
  }
  std::sort(traps.begin(), traps.end());
  return traps;
}

/// K_1 = outflow vertices; K_m = vertices outside K_1..K_{m-1} with an edge
/// into K_{m-1}. Each layer is sorted ascending.
struct LayerDecomposition {
  std::vector<std::vector<int>> layers;
  int count() const noexcept { return static_cast<int>(layers.size()); }
};

class NotOutflowConnectedError : public PreconditionError {
public:
  explicit NotOutflowConnectedError(TrapReport report)
      : PreconditionError("matrix is not outflow connected (contains a trap)"),
        report_(std::move(report)) {}
  const TrapReport& report() const noexcept { return report_; }

private:
  TrapReport report_;
};

inline LayerDecomposition layer_decomposition(const FlowGraph& g) {
  auto trap = check_outflow_connected(g);
  if (!trap.is_outflow_connected) throw NotOutflowConnectedError(std::move(trap));

  LayerDecomposition d;
  std::vector<bool> placed(g.n, false);
  std::vector<int> layer = g.outflow_vertices();
  int placed_count = 0;
  while (!layer.empty()) {
    for (int v : layer) placed[v] = true;
    placed_count += static_cast<int>(layer.size());
    d.layers.push_back(layer);
    if (placed_count == g.n) break;
    std::vector<bool> in_prev(g.n, false);
    for (int v : layer) in_prev[v] = true;
    std::vector<int> next;
    for (int i = 0; i < g.n; ++i) {
      if (placed[i]) continue;
      for (int j : g.out[i])
        if (in_prev[j]) {
          next.push_back(i);
          break;
        }
    }
    layer = std::move(next);
  }
  return d;
}

class NotATrapError : public PreconditionError {
public:
  using PreconditionError::PreconditionError;
};

/// sum_{j in K} (F x)_j. For a trap K and x >= 0 this is >= 0: mass inside a
/// trap can only be fed from outside.
inline double trap_mass_flux(const CompartmentalMatrix& F, const std::vector<int>& K, const Vector& x,
                             double strict_tol = kDefaultStrictTol) {
  if (x.size() != F.size()) throw InvalidArgument("state dimension does not match matrix");
  if ((x.array() < 0).any()) throw InvalidArgument("state must be componentwise nonnegative");
  if (!is_trap(build_graph(F, strict_tol), K)) throw NotATrapError("vertex set is not a trap");
  const Vector Fx = F.matrix() * x;
  double s = 0.0;
  for (int k : K) s += Fx(k);
  return s;
}

/// DOT rendering; outflow vertices are double circles, labels are 1-based.
inline std::string to_dot(const FlowGraph& g) {
  std::ostringstream os;
  os << "digraph flow {\n";
  for (int i = 0; i < g.n; ++i)
    os << "  v" << i + 1 << " [label=\"" << i + 1 << "\", shape="
       << (g.outflow[i] ? "doublecircle" : "circle") << "];\n";
  for (int i = 0; i < g.n; ++i)
    for (int j : g.out[i]) os << "  v" << i + 1 << " -> v" << j + 1 << ";\n";
  os << "}\n";
  return os.str();
}

}  // namespace comportal

#endif  // COMPORTAL_GRAPH_HPP
