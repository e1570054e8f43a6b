#include "ctxalign/mst.hpp"

#include <cmath>
#include <limits>

#include "ctxalign/corpus_io.hpp"

namespace ctxalign {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Returns parent[v] for v in [0, n), parent[0] = -1.
std::vector<int> cle(const Matrix& s) {
  const int n = static_cast<int>(s.rows());
  std::vector<int> parent(static_cast<std::size_t>(n), -1);
  for (int v = 1; v < n; ++v) {
    double best = kNegInf;
    for (int u = 0; u < n; ++u) {
      if (u != v && s(u, v) > best) {
        best = s(u, v);
        parent[static_cast<std::size_t>(v)] = u;
      }
    }
    if (parent[static_cast<std::size_t>(v)] < 0) throw DataError("mst: node has no finite incoming arc");
  }

  // Look for a cycle among the greedy choices. Each walk paints its path
  // with its start label; meeting the same label again closes a cycle.
  std::vector<int> color(static_cast<std::size_t>(n), 0);
  std::vector<int> cycle;
  for (int start = 1; start < n && cycle.empty(); ++start) {
    int v = start;
    while (v > 0 && color[static_cast<std::size_t>(v)] == 0) {
      color[static_cast<std::size_t>(v)] = start;
      v = parent[static_cast<std::size_t>(v)];
    }
    if (v > 0 && color[static_cast<std::size_t>(v)] == start) {
      int u = v;
      do {
        cycle.push_back(u);
        u = parent[static_cast<std::size_t>(u)];
      } while (u != v);
    }
  }
  if (cycle.empty()) return parent;

  std::vector<bool> in_cycle(static_cast<std::size_t>(n), false);
  for (int c : cycle) in_cycle[static_cast<std::size_t>(c)] = true;

  // Contracted graph: kept nodes in original order, then the cycle node.
  std::vector<int> kept;
  std::vector<int> new_id(static_cast<std::size_t>(n), -1);
  for (int v = 0; v < n; ++v) {
    if (!in_cycle[static_cast<std::size_t>(v)]) {
      new_id[static_cast<std::size_t>(v)] = static_cast<int>(kept.size());
      kept.push_back(v);
    }
  }
  const int m = static_cast<int>(kept.size()) + 1;
  const int c = m - 1;
  Matrix t = Matrix::Constant(m, m, kNegInf);
  std::vector<int> enter_at(static_cast<std::size_t>(m), -1);  // kept head u -> cycle node entered
  std::vector<int> leave_from(static_cast<std::size_t>(m), -1);  // kept dependent v -> cycle node used as head
  for (int a = 0; a < c; ++a) {
    const int u = kept[static_cast<std::size_t>(a)];
    for (int b = 0; b < c; ++b) {
      if (a != b) t(a, b) = s(u, kept[static_cast<std::size_t>(b)]);
    }
    for (int v : cycle) {
      double w = s(u, v);
      if (w == kNegInf) continue;
      w -= s(parent[static_cast<std::size_t>(v)], v);
      if (w > t(a, c)) {
        t(a, c) = w;
        enter_at[static_cast<std::size_t>(a)] = v;
      }
    }
  }
  for (int b = 1; b < c; ++b) {
    const int v = kept[static_cast<std::size_t>(b)];
    for (int u : cycle) {
      if (s(u, v) > t(c, b)) {
        t(c, b) = s(u, v);
        leave_from[static_cast<std::size_t>(b)] = u;
      }
    }
  }

  std::vector<int> sub = cle(t);
  std::vector<int> result = parent;  // cycle nodes keep their cycle parent unless broken below
  for (int b = 1; b < c; ++b) {
    const int head = sub[static_cast<std::size_t>(b)];
    const int v = kept[static_cast<std::size_t>(b)];
    result[static_cast<std::size_t>(v)] =
        head == c ? leave_from[static_cast<std::size_t>(b)] : kept[static_cast<std::size_t>(head)];
  }
  const int cycle_head = sub[static_cast<std::size_t>(c)];
  const int entered = enter_at[static_cast<std::size_t>(cycle_head)];
  result[static_cast<std::size_t>(entered)] = kept[static_cast<std::size_t>(cycle_head)];
  return result;
}

void check_square(const Matrix& scores) {
  if (scores.rows() != scores.cols() || scores.rows() < 1) throw DataError("mst: score matrix must be square");
  for (Index i = 0; i < scores.size(); ++i) {
    double v = scores.data()[i];
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) throw DataError("mst: scores must be finite or -inf");
  }
}

std::vector<int> words_only(const std::vector<int>& parent) {
  return std::vector<int>(parent.begin() + 1, parent.end());
}

#ifndef NDEBUG
void assert_tree(const std::vector<int>& heads) {
  std::string violation = tree_violation(heads);
  if (!violation.empty()) throw NumericalError("mst produced an invalid tree: " + violation);
}
#endif

}  // namespace

std::vector<int> chu_liu_edmonds(const Matrix& scores) {
  check_square(scores);
  if (scores.rows() == 1) return {};
  Matrix s = scores;
  s.col(0).setConstant(kNegInf);
  s.diagonal().setConstant(kNegInf);
  auto heads = words_only(cle(s));
#ifndef NDEBUG
  assert_tree(heads);
#endif
  return heads;
}

std::vector<int> mst_single_root(const Matrix& scores) {
  check_square(scores);
  const Index n = scores.rows() - 1;
  if (n == 0) return {};
  std::vector<int> best;
  double best_score = kNegInf;
  for (Index child = 1; child <= n; ++child) {
    if (scores(0, child) == kNegInf) continue;
    Matrix s = scores;
    for (Index j = 1; j <= n; ++j) {
      if (j != child) s(0, j) = kNegInf;
    }
    std::vector<int> heads;
    try {
      heads = chu_liu_edmonds(s);
    } catch (const DataError&) {
      continue;
    }
    double total = tree_score(scores, heads);
    if (best.empty() || total > best_score) {
      best_score = total;
      best = std::move(heads);
    }
  }
  if (best.empty()) throw DataError("mst: no single-root tree has a finite score");
  return best;
}

std::vector<int> mst_decode(const Matrix& scores, bool single_root) {
  return single_root ? mst_single_root(scores) : chu_liu_edmonds(scores);
}

double tree_score(const Matrix& scores, const std::vector<int>& heads) {
  double total = 0.0;
  for (std::size_t j = 0; j < heads.size(); ++j) total += scores(heads[j], static_cast<Index>(j + 1));
  return total;
}

}  // namespace ctxalign
