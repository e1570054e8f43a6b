#include <algorithm>
#include <cmath>
#include <limits>

#include "ctxalign/mst.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ctxalign;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Matrix random_scores(int n, std::mt19937_64& rng) {
  Matrix s = test_util::random_matrix(n + 1, n + 1, rng);
  for (int i = 0; i <= n; ++i) {
    s(i, 0) = kNegInf;
    s(i, i) = kNegInf;
  }
  return s;
}

bool is_tree(const std::vector<int>& heads) {
  const int n = static_cast<int>(heads.size());
  for (int j = 1; j <= n; ++j) {
    int h = heads[static_cast<std::size_t>(j - 1)];
    if (h < 0 || h > n || h == j) return false;
    int steps = 0, cur = j;
    while (cur != 0) {
      cur = heads[static_cast<std::size_t>(cur - 1)];
      if (++steps > n) return false;
    }
  }
  return true;
}

int root_children(const std::vector<int>& heads) {
  return static_cast<int>(std::count(heads.begin(), heads.end(), 0));
}

// Enumerates every head assignment and keeps the best tree.
double brute_force(const Matrix& s, bool single_root) {
  const int n = static_cast<int>(s.rows()) - 1;
  std::vector<int> heads(static_cast<std::size_t>(n), 0);
  double best = kNegInf;
  while (true) {
    if (is_tree(heads) && (!single_root || root_children(heads) == 1)) best = std::max(best, tree_score(s, heads));
    int k = 0;
    while (k < n && ++heads[static_cast<std::size_t>(k)] > n) heads[static_cast<std::size_t>(k++)] = 0;
    if (k == n) break;
  }
  return best;
}

}  // namespace

TEST_CASE("mst: matches exhaustive enumeration for n <= 4") {
  std::mt19937_64 rng(1);
  int agree = 0, agree_single = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + trial % 4;
    Matrix s = random_scores(n, rng);
    auto h = chu_liu_edmonds(s);
    REQUIRE(is_tree(h));
    agree += std::abs(tree_score(s, h) - brute_force(s, false)) < 1e-9 ? 1 : 0;
    auto r = mst_single_root(s);
    REQUIRE(is_tree(r));
    CHECK(root_children(r) == 1);
    agree_single += std::abs(tree_score(s, r) - brute_force(s, true)) < 1e-9 ? 1 : 0;
  }
  CHECK(agree == 1000);
  CHECK(agree_single == 1000);
}

TEST_CASE("mst: greedy heads form a cycle that must be contracted") {
  // Greedy picks 1<-2 and 2<-1; the optimum breaks the cycle through the root.
  Matrix s = Matrix::Constant(3, 3, kNegInf);
  s(2, 1) = 10;
  s(1, 2) = 10;
  s(0, 1) = 1;
  s(0, 2) = 5;
  auto h = chu_liu_edmonds(s);
  CHECK(h == std::vector<int>{2, 0});
  CHECK(tree_score(s, h) == 15.0);
}

TEST_CASE("mst: structural invariants on larger random matrices") {
  std::mt19937_64 rng(2);
  for (int n : {5, 10, 20, 35, 50}) {
    for (int rep = 0; rep < 5; ++rep) {
      Matrix s = random_scores(n, rng);
      auto h = chu_liu_edmonds(s);
      REQUIRE(h.size() == static_cast<std::size_t>(n));
      CHECK(is_tree(h));
      auto r = mst_single_root(s);
      CHECK(is_tree(r));
      CHECK(root_children(r) == 1);
      CHECK(tree_score(s, h) >= tree_score(s, r) - 1e-12);
      // no single head change into a tree improves the result
      for (int j = 1; j <= n; ++j) {
        for (int i = 0; i <= n; ++i) {
          auto alt = h;
          alt[static_cast<std::size_t>(j - 1)] = i;
          if (i != j && is_tree(alt)) CHECK(tree_score(s, alt) <= tree_score(s, h) + 1e-9);
        }
      }
    }
  }
}

TEST_CASE("mst: trivial sizes, dispatch and missing arcs") {
  CHECK(mst_decode(Matrix::Zero(1, 1)).empty());
  Matrix one(2, 2);
  one << kNegInf, 0.3, kNegInf, kNegInf;
  CHECK(chu_liu_edmonds(one) == std::vector<int>{0});
  CHECK(mst_decode(one, true) == std::vector<int>{0});

  // root arcs favour two root children; single-root decoding must pick one
  Matrix s = Matrix::Constant(3, 3, kNegInf);
  s(0, 1) = 5;
  s(0, 2) = 5;
  s(1, 2) = 1;
  s(2, 1) = 1;
  CHECK(root_children(mst_decode(s, false)) == 2);
  auto single = mst_decode(s, true);
  CHECK(root_children(single) == 1);
  CHECK(single == std::vector<int>{0, 1});  // ties go to the lower index

  Matrix orphan = Matrix::Constant(3, 3, kNegInf);
  orphan(0, 1) = 1;
  CHECK_THROWS_AS(chu_liu_edmonds(orphan), DataError);
}
