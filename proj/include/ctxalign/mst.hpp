#pragma once

#include <vector>

#include "ctxalign/common.hpp"

namespace ctxalign {

// Arc score matrices are (n+1) x (n+1): entry (i, j) scores head i for
// dependent j, node 0 is the artificial root. Forbidden arcs hold -inf.
// Results give the head of every word 1..n (result[j - 1]), 0 meaning root.

// Maximum spanning arborescence rooted at node 0 (Chu-Liu/Edmonds).
// Throws DataError when some word has no finite incoming arc.
std::vector<int> chu_liu_edmonds(const Matrix& scores);

// Best arborescence with exactly one child of the root: each root child is
// tried in turn with the other root arcs masked. Ties go to the lower index.
std::vector<int> mst_single_root(const Matrix& scores);

// Dispatches to one of the above. n = 0 gives an empty result.
std::vector<int> mst_decode(const Matrix& scores, bool single_root = true);

// Sum of scores(heads[j-1], j) over words.
double tree_score(const Matrix& scores, const std::vector<int>& heads);

}  // namespace ctxalign
