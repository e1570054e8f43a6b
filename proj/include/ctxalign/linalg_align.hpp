#pragma once

#include <optional>
#include <vector>

#include "ctxalign/corpus_io.hpp"

namespace ctxalign {

struct Svd {
  Matrix u;   // n x r, orthonormal columns
  Vector s;   // r values, descending, non-negative
  Matrix v;   // m x r, orthonormal columns
};

// Thin SVD by one-sided Jacobi rotations, r = min(n, m). The largest-magnitude
// entry of every U column is made non-negative so the result is unique for
// distinct singular values. Throws NumericalError on non-finite input.
Svd svd(const Matrix& m);

// Source/target vectors stored row-wise, one pair per row.
struct PairedPointSet {
  Matrix sources;
  Matrix targets;
  std::optional<Vector> weights;

  Index dim() const { return sources.cols(); }
  Index size() const { return sources.rows(); }
};

struct DictionaryPairing {
  PairedPointSet points;
  std::size_t used = 0;
  std::size_t skipped_oov = 0;
};

// One pair per dictionary entry whose source is in `src` and target in `tgt`.
DictionaryPairing pairs_from_dictionary(const AnchorTable& src, const AnchorTable& tgt, const Dictionary& dict);

// argmin over orthogonal W of sum_i w_i ||W s_i - t_i||^2, i.e. W = U V^T from
// the SVD of sum_i w_i t_i s_i^T. Reflections are allowed.
AlignmentMatrix orthogonal_procrustes(const PairedPointSet& data);

// Rows of `vectors` mapped by W (each output row = W * input row).
Matrix apply_alignment(const AlignmentMatrix& w, const Matrix& vectors);
AnchorTable apply_alignment(const AlignmentMatrix& w, const AnchorTable& table);

// ||W^T W - I||_F
double orthogonality_error(const Matrix& w);

// Closest orthogonal matrix in Frobenius norm (polar factor U V^T).
Matrix nearest_orthogonal(const Matrix& w);

// Objective of the Procrustes problem for a candidate W.
double procrustes_objective(const Matrix& w, const PairedPointSet& data);

// Row-wise preprocessing knobs applied to a whole table before pairing.
Matrix normalize_rows(const Matrix& m);
Matrix center_rows(const Matrix& m);

}  // namespace ctxalign
