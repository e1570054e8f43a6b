#pragma once

#include <optional>
#include <vector>

#include "ctxalign/nn/graph.hpp"

namespace ctxalign::nn {

// Used instead of -inf inside graphs so every node value stays finite.
inline constexpr double kMaskedScore = -1e9;

Expr matmul(Expr a, Expr b);
Expr transpose(Expr a);
// Same shape, or `b` a 1 x cols row broadcast over the rows of `a`.
Expr add(Expr a, Expr b);
Expr sub(Expr a, Expr b);
Expr cmul(Expr a, Expr b);
Expr scale(Expr a, double factor);
// a + c for a constant c of the same shape (masks, offsets).
Expr add_constant(Expr a, const Matrix& c);
// a .* c for a constant c of the same shape.
Expr mul_constant(Expr a, const Matrix& c);

Expr tanh(Expr a);
Expr sigmoid(Expr a);
Expr leaky_relu(Expr a, double slope);
Expr elu(Expr a);

Expr concat_cols(const std::vector<Expr>& parts);
Expr concat_rows(const std::vector<Expr>& parts);
Expr slice_cols(Expr a, Index start, Index count);
Expr slice_rows(Expr a, Index start, Index count);
// Row lookup: out.row(i) = a.row(rows[i]). Gradient is scatter-added.
Expr gather_rows(Expr a, const std::vector<Index>& rows);

Expr sum(Expr a);
Expr mean(Expr a);
Expr squared_norm(Expr a);
Expr sum_all(const std::vector<Expr>& scalars);

// Sum over rows of -log softmax(row)[target]. Rows with target < 0 are skipped.
Expr softmax_cross_entropy(Expr logits, const std::vector<Index>& targets);
// Mean binary cross-entropy of sigmoid(logits) (n x 1) against soft labels.
Expr sigmoid_cross_entropy(Expr logits, const std::vector<double>& labels);

// Inverted dropout: in training graphs keeps each entry with probability
// 1 - rate and scales it by 1 / (1 - rate); otherwise the identity.
Expr dropout(Expr a, double rate);

// scores(i, j) = h1_i^T U h2_j + u1 . h1_i + u2 . h2_j + b
// h1: n x p, h2: m x q, U: p x q, u1: p x 1, u2: q x 1, b: 1 x 1.
Expr biaffine(Expr h1, Expr h2, Expr u, std::optional<Expr> u1 = std::nullopt,
              std::optional<Expr> u2 = std::nullopt, std::optional<Expr> b = std::nullopt);

// Per-row bilinear forms for `labels` relations at once:
// out(i, r) = heads_i^T U_r deps_i, where U (p x labels*q) stacks U_r as
// column blocks. heads: n x p, deps: n x q.
Expr bilinear_rows(Expr heads, Expr deps, Expr u, Index labels);

// Dense affine layer x W + b (b broadcast over rows).
Expr affine(Expr x, Expr w, Expr b);

// Host-side helpers (no graph).
Matrix log_softmax_rows(const Matrix& logits);

}  // namespace ctxalign::nn
