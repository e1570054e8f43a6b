#pragma once

#include <random>
#include <string>
#include <vector>

#include "ctxalign/nn/ops.hpp"

namespace ctxalign::nn {

// uniform(-sqrt(6 / (fan_in + fan_out)), +)
Matrix xavier_uniform(Index rows, Index cols, std::mt19937_64& rng);
// Matrix with orthonormal rows or columns (whichever is fewer), from a QR of a Gaussian draw.
Matrix orthogonal_init(Index rows, Index cols, std::mt19937_64& rng);

struct Dense {
  Parameter* w = nullptr;  // in x out
  Parameter* b = nullptr;  // 1 x out
};

Dense add_dense(ParameterSet& params, const std::string& prefix, Index in, Index out, std::mt19937_64& rng);
Expr apply(Graph& g, const Dense& layer, Expr x);

// Gate layout along the 4h columns: input, forget, cell candidate, output.
struct LstmLayer {
  Parameter* wx = nullptr;  // d x 4h
  Parameter* wh = nullptr;  // h x 4h
  Parameter* b = nullptr;   // 1 x 4h
  Index input_dim = 0;
  Index hidden = 0;
};

// Xavier input kernel, orthogonal recurrent kernel per gate, zero bias with
// forget-gate bias 1.
LstmLayer add_lstm(ParameterSet& params, const std::string& prefix, Index input_dim, Index hidden,
                   std::mt19937_64& rng);

// Hidden states for a T x d input, row t = state after reading position t.
// With `reverse` the sequence is read from the end, row t still refers to
// position t. T = 0 gives a 0 x h result.
Expr lstm_sequence(Graph& g, Expr inputs, const LstmLayer& layer, bool reverse);

struct BiLstm {
  std::vector<LstmLayer> forward;
  std::vector<LstmLayer> backward;
  Index hidden = 0;
};

BiLstm add_bilstm(ParameterSet& params, const std::string& prefix, Index input_dim, Index hidden, int layers,
                  std::mt19937_64& rng);

// Stacked bidirectional encoder; each layer sees [forward ; backward] of the
// layer below. Dropout is applied between layers. Output is T x 2h.
Expr bilstm_sequence(Graph& g, Expr inputs, const BiLstm& encoder, double dropout_between = 0.0);

}  // namespace ctxalign::nn
