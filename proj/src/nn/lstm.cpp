#include <Eigen/QR>

#include "ctxalign/nn/layers.hpp"

namespace ctxalign::nn {

Matrix xavier_uniform(Index rows, Index cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

Matrix orthogonal_init(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  const Index big = std::max(rows, cols), small = std::min(rows, cols);
  Matrix a(big, small);
  for (Index i = 0; i < big; ++i) {
    for (Index j = 0; j < small; ++j) a(i, j) = dist(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(big, small);
  // make the factorization unique (positive diagonal of R)
  Matrix r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (Index j = 0; j < small; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return rows >= cols ? q : Matrix(q.transpose());
}

Dense add_dense(ParameterSet& params, const std::string& prefix, Index in, Index out, std::mt19937_64& rng) {
  Dense d;
  d.w = &params.add(prefix + ".w", xavier_uniform(in, out, rng));
  d.b = &params.add(prefix + ".b", Matrix::Zero(1, out));
  return d;
}

Expr apply(Graph& g, const Dense& layer, Expr x) {
  return affine(x, g.parameter(*layer.w), g.parameter(*layer.b));
}

LstmLayer add_lstm(ParameterSet& params, const std::string& prefix, Index input_dim, Index hidden,
                   std::mt19937_64& rng) {
  LstmLayer layer;
  layer.input_dim = input_dim;
  layer.hidden = hidden;
  layer.wx = &params.add(prefix + ".wx", xavier_uniform(input_dim, 4 * hidden, rng));
  Matrix wh(hidden, 4 * hidden);
  for (int gate = 0; gate < 4; ++gate) wh.middleCols(gate * hidden, hidden) = orthogonal_init(hidden, hidden, rng);
  layer.wh = &params.add(prefix + ".wh", std::move(wh));
  Matrix b = Matrix::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();
  layer.b = &params.add(prefix + ".b", std::move(b));
  return layer;
}

Expr lstm_sequence(Graph& g, Expr inputs, const LstmLayer& layer, bool reverse) {
  const Index steps = inputs.rows();
  const Index h = layer.hidden;
  if (inputs.cols() != layer.input_dim) {
    throw DataError("lstm input has dimension " + std::to_string(inputs.cols()) + ", expected " +
                    std::to_string(layer.input_dim));
  }
  if (steps == 0) return g.constant(Matrix::Zero(0, h));
  Expr wh = g.parameter(*layer.wh);
  Expr projected = affine(inputs, g.parameter(*layer.wx), g.parameter(*layer.b));
  std::vector<Expr> states(static_cast<std::size_t>(steps));
  std::optional<Expr> h_prev, c_prev;
  for (Index k = 0; k < steps; ++k) {
    Index t = reverse ? steps - 1 - k : k;
    Expr gates = slice_rows(projected, t, 1);
    if (h_prev) gates = add(gates, matmul(*h_prev, wh));
    Expr ifo = sigmoid(concat_cols({slice_cols(gates, 0, 2 * h), slice_cols(gates, 3 * h, h)}));
    Expr in_gate = slice_cols(ifo, 0, h);
    Expr forget = slice_cols(ifo, h, h);
    Expr out_gate = slice_cols(ifo, 2 * h, h);
    Expr candidate = tanh(slice_cols(gates, 2 * h, h));
    Expr cell = cmul(in_gate, candidate);
    if (c_prev) cell = add(cmul(forget, *c_prev), cell);
    Expr hidden = cmul(out_gate, tanh(cell));
    states[static_cast<std::size_t>(t)] = hidden;
    h_prev = hidden;
    c_prev = cell;
  }
  return concat_rows(states);
}

BiLstm add_bilstm(ParameterSet& params, const std::string& prefix, Index input_dim, Index hidden, int layers,
                  std::mt19937_64& rng) {
  BiLstm enc;
  enc.hidden = hidden;
  for (int l = 0; l < layers; ++l) {
    Index in = l == 0 ? input_dim : 2 * hidden;
    enc.forward.push_back(add_lstm(params, prefix + ".l" + std::to_string(l) + ".fwd", in, hidden, rng));
    enc.backward.push_back(add_lstm(params, prefix + ".l" + std::to_string(l) + ".bwd", in, hidden, rng));
  }
  return enc;
}

Expr bilstm_sequence(Graph& g, Expr inputs, const BiLstm& encoder, double dropout_between) {
  Expr x = inputs;
  for (std::size_t l = 0; l < encoder.forward.size(); ++l) {
    if (l > 0) x = dropout(x, dropout_between);
    if (x.rows() == 0) return g.constant(Matrix::Zero(0, 2 * encoder.hidden));
    Expr f = lstm_sequence(g, x, encoder.forward[l], false);
    Expr b = lstm_sequence(g, x, encoder.backward[l], true);
    x = concat_cols({f, b});
  }
  return x;
}

}  // namespace ctxalign::nn
