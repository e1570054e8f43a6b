#include "ctxalign/nn/ops.hpp"

#include <cmath>

namespace ctxalign::nn {

namespace {

void check_same_graph(Expr a, Expr b) {
  if (a.graph != b.graph) throw DataError("expressions belong to different graphs");
}

void accumulate(Graph& g, int id, const Matrix& delta) {
  if (!g.needs_grad(id)) return;
  g.grad(id) += delta;
}

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

}  // namespace

Expr matmul(Expr a, Expr b) {
  check_same_graph(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) throw DataError("matmul shape mismatch " + shape(av) + " * " + shape(bv));
  return a.graph->record(av * bv, {a.id, b.id}, [ai = a.id, bi = b.id](Graph& g, int self) {
    const Matrix& gr = g.grad(self);
    if (g.needs_grad(ai)) g.grad(ai).noalias() += gr * g.value(bi).transpose();
    if (g.needs_grad(bi)) g.grad(bi).noalias() += g.value(ai).transpose() * gr;
  });
}

Expr transpose(Expr a) {
  return a.graph->record(a.value().transpose(), {a.id}, [ai = a.id](Graph& g, int self) {
    accumulate(g, ai, g.grad(self).transpose());
  });
}

Expr add(Expr a, Expr b) {
  check_same_graph(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    return a.graph->record(av + bv, {a.id, b.id}, [ai = a.id, bi = b.id](Graph& g, int self) {
      accumulate(g, ai, g.grad(self));
      accumulate(g, bi, g.grad(self));
    });
  }
  if (bv.rows() == 1 && bv.cols() == av.cols()) {
    Matrix out = av.rowwise() + bv.row(0);
    return a.graph->record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Graph& g, int self) {
      accumulate(g, ai, g.grad(self));
      if (g.needs_grad(bi)) g.grad(bi) += g.grad(self).colwise().sum();
    });
  }
  throw DataError("add shape mismatch " + shape(av) + " + " + shape(bv));
}

Expr sub(Expr a, Expr b) {
  check_same_graph(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DataError("sub shape mismatch " + shape(a.value()) + " - " + shape(b.value()));
  }
  return a.graph->record(a.value() - b.value(), {a.id, b.id}, [ai = a.id, bi = b.id](Graph& g, int self) {
    accumulate(g, ai, g.grad(self));
    if (g.needs_grad(bi)) g.grad(bi) -= g.grad(self);
  });
}

Expr cmul(Expr a, Expr b) {
  check_same_graph(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DataError("cmul shape mismatch " + shape(a.value()) + " .* " + shape(b.value()));
  }
  return a.graph->record(a.value().cwiseProduct(b.value()), {a.id, b.id},
                         [ai = a.id, bi = b.id](Graph& g, int self) {
                           const Matrix& gr = g.grad(self);
                           if (g.needs_grad(ai)) g.grad(ai) += gr.cwiseProduct(g.value(bi));
                           if (g.needs_grad(bi)) g.grad(bi) += gr.cwiseProduct(g.value(ai));
                         });
}

Expr scale(Expr a, double factor) {
  return a.graph->record(a.value() * factor, {a.id}, [ai = a.id, factor](Graph& g, int self) {
    if (g.needs_grad(ai)) g.grad(ai) += g.grad(self) * factor;
  });
}

Expr add_constant(Expr a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw DataError("add_constant shape mismatch");
  return a.graph->record(a.value() + c, {a.id}, [ai = a.id](Graph& g, int self) { accumulate(g, ai, g.grad(self)); });
}

Expr mul_constant(Expr a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw DataError("mul_constant shape mismatch");
  return a.graph->record(a.value().cwiseProduct(c), {a.id}, [ai = a.id, c](Graph& g, int self) {
    if (g.needs_grad(ai)) g.grad(ai) += g.grad(self).cwiseProduct(c);
  });
}

Expr tanh(Expr a) {
  Matrix out = a.value().array().tanh().matrix();
  return a.graph->record(std::move(out), {a.id}, [ai = a.id](Graph& g, int self) {
    if (!g.needs_grad(ai)) return;
    const Matrix& y = g.value(self);
    g.grad(ai).array() += g.grad(self).array() * (1.0 - y.array().square());
  });
}

Expr sigmoid(Expr a) {
  Matrix out = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return a.graph->record(std::move(out), {a.id}, [ai = a.id](Graph& g, int self) {
    if (!g.needs_grad(ai)) return;
    const Matrix& y = g.value(self);
    g.grad(ai).array() += g.grad(self).array() * y.array() * (1.0 - y.array());
  });
}

Expr leaky_relu(Expr a, double slope) {
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0 ? x : slope * x; });
  return a.graph->record(std::move(out), {a.id}, [ai = a.id, slope](Graph& g, int self) {
    if (!g.needs_grad(ai)) return;
    Matrix d = g.value(ai).unaryExpr([slope](double x) { return x > 0 ? 1.0 : slope; });
    g.grad(ai) += g.grad(self).cwiseProduct(d);
  });
}

Expr elu(Expr a) {
  Matrix out = a.value().unaryExpr([](double x) { return x > 0 ? x : std::expm1(x); });
  return a.graph->record(std::move(out), {a.id}, [ai = a.id](Graph& g, int self) {
    if (!g.needs_grad(ai)) return;
    Matrix d = g.value(ai).unaryExpr([](double x) { return x > 0 ? 1.0 : std::exp(x); });
    g.grad(ai) += g.grad(self).cwiseProduct(d);
  });
}

Expr concat_cols(const std::vector<Expr>& parts) {
  if (parts.empty()) throw DataError("concat_cols of nothing");
  Index rows = parts.front().rows(), cols = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DataError("concat_cols row mismatch");
    cols += p.cols();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().graph->record(std::move(out), ids, [ids](Graph& g, int self) {
    Index at = 0;
    for (int id : ids) {
      Index c = g.value(id).cols();
      if (g.needs_grad(id)) g.grad(id) += g.grad(self).middleCols(at, c);
      at += c;
    }
  });
}

Expr concat_rows(const std::vector<Expr>& parts) {
  if (parts.empty()) throw DataError("concat_rows of nothing");
  Index cols = parts.front().cols(), rows = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DataError("concat_rows column mismatch");
    rows += p.rows();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().graph->record(std::move(out), ids, [ids](Graph& g, int self) {
    Index at = 0;
    for (int id : ids) {
      Index r = g.value(id).rows();
      if (g.needs_grad(id)) g.grad(id) += g.grad(self).middleRows(at, r);
      at += r;
    }
  });
}

Expr slice_cols(Expr a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw DataError("slice_cols out of range");
  return a.graph->record(a.value().middleCols(start, count), {a.id}, [ai = a.id, start, count](Graph& g, int self) {
    if (g.needs_grad(ai)) g.grad(ai).middleCols(start, count) += g.grad(self);
  });
}

Expr slice_rows(Expr a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw DataError("slice_rows out of range");
  return a.graph->record(a.value().middleRows(start, count), {a.id}, [ai = a.id, start, count](Graph& g, int self) {
    if (g.needs_grad(ai)) g.grad(ai).middleRows(start, count) += g.grad(self);
  });
}

Expr gather_rows(Expr a, const std::vector<Index>& rows) {
  const Matrix& av = a.value();
  Matrix out(static_cast<Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows()) throw DataError("gather_rows index out of range");
    out.row(static_cast<Index>(i)) = av.row(rows[i]);
  }
  return a.graph->record(std::move(out), {a.id}, [ai = a.id, rows](Graph& g, int self) {
    if (!g.needs_grad(ai)) return;
    Matrix& ga = g.grad(ai);
    const Matrix& gr = g.grad(self);
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += gr.row(static_cast<Index>(i));
  });
}

Expr sum(Expr a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.graph->record(std::move(out), {a.id}, [ai = a.id](Graph& g, int self) {
    if (g.needs_grad(ai)) g.grad(ai).array() += g.grad(self)(0, 0);
  });
}

Expr mean(Expr a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw DataError("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Expr squared_norm(Expr a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return a.graph->record(std::move(out), {a.id}, [ai = a.id](Graph& g, int self) {
    if (g.needs_grad(ai)) g.grad(ai) += 2.0 * g.grad(self)(0, 0) * g.value(ai);
  });
}

Expr sum_all(const std::vector<Expr>& scalars) {
  if (scalars.empty()) throw DataError("sum_all of nothing");
  Matrix out = Matrix::Zero(1, 1);
  std::vector<int> ids;
  for (const auto& s : scalars) {
    if (s.value().size() != 1) throw DataError("sum_all expects scalars");
    out(0, 0) += s.scalar();
    ids.push_back(s.id);
  }
  return scalars.front().graph->record(std::move(out), ids, [ids](Graph& g, int self) {
    double gr = g.grad(self)(0, 0);
    for (int id : ids) {
      if (g.needs_grad(id)) g.grad(id)(0, 0) += gr;
    }
  });
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

Expr softmax_cross_entropy(Expr logits, const std::vector<Index>& targets) {
  const Matrix& lv = logits.value();
  if (static_cast<Index>(targets.size()) != lv.rows()) throw DataError("softmax_cross_entropy: target count");
  Matrix logp = log_softmax_rows(lv);
  Matrix out = Matrix::Zero(1, 1);
  for (Index i = 0; i < lv.rows(); ++i) {
    Index t = targets[static_cast<std::size_t>(i)];
    if (t < 0) continue;
    if (t >= lv.cols()) throw DataError("softmax_cross_entropy: target out of range");
    out(0, 0) -= logp(i, t);
  }
  return logits.graph->record(std::move(out), {logits.id},
                              [li = logits.id, targets, logp = std::move(logp)](Graph& g, int self) {
                                if (!g.needs_grad(li)) return;
                                double gr = g.grad(self)(0, 0);
                                Matrix& gl = g.grad(li);
                                for (Index i = 0; i < logp.rows(); ++i) {
                                  Index t = targets[static_cast<std::size_t>(i)];
                                  if (t < 0) continue;
                                  gl.row(i) += gr * logp.row(i).array().exp().matrix();
                                  gl(i, t) -= gr;
                                }
                              });
}

Expr sigmoid_cross_entropy(Expr logits, const std::vector<double>& labels) {
  const Matrix& lv = logits.value();
  if (lv.cols() != 1 || static_cast<Index>(labels.size()) != lv.rows() || lv.rows() == 0) {
    throw DataError("sigmoid_cross_entropy expects n x 1 logits and n labels");
  }
  const double n = static_cast<double>(lv.rows());
  Matrix out = Matrix::Zero(1, 1);
  for (Index i = 0; i < lv.rows(); ++i) {
    double x = lv(i, 0);
    // softplus(x) - y x, stable for large |x|
    double softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    out(0, 0) += softplus - labels[static_cast<std::size_t>(i)] * x;
  }
  out(0, 0) /= n;
  return logits.graph->record(std::move(out), {logits.id}, [li = logits.id, labels, n](Graph& g, int self) {
    if (!g.needs_grad(li)) return;
    double gr = g.grad(self)(0, 0);
    const Matrix& x = g.value(li);
    Matrix& gl = g.grad(li);
    for (Index i = 0; i < x.rows(); ++i) {
      double v = x(i, 0);
      double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      gl(i, 0) += gr * (s - labels[static_cast<std::size_t>(i)]) / n;
    }
  });
}

Expr dropout(Expr a, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw DataError("dropout rate must be in [0, 1)");
  Graph& g = *a.graph;
  if (!g.training() || rate == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale_kept = 1.0 / (1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Index j = 0; j < mask.cols(); ++j) {
    for (Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(g.rng()) ? scale_kept : 0.0;
  }
  return mul_constant(a, mask);
}

Expr biaffine(Expr h1, Expr h2, Expr u, std::optional<Expr> u1, std::optional<Expr> u2, std::optional<Expr> b) {
  Graph& g = *h1.graph;
  const Index n = h1.rows(), m = h2.rows();
  Expr scores = matmul(matmul(h1, u), transpose(h2));
  if (u1) scores = add(scores, matmul(matmul(h1, *u1), g.constant(Matrix::Ones(1, m))));
  if (u2) scores = add(scores, matmul(g.constant(Matrix::Ones(n, 1)), transpose(matmul(h2, *u2))));
  if (b) scores = add(scores, matmul(matmul(g.constant(Matrix::Ones(n, 1)), *b), g.constant(Matrix::Ones(1, m))));
  return scores;
}

Expr bilinear_rows(Expr heads, Expr deps, Expr u, Index labels) {
  const Index n = heads.rows(), q = deps.cols();
  if (deps.rows() != n) throw DataError("bilinear_rows: heads and deps differ in rows");
  if (u.rows() != heads.cols() || u.cols() != labels * q) throw DataError("bilinear_rows: U has wrong shape");
  Matrix a = heads.value() * u.value();
  Matrix out(n, labels);
  const Matrix& dv = deps.value();
  for (Index i = 0; i < n; ++i) {
    for (Index r = 0; r < labels; ++r) out(i, r) = a.row(i).segment(r * q, q).dot(dv.row(i));
  }
  return heads.graph->record(
      std::move(out), {heads.id, deps.id, u.id},
      [hi = heads.id, di = deps.id, ui = u.id, labels, q, a = std::move(a)](Graph& g, int self) {
        const Matrix& gr = g.grad(self);
        const Matrix& dv = g.value(di);
        const Index n = gr.rows();
        Matrix da(n, labels * q);
        for (Index i = 0; i < n; ++i) {
          for (Index r = 0; r < labels; ++r) da.row(i).segment(r * q, q) = gr(i, r) * dv.row(i);
        }
        if (g.needs_grad(di)) {
          Matrix& gd = g.grad(di);
          for (Index i = 0; i < n; ++i) {
            for (Index r = 0; r < labels; ++r) gd.row(i) += gr(i, r) * a.row(i).segment(r * q, q);
          }
        }
        if (g.needs_grad(hi)) g.grad(hi).noalias() += da * g.value(ui).transpose();
        if (g.needs_grad(ui)) g.grad(ui).noalias() += g.value(hi).transpose() * da;
      });
}

Expr affine(Expr x, Expr w, Expr b) { return add(matmul(x, w), b); }

}  // namespace ctxalign::nn
