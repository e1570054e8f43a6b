#include "ctxalign/linalg_align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ctxalign {

namespace {

// Hestenes one-sided Jacobi on a tall matrix (rows >= cols): orthogonalizes
// the columns of `a` while accumulating the rotations in `v`.
void jacobi_orthogonalize(Matrix& a, Matrix& v) {
  const Index m = a.cols();
  constexpr double eps = 1e-15;
  for (int sweep = 0; sweep < 80; ++sweep) {
    bool rotated = false;
    for (Index p = 0; p + 1 < m; ++p) {
      for (Index q = p + 1; q < m; ++q) {
        double alpha = a.col(p).squaredNorm();
        double beta = a.col(q).squaredNorm();
        double gamma = a.col(p).dot(a.col(q));
        if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        double zeta = (beta - alpha) / (2.0 * gamma);
        double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = c * t;
        for (Index i = 0; i < a.rows(); ++i) {
          double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (Index i = 0; i < v.rows(); ++i) {
          double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
}

// Fills columns [from, cols) of `u` with unit vectors orthogonal to all previous ones.
void complete_basis(Matrix& u, Index from) {
  const Index n = u.rows();
  Index candidate = 0;
  for (Index j = from; j < u.cols(); ++j) {
    while (candidate < n) {
      Vector e = Vector::Unit(n, candidate++);
      for (int pass = 0; pass < 2; ++pass) {
        for (Index k = 0; k < j; ++k) e -= u.col(k).dot(e) * u.col(k);
      }
      double norm = e.norm();
      if (norm > 1e-6) {
        u.col(j) = e / norm;
        break;
      }
    }
  }
}

Svd svd_tall(const Matrix& m) {
  const Index n = m.rows(), r = m.cols();
  Matrix a = m;
  Matrix v = Matrix::Identity(r, r);
  jacobi_orthogonalize(a, v);

  Vector s(r);
  for (Index j = 0; j < r; ++j) s[j] = a.col(j).norm();
  std::vector<Index> order(static_cast<std::size_t>(r));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) { return s[x] > s[y]; });

  Svd out;
  out.u = Matrix::Zero(n, r);
  out.s.resize(r);
  out.v.resize(r, r);
  const double tiny = s.size() > 0 ? s.maxCoeff() * 1e-13 : 0.0;
  Index nonzero = 0;
  for (Index k = 0; k < r; ++k) {
    Index j = order[static_cast<std::size_t>(k)];
    out.s[k] = s[j];
    out.v.col(k) = v.col(j);
    if (s[j] > tiny && s[j] > 0.0) {
      out.u.col(k) = a.col(j) / s[j];
      nonzero = k + 1;
    }
  }
  if (nonzero < r) complete_basis(out.u, nonzero);

  for (Index k = 0; k < r; ++k) {
    Index imax = 0;
    out.u.col(k).cwiseAbs().maxCoeff(&imax);
    if (out.u(imax, k) < 0) {
      out.u.col(k) *= -1.0;
      out.v.col(k) *= -1.0;
    }
  }
  return out;
}

}  // namespace

Svd svd(const Matrix& m) {
  if (!m.allFinite()) throw NumericalError("svd: non-finite input");
  if (m.rows() >= m.cols()) return svd_tall(m);
  Svd t = svd_tall(m.transpose());
  Svd out{std::move(t.v), std::move(t.s), std::move(t.u)};
  // re-apply the sign convention to the new U
  for (Index k = 0; k < out.u.cols(); ++k) {
    Index imax = 0;
    out.u.col(k).cwiseAbs().maxCoeff(&imax);
    if (out.u(imax, k) < 0) {
      out.u.col(k) *= -1.0;
      out.v.col(k) *= -1.0;
    }
  }
  return out;
}

DictionaryPairing pairs_from_dictionary(const AnchorTable& src, const AnchorTable& tgt, const Dictionary& dict) {
  if (src.dim() != tgt.dim()) {
    throw DataError("source and target spaces differ in dimension (" + std::to_string(src.dim()) + " vs " +
                    std::to_string(tgt.dim()) + ")");
  }
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  DictionaryPairing out;
  for (const auto& [s, t] : dict.pairs()) {
    auto si = src.find(s);
    auto ti = tgt.find(t);
    if (!si || !ti) {
      ++out.skipped_oov;
      continue;
    }
    rows.emplace_back(*si, *ti);
  }
  out.used = rows.size();
  out.points.sources.resize(static_cast<Index>(rows.size()), src.dim());
  out.points.targets.resize(static_cast<Index>(rows.size()), tgt.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.points.sources.row(static_cast<Index>(i)) = src.vector(rows[i].first);
    out.points.targets.row(static_cast<Index>(i)) = tgt.vector(rows[i].second);
  }
  return out;
}

AlignmentMatrix orthogonal_procrustes(const PairedPointSet& data) {
  if (data.sources.rows() == 0) throw DataError("orthogonal_procrustes: no pairs");
  if (data.sources.rows() != data.targets.rows() || data.sources.cols() != data.targets.cols()) {
    throw DataError("orthogonal_procrustes: source and target sets differ in shape");
  }
  Matrix cross;
  if (data.weights) {
    if (data.weights->size() != data.sources.rows()) throw DataError("orthogonal_procrustes: weight count");
    if ((data.weights->array() <= 0.0).any()) throw DataError("orthogonal_procrustes: weights must be positive");
    cross = data.targets.transpose() * data.weights->asDiagonal() * data.sources;
  } else {
    cross = data.targets.transpose() * data.sources;
  }
  if (!cross.allFinite()) throw NumericalError("orthogonal_procrustes: non-finite cross-covariance");
  if (cross.cwiseAbs().maxCoeff() == 0.0) throw DataError("degenerate pairing");
  Svd d = svd(cross);
  AlignmentMatrix out;
  out.w = d.u * d.v.transpose();
  return out;
}

Matrix apply_alignment(const AlignmentMatrix& w, const Matrix& vectors) {
  if (vectors.cols() != w.dim()) {
    throw DataError("apply_alignment: vectors have dimension " + std::to_string(vectors.cols()) +
                    ", matrix is " + std::to_string(w.dim()));
  }
  return vectors * w.w.transpose();
}

AnchorTable apply_alignment(const AlignmentMatrix& w, const AnchorTable& table) {
  AnchorTable out = table.with_vectors(apply_alignment(w, table.vectors()));
  if (!w.target_space.empty()) out.set_space_id(w.target_space);
  return out;
}

double orthogonality_error(const Matrix& w) {
  return (w.transpose() * w - Matrix::Identity(w.cols(), w.cols())).norm();
}

Matrix nearest_orthogonal(const Matrix& w) {
  Svd d = svd(w);
  return d.u * d.v.transpose();
}

double procrustes_objective(const Matrix& w, const PairedPointSet& data) {
  Matrix residual = data.sources * w.transpose() - data.targets;
  if (!data.weights) return residual.squaredNorm();
  return (residual.rowwise().squaredNorm().array() * data.weights->array()).sum();
}

Matrix normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (Index i = 0; i < out.rows(); ++i) {
    double n = out.row(i).norm();
    if (n > 0) out.row(i) /= n;
  }
  return out;
}

Matrix center_rows(const Matrix& m) {
  if (m.rows() == 0) return m;
  RowVector mean = m.colwise().mean();
  return m.rowwise() - mean;
}

}  // namespace ctxalign
