#include <cmath>

#include <Eigen/SVD>

#include "ctxalign/linalg_align.hpp"
#include "ctxalign/synth.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ctxalign;

namespace {

Matrix rotation2(double a) {
  Matrix r(2, 2);
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return r;
}

PairedPointSet rotated_pairs(const Matrix& q, std::size_t n, double sigma, std::mt19937_64& rng) {
  PairedPointSet p;
  p.sources = test_util::random_matrix(static_cast<Index>(n), q.rows(), rng);
  p.targets = p.sources * q.transpose() + sigma * test_util::random_matrix(static_cast<Index>(n), q.rows(), rng);
  return p;
}

}  // namespace

TEST_CASE("svd: identity and diagonal") {
  auto s = svd(Matrix::Identity(3, 3));
  CHECK(s.s.isApprox(Vector::Ones(3)));
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 3;
  d(1, 1) = 2;
  auto t = svd(d);
  CHECK(t.s(0) == doctest::Approx(3));
  CHECK(t.s(1) == doctest::Approx(2));
}

TEST_CASE("svd: random rectangular reconstruction, orthonormality and order") {
  std::mt19937_64 rng(1);
  for (auto [n, m] : {std::pair<Index, Index>{8, 5}, {5, 8}, {20, 20}}) {
    Matrix a = test_util::random_matrix(n, m, rng);
    auto s = svd(a);
    Matrix rec = s.u * s.s.asDiagonal() * s.v.transpose();
    CHECK((rec - a).norm() < 1e-8 * a.norm());
    const Index r = std::min(n, m);
    CHECK((s.u.transpose() * s.u - Matrix::Identity(r, r)).norm() < 1e-8);
    CHECK((s.v.transpose() * s.v - Matrix::Identity(r, r)).norm() < 1e-8);
    for (Index i = 1; i < r; ++i) CHECK(s.s(i - 1) >= s.s(i));
    CHECK(s.s.minCoeff() >= 0.0);
    // sign convention and determinism
    for (Index c = 0; c < r; ++c) {
      Index arg;
      s.u.col(c).cwiseAbs().maxCoeff(&arg);
      CHECK(s.u(arg, c) >= 0.0);
    }
    auto again = svd(a);
    CHECK(again.u == s.u);
    CHECK(again.s == s.s);
  }
}

TEST_CASE("svd: agrees with Eigen's singular values") {
  std::mt19937_64 rng(2);
  Matrix a = test_util::random_matrix(12, 7, rng);
  Eigen::JacobiSVD<Matrix> ref(a);
  CHECK((svd(a).s - ref.singularValues()).norm() < 1e-10);
}

TEST_CASE("svd: rank-deficient input still reconstructs") {
  std::mt19937_64 rng(3);
  Matrix b = test_util::random_matrix(6, 2, rng);
  Matrix a = b * b.transpose();
  auto s = svd(a);
  CHECK((s.u * s.s.asDiagonal() * s.v.transpose() - a).norm() < 1e-8 * a.norm());
  CHECK(s.s(2) < 1e-8);
}

TEST_CASE("svd: non-finite input throws") {
  Matrix a = Matrix::Identity(2, 2);
  a(0, 1) = std::nan("");
  CHECK_THROWS_AS(svd(a), NumericalError);
}

TEST_CASE("procrustes: identity pairs and forced 90 degree rotation") {
  PairedPointSet p;
  p.sources = Matrix::Identity(3, 3);
  p.targets = p.sources;
  CHECK((orthogonal_procrustes(p).w - Matrix::Identity(3, 3)).norm() < 1e-12);

  PairedPointSet q;
  q.sources = Matrix(2, 2);
  q.targets = Matrix(2, 2);
  q.sources << 1, 0, 0, 1;
  q.targets << 0, 1, -1, 0;
  Matrix expect(2, 2);
  expect << 0, -1, 1, 0;
  CHECK((orthogonal_procrustes(q).w - expect).norm() < 1e-12);
}

TEST_CASE("procrustes: recovers a rotation under noise") {
  std::mt19937_64 rng(4);
  Matrix q = random_orthogonal(10, rng);
  auto p = rotated_pairs(q, 500, 0.01, rng);
  auto w = orthogonal_procrustes(p);
  CHECK((w.w - q).norm() < 0.05);
  CHECK(orthogonality_error(w.w) < 1e-6);
}

TEST_CASE("procrustes: weighted pairs and too few pairs stay orthogonal") {
  std::mt19937_64 rng(5);
  Matrix q = random_orthogonal(6, rng);
  auto p = rotated_pairs(q, 3, 0.0, rng);
  CHECK(orthogonality_error(orthogonal_procrustes(p).w) < 1e-8);
  auto full = rotated_pairs(q, 40, 0.0, rng);
  full.weights = Vector::Constant(40, 2.0);
  CHECK((orthogonal_procrustes(full).w - q).norm() < 1e-8);
}

TEST_CASE("procrustes: degenerate pairing") {
  PairedPointSet p;
  p.sources = Matrix::Zero(3, 2);
  p.targets = Matrix::Ones(3, 2);
  CHECK_THROWS_AS(orthogonal_procrustes(p), DataError);
}

TEST_CASE("procrustes: optimal against a grid of 2D rotations and reflections") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    PairedPointSet p;
    p.sources = test_util::random_matrix(15, 2, rng);
    p.targets = test_util::random_matrix(15, 2, rng);
    double best = procrustes_objective(orthogonal_procrustes(p).w, p);
    Matrix flip = Matrix::Identity(2, 2);
    flip(1, 1) = -1;
    for (int k = 0; k < 3600; ++k) {
      Matrix r = rotation2(2 * M_PI * k / 3600.0);
      CHECK(best <= procrustes_objective(r, p) + 1e-9);
      CHECK(best <= procrustes_objective(r * flip, p) + 1e-9);
    }
  }
}

TEST_CASE("procrustes: beats identity and random orthogonal matrices") {
  std::mt19937_64 rng(7);
  PairedPointSet p;
  p.sources = test_util::random_matrix(50, 8, rng);
  p.targets = test_util::random_matrix(50, 8, rng);
  double best = procrustes_objective(orthogonal_procrustes(p).w, p);
  CHECK(best <= procrustes_objective(Matrix::Identity(8, 8), p));
  for (int i = 0; i < 100; ++i) CHECK(best <= procrustes_objective(random_orthogonal(8, rng), p) + 1e-9);
}

TEST_CASE("procrustes: equivariance under pre-rotation of the sources") {
  std::mt19937_64 rng(8);
  PairedPointSet p;
  p.sources = test_util::random_matrix(30, 5, rng);
  p.targets = test_util::random_matrix(30, 5, rng);
  Matrix r = random_orthogonal(5, rng);
  Matrix w = orthogonal_procrustes(p).w;
  PairedPointSet rotated = p;
  rotated.sources = p.sources * r.transpose();
  CHECK((orthogonal_procrustes(rotated).w - w * r.transpose()).norm() < 1e-6);
}

TEST_CASE("apply_alignment: identity, rotation, isometry, dimension check") {
  Matrix x(1, 2);
  x << 1, 0;
  AlignmentMatrix id = AlignmentMatrix::identity(2);
  CHECK(apply_alignment(id, x) == x);
  AlignmentMatrix r{"a", "b", rotation2(M_PI / 2)};
  Matrix y = apply_alignment(r, x);
  CHECK(std::abs(y(0, 0)) < 1e-12);
  CHECK(y(0, 1) == doctest::Approx(1.0));

  std::mt19937_64 rng(9);
  AlignmentMatrix q{"a", "b", random_orthogonal(7, rng)};
  Matrix pts = test_util::random_matrix(20, 7, rng);
  Matrix mapped = apply_alignment(q, pts);
  for (Index i = 0; i < 20; ++i) {
    CHECK(mapped.row(i).norm() == doctest::Approx(pts.row(i).norm()).epsilon(1e-9));
    for (Index j = 0; j < i; ++j) {
      double c0 = pts.row(i).dot(pts.row(j)) / (pts.row(i).norm() * pts.row(j).norm());
      double c1 = mapped.row(i).dot(mapped.row(j)) / (mapped.row(i).norm() * mapped.row(j).norm());
      CHECK(std::abs(c0 - c1) < 1e-6);
    }
  }
  CHECK_THROWS_AS(apply_alignment(q, Matrix::Zero(2, 3)), DataError);
}

TEST_CASE("orthogonality_error") {
  CHECK(orthogonality_error(Matrix::Identity(4, 4)) == 0.0);
  CHECK(orthogonality_error(2.0 * Matrix::Identity(3, 3)) == doctest::Approx(3.0 * std::sqrt(3.0)));
  std::mt19937_64 rng(10);
  CHECK(orthogonality_error(random_orthogonal(12, rng)) < 1e-12);
}

TEST_CASE("nearest_orthogonal projects onto the orthogonal group") {
  std::mt19937_64 rng(11);
  Matrix q = random_orthogonal(6, rng);
  Matrix noisy = q + 0.01 * test_util::random_matrix(6, 6, rng);
  Matrix p = nearest_orthogonal(noisy);
  CHECK(orthogonality_error(p) < 1e-10);
  CHECK((p - q).norm() < (noisy - q).norm() + 1e-12);
}

TEST_CASE("pairs_from_dictionary counts out-of-vocabulary entries") {
  Matrix v = Matrix::Identity(2, 2);
  auto src = AnchorTable::from_ranked("s", {"a", "b"}, {2, 1}, v);
  auto tgt = AnchorTable::from_ranked("t", {"x", "y"}, {2, 1}, v);
  Dictionary d;
  d.add("a", "x");
  d.add("a", "y");
  d.add("b", "zz");
  d.add("q", "x");
  auto p = pairs_from_dictionary(src, tgt, d);
  CHECK(p.used == 2);
  CHECK(p.skipped_oov == 2);
  CHECK(p.points.size() == 2);
}

TEST_CASE("row preprocessing") {
  Matrix m(2, 2);
  m << 3, 4, 1, 0;
  Matrix n = normalize_rows(m);
  CHECK(n.row(0).norm() == doctest::Approx(1.0));
  CHECK(n(0, 0) == doctest::Approx(0.6));
  Matrix c = center_rows(m);
  CHECK(c.colwise().sum().norm() < 1e-12);
}
