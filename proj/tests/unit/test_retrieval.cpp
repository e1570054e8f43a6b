#include <cmath>
#include <set>

#include "ctxalign/linalg_align.hpp"
#include "ctxalign/retrieval.hpp"
#include "ctxalign/synth.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ctxalign;

namespace {

AnchorTable table(const std::string& prefix, const Matrix& v) {
  std::vector<std::string> tokens;
  std::vector<std::uint64_t> counts;
  for (Index i = 0; i < v.rows(); ++i) {
    tokens.push_back(prefix + std::to_string(i));
    counts.push_back(static_cast<std::uint64_t>(v.rows() - i));
  }
  return AnchorTable::from_ranked(prefix, tokens, counts, v);
}

Dictionary identity_dict(std::size_t n, const std::string& s, const std::string& t) {
  Dictionary d;
  for (std::size_t i = 0; i < n; ++i) d.add(s + std::to_string(i), t + std::to_string(i));
  return d;
}

}  // namespace

TEST_CASE("csls: singleton tables collapse to zero") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    Matrix x = test_util::random_matrix(1, 4, rng), y = test_util::random_matrix(1, 4, rng);
    RetrievalSpace space(x, y, 1);
    auto hit = space.nearest_targets({0}, 1, Metric::csls);
    CHECK(std::abs(hit[0][0].score) < 1e-12);
  }
}

TEST_CASE("csls: hand computed three-target example demotes the hub") {
  Matrix src(1, 2), tgt(3, 2);
  src << 1, 0;
  tgt << 1, 0, 0, 1, 0.8, 0.6;
  auto lists = csls_knn(table("s", src), table("t", tgt), 3, 1);
  REQUIRE(lists[0].neighbors.size() == 3);
  CHECK(lists[0].neighbors[0].token == "t0");
  CHECK(lists[0].neighbors[0].score == doctest::Approx(0.0));
  CHECK(lists[0].neighbors[1].token == "t2");
  CHECK(lists[0].neighbors[1].score == doctest::Approx(-0.2));
  CHECK(lists[0].neighbors[2].score == doctest::Approx(-1.0));
  CHECK(csls_score(0.8, 1.0, 0.8) == doctest::Approx(-0.2));
}

TEST_CASE("csls: hubness correction changes a cosine ranking") {
  // q sits between t0 and the hub h; another source lies exactly on h.
  auto unit = [](double deg) {
    RowVector v(2);
    v << std::cos(deg * M_PI / 180), std::sin(deg * M_PI / 180);
    return v;
  };
  Matrix src(2, 2), tgt(2, 2);
  src << unit(31), unit(60);
  tgt << unit(0), unit(60);
  RetrievalSpace space(src, tgt, 1);
  CHECK(space.nearest_targets({0}, 1, Metric::cosine)[0][0].index == 1);
  CHECK(space.nearest_targets({0}, 1, Metric::csls)[0][0].index == 0);
}

TEST_CASE("retrieval: identical tables retrieve themselves") {
  std::mt19937_64 rng(2);
  auto t = table("w", test_util::random_matrix(200, 16, rng));
  for (Metric m : {Metric::cosine, Metric::csls}) {
    auto lists = csls_knn(t, t, 1, 10, m);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(lists[i].neighbors[0].token == t.token(i));
  }
}

TEST_CASE("retrieval: scores are non-increasing and lists have at most k entries") {
  std::mt19937_64 rng(3);
  auto s = table("s", test_util::random_matrix(40, 6, rng));
  auto t = table("t", test_util::random_matrix(7, 6, rng));
  auto lists = csls_knn(s, t, 10, 3);
  for (const auto& l : lists) {
    CHECK(l.neighbors.size() == 7);
    for (std::size_t i = 1; i < l.neighbors.size(); ++i) CHECK(l.neighbors[i - 1].score >= l.neighbors[i].score);
  }
  CHECK_THROWS_AS(csls_knn(s, AnchorTable("t", 6), 1), DataError);
}

TEST_CASE("retrieval: ties go to the more frequent target") {
  Matrix src(1, 2), tgt(3, 2);
  src << 1, 0;
  tgt << 0, 1, 1, 0, 1, 0;
  auto lists = csls_knn(table("s", src), table("t", tgt), 2, 1, Metric::cosine);
  CHECK(lists[0].neighbors[0].token == "t1");
  CHECK(lists[0].neighbors[1].token == "t2");
}

TEST_CASE("retrieval: csls ranking is invariant to positive rescaling") {
  std::mt19937_64 rng(4);
  Matrix s = test_util::random_matrix(30, 5, rng), t = test_util::random_matrix(30, 5, rng);
  auto a = csls_knn(table("s", s), table("t", t), 5);
  auto b = csls_knn(table("s", 3.7 * s), table("t", 0.2 * t), 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(a[i].neighbors[j].token == b[i].neighbors[j].token);
  }
}

TEST_CASE("translation precision: identity setup is perfect") {
  std::mt19937_64 rng(5);
  auto t = table("w", test_util::random_matrix(100, 8, rng));
  Dictionary d = identity_dict(100, "w", "w");
  auto r = translation_precision(AlignmentMatrix::identity(8), t, t, d, 1, Metric::csls);
  CHECK(r.precision_at_k == 1.0);
  CHECK(r.evaluated == 100);
  CHECK(r.skipped_oov == 0);
}

TEST_CASE("translation precision: synthetic rotation with Procrustes") {
  RotatedAnchorsSpec spec;
  spec.dim = 10;
  spec.vocab = 1000;
  spec.sigma = 0.01;
  spec.seed = 6;
  auto r = synth_rotated_anchors(spec);
  auto w = orthogonal_procrustes(pairs_from_dictionary(r.src, r.tgt, r.dict).points);
  for (Metric m : {Metric::cosine, Metric::csls}) {
    auto rep = translation_precision(w, r.src, r.tgt, r.dict, 1, m);
    CHECK(rep.precision_at_k >= 0.99);
    CHECK(rep.evaluated == 1000);
  }
}

TEST_CASE("translation precision: any-match, OOV counting, monotone in k, empty errors") {
  std::mt19937_64 rng(7);
  RotatedAnchorsSpec spec;
  spec.dim = 6;
  spec.vocab = 300;
  spec.sigma = 0.3;
  spec.seed = 7;
  auto r = synth_rotated_anchors(spec);
  AlignmentMatrix w{"s", "t", r.q};
  Dictionary d = r.dict;
  d.add("s0", "t5");           // second gold target for s0
  d.add("nope", "t1");         // OOV source
  d.add("s1", "missing");      // OOV target only; s1 still has t1
  double prev = 0.0;
  for (int k : {1, 2, 5, 10, 50}) {
    auto rep = translation_precision(w, r.src, r.tgt, d, k, Metric::csls);
    CHECK(rep.precision_at_k >= prev);
    prev = rep.precision_at_k;
    CHECK(rep.skipped_oov == 1);
    CHECK(rep.evaluated == 300);
  }
  CHECK_THROWS_AS(translation_precision(w, r.src, r.tgt, Dictionary{}, 1, Metric::csls), DataError);
  Dictionary oov;
  oov.add("x", "y");
  CHECK_THROWS_AS(translation_precision(w, r.src, r.tgt, oov, 1, Metric::csls), DataError);
}

TEST_CASE("translation precision: vocabulary cap removes rare words") {
  std::mt19937_64 rng(8);
  auto t = table("w", test_util::random_matrix(50, 4, rng));
  TranslationOptions opts;
  opts.vocab_cap = 20;
  auto rep = translation_precision(AlignmentMatrix::identity(4), t, t, identity_dict(50, "w", "w"), 1,
                                   Metric::cosine, opts);
  CHECK(rep.evaluated == 20);
  CHECK(rep.skipped_oov == 30);
}

TEST_CASE("synthetic dictionary: identical tables give the identity dictionary") {
  std::mt19937_64 rng(9);
  auto t = table("w", test_util::random_matrix(120, 8, rng));
  auto d = build_synthetic_dictionary(t, t, 100, 10);
  CHECK(d.size() == 100);
  for (const auto& [s, tt] : d.pairs()) CHECK(s == tt);
}

TEST_CASE("synthetic dictionary: mutual only") {
  // s0 and t0 are mutual; s1's nearest is t0 but t0 prefers s0.
  Matrix s(2, 2), t(2, 2);
  s << 1, 0, 0.9, 0.1;
  t << 1, 0, -1, 0.2;
  auto pairs = mutual_nearest_pairs(s, t, 10, 1);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0] == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK_THROWS_AS(build_synthetic_dictionary(table("s", s), AnchorTable("t", 2), 10, 1), DataError);
}

TEST_CASE("synthetic dictionary: symmetric under swapped roles") {
  std::mt19937_64 rng(10);
  Matrix s = test_util::random_matrix(80, 6, rng), t = test_util::random_matrix(90, 6, rng);
  auto fwd = mutual_nearest_pairs(s, t, 60, 5);
  auto bwd = mutual_nearest_pairs(t, s, 60, 5);
  std::set<std::pair<std::size_t, std::size_t>> a(fwd.begin(), fwd.end()), b;
  for (auto [x, y] : bwd) b.emplace(y, x);
  CHECK(a == b);
}

TEST_CASE("synthetic dictionary: recovers the generating pairs on rotated data") {
  RotatedAnchorsSpec spec;
  spec.dim = 20;
  spec.vocab = 1500;
  spec.sigma = 0.05;
  spec.seed = 11;
  auto r = synth_rotated_anchors(spec);
  auto mapped = apply_alignment(AlignmentMatrix{"s", "t", r.q}, r.src);
  auto d = build_synthetic_dictionary(mapped, r.tgt, 1000, 10);
  std::size_t good = 0;
  for (const auto& [s, t] : d.pairs()) good += ("t" + s.substr(1)) == t ? 1 : 0;
  CHECK(static_cast<double>(good) / static_cast<double>(d.size()) >= 0.95);
}

TEST_CASE("mean_topk_similarity matches a direct computation") {
  std::mt19937_64 rng(12);
  Matrix q = normalize_rows(test_util::random_matrix(9, 4, rng));
  Matrix p = normalize_rows(test_util::random_matrix(13, 4, rng));
  Vector got = mean_topk_similarity(q, p, 3, 2);
  for (Index i = 0; i < 9; ++i) {
    std::vector<double> sims;
    for (Index j = 0; j < 13; ++j) sims.push_back(q.row(i).dot(p.row(j)));
    std::sort(sims.rbegin(), sims.rend());
    CHECK(got(i) == doctest::Approx((sims[0] + sims[1] + sims[2]) / 3.0));
  }
}
