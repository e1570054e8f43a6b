#include "ctxalign/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "ctxalign/linalg_align.hpp"
#include "ctxalign/parallel.hpp"

namespace ctxalign {

namespace {

constexpr Index kBlock = 256;

bool better(const ScoredIndex& a, const ScoredIndex& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.index < b.index;
}

// Best k entries of a score row, ordered best first.
std::vector<ScoredIndex> top_k(const Eigen::Ref<const RowVector>& scores, int k) {
  const auto n = static_cast<std::size_t>(scores.size());
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), n);
  std::vector<ScoredIndex> all(n);
  for (std::size_t j = 0; j < n; ++j) all[j] = {j, scores[static_cast<Index>(j)]};
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kk), all.end(), better);
  all.resize(kk);
  return all;
}

}  // namespace

Metric parse_metric(const std::string& name) {
  if (name == "csls") return Metric::csls;
  if (name == "cosine" || name == "nn") return Metric::cosine;
  throw DataError("unknown metric '" + name + "' (expected csls or cosine)");
}

std::string metric_name(Metric metric) { return metric == Metric::csls ? "csls" : "cosine"; }

double csls_score(double cos_xy, double r_target_x, double r_source_y) {
  return 2.0 * cos_xy - r_target_x - r_source_y;
}

double csls_score(const Eigen::Ref<const RowVector>& x, const Eigen::Ref<const RowVector>& y, double r_target_x,
                  double r_source_y) {
  double nx = x.norm(), ny = y.norm();
  double cos = (nx > 0 && ny > 0) ? x.dot(y) / (nx * ny) : 0.0;
  return csls_score(cos, r_target_x, r_source_y);
}

Vector mean_topk_similarity(const Matrix& queries, const Matrix& pool, int k, int threads) {
  Vector out = Vector::Zero(queries.rows());
  if (pool.rows() == 0 || queries.rows() == 0) return out;
  const Index kk = std::min<Index>(std::max(k, 1), pool.rows());
  const auto blocks = static_cast<std::size_t>((queries.rows() + kBlock - 1) / kBlock);
  parallel_for(blocks, threads, [&](std::size_t b0, std::size_t b1) {
    std::vector<double> row;
    for (std::size_t b = b0; b < b1; ++b) {
      Index start = static_cast<Index>(b) * kBlock;
      Index len = std::min(kBlock, queries.rows() - start);
      Matrix sims = queries.middleRows(start, len) * pool.transpose();
      for (Index i = 0; i < len; ++i) {
        row.resize(static_cast<std::size_t>(sims.cols()));
        for (Index j = 0; j < sims.cols(); ++j) row[static_cast<std::size_t>(j)] = sims(i, j);
        std::nth_element(row.begin(), row.begin() + (kk - 1), row.end(), std::greater<>());
        double sum = 0.0;
        for (Index j = 0; j < kk; ++j) sum += row[static_cast<std::size_t>(j)];
        out[start + i] = sum / static_cast<double>(kk);
      }
    }
  });
  return out;
}

RetrievalSpace::RetrievalSpace(const Matrix& sources, const Matrix& targets, int k_csls, int threads)
    : src_(normalize_rows(sources)), tgt_(normalize_rows(targets)), threads_(threads) {
  if (targets.rows() == 0) throw DataError("empty target table");
  if (sources.cols() != targets.cols()) throw DataError("source and target dimension differ");
  if (k_csls < 1) throw DataError("k_csls must be >= 1");
  r_target_ = mean_topk_similarity(src_, tgt_, k_csls, threads);
  r_source_ = mean_topk_similarity(tgt_, src_, k_csls, threads);
}

std::vector<std::vector<ScoredIndex>> RetrievalSpace::nearest(const Matrix& from, const Matrix& to,
                                                              const Vector& r_from, const Vector& r_to,
                                                              const std::vector<std::size_t>& rows, int k,
                                                              Metric metric, std::size_t limit) const {
  std::vector<std::vector<ScoredIndex>> out(rows.size());
  const auto cols = static_cast<Index>(std::min(static_cast<std::size_t>(to.rows()), limit));
  const auto blocks = (rows.size() + static_cast<std::size_t>(kBlock) - 1) / static_cast<std::size_t>(kBlock);
  parallel_for(blocks, threads_, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      std::size_t start = b * static_cast<std::size_t>(kBlock);
      std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(kBlock), rows.size() - start);
      Matrix q(static_cast<Index>(len), from.cols());
      for (std::size_t i = 0; i < len; ++i) q.row(static_cast<Index>(i)) = from.row(static_cast<Index>(rows[start + i]));
      Matrix scores = q * to.topRows(cols).transpose();
      if (metric == Metric::csls) {
        scores *= 2.0;
        scores.rowwise() -= r_to.head(cols).transpose();
        for (std::size_t i = 0; i < len; ++i) {
          scores.row(static_cast<Index>(i)).array() -= r_from[static_cast<Index>(rows[start + i])];
        }
      }
      for (std::size_t i = 0; i < len; ++i) out[start + i] = top_k(scores.row(static_cast<Index>(i)), k);
    }
  });
  return out;
}

std::vector<std::vector<ScoredIndex>> RetrievalSpace::nearest_targets(const std::vector<std::size_t>& source_rows,
                                                                      int k, Metric metric,
                                                                      std::size_t target_limit) const {
  return nearest(src_, tgt_, r_target_, r_source_, source_rows, k, metric, target_limit);
}

std::vector<std::vector<ScoredIndex>> RetrievalSpace::nearest_sources(const std::vector<std::size_t>& target_rows,
                                                                      int k, Metric metric,
                                                                      std::size_t source_limit) const {
  return nearest(tgt_, src_, r_source_, r_target_, target_rows, k, metric, source_limit);
}

std::vector<NeighborList> csls_knn(const AnchorTable& queries, const AnchorTable& targets, int k_retrieve,
                                   int k_csls, Metric metric, int threads) {
  if (targets.empty()) throw DataError("empty target table");
  RetrievalSpace space(queries.vectors(), targets.vectors(), k_csls, threads);
  std::vector<std::size_t> rows(queries.size());
  std::iota(rows.begin(), rows.end(), 0);
  auto found = space.nearest_targets(rows, k_retrieve, metric);
  std::vector<NeighborList> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[i].query = queries.token(i);
    for (const auto& hit : found[i]) out[i].neighbors.push_back({targets.token(hit.index), hit.score});
  }
  return out;
}

TranslationReport translation_precision(const AlignmentMatrix& w, const AnchorTable& src, const AnchorTable& tgt,
                                        const Dictionary& dict, int k, Metric metric,
                                        const TranslationOptions& options) {
  if (dict.empty()) throw DataError("translation_precision: empty dictionary");
  if (k < 1) throw DataError("translation_precision: k must be >= 1");
  AnchorTable src_cap = src.top(options.vocab_cap);
  AnchorTable tgt_cap = tgt.top(options.vocab_cap);
  if (tgt_cap.empty()) throw DataError("empty target table");
  Matrix mapped = apply_alignment(w, src_cap.vectors());

  TranslationReport report;
  report.k = k;
  report.metric = metric;
  std::vector<std::size_t> query_rows;
  std::vector<std::vector<std::size_t>> gold;
  for (const auto& source : dict.sources()) {
    auto row = src_cap.find(source);
    std::vector<std::size_t> targets;
    for (const auto& t : dict.targets_of(source)) {
      if (auto ti = tgt_cap.find(t)) targets.push_back(*ti);
    }
    if (!row || targets.empty()) {
      ++report.skipped_oov;
      continue;
    }
    query_rows.push_back(*row);
    gold.push_back(std::move(targets));
  }
  if (query_rows.empty()) throw DataError("translation_precision: no evaluable dictionary entries");

  RetrievalSpace space(mapped, tgt_cap.vectors(), options.k_csls, options.threads);
  auto found = space.nearest_targets(query_rows, k, metric);
  std::size_t hits = 0;
  for (std::size_t q = 0; q < query_rows.size(); ++q) {
    bool hit = std::any_of(found[q].begin(), found[q].end(), [&](const ScoredIndex& s) {
      return std::find(gold[q].begin(), gold[q].end(), s.index) != gold[q].end();
    });
    hits += hit ? 1 : 0;
  }
  report.evaluated = query_rows.size();
  report.precision_at_k = static_cast<double>(hits) / static_cast<double>(report.evaluated);
  return report;
}

std::vector<std::pair<std::size_t, std::size_t>> mutual_nearest_pairs(const Matrix& src_aligned, const Matrix& tgt,
                                                                      std::size_t max_rank, int k_csls,
                                                                      int threads) {
  RetrievalSpace space(src_aligned, tgt, k_csls, threads);
  const std::size_t ns = std::min<std::size_t>(max_rank, static_cast<std::size_t>(src_aligned.rows()));
  const std::size_t nt = std::min<std::size_t>(max_rank, static_cast<std::size_t>(tgt.rows()));
  std::vector<std::size_t> src_rows(ns), tgt_rows(nt);
  std::iota(src_rows.begin(), src_rows.end(), 0);
  std::iota(tgt_rows.begin(), tgt_rows.end(), 0);

  // candidates restricted to the first max_rank rows on both sides
  auto fwd = space.nearest_targets(src_rows, 1, Metric::csls, nt);
  auto bwd = space.nearest_sources(tgt_rows, 1, Metric::csls, ns);
  std::vector<std::size_t> forward(ns), backward(nt);
  for (std::size_t i = 0; i < ns; ++i) forward[i] = fwd[i].front().index;
  for (std::size_t j = 0; j < nt; ++j) backward[j] = bwd[j].front().index;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < ns; ++i) {
    if (backward[forward[i]] == i) pairs.emplace_back(i, forward[i]);
  }
  return pairs;
}

Dictionary build_synthetic_dictionary(const AnchorTable& src_aligned, const AnchorTable& tgt, std::size_t max_rank,
                                      int k_csls, int threads) {
  if (src_aligned.empty() || tgt.empty()) throw DataError("refinement dictionary empty");
  auto pairs = mutual_nearest_pairs(src_aligned.vectors(), tgt.vectors(), max_rank, k_csls, threads);
  if (pairs.empty()) throw DataError("refinement dictionary empty");
  Dictionary dict;
  for (const auto& [s, t] : pairs) dict.add(src_aligned.token(s), tgt.token(t));
  return dict;
}

}  // namespace ctxalign
