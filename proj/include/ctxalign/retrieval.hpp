#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxalign/corpus_io.hpp"

namespace ctxalign {

enum class Metric { cosine, csls };

Metric parse_metric(const std::string& name);
std::string metric_name(Metric metric);

// 2 cos(x, y) - r_target(x) - r_source(y)
double csls_score(double cos_xy, double r_target_x, double r_source_y);
double csls_score(const Eigen::Ref<const RowVector>& x, const Eigen::Ref<const RowVector>& y, double r_target_x,
                  double r_source_y);

struct ScoredIndex {
  std::size_t index = 0;
  double score = 0.0;
};

// For every row of `queries`, the mean cosine to its k most similar rows of
// `pool`. Both inputs must be row-normalized.
Vector mean_topk_similarity(const Matrix& queries, const Matrix& pool, int k, int threads = 1);

// Source and target points of one shared space, normalized, with the CSLS
// neighborhood terms precomputed. Read-only after construction.
class RetrievalSpace {
 public:
  RetrievalSpace(const Matrix& sources, const Matrix& targets, int k_csls, int threads = 1);

  // Top-k targets for each listed source row, best first. Ties go to the
  // lower index, i.e. the more frequent target.
  // `target_limit` restricts candidates to the first rows of the target side.
  std::vector<std::vector<ScoredIndex>> nearest_targets(const std::vector<std::size_t>& source_rows, int k,
                                                        Metric metric, std::size_t target_limit = SIZE_MAX) const;
  // Same in the opposite direction.
  std::vector<std::vector<ScoredIndex>> nearest_sources(const std::vector<std::size_t>& target_rows, int k,
                                                        Metric metric, std::size_t source_limit = SIZE_MAX) const;

  const Vector& r_target() const { return r_target_; }  // per source row
  const Vector& r_source() const { return r_source_; }  // per target row
  Index source_count() const { return src_.rows(); }
  Index target_count() const { return tgt_.rows(); }

 private:
  std::vector<std::vector<ScoredIndex>> nearest(const Matrix& from, const Matrix& to, const Vector& r_from,
                                                const Vector& r_to, const std::vector<std::size_t>& rows, int k,
                                                Metric metric, std::size_t limit) const;
  Matrix src_, tgt_;
  Vector r_target_, r_source_;
  int threads_;
};

struct Neighbor {
  std::string token;
  double score = 0.0;
};

struct NeighborList {
  std::string query;
  std::vector<Neighbor> neighbors;
};

// Neighbor lists for every entry of `queries` (already mapped into the target
// space) against `targets`. rS is computed over the whole query table.
std::vector<NeighborList> csls_knn(const AnchorTable& queries, const AnchorTable& targets, int k_retrieve,
                                   int k_csls = 10, Metric metric = Metric::csls, int threads = 1);

struct TranslationReport {
  int k = 1;
  Metric metric = Metric::csls;
  double precision_at_k = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped_oov = 0;
};

struct TranslationOptions {
  std::size_t vocab_cap = 50000;
  int k_csls = 10;
  int threads = 1;
};

// Word-translation precision@k: a dictionary source word counts as a hit when
// any of its gold targets is among the k retrieved neighbors.
TranslationReport translation_precision(const AlignmentMatrix& w, const AnchorTable& src, const AnchorTable& tgt,
                                        const Dictionary& dict, int k, Metric metric,
                                        const TranslationOptions& options = {});

// Mutual CSLS nearest neighbors among the first max_rank rows of each side.
std::vector<std::pair<std::size_t, std::size_t>> mutual_nearest_pairs(const Matrix& src_aligned,
                                                                      const Matrix& tgt, std::size_t max_rank,
                                                                      int k_csls, int threads = 1);

// Token form of mutual_nearest_pairs. Throws DataError("refinement dictionary
// empty") when no pair survives.
Dictionary build_synthetic_dictionary(const AnchorTable& src_aligned, const AnchorTable& tgt,
                                      std::size_t max_rank = 10000, int k_csls = 10, int threads = 1);

}  // namespace ctxalign
