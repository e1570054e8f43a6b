#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxalign/corpus_io.hpp"

namespace ctxalign {

// Pull-style stream of occurrences: fills the argument and returns true, or
// returns false at end of stream.
using OccurrenceSource = std::function<bool(ContextualOccurrence&)>;

OccurrenceSource occurrences_from(OccurrenceReader& reader);
OccurrenceSource occurrences_from(const std::vector<ContextualOccurrence>& occurrences);

struct AnchorOptions {
  std::uint64_t min_count = 1;
  bool alphabetic_only = false;
  // 0 = unlimited; otherwise only the first N occurrences of a token are averaged.
  std::uint64_t max_occurrences_per_token = 0;
  std::string space_id;
};

// Running per-token sums in extended precision. Partial accumulators built
// over shards of a stream can be merged; the result does not depend on the
// order of the data beyond rounding of the final division.
class AnchorAccumulator {
 public:
  explicit AnchorAccumulator(std::uint64_t max_occurrences_per_token = 0)
      : cap_(max_occurrences_per_token) {}

  void add(const std::string& token, const Eigen::Ref<const Vector>& vector);
  void merge(const AnchorAccumulator& other);
  AnchorTable finish(const AnchorOptions& options) const;

  Index dim() const { return dim_; }

 private:
  struct Slot {
    std::vector<long double> sum;
    std::uint64_t count = 0;
  };
  std::uint64_t cap_;
  Index dim_ = 0;
  std::unordered_map<std::string, Slot> slots_;
};

// Mean occurrence vector per token.
AnchorTable compute_anchors(const OccurrenceSource& occurrences, const AnchorOptions& options);

// e_{i,c} - anchor(i). Throws DataError for tokens absent from the table.
Vector shift_from_anchor(const ContextualOccurrence& occurrence, const AnchorTable& table);

// Every code point is a Unicode letter (UTF-8 input).
bool is_alphabetic(const std::string& token);

// 1 - cos(a, b), clamped to [0, 2]. Equal vectors have distance 0; a zero
// vector against anything else has distance 1.
double cosine_distance(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b);

struct GeometryStats {
  double mean_within_cloud = 0.0;
  double mean_between_anchors = 0.0;
  std::optional<double> mean_within_subset;
  std::uint64_t tokens_counted = 0;
  std::uint64_t occurrences_counted = 0;
  std::uint64_t anchor_pairs = 0;
};

struct GeometryOptions {
  // All pairs are used up to this many anchors, sampling above it.
  std::size_t exact_pairs_limit = 2000;
  std::uint64_t sampled_pairs = 1000000;
  std::uint64_t seed = 17;
};

GeometryStats geometry_report(const OccurrenceSource& occurrences, const AnchorTable& table,
                              const std::vector<std::string>* subset = nullptr,
                              const GeometryOptions& options = {});

}  // namespace ctxalign
