#include "ctxalign/anchor_space.hpp"

#include <algorithm>
#include <locale.h>
#include <wctype.h>
#include <random>
#include <unordered_set>

namespace ctxalign {

OccurrenceSource occurrences_from(OccurrenceReader& reader) {
  return [&reader](ContextualOccurrence& occ) { return reader.next(occ); };
}

OccurrenceSource occurrences_from(const std::vector<ContextualOccurrence>& occurrences) {
  return [&occurrences, i = std::size_t{0}](ContextualOccurrence& occ) mutable {
    if (i >= occurrences.size()) return false;
    occ = occurrences[i++];
    return true;
  };
}

void AnchorAccumulator::add(const std::string& token, const Eigen::Ref<const Vector>& vector) {
  if (dim_ == 0) {
    if (vector.size() == 0) throw DataError("occurrence vector is empty");
    dim_ = vector.size();
  } else if (vector.size() != dim_) {
    throw DataError("occurrence of '" + token + "' has dimension " + std::to_string(vector.size()) +
                    ", expected " + std::to_string(dim_));
  }
  auto& slot = slots_[token];
  if (cap_ != 0 && slot.count >= cap_) return;
  if (slot.sum.empty()) slot.sum.assign(static_cast<std::size_t>(dim_), 0.0L);
  for (Index k = 0; k < dim_; ++k) slot.sum[static_cast<std::size_t>(k)] += vector[k];
  ++slot.count;
}

void AnchorAccumulator::merge(const AnchorAccumulator& other) {
  if (other.dim_ == 0) return;
  if (dim_ == 0) dim_ = other.dim_;
  if (dim_ != other.dim_) throw DataError("cannot merge accumulators of different dimension");
  for (const auto& [token, theirs] : other.slots_) {
    auto& mine = slots_[token];
    if (mine.sum.empty()) mine.sum.assign(static_cast<std::size_t>(dim_), 0.0L);
    for (std::size_t k = 0; k < mine.sum.size(); ++k) mine.sum[k] += theirs.sum[k];
    mine.count += theirs.count;
  }
}

AnchorTable AnchorAccumulator::finish(const AnchorOptions& options) const {
  std::vector<AnchorEntry> entries;
  for (const auto& [token, slot] : slots_) {
    if (slot.count < options.min_count || slot.count == 0) continue;
    if (options.alphabetic_only && !is_alphabetic(token)) continue;
    AnchorEntry e;
    e.token = token;
    e.count = slot.count;
    e.vector.resize(slot.sum.size());
    for (std::size_t k = 0; k < slot.sum.size(); ++k) {
      e.vector[k] = static_cast<double>(slot.sum[k] / static_cast<long double>(slot.count));
    }
    entries.push_back(std::move(e));
  }
  Index dim = dim_ > 0 ? dim_ : 1;
  return AnchorTable::from_entries(options.space_id, dim, std::move(entries));
}

AnchorTable compute_anchors(const OccurrenceSource& occurrences, const AnchorOptions& options) {
  AnchorAccumulator acc(options.max_occurrences_per_token);
  ContextualOccurrence occ;
  while (occurrences(occ)) acc.add(occ.token, occ.vector);
  return acc.finish(options);
}

Vector shift_from_anchor(const ContextualOccurrence& occurrence, const AnchorTable& table) {
  auto row = table.find(occurrence.token);
  if (!row) throw DataError("token '" + occurrence.token + "' has no anchor");
  if (occurrence.vector.size() != table.dim()) throw DataError("occurrence dimension differs from table");
  return occurrence.vector - table.vector(*row).transpose();
}

namespace {

// Decodes one UTF-8 code point at p; returns 0 bytes consumed on malformed input.
std::size_t decode_utf8(const unsigned char* p, const unsigned char* end, char32_t& cp) {
  unsigned char c = *p;
  std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
  if (len == 0 || static_cast<std::size_t>(end - p) < len) return 0;
  cp = len == 1 ? c : len == 2 ? (c & 0x1F) : len == 3 ? (c & 0x0F) : (c & 0x07);
  for (std::size_t i = 1; i < len; ++i) {
    if ((p[i] & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (p[i] & 0x3F);
  }
  return len;
}

}  // namespace

bool is_alphabetic(const std::string& token) {
  static const locale_t utf8 = newlocale(LC_CTYPE_MASK, "C.UTF-8", static_cast<locale_t>(0));
  if (token.empty()) return false;
  auto p = reinterpret_cast<const unsigned char*>(token.data());
  auto end = p + token.size();
  while (p < end) {
    char32_t cp = 0;
    std::size_t n = decode_utf8(p, end, cp);
    if (n == 0) return false;
    bool alpha;
    if (cp < 0x80 || utf8 == static_cast<locale_t>(0)) {
      alpha = (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
    } else {
      // glibc's alpha class also admits non-ASCII decimal digits
      alpha = iswalpha_l(static_cast<wint_t>(cp), utf8) != 0 && iswdigit_l(static_cast<wint_t>(cp), utf8) == 0;
    }
    if (!alpha) return false;
    p += n;
  }
  return true;
}

double cosine_distance(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b) {
  if (a == b) return 0.0;
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  double d = 1.0 - a.dot(b) / (na * nb);
  return std::clamp(d, 0.0, 2.0);
}

GeometryStats geometry_report(const OccurrenceSource& occurrences, const AnchorTable& table,
                              const std::vector<std::string>* subset, const GeometryOptions& options) {
  GeometryStats stats;
  std::unordered_set<std::string> subset_set;
  if (subset) subset_set.insert(subset->begin(), subset->end());

  long double within = 0.0L, within_subset = 0.0L;
  std::uint64_t subset_occ = 0;
  std::vector<bool> seen(table.size(), false);
  ContextualOccurrence occ;
  while (occurrences(occ)) {
    auto row = table.find(occ.token);
    if (!row) continue;
    if (occ.vector.size() != table.dim()) throw DataError("occurrence dimension differs from table");
    double d = cosine_distance(occ.vector.transpose(), table.vector(*row));
    within += d;
    ++stats.occurrences_counted;
    if (!seen[*row]) {
      seen[*row] = true;
      ++stats.tokens_counted;
    }
    if (subset && subset_set.count(occ.token)) {
      within_subset += d;
      ++subset_occ;
    }
  }
  if (stats.occurrences_counted > 0) {
    stats.mean_within_cloud = static_cast<double>(within / static_cast<long double>(stats.occurrences_counted));
  }
  if (subset) {
    stats.mean_within_subset =
        subset_occ > 0 ? static_cast<double>(within_subset / static_cast<long double>(subset_occ)) : 0.0;
  }

  const std::size_t n = table.size();
  long double between = 0.0L;
  if (n >= 2 && n <= options.exact_pairs_limit) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        between += cosine_distance(table.vector(i), table.vector(j));
        ++stats.anchor_pairs;
      }
    }
  } else if (n > options.exact_pairs_limit) {
    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (stats.anchor_pairs < options.sampled_pairs) {
      std::size_t i = pick(rng), j = pick(rng);
      if (i == j) continue;
      between += cosine_distance(table.vector(i), table.vector(j));
      ++stats.anchor_pairs;
    }
  }
  if (stats.anchor_pairs > 0) {
    stats.mean_between_anchors = static_cast<double>(between / static_cast<long double>(stats.anchor_pairs));
  }
  return stats;
}

}  // namespace ctxalign
