#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctxalign/common.hpp"

namespace ctxalign {

struct AnchorEntry {
  std::string token;
  std::uint64_t count = 0;
  std::vector<double> vector;
};

// Vocabulary of tokens with one fixed vector each, kept in frequency-rank
// order: descending count, ties broken lexicographically. Row i of vectors()
// belongs to token(i), so a row index is also the token's frequency rank.
class AnchorTable {
 public:
  AnchorTable() = default;
  AnchorTable(std::string space_id, Index dim);

  // Sorts entries into rank order. Throws DataError on duplicate tokens,
  // ragged vectors or non-finite values.
  static AnchorTable from_entries(std::string space_id, Index dim, std::vector<AnchorEntry> entries);

  // Takes parallel arrays that are already in rank order (checked).
  static AnchorTable from_ranked(std::string space_id, std::vector<std::string> tokens,
                                 std::vector<std::uint64_t> counts, Matrix vectors);

  const std::string& space_id() const { return space_id_; }
  void set_space_id(std::string id) { space_id_ = std::move(id); }
  Index dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }

  const std::string& token(std::size_t rank) const { return tokens_[rank]; }
  std::uint64_t count(std::size_t rank) const { return counts_[rank]; }
  auto vector(std::size_t rank) const { return vectors_.row(static_cast<Index>(rank)); }
  const Matrix& vectors() const { return vectors_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  std::optional<std::size_t> find(const std::string& token) const;
  bool contains(const std::string& token) const { return find(token).has_value(); }

  // The n most frequent entries (all of them when n >= size()).
  AnchorTable top(std::size_t n) const;
  // Same tokens and counts, new vectors (rows must match).
  AnchorTable with_vectors(Matrix vectors) const;

 private:
  std::string space_id_;
  Index dim_ = 0;
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  Matrix vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ContextualOccurrence {
  std::string token;
  std::uint64_t sentence_id = 0;
  std::uint64_t position = 0;
  Vector vector;
};

// Multiset of translation pairs with exact duplicates collapsed. Insertion
// order is kept so that iteration is reproducible.
class Dictionary {
 public:
  using Pair = std::pair<std::string, std::string>;

  // Returns false when the pair was already present.
  bool add(std::string source, std::string target);
  const std::vector<Pair>& pairs() const { return pairs_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  // Distinct source words, in first-seen order.
  std::vector<std::string> sources() const;
  // Every target listed for a source (empty when unknown).
  std::vector<std::string> targets_of(const std::string& source) const;
  // Roles of source and target exchanged.
  Dictionary inverted() const;

 private:
  std::vector<Pair> pairs_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_source_;
};

struct AlignmentMatrix {
  std::string source_space;
  std::string target_space;
  Matrix w;

  Index dim() const { return w.rows(); }
  static AlignmentMatrix identity(Index dim, std::string space = {});
};

struct ConlluToken {
  std::string form;
  std::string upos;
  int head = -1;  // 0 = artificial root, -1 = not annotated
  std::string deprel;
};

struct Sentence {
  std::string id;  // value of "# sent_id", may be empty
  std::string language;
  std::vector<ConlluToken> tokens;

  std::size_t size() const { return tokens.size(); }
  std::vector<int> heads() const;
  std::vector<std::string> forms() const;
};

using TokenizedCorpus = std::vector<std::vector<std::string>>;

// ---- static embeddings (word2vec text) ----------------------------------

// Header "V D" followed by V lines "token v1 ... vD". File order is taken as
// frequency rank; counts are rank-derived (V - rank) since the format has none.
AnchorTable load_static_embeddings(const std::string& path, std::string space_id = {});
void save_static_embeddings(const AnchorTable& table, const std::string& path);

// ---- contextual occurrences (CTXEMB v1) ---------------------------------

// Streams "token<TAB>sid<TAB>pos<TAB>v1 ... vD" records after a
// "CTXEMB 1 D" header. Holds one record at a time.
class OccurrenceReader {
 public:
  explicit OccurrenceReader(const std::string& path);

  Index dim() const { return dim_; }
  // Fills `out` with the next record; false at end of file.
  bool next(ContextualOccurrence& out);
  std::size_t line() const { return line_; }

 private:
  std::string path_;
  std::ifstream in_;
  Index dim_ = 0;
  std::size_t line_ = 0;
  std::string buffer_;
};

class OccurrenceWriter {
 public:
  OccurrenceWriter(const std::string& path, Index dim);

  void write(const std::string& token, std::uint64_t sentence_id, std::uint64_t position,
             const Eigen::Ref<const RowVector>& vector);
  void close();

 private:
  std::string path_;
  std::ofstream out_;
  Index dim_;
  std::string buffer_;
};

// Loads a whole occurrence file; only for small files and tests.
std::vector<ContextualOccurrence> load_occurrences(const std::string& path);

// Occurrence vectors grouped per sentence: sentence_id -> (n_tokens x D), rows
// ordered by position. Positions must be contiguous from 0.
struct SentenceEmbeddings {
  Index dim = 0;
  std::vector<Matrix> sentences;
};
SentenceEmbeddings load_sentence_embeddings(const std::string& path);

// ---- dictionaries -------------------------------------------------------

Dictionary load_dictionary(const std::string& path);
void save_dictionary(const Dictionary& dict, const std::string& path);

// ---- CoNLL-U ------------------------------------------------------------

struct ConlluOptions {
  // Require integer heads forming a tree; when false "_" heads load as -1.
  bool require_tree = true;
  std::string language;
};

std::vector<Sentence> load_conllu(const std::string& path, const ConlluOptions& options = {});
std::string format_conllu(const std::vector<Sentence>& sentences);
void save_conllu(const std::vector<Sentence>& sentences, const std::string& path);

// Empty string when heads form a tree rooted at 0, otherwise a description.
std::string tree_violation(const std::vector<int>& heads);

// ---- alignment matrices -------------------------------------------------

inline constexpr double kOrthogonalityTolerance = 1e-4;

AlignmentMatrix load_matrix(const std::string& path);
// Throws DataError when ||W^T W - I||_F exceeds kOrthogonalityTolerance.
void save_matrix(const AlignmentMatrix& matrix, const std::string& path);

// ---- raw corpora ---------------------------------------------------------

// One pre-tokenized sentence per line, tokens separated by spaces. Blank lines skipped.
TokenizedCorpus load_corpus(const std::string& path);
void save_corpus(const TokenizedCorpus& corpus, const std::string& path);

// Shortest decimal form that reads back to the same double.
std::string format_double(double value);

}  // namespace ctxalign
