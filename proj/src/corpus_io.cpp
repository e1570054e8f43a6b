#include "ctxalign/corpus_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace ctxalign {

namespace {

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path + " for reading");
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  return out;
}

void finish_output(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw Error("write failed: " + path);
}

// Splits on runs of spaces (and tabs when `tabs` is set).
std::vector<std::string_view> split_ws(std::string_view line, bool tabs = true) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  auto is_sep = [tabs](char c) { return c == ' ' || (tabs && c == '\t') || c == '\r'; };
  while (i < line.size()) {
    while (i < line.size() && is_sep(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_sep(line[j])) ++j;
    if (j > i) fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

std::vector<std::string_view> split_char(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

bool parse_double(std::string_view text, double& value) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

template <typename Int>
bool parse_int(std::string_view text, Int& value) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

void append_vector(std::string& out, const Eigen::Ref<const RowVector>& v) {
  for (Index k = 0; k < v.size(); ++k) {
    if (k > 0) out.push_back(' ');
    out += format_double(v[k]);
  }
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("cannot format number");
  return std::string(buf, ptr);
}

// ---- AnchorTable ---------------------------------------------------------

AnchorTable::AnchorTable(std::string space_id, Index dim)
    : space_id_(std::move(space_id)), dim_(dim), vectors_(0, dim) {
  if (dim <= 0) throw DataError("anchor table dimension must be positive");
}

AnchorTable AnchorTable::from_entries(std::string space_id, Index dim,
                                      std::vector<AnchorEntry> entries) {
  std::sort(entries.begin(), entries.end(), [](const AnchorEntry& a, const AnchorEntry& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.token < b.token;
  });
  std::vector<std::string> tokens;
  std::vector<std::uint64_t> counts;
  Matrix vectors(static_cast<Index>(entries.size()), dim);
  tokens.reserve(entries.size());
  counts.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (static_cast<Index>(e.vector.size()) != dim) {
      throw DataError("vector for '" + e.token + "' has " + std::to_string(e.vector.size()) +
                      " components, expected " + std::to_string(dim));
    }
    for (Index k = 0; k < dim; ++k) vectors(static_cast<Index>(i), k) = e.vector[k];
    tokens.push_back(std::move(e.token));
    counts.push_back(e.count);
  }
  return from_ranked(std::move(space_id), std::move(tokens), std::move(counts), std::move(vectors));
}

AnchorTable AnchorTable::from_ranked(std::string space_id, std::vector<std::string> tokens,
                                     std::vector<std::uint64_t> counts, Matrix vectors) {
  if (tokens.size() != counts.size() || static_cast<Index>(tokens.size()) != vectors.rows()) {
    throw DataError("anchor table arrays disagree in length");
  }
  AnchorTable table(std::move(space_id), vectors.cols());
  if (!vectors.allFinite()) throw DataError("anchor table contains a non-finite value");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw DataError("empty token in anchor table");
    if (i > 0) {
      bool ordered = counts[i - 1] > counts[i] ||
                     (counts[i - 1] == counts[i] && tokens[i - 1] < tokens[i]);
      if (!ordered && tokens[i - 1] != tokens[i]) {
        throw DataError("anchor table not in frequency-rank order at '" + tokens[i] + "'");
      }
    }
    if (!table.index_.emplace(tokens[i], i).second) {
      throw DataError("duplicate token '" + tokens[i] + "'");
    }
  }
  table.tokens_ = std::move(tokens);
  table.counts_ = std::move(counts);
  table.vectors_ = std::move(vectors);
  return table;
}

std::optional<std::size_t> AnchorTable::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

AnchorTable AnchorTable::top(std::size_t n) const {
  if (n >= size()) return *this;
  std::vector<std::string> tokens(tokens_.begin(), tokens_.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<std::uint64_t> counts(counts_.begin(), counts_.begin() + static_cast<std::ptrdiff_t>(n));
  Matrix vectors = vectors_.topRows(static_cast<Index>(n));
  AnchorTable out(space_id_, dim_);
  out.tokens_ = std::move(tokens);
  out.counts_ = std::move(counts);
  out.vectors_ = std::move(vectors);
  for (std::size_t i = 0; i < out.tokens_.size(); ++i) out.index_.emplace(out.tokens_[i], i);
  return out;
}

AnchorTable AnchorTable::with_vectors(Matrix vectors) const {
  if (vectors.rows() != static_cast<Index>(size())) {
    throw DataError("replacement vectors have wrong row count");
  }
  AnchorTable out = *this;
  out.dim_ = vectors.cols();
  out.vectors_ = std::move(vectors);
  return out;
}

// ---- Dictionary ----------------------------------------------------------

bool Dictionary::add(std::string source, std::string target) {
  auto& rows = by_source_[source];
  for (auto idx : rows) {
    if (pairs_[idx].second == target) return false;
  }
  rows.push_back(pairs_.size());
  pairs_.emplace_back(std::move(source), std::move(target));
  return true;
}

std::vector<std::string> Dictionary::sources() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& [s, t] : pairs_) {
    if (seen.insert(s).second) out.push_back(s);
  }
  return out;
}

std::vector<std::string> Dictionary::targets_of(const std::string& source) const {
  std::vector<std::string> out;
  auto it = by_source_.find(source);
  if (it == by_source_.end()) return out;
  for (auto idx : it->second) out.push_back(pairs_[idx].second);
  return out;
}

Dictionary Dictionary::inverted() const {
  Dictionary out;
  for (const auto& [s, t] : pairs_) out.add(t, s);
  return out;
}

AlignmentMatrix AlignmentMatrix::identity(Index dim, std::string space) {
  AlignmentMatrix m;
  m.source_space = space;
  m.target_space = std::move(space);
  m.w = Matrix::Identity(dim, dim);
  return m;
}

std::vector<int> Sentence::heads() const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.head);
  return out;
}

std::vector<std::string> Sentence::forms() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.form);
  return out;
}

// ---- word2vec text -------------------------------------------------------

AnchorTable load_static_embeddings(const std::string& path, std::string space_id) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, 1, "missing header");
  auto header = split_ws(strip_cr(line));
  std::size_t vocab = 0;
  Index dim = 0;
  if (header.size() != 2 || !parse_int(header[0], vocab) || !parse_int(header[1], dim) || dim <= 0) {
    throw ParseError(path, 1, "header must be \"V D\" with D > 0");
  }
  if (space_id.empty()) space_id = path;

  std::vector<std::string> tokens;
  std::vector<std::uint64_t> counts;
  Matrix vectors(static_cast<Index>(vocab), dim);
  std::unordered_set<std::string> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = split_ws(strip_cr(line), false);
    if (fields.empty()) continue;
    if (tokens.size() == vocab) throw ParseError(path, lineno, "more rows than the header declares");
    if (static_cast<Index>(fields.size()) != dim + 1) {
      throw ParseError(path, lineno, "expected " + std::to_string(dim) + " values, found " +
                                         std::to_string(fields.size() - 1));
    }
    std::string token(fields[0]);
    if (!seen.insert(token).second) throw ParseError(path, lineno, "duplicate token '" + token + "'");
    auto row = static_cast<Index>(tokens.size());
    for (Index k = 0; k < dim; ++k) {
      double v;
      if (!parse_double(fields[static_cast<std::size_t>(k) + 1], v) || !std::isfinite(v)) {
        throw ParseError(path, lineno, "bad number '" + std::string(fields[k + 1]) + "'");
      }
      vectors(row, k) = v;
    }
    tokens.push_back(std::move(token));
    counts.push_back(vocab - tokens.size() + 1);
  }
  if (tokens.size() != vocab) {
    throw ParseError(path, lineno, "header declares " + std::to_string(vocab) + " rows, found " +
                                       std::to_string(tokens.size()));
  }
  return AnchorTable::from_ranked(std::move(space_id), std::move(tokens), std::move(counts),
                                  std::move(vectors));
}

void save_static_embeddings(const AnchorTable& table, const std::string& path) {
  if (!table.vectors().allFinite()) throw DataError("refusing to save non-finite embeddings");
  auto out = open_output(path);
  std::string buf;
  buf += std::to_string(table.size()) + " " + std::to_string(table.dim()) + "\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    buf += table.token(i);
    buf.push_back(' ');
    append_vector(buf, table.vector(i));
    buf.push_back('\n');
    if (buf.size() > (1u << 20)) {
      out << buf;
      buf.clear();
    }
  }
  out << buf;
  finish_output(out, path);
}

// ---- CTXEMB --------------------------------------------------------------

OccurrenceReader::OccurrenceReader(const std::string& path) : path_(path), in_(open_input(path)) {
  if (!std::getline(in_, buffer_)) throw ParseError(path_, 1, "missing CTXEMB header");
  line_ = 1;
  auto header = split_ws(strip_cr(buffer_));
  int version = 0;
  if (header.size() != 3 || header[0] != "CTXEMB" || !parse_int(header[1], version) ||
      !parse_int(header[2], dim_) || dim_ <= 0) {
    throw ParseError(path_, 1, "header must be \"CTXEMB 1 D\"");
  }
  if (version != 1) throw ParseError(path_, 1, "unsupported CTXEMB version " + std::to_string(version));
}

bool OccurrenceReader::next(ContextualOccurrence& out) {
  while (std::getline(in_, buffer_)) {
    ++line_;
    std::string_view line = strip_cr(buffer_);
    if (line.empty()) continue;
    auto fields = split_char(line, '\t');
    if (fields.size() != 4) throw ParseError(path_, line_, "record must have 4 tab-separated fields");
    if (fields[0].empty()) throw ParseError(path_, line_, "empty token");
    if (!parse_int(fields[1], out.sentence_id)) throw ParseError(path_, line_, "bad sentence id");
    if (!parse_int(fields[2], out.position)) throw ParseError(path_, line_, "bad position");
    out.token.assign(fields[0]);
    out.vector.resize(dim_);
    std::string_view values = fields[3];
    Index k = 0;
    std::size_t i = 0;
    while (i < values.size()) {
      while (i < values.size() && values[i] == ' ') ++i;
      if (i >= values.size()) break;
      std::size_t j = i;
      while (j < values.size() && values[j] != ' ') ++j;
      if (k >= dim_) throw ParseError(path_, line_, "more than " + std::to_string(dim_) + " values");
      double v;
      if (!parse_double(values.substr(i, j - i), v) || !std::isfinite(v)) {
        throw ParseError(path_, line_, "bad number '" + std::string(values.substr(i, j - i)) + "'");
      }
      out.vector[k++] = v;
      i = j;
    }
    if (k != dim_) {
      throw ParseError(path_, line_, "expected " + std::to_string(dim_) + " values, found " + std::to_string(k));
    }
    return true;
  }
  return false;
}

OccurrenceWriter::OccurrenceWriter(const std::string& path, Index dim)
    : path_(path), out_(open_output(path)), dim_(dim) {
  if (dim <= 0) throw DataError("occurrence dimension must be positive");
  out_ << "CTXEMB 1 " << dim << "\n";
}

void OccurrenceWriter::write(const std::string& token, std::uint64_t sentence_id, std::uint64_t position,
                             const Eigen::Ref<const RowVector>& vector) {
  if (vector.size() != dim_) throw DataError("occurrence vector has wrong dimension");
  if (!vector.allFinite()) throw DataError("refusing to write non-finite occurrence vector");
  if (token.empty() || token.find_first_of("\t\n") != std::string::npos) {
    throw DataError("token not representable in CTXEMB: '" + token + "'");
  }
  buffer_.clear();
  buffer_ += token;
  buffer_.push_back('\t');
  buffer_ += std::to_string(sentence_id);
  buffer_.push_back('\t');
  buffer_ += std::to_string(position);
  buffer_.push_back('\t');
  append_vector(buffer_, vector);
  buffer_.push_back('\n');
  out_ << buffer_;
}

void OccurrenceWriter::close() {
  finish_output(out_, path_);
  out_.close();
}

std::vector<ContextualOccurrence> load_occurrences(const std::string& path) {
  OccurrenceReader reader(path);
  std::vector<ContextualOccurrence> out;
  ContextualOccurrence occ;
  while (reader.next(occ)) out.push_back(occ);
  return out;
}

SentenceEmbeddings load_sentence_embeddings(const std::string& path) {
  OccurrenceReader reader(path);
  SentenceEmbeddings out;
  out.dim = reader.dim();
  std::vector<std::vector<RowVector>> rows;
  ContextualOccurrence occ;
  while (reader.next(occ)) {
    if (occ.sentence_id >= rows.size()) rows.resize(occ.sentence_id + 1);
    auto& sent = rows[occ.sentence_id];
    if (occ.position != sent.size()) {
      throw ParseError(path, reader.line(), "positions of sentence " + std::to_string(occ.sentence_id) +
                                                " are not contiguous from 0");
    }
    sent.push_back(occ.vector.transpose());
  }
  out.sentences.reserve(rows.size());
  for (auto& sent : rows) {
    Matrix m(static_cast<Index>(sent.size()), out.dim);
    for (std::size_t i = 0; i < sent.size(); ++i) m.row(static_cast<Index>(i)) = sent[i];
    out.sentences.push_back(std::move(m));
  }
  return out;
}

// ---- dictionary ----------------------------------------------------------

Dictionary load_dictionary(const std::string& path) {
  auto in = open_input(path);
  Dictionary dict;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = strip_cr(line);
    if (view.empty()) continue;
    auto fields = split_char(view, '\t');
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw ParseError(path, lineno, "expected exactly 2 tab-separated fields");
    }
    dict.add(std::string(fields[0]), std::string(fields[1]));
  }
  return dict;
}

void save_dictionary(const Dictionary& dict, const std::string& path) {
  auto out = open_output(path);
  for (const auto& [s, t] : dict.pairs()) out << s << '\t' << t << '\n';
  finish_output(out, path);
}

// ---- CoNLL-U -------------------------------------------------------------

std::string tree_violation(const std::vector<int>& heads) {
  const int n = static_cast<int>(heads.size());
  for (int i = 0; i < n; ++i) {
    if (heads[i] < 0 || heads[i] > n) {
      return "token " + std::to_string(i + 1) + " has head " + std::to_string(heads[i]) + " outside [0, " +
             std::to_string(n) + "]";
    }
    if (heads[i] == i + 1) return "token " + std::to_string(i + 1) + " heads itself";
  }
  // 0 = unvisited, 1 = on current path, 2 = reaches root
  std::vector<int> state(static_cast<std::size_t>(n) + 1, 0);
  state[0] = 2;
  for (int start = 1; start <= n; ++start) {
    std::vector<int> path;
    int node = start;
    while (state[node] == 0) {
      state[node] = 1;
      path.push_back(node);
      node = heads[node - 1];
    }
    if (state[node] == 1) return "cycle through token " + std::to_string(node);
    for (int p : path) state[p] = 2;
  }
  return {};
}

std::vector<Sentence> load_conllu(const std::string& path, const ConlluOptions& options) {
  auto in = open_input(path);
  std::vector<Sentence> out;
  Sentence current;
  current.language = options.language;
  std::size_t start_line = 0;
  std::size_t lineno = 0;
  std::string line;

  auto flush = [&]() {
    if (current.tokens.empty()) return;
    if (options.require_tree) {
      auto problem = tree_violation(current.heads());
      if (!problem.empty()) {
        std::string name = current.id.empty() ? "#" + std::to_string(out.size() + 1) : current.id;
        throw ParseError(path, start_line, "sentence " + name + ": " + problem);
      }
    }
    out.push_back(std::move(current));
    current = Sentence{};
    current.language = options.language;
    start_line = 0;
  };

  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = strip_cr(line);
    if (view.empty()) {
      flush();
      start_line = 0;
      continue;
    }
    if (start_line == 0) start_line = lineno;
    if (view.front() == '#') {
      if (current.tokens.empty()) {
        constexpr std::string_view key = "# sent_id";
        if (view.substr(0, key.size()) == key) {
          auto eq = view.find('=');
          if (eq != std::string_view::npos) {
            auto value = view.substr(eq + 1);
            while (!value.empty() && value.front() == ' ') value.remove_prefix(1);
            current.id.assign(value);
          }
        }
      }
      continue;
    }
    auto fields = split_char(view, '\t');
    if (fields.size() != 10) throw ParseError(path, lineno, "expected 10 tab-separated columns");
    // multiword ranges (1-2) and empty nodes (1.1) are not syntactic words
    if (fields[0].find_first_of("-.") != std::string_view::npos) continue;
    int id = 0;
    if (!parse_int(fields[0], id) || id != static_cast<int>(current.tokens.size()) + 1) {
      throw ParseError(path, lineno, "token ids must run 1, 2, ... within a sentence");
    }
    ConlluToken tok;
    tok.form.assign(fields[1]);
    tok.upos.assign(fields[3]);
    tok.deprel.assign(fields[7]);
    if (fields[6] == "_" && !options.require_tree) {
      tok.head = -1;
    } else if (!parse_int(fields[6], tok.head)) {
      throw ParseError(path, lineno, "non-integer head '" + std::string(fields[6]) + "'");
    } else if (tok.head < 0) {
      throw ParseError(path, lineno, "negative head");
    }
    current.tokens.push_back(std::move(tok));
  }
  flush();

  if (options.require_tree) {
    for (std::size_t s = 0; s < out.size(); ++s) {
      for (const auto& t : out[s].tokens) {
        if (t.head > static_cast<int>(out[s].size())) {
          throw ParseError("head out of range in sentence " + std::to_string(s + 1) + " of " + path);
        }
      }
    }
  }
  return out;
}

std::string format_conllu(const std::vector<Sentence>& sentences) {
  std::string buf;
  for (const auto& sent : sentences) {
    if (!sent.id.empty()) buf += "# sent_id = " + sent.id + "\n";
    for (std::size_t i = 0; i < sent.tokens.size(); ++i) {
      const auto& t = sent.tokens[i];
      buf += std::to_string(i + 1);
      buf += '\t' + t.form + "\t_\t" + (t.upos.empty() ? "_" : t.upos) + "\t_\t_\t";
      buf += t.head < 0 ? "_" : std::to_string(t.head);
      buf += '\t' + (t.deprel.empty() ? "_" : t.deprel) + "\t_\t_\n";
    }
    buf += '\n';
  }
  return buf;
}

void save_conllu(const std::vector<Sentence>& sentences, const std::string& path) {
  auto out = open_output(path);
  out << format_conllu(sentences);
  finish_output(out, path);
}

// ---- matrices ------------------------------------------------------------

AlignmentMatrix load_matrix(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, 1, "missing header");
  auto header = split_ws(strip_cr(line));
  Index rows = 0, cols = 0;
  if (header.size() != 2 || !parse_int(header[0], rows) || !parse_int(header[1], cols) || rows <= 0 ||
      rows != cols) {
    throw ParseError(path, 1, "header must be \"D D\" with D > 0");
  }
  AlignmentMatrix m;
  m.w.resize(rows, cols);
  std::size_t lineno = 1;
  Index r = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = split_ws(strip_cr(line));
    if (fields.empty()) continue;
    if (r >= rows) throw ParseError(path, lineno, "more rows than the header declares");
    if (static_cast<Index>(fields.size()) != cols) {
      throw ParseError(path, lineno, "ragged row: expected " + std::to_string(cols) + " values");
    }
    for (Index c = 0; c < cols; ++c) {
      double v;
      if (!parse_double(fields[static_cast<std::size_t>(c)], v) || !std::isfinite(v)) {
        throw ParseError(path, lineno, "bad number");
      }
      m.w(r, c) = v;
    }
    ++r;
  }
  if (r != rows) throw ParseError(path, lineno, "expected " + std::to_string(rows) + " rows");
  return m;
}

void save_matrix(const AlignmentMatrix& matrix, const std::string& path) {
  const Matrix& w = matrix.w;
  if (w.rows() != w.cols() || w.rows() == 0) throw DataError("alignment matrix must be square");
  if (!w.allFinite()) throw DataError("alignment matrix has non-finite entries");
  double err = (w.transpose() * w - Matrix::Identity(w.rows(), w.cols())).norm();
  if (err > kOrthogonalityTolerance) {
    throw DataError("alignment matrix is not orthogonal: ||W^T W - I||_F = " + format_double(err));
  }
  auto out = open_output(path);
  std::string buf = std::to_string(w.rows()) + " " + std::to_string(w.cols()) + "\n";
  for (Index r = 0; r < w.rows(); ++r) {
    append_vector(buf, w.row(r));
    buf.push_back('\n');
  }
  out << buf;
  finish_output(out, path);
}

// ---- raw corpora ---------------------------------------------------------

TokenizedCorpus load_corpus(const std::string& path) {
  auto in = open_input(path);
  TokenizedCorpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    auto fields = split_ws(strip_cr(line));
    if (fields.empty()) continue;
    std::vector<std::string> sent;
    sent.reserve(fields.size());
    for (auto f : fields) sent.emplace_back(f);
    corpus.push_back(std::move(sent));
  }
  return corpus;
}

void save_corpus(const TokenizedCorpus& corpus, const std::string& path) {
  auto out = open_output(path);
  for (const auto& sent : corpus) {
    for (std::size_t i = 0; i < sent.size(); ++i) {
      if (i > 0) out << ' ';
      out << sent[i];
    }
    out << '\n';
  }
  finish_output(out, path);
}

}  // namespace ctxalign
