#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctxalign/corpus_io.hpp"
#include "ctxalign/nn/layers.hpp"
#include "ctxalign/nn/optim.hpp"

namespace ctxalign {

struct ParserConfig {
  bool use_pos = true;
  Index pos_dim = 50;
  Index lstm_hidden = 200;
  int lstm_layers = 3;
  double dropout = 0.33;
  Index arc_mlp_dim = 500;
  Index rel_mlp_dim = 100;
  std::size_t batch_sentences = 32;
  std::size_t instances_per_epoch = 32000;
  int max_epochs = 40;
  int patience = 10;
  nn::AdamConfig adam;
  bool single_root = true;
  std::uint64_t seed = 1;
  int threads = 1;

  // Throws DataError on non-positive sizes, a rate outside [0, 1) or patience > max_epochs.
  void validate() const;
};

// One language's sentences with their contextual vectors already mapped into
// the joint space. embeddings[k] has one row per token of sentences[k].
struct TreebankData {
  std::string language;
  std::vector<Sentence> sentences;
  std::vector<Matrix> embeddings;
};

// Pairs sentences with an embedding file's sentence blocks (sentence k of the
// file belongs to sentence k of the treebank) and applies `alignment` when
// given. Throws DataError on count, length or dimension mismatches.
TreebankData make_treebank_data(std::string language, std::vector<Sentence> sentences,
                                const SentenceEmbeddings& embeddings, const AlignmentMatrix* alignment = nullptr);

struct ParseResult {
  std::vector<int> heads;
  std::vector<std::string> labels;
};

struct AttachmentScores {
  double uas = 0.0;  // percent
  double las = 0.0;  // percent
  std::size_t tokens = 0;
};

class ParserModel {
 public:
  // Part-of-speech rows: 0 = root, 1 = unknown tag, then `upos` in order.
  ParserModel(const ParserConfig& config, Index input_dim, std::vector<std::string> upos,
              std::vector<std::string> labels);

  static ParserModel load(const std::string& path);
  void save(const std::string& path) const;

  struct Representations {
    nn::Expr tokens;  // (n+1) x 2h, row 0 = root
    nn::Expr arc_dep, arc_head, rel_dep, rel_head;
  };

  // Runs the encoder and the four MLPs for one sentence. Dropout is active in
  // training graphs only.
  Representations encode(nn::Graph& g, const Matrix& embeddings, const Sentence& sentence);

  // (n+1) x (n+1) graph scores, entry (i, j) = score of head i for dependent j.
  nn::Expr arc_scores(nn::Graph& g, const Representations& r);
  // n x labels scores for the arcs heads[j-1] -> j.
  nn::Expr label_scores(nn::Graph& g, const Representations& r, const std::vector<int>& heads);

  // Inference-side views: the root column and the diagonal are -inf.
  Matrix score_arcs(const Matrix& embeddings, const Sentence& sentence);
  Matrix score_labels(const Matrix& embeddings, const Sentence& sentence, const std::vector<int>& heads);

  // Summed head and label cross-entropy against the gold tree.
  nn::Expr loss(nn::Graph& g, const Matrix& embeddings, const Sentence& gold);

  ParseResult parse(const Matrix& embeddings, const Sentence& sentence);

  const ParserConfig& config() const { return config_; }
  Index input_dim() const { return input_dim_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& upos() const { return upos_; }
  nn::ParameterSet& params() { return params_; }

 private:
  std::vector<Index> pos_rows(const Sentence& sentence) const;

  ParserConfig config_;
  Index input_dim_;
  std::vector<std::string> upos_;
  std::vector<std::string> labels_;
  nn::ParameterSet params_;
  nn::Parameter* root_ = nullptr;
  nn::Parameter* pos_ = nullptr;
  nn::BiLstm encoder_;
  nn::Dense arc_dep_, arc_head_, rel_dep_, rel_head_;
  nn::Parameter* arc_u_ = nullptr;   // arc x arc
  nn::Parameter* arc_b_ = nullptr;   // arc x 1
  nn::Parameter* rel_u_ = nullptr;   // rel x (labels * rel)
  nn::Parameter* rel_uh_ = nullptr;  // rel x labels
  nn::Parameter* rel_ud_ = nullptr;  // rel x labels
  nn::Parameter* rel_b_ = nullptr;   // 1 x labels
};

// Percent of tokens with the gold head (UAS) and gold head plus relation (LAS).
AttachmentScores attachment_scores(const std::vector<Sentence>& gold, const std::vector<Sentence>& predicted,
                                   bool exclude_punct = false);

AttachmentScores evaluate(ParserModel& model, const TreebankData& data, bool exclude_punct = false,
                          int threads = 1);

// Sentences of `data` with predicted heads and relations filled in.
std::vector<Sentence> parse_all(ParserModel& model, const TreebankData& data, int threads = 1);

struct EpochReport {
  int epoch = 0;
  double train_loss = 0.0;  // mean per-token loss over the epoch
  double dev_las = 0.0;     // mean over dev languages
  std::vector<AttachmentScores> dev;
  bool improved = false;
};

struct ParserTrainResult {
  int best_epoch = 0;
  double best_dev_las = 0.0;
  std::vector<EpochReport> history;
};

using EpochCallback = std::function<void(const EpochReport&)>;

// Multilingual training: every step picks a training language uniformly and
// takes its next batch. Stops after `patience` epochs without a better mean
// dev LAS and restores the best epoch's parameters.
ParserModel train_parser(const std::vector<TreebankData>& train, const std::vector<TreebankData>& dev,
                         const ParserConfig& config, ParserTrainResult* result = nullptr,
                         const EpochCallback& on_epoch = {});

}  // namespace ctxalign
