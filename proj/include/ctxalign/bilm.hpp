#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxalign/anchor_space.hpp"
#include "ctxalign/corpus_io.hpp"
#include "ctxalign/nn/layers.hpp"

namespace ctxalign {

// Frozen target-side vectors for the anchoring penalty: each dictionary
// source word is pulled toward the mean of its targets' vectors.
struct AnchorTargets {
  Dictionary dictionary;
  AnchorTable targets;
};

struct BiLMConfig {
  std::size_t vocab_cap = 50000;
  Index emb_dim = 64;
  Index hidden = 64;  // per direction
  int layers = 1;
  int epochs = 10;
  std::size_t batch = 16;  // sentences per step
  double lr = 1e-3;
  double dropout = 0.0;
  // Output layer reuses the input embedding table (needs emb_dim == hidden).
  bool tied = false;
  double lambda_anchor = 0.0;
  std::optional<AnchorTargets> anchor_targets;
  std::uint64_t seed = 1;

  void validate() const;
};

// Ids 0..2 are <unk>, <bos>, <eos>; words follow in frequency-rank order.
class Vocabulary {
 public:
  static constexpr int kUnk = 0, kBos = 1, kEos = 2, kSpecials = 3;

  Vocabulary() = default;
  // Most frequent `cap` tokens of the corpus, ties broken lexicographically.
  static Vocabulary build(const TokenizedCorpus& corpus, std::size_t cap);
  static Vocabulary from_tokens(std::vector<std::string> words, std::vector<std::uint64_t> counts);

  // Total size including specials.
  std::size_t size() const { return words_.size() + kSpecials; }
  std::size_t word_count() const { return words_.size(); }
  // kUnk for unknown words.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& word(std::size_t rank) const { return words_[rank]; }
  std::uint64_t count(std::size_t rank) const { return counts_[rank]; }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }

 private:
  std::vector<std::string> words_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, int> index_;
};

class BiLMModel {
 public:
  BiLMModel(const BiLMConfig& config, Vocabulary vocabulary);

  static BiLMModel load(const std::string& path);
  void save(const std::string& path) const;

  struct SentenceLoss {
    nn::Expr forward;   // summed NLL of the left-to-right direction
    nn::Expr backward;  // summed NLL of the right-to-left direction
    std::size_t predictions = 0;  // per direction: tokens + 1
  };
  SentenceLoss sentence_loss(nn::Graph& g, const std::vector<std::string>& sentence);

  // Anchoring penalty lambda * sum_i ||v_i - t_i||^2 over dictionary words
  // present in the vocabulary, or nullopt when there is none.
  std::optional<nn::Expr> anchor_penalty(nn::Graph& g, double lambda, const AnchorTargets& targets,
                                         std::size_t* used = nullptr);

  // n x emb_dim for layer 0, n x 2*hidden for layer 1.
  Matrix embed_sentence(const std::vector<std::string>& sentence, int layer);

  const BiLMConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  nn::ParameterSet& params() { return params_; }
  // Input embedding row of a vocabulary id.
  auto embedding(int id) const { return embedding_->value.row(id); }
  // Word rows of the embedding table as a table in rank order.
  AnchorTable static_table(std::string space_id = {}) const;
  Index output_dim(int layer) const { return layer == 0 ? config_.emb_dim : 2 * config_.hidden; }

 private:
  std::vector<Index> ids(const std::vector<std::string>& sentence) const;
  nn::Expr logits(nn::Graph& g, nn::Expr states);

  BiLMConfig config_;
  Vocabulary vocab_;
  nn::ParameterSet params_;
  nn::Parameter* embedding_ = nullptr;
  std::vector<nn::LstmLayer> forward_, backward_;
  nn::Parameter* out_w_ = nullptr;  // hidden x V (absent when tied)
  nn::Parameter* out_b_ = nullptr;  // 1 x V
};

struct BiLMEpochReport {
  int epoch = 0;
  double train_loss = 0.0;  // mean forward + mean backward NLL, without the penalty
  std::optional<double> dev_perplexity;
  double mean_anchor_distance = 0.0;  // only meaningful with anchor targets
};

using BiLMCallback = std::function<void(const BiLMEpochReport&)>;

// Adam on mean forward NLL + mean backward NLL (+ anchoring penalty). With a
// dev corpus the parameters of the epoch with the lowest dev perplexity are kept.
BiLMModel train_bilm(const TokenizedCorpus& corpus, const BiLMConfig& config, const TokenizedCorpus* dev = nullptr,
                     const BiLMCallback& on_epoch = {});

// exp of the mean per-token NLL, averaged over the two directions.
double perplexity(BiLMModel& model, const TokenizedCorpus& corpus, int threads = 1);

// Mean Euclidean distance between each anchored source word's embedding and
// its target vector (NaN when no dictionary word is in the vocabulary).
double mean_anchor_distance(const BiLMModel& model, const AnchorTargets& targets);

struct EmbedStats {
  std::uint64_t sentences = 0;
  std::uint64_t occurrences = 0;
  std::uint64_t unknown = 0;  // occurrences emitted with the <unk> input vector
};

// Writes one CTXEMB record per token occurrence in corpus order; sentence ids
// are corpus line indices.
EmbedStats embed_corpus(BiLMModel& model, const TokenizedCorpus& corpus, int layer, OccurrenceWriter& writer,
                        int threads = 1);

// Calls `sink` for every occurrence in corpus order.
EmbedStats embed_corpus(BiLMModel& model, const TokenizedCorpus& corpus, int layer,
                        const std::function<void(const std::string&, std::uint64_t, std::uint64_t,
                                                 const Eigen::Ref<const RowVector>&)>& sink,
                        int threads = 1);

// Layer-1 occurrence vectors averaged per token.
AnchorTable anchors_of(BiLMModel& model, const TokenizedCorpus& corpus, const AnchorOptions& options,
                       int threads = 1);

}  // namespace ctxalign
