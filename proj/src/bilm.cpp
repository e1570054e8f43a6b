#include "ctxalign/bilm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "json.hpp"

#include "ctxalign/logging.hpp"
#include "ctxalign/nn/checkpoint.hpp"
#include "ctxalign/nn/optim.hpp"
#include "ctxalign/parallel.hpp"

namespace ctxalign {

using nn::Expr;
using nn::Graph;

void BiLMConfig::validate() const {
  if (vocab_cap == 0 || emb_dim <= 0 || hidden <= 0 || layers <= 0 || epochs <= 0 || batch == 0) {
    throw DataError("biLM sizes must be positive");
  }
  if (!(lr > 0.0)) throw DataError("biLM learning rate must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw DataError("biLM dropout must lie in [0, 1)");
  if (tied && emb_dim != hidden) throw DataError("tied output needs emb_dim == hidden");
  if (!(lambda_anchor >= 0.0) || !std::isfinite(lambda_anchor)) throw DataError("lambda_anchor must be >= 0");
  if (lambda_anchor > 0.0 && !anchor_targets) throw DataError("lambda_anchor > 0 needs a dictionary and target anchors");
  if (lambda_anchor == 0.0 && anchor_targets) throw DataError("anchor targets given but lambda_anchor is 0");
}

// ---- vocabulary ----------------------------------------------------------

Vocabulary Vocabulary::build(const TokenizedCorpus& corpus, std::size_t cap) {
  std::unordered_map<std::string, std::uint64_t> freq;
  for (const auto& s : corpus) {
    for (const auto& t : s) ++freq[t];
  }
  std::vector<std::pair<std::string, std::uint64_t>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (items.size() > cap) items.resize(cap);
  std::vector<std::string> words;
  std::vector<std::uint64_t> counts;
  for (auto& [w, c] : items) {
    words.push_back(std::move(w));
    counts.push_back(c);
  }
  return from_tokens(std::move(words), std::move(counts));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> words, std::vector<std::uint64_t> counts) {
  if (words.size() != counts.size()) throw DataError("vocabulary words and counts differ in length");
  Vocabulary v;
  v.words_ = std::move(words);
  v.counts_ = std::move(counts);
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    if (!v.index_.emplace(v.words_[i], static_cast<int>(i) + kSpecials).second) {
      throw DataError("duplicate vocabulary entry '" + v.words_[i] + "'");
    }
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

// ---- model ---------------------------------------------------------------

BiLMModel::BiLMModel(const BiLMConfig& config, Vocabulary vocabulary) : config_(config), vocab_(std::move(vocabulary)) {
  if (config_.tied && config_.emb_dim != config_.hidden) throw DataError("tied output needs emb_dim == hidden");
  std::mt19937_64 rng(config_.seed);
  const auto v = static_cast<Index>(vocab_.size());
  embedding_ = &params_.add("emb", nn::xavier_uniform(v, config_.emb_dim, rng));
  for (int l = 0; l < config_.layers; ++l) {
    const Index in = l == 0 ? config_.emb_dim : config_.hidden;
    forward_.push_back(nn::add_lstm(params_, "fwd.l" + std::to_string(l), in, config_.hidden, rng));
    backward_.push_back(nn::add_lstm(params_, "bwd.l" + std::to_string(l), in, config_.hidden, rng));
  }
  if (!config_.tied) out_w_ = &params_.add("out.w", nn::xavier_uniform(config_.hidden, v, rng));
  out_b_ = &params_.add("out.b", Matrix::Zero(1, v));
}

std::vector<Index> BiLMModel::ids(const std::vector<std::string>& sentence) const {
  std::vector<Index> out;
  out.reserve(sentence.size());
  for (const auto& t : sentence) out.push_back(vocab_.id(t));
  return out;
}

Expr BiLMModel::logits(Graph& g, Expr states) {
  Expr w = config_.tied ? nn::transpose(g.parameter(*embedding_)) : g.parameter(*out_w_);
  return nn::affine(states, w, g.parameter(*out_b_));
}

BiLMModel::SentenceLoss BiLMModel::sentence_loss(Graph& g, const std::vector<std::string>& sentence) {
  const std::vector<Index> w = ids(sentence);
  std::vector<Index> fwd_in{Vocabulary::kBos}, fwd_out(w);
  fwd_in.insert(fwd_in.end(), w.begin(), w.end());
  fwd_out.push_back(Vocabulary::kEos);
  std::vector<Index> bwd_in(w), bwd_out{Vocabulary::kBos};
  bwd_in.push_back(Vocabulary::kEos);
  bwd_out.insert(bwd_out.end(), w.begin(), w.end());

  auto run = [&](const std::vector<Index>& in, const std::vector<nn::LstmLayer>& layers, bool reverse) {
    Expr x = nn::dropout(nn::gather_rows(g.parameter(*embedding_), in), config_.dropout);
    for (const auto& layer : layers) x = nn::dropout(nn::lstm_sequence(g, x, layer, reverse), config_.dropout);
    return x;
  };
  SentenceLoss loss;
  loss.forward = nn::softmax_cross_entropy(logits(g, run(fwd_in, forward_, false)), fwd_out);
  loss.backward = nn::softmax_cross_entropy(logits(g, run(bwd_in, backward_, true)), bwd_out);
  loss.predictions = w.size() + 1;
  return loss;
}

namespace {

struct PenaltyRows {
  std::vector<Index> rows;
  Matrix targets;
};

PenaltyRows penalty_rows(const Vocabulary& vocab, Index dim, const AnchorTargets& at) {
  if (at.targets.dim() != dim) {
    throw DataError("target anchors have dimension " + std::to_string(at.targets.dim()) +
                    " but the embedding table has " + std::to_string(dim));
  }
  PenaltyRows out;
  std::vector<RowVector> rows;
  for (const auto& source : at.dictionary.sources()) {
    const int id = vocab.id(source);
    if (id == Vocabulary::kUnk) continue;
    RowVector mean = RowVector::Zero(dim);
    int found = 0;
    for (const auto& t : at.dictionary.targets_of(source)) {
      if (auto r = at.targets.find(t)) {
        mean += at.targets.vector(*r);
        ++found;
      }
    }
    if (found == 0) continue;
    out.rows.push_back(id);
    rows.push_back(mean / found);
  }
  out.targets.resize(static_cast<Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) out.targets.row(static_cast<Index>(i)) = rows[i];
  return out;
}

}  // namespace

std::optional<Expr> BiLMModel::anchor_penalty(Graph& g, double lambda, const AnchorTargets& targets,
                                              std::size_t* used) {
  PenaltyRows pr = penalty_rows(vocab_, config_.emb_dim, targets);
  if (used) *used = pr.rows.size();
  if (pr.rows.empty()) return std::nullopt;
  Expr diff = nn::sub(nn::gather_rows(g.parameter(*embedding_), pr.rows), g.constant(std::move(pr.targets)));
  return nn::scale(nn::squared_norm(diff), lambda);
}

Matrix BiLMModel::embed_sentence(const std::vector<std::string>& sentence, int layer) {
  const std::vector<Index> w = ids(sentence);
  const auto n = static_cast<Index>(w.size());
  if (layer == 0) {
    Matrix out(n, config_.emb_dim);
    for (Index i = 0; i < n; ++i) out.row(i) = embedding_->value.row(w[static_cast<std::size_t>(i)]);
    return out;
  }
  if (layer != 1) throw DataError("layer must be 0 or 1");
  if (n == 0) return Matrix(0, 2 * config_.hidden);
  Graph g(false);
  std::vector<Index> fwd_in{Vocabulary::kBos};
  fwd_in.insert(fwd_in.end(), w.begin(), w.end());
  std::vector<Index> bwd_in(w);
  bwd_in.push_back(Vocabulary::kEos);
  Expr emb = g.parameter(*embedding_);
  Matrix hf = nn::lstm_sequence(g, nn::gather_rows(emb, fwd_in), forward_[0], false).value();
  Matrix hb = nn::lstm_sequence(g, nn::gather_rows(emb, bwd_in), backward_[0], true).value();
  Matrix out(n, 2 * config_.hidden);
  out.leftCols(config_.hidden) = hf.bottomRows(n);
  out.rightCols(config_.hidden) = hb.topRows(n);
  return out;
}

AnchorTable BiLMModel::static_table(std::string space_id) const {
  const auto words = static_cast<Index>(vocab_.word_count());
  Matrix vectors = embedding_->value.bottomRows(words);
  return AnchorTable::from_ranked(std::move(space_id), vocab_.words(), vocab_.counts(), std::move(vectors));
}

void BiLMModel::save(const std::string& path) const {
  nlohmann::json meta = {{"kind", "bilm"},
                         {"vocab_cap", config_.vocab_cap},
                         {"emb_dim", config_.emb_dim},
                         {"hidden", config_.hidden},
                         {"layers", config_.layers},
                         {"tied", config_.tied},
                         {"seed", config_.seed},
                         {"words", vocab_.words()},
                         {"counts", vocab_.counts()}};
  nn::save_checkpoint(path, params_, meta.dump());
}

BiLMModel BiLMModel::load(const std::string& path) {
  auto ck = nn::load_checkpoint(path);
  BiLMConfig config;
  Vocabulary vocab;
  try {
    auto meta = nlohmann::json::parse(ck.metadata);
    if (meta.at("kind").get<std::string>() != "bilm") throw DataError(path + ": not a language model");
    config.vocab_cap = meta.at("vocab_cap").get<std::size_t>();
    config.emb_dim = meta.at("emb_dim").get<Index>();
    config.hidden = meta.at("hidden").get<Index>();
    config.layers = meta.at("layers").get<int>();
    config.tied = meta.at("tied").get<bool>();
    config.seed = meta.at("seed").get<std::uint64_t>();
    vocab = Vocabulary::from_tokens(meta.at("words").get<std::vector<std::string>>(),
                                    meta.at("counts").get<std::vector<std::uint64_t>>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad model metadata: " + e.what());
  }
  BiLMModel model(config, std::move(vocab));
  nn::restore(model.params_, ck);
  return model;
}

// ---- training and evaluation ---------------------------------------------

double mean_anchor_distance(const BiLMModel& model, const AnchorTargets& targets) {
  PenaltyRows pr = penalty_rows(model.vocabulary(), model.config().emb_dim, targets);
  if (pr.rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (std::size_t i = 0; i < pr.rows.size(); ++i) {
    total += (model.embedding(static_cast<int>(pr.rows[i])) - pr.targets.row(static_cast<Index>(i))).norm();
  }
  return total / static_cast<double>(pr.rows.size());
}

BiLMModel train_bilm(const TokenizedCorpus& corpus, const BiLMConfig& config, const TokenizedCorpus* dev,
                     const BiLMCallback& on_epoch) {
  config.validate();
  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    if (!corpus[k].empty()) order.push_back(k);
  }
  if (order.empty()) throw DataError("training corpus is empty");
  BiLMModel model(config, Vocabulary::build(corpus, config.vocab_cap));

  const bool anchored = config.lambda_anchor > 0.0;
  if (anchored) {
    const auto& at = *config.anchor_targets;
    std::size_t missing = 0;
    for (const auto& s : at.dictionary.sources()) missing += model.vocabulary().contains(s) ? 0 : 1;
    Graph probe;
    std::size_t used = 0;
    model.anchor_penalty(probe, config.lambda_anchor, at, &used);
    if (used == 0) throw DataError("no dictionary source word is in the vocabulary with a known target");
    log_info("anchoring " + std::to_string(used) + " words; " + std::to_string(missing) +
             " dictionary sources are outside the vocabulary");
  }

  nn::Adam adam(model.params(), nn::AdamConfig{config.lr});
  std::mt19937_64 rng(config.seed ^ 0x2545f4914f6cdd1dULL);
  std::vector<Matrix> best;
  double best_ppl = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_nll = 0.0;
    std::size_t epoch_predictions = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      Graph g(true, rng());
      std::vector<Expr> fwd, bwd;
      std::size_t predictions = 0;
      for (std::size_t b = start; b < end; ++b) {
        auto l = model.sentence_loss(g, corpus[order[b]]);
        fwd.push_back(l.forward);
        bwd.push_back(l.backward);
        predictions += l.predictions;
      }
      const double inv = 1.0 / static_cast<double>(predictions);
      Expr nll = nn::add(nn::scale(nn::sum_all(fwd), inv), nn::scale(nn::sum_all(bwd), inv));
      Expr loss = nll;
      if (anchored) {
        if (auto penalty = model.anchor_penalty(g, config.lambda_anchor, *config.anchor_targets)) {
          loss = nn::add(loss, *penalty);
        }
      }
      model.params().zero_grad();
      g.backward(loss);
      adam.step();
      epoch_nll += nll.scalar() * static_cast<double>(predictions);
      epoch_predictions += predictions;
    }

    BiLMEpochReport report;
    report.epoch = epoch;
    report.train_loss = epoch_nll / static_cast<double>(epoch_predictions);
    if (anchored) report.mean_anchor_distance = mean_anchor_distance(model, *config.anchor_targets);
    if (dev && !dev->empty()) {
      report.dev_perplexity = perplexity(model, *dev);
      if (*report.dev_perplexity < best_ppl) {
        best_ppl = *report.dev_perplexity;
        best.clear();
        for (std::size_t i = 0; i < model.params().size(); ++i) best.push_back(model.params().at(i).value);
      }
    }
    if (on_epoch) on_epoch(report);
  }
  if (!best.empty()) {
    for (std::size_t i = 0; i < model.params().size(); ++i) model.params().at(i).value = best[i];
  }
  return model;
}

double perplexity(BiLMModel& model, const TokenizedCorpus& corpus, int threads) {
  std::vector<double> fwd(corpus.size(), 0.0), bwd(corpus.size(), 0.0);
  std::vector<std::size_t> count(corpus.size(), 0);
  parallel_for(corpus.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      if (corpus[k].empty()) continue;
      Graph g(false);
      auto l = model.sentence_loss(g, corpus[k]);
      fwd[k] = l.forward.scalar();
      bwd[k] = l.backward.scalar();
      count[k] = l.predictions;
    }
  });
  double f = 0.0, bw = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    f += fwd[k];
    bw += bwd[k];
    n += count[k];
  }
  if (n == 0) throw DataError("perplexity of an empty corpus");
  return std::exp(0.5 * (f / static_cast<double>(n) + bw / static_cast<double>(n)));
}

EmbedStats embed_corpus(BiLMModel& model, const TokenizedCorpus& corpus, int layer,
                        const std::function<void(const std::string&, std::uint64_t, std::uint64_t,
                                                 const Eigen::Ref<const RowVector>&)>& sink,
                        int threads) {
  if (layer != 0 && layer != 1) throw DataError("layer must be 0 or 1");
  constexpr std::size_t kChunk = 256;
  EmbedStats stats;
  std::vector<Matrix> block;
  for (std::size_t start = 0; start < corpus.size(); start += kChunk) {
    const std::size_t end = std::min(corpus.size(), start + kChunk);
    block.assign(end - start, Matrix());
    parallel_for(end - start, threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) block[i] = model.embed_sentence(corpus[start + i], layer);
    });
    for (std::size_t i = 0; i < block.size(); ++i) {
      const auto& sentence = corpus[start + i];
      ++stats.sentences;
      for (std::size_t p = 0; p < sentence.size(); ++p) {
        if (!model.vocabulary().contains(sentence[p])) ++stats.unknown;
        ++stats.occurrences;
        sink(sentence[p], start + i, p, block[i].row(static_cast<Index>(p)));
      }
    }
  }
  return stats;
}

EmbedStats embed_corpus(BiLMModel& model, const TokenizedCorpus& corpus, int layer, OccurrenceWriter& writer,
                        int threads) {
  return embed_corpus(
      model, corpus, layer,
      [&](const std::string& token, std::uint64_t sid, std::uint64_t pos, const Eigen::Ref<const RowVector>& v) {
        writer.write(token, sid, pos, v);
      },
      threads);
}

AnchorTable anchors_of(BiLMModel& model, const TokenizedCorpus& corpus, const AnchorOptions& options, int threads) {
  AnchorAccumulator acc(options.max_occurrences_per_token);
  embed_corpus(
      model, corpus, 1,
      [&](const std::string& token, std::uint64_t, std::uint64_t, const Eigen::Ref<const RowVector>& v) {
        acc.add(token, v.transpose());
      },
      threads);
  return acc.finish(options);
}

}  // namespace ctxalign
