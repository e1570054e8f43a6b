#include "ctxalign/dep_parser.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "json.hpp"

#include "ctxalign/linalg_align.hpp"
#include "ctxalign/logging.hpp"
#include "ctxalign/mst.hpp"
#include "ctxalign/nn/checkpoint.hpp"
#include "ctxalign/parallel.hpp"

namespace ctxalign {

using nn::Expr;
using nn::Graph;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

nlohmann::json config_to_json(const ParserConfig& c) {
  return {{"use_pos", c.use_pos},
          {"pos_dim", c.pos_dim},
          {"lstm_hidden", c.lstm_hidden},
          {"lstm_layers", c.lstm_layers},
          {"dropout", c.dropout},
          {"arc_mlp_dim", c.arc_mlp_dim},
          {"rel_mlp_dim", c.rel_mlp_dim},
          {"batch_sentences", c.batch_sentences},
          {"instances_per_epoch", c.instances_per_epoch},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"lr", c.adam.lr},
          {"single_root", c.single_root},
          {"seed", c.seed}};
}

ParserConfig config_from_json(const nlohmann::json& j) {
  ParserConfig c;
  c.use_pos = j.at("use_pos").get<bool>();
  c.pos_dim = j.at("pos_dim").get<Index>();
  c.lstm_hidden = j.at("lstm_hidden").get<Index>();
  c.lstm_layers = j.at("lstm_layers").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.arc_mlp_dim = j.at("arc_mlp_dim").get<Index>();
  c.rel_mlp_dim = j.at("rel_mlp_dim").get<Index>();
  c.batch_sentences = j.at("batch_sentences").get<std::size_t>();
  c.instances_per_epoch = j.at("instances_per_epoch").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.adam.lr = j.at("lr").get<double>();
  c.single_root = j.at("single_root").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

// Additive mask for graph arc scores: root column and self-loops.
Matrix arc_mask(Index size) {
  Matrix mask = Matrix::Zero(size, size);
  mask.col(0).setConstant(nn::kMaskedScore);
  mask.diagonal().setConstant(nn::kMaskedScore);
  return mask;
}

std::vector<Matrix> snapshot(nn::ParameterSet& params) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back(params.at(i).value);
  return out;
}

void restore_snapshot(nn::ParameterSet& params, const std::vector<Matrix>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params.at(i).value = values[i];
}

}  // namespace

void ParserConfig::validate() const {
  if (lstm_hidden <= 0 || lstm_layers <= 0 || arc_mlp_dim <= 0 || rel_mlp_dim <= 0 || (use_pos && pos_dim <= 0)) {
    throw DataError("parser dimensions must be positive");
  }
  if (batch_sentences == 0 || instances_per_epoch == 0) throw DataError("batch and epoch sizes must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw DataError("dropout must lie in [0, 1)");
  if (max_epochs <= 0 || patience <= 0 || patience > max_epochs) {
    throw DataError("need 0 < patience <= max_epochs");
  }
  if (!(adam.lr > 0.0)) throw DataError("learning rate must be positive");
}

TreebankData make_treebank_data(std::string language, std::vector<Sentence> sentences,
                                const SentenceEmbeddings& embeddings, const AlignmentMatrix* alignment) {
  if (embeddings.sentences.size() != sentences.size()) {
    throw DataError(language + ": treebank has " + std::to_string(sentences.size()) +
                    " sentences but the embedding file has " + std::to_string(embeddings.sentences.size()));
  }
  if (alignment && alignment->dim() != embeddings.dim) {
    throw DataError(language + ": alignment matrix dimension " + std::to_string(alignment->dim()) +
                    " does not match embedding dimension " + std::to_string(embeddings.dim));
  }
  TreebankData data;
  data.language = std::move(language);
  data.embeddings.reserve(sentences.size());
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    const Matrix& m = embeddings.sentences[k];
    if (static_cast<std::size_t>(m.rows()) != sentences[k].size()) {
      throw DataError(data.language + ": sentence " + std::to_string(k) + " has " +
                      std::to_string(sentences[k].size()) + " tokens but " + std::to_string(m.rows()) +
                      " embedding rows");
    }
    data.embeddings.push_back(alignment ? apply_alignment(*alignment, m) : m);
  }
  data.sentences = std::move(sentences);
  for (auto& s : data.sentences) s.language = data.language;
  return data;
}

ParserModel::ParserModel(const ParserConfig& config, Index input_dim, std::vector<std::string> upos,
                         std::vector<std::string> labels)
    : config_(config), input_dim_(input_dim), upos_(std::move(upos)), labels_(std::move(labels)) {
  config_.validate();
  if (input_dim_ <= 0) throw DataError("parser input dimension must be positive");
  if (labels_.empty()) throw DataError("parser needs at least one relation label");
  std::mt19937_64 rng(config_.seed);
  const Index pos_dim = config_.use_pos ? config_.pos_dim : 0;
  const Index h2 = 2 * config_.lstm_hidden;
  const auto nl = static_cast<Index>(labels_.size());

  root_ = &params_.add("root", nn::xavier_uniform(1, input_dim_, rng));
  if (config_.use_pos) pos_ = &params_.add("pos", nn::xavier_uniform(static_cast<Index>(upos_.size()) + 2, pos_dim, rng));
  encoder_ = nn::add_bilstm(params_, "enc", input_dim_ + pos_dim, config_.lstm_hidden, config_.lstm_layers, rng);
  arc_dep_ = nn::add_dense(params_, "mlp.arc_dep", h2, config_.arc_mlp_dim, rng);
  arc_head_ = nn::add_dense(params_, "mlp.arc_head", h2, config_.arc_mlp_dim, rng);
  rel_dep_ = nn::add_dense(params_, "mlp.rel_dep", h2, config_.rel_mlp_dim, rng);
  rel_head_ = nn::add_dense(params_, "mlp.rel_head", h2, config_.rel_mlp_dim, rng);
  arc_u_ = &params_.add("arc.U", nn::xavier_uniform(config_.arc_mlp_dim, config_.arc_mlp_dim, rng));
  arc_b_ = &params_.add("arc.b", nn::xavier_uniform(config_.arc_mlp_dim, 1, rng));
  rel_u_ = &params_.add("rel.U", nn::xavier_uniform(config_.rel_mlp_dim, nl * config_.rel_mlp_dim, rng));
  rel_uh_ = &params_.add("rel.u_head", nn::xavier_uniform(config_.rel_mlp_dim, nl, rng));
  rel_ud_ = &params_.add("rel.u_dep", nn::xavier_uniform(config_.rel_mlp_dim, nl, rng));
  rel_b_ = &params_.add("rel.b", Matrix::Zero(1, nl));
}

std::vector<Index> ParserModel::pos_rows(const Sentence& sentence) const {
  std::vector<Index> rows{0};
  for (const auto& t : sentence.tokens) {
    auto it = std::lower_bound(upos_.begin(), upos_.end(), t.upos);
    rows.push_back(it != upos_.end() && *it == t.upos ? 2 + (it - upos_.begin()) : 1);
  }
  return rows;
}

ParserModel::Representations ParserModel::encode(Graph& g, const Matrix& embeddings, const Sentence& sentence) {
  if (embeddings.cols() != input_dim_) {
    throw DataError("embedding dimension " + std::to_string(embeddings.cols()) + " does not match parser input " +
                    std::to_string(input_dim_));
  }
  if (static_cast<std::size_t>(embeddings.rows()) != sentence.size()) {
    throw DataError("sentence and embedding lengths differ");
  }
  Expr x = nn::concat_rows({g.parameter(*root_), g.constant(embeddings)});
  if (config_.use_pos) x = nn::concat_cols({x, nn::gather_rows(g.parameter(*pos_), pos_rows(sentence))});
  x = nn::dropout(x, config_.dropout);
  Expr states = nn::dropout(nn::bilstm_sequence(g, x, encoder_, config_.dropout), config_.dropout);
  auto mlp = [&](const nn::Dense& layer) { return nn::dropout(nn::elu(nn::apply(g, layer, states)), config_.dropout); };
  return {states, mlp(arc_dep_), mlp(arc_head_), mlp(rel_dep_), mlp(rel_head_)};
}

Expr ParserModel::arc_scores(Graph& g, const Representations& r) {
  return nn::biaffine(r.arc_head, r.arc_dep, g.parameter(*arc_u_), g.parameter(*arc_b_));
}

Expr ParserModel::label_scores(Graph& g, const Representations& r, const std::vector<int>& heads) {
  const auto n = static_cast<Index>(heads.size());
  std::vector<Index> head_rows(heads.begin(), heads.end());
  Expr hh = nn::gather_rows(r.rel_head, head_rows);
  Expr hd = nn::slice_rows(r.rel_dep, 1, n);
  Expr s = nn::bilinear_rows(hh, hd, g.parameter(*rel_u_), static_cast<Index>(labels_.size()));
  s = nn::add(s, nn::matmul(hh, g.parameter(*rel_uh_)));
  s = nn::add(s, nn::matmul(hd, g.parameter(*rel_ud_)));
  return nn::add(s, g.parameter(*rel_b_));
}

Matrix ParserModel::score_arcs(const Matrix& embeddings, const Sentence& sentence) {
  Graph g(false);
  auto r = encode(g, embeddings, sentence);
  Matrix s = arc_scores(g, r).value();
  s.col(0).setConstant(kNegInf);
  s.diagonal().setConstant(kNegInf);
  return s;
}

Matrix ParserModel::score_labels(const Matrix& embeddings, const Sentence& sentence, const std::vector<int>& heads) {
  Graph g(false);
  auto r = encode(g, embeddings, sentence);
  return label_scores(g, r, heads).value();
}

Expr ParserModel::loss(Graph& g, const Matrix& embeddings, const Sentence& gold) {
  const std::vector<int> heads = gold.heads();
  if (!tree_violation(heads).empty()) throw DataError("gold sentence is not a tree");
  auto r = encode(g, embeddings, gold);
  const auto size = static_cast<Index>(heads.size()) + 1;
  // Rows of the transposed score matrix are dependents; row 0 (root) has no target.
  Expr by_dependent = nn::transpose(nn::add_constant(arc_scores(g, r), arc_mask(size)));
  std::vector<Index> head_targets{-1};
  for (int h : heads) head_targets.push_back(h);
  Expr arc_loss = nn::softmax_cross_entropy(by_dependent, head_targets);

  std::vector<Index> label_targets;
  for (const auto& t : gold.tokens) {
    auto it = std::lower_bound(labels_.begin(), labels_.end(), t.deprel);
    label_targets.push_back(it != labels_.end() && *it == t.deprel ? it - labels_.begin() : -1);
  }
  Expr label_loss = nn::softmax_cross_entropy(label_scores(g, r, heads), label_targets);
  return nn::add(arc_loss, label_loss);
}

ParseResult ParserModel::parse(const Matrix& embeddings, const Sentence& sentence) {
  ParseResult out;
  if (sentence.size() == 0) return out;
  Graph g(false);
  auto r = encode(g, embeddings, sentence);
  Matrix s = arc_scores(g, r).value();
  s.col(0).setConstant(kNegInf);
  s.diagonal().setConstant(kNegInf);
  out.heads = mst_decode(s, config_.single_root);
  const Matrix ls = label_scores(g, r, out.heads).value();
  for (Index j = 0; j < ls.rows(); ++j) {
    Index best;
    ls.row(j).maxCoeff(&best);
    out.labels.push_back(labels_[static_cast<std::size_t>(best)]);
  }
  return out;
}

void ParserModel::save(const std::string& path) const {
  nlohmann::json meta = {{"kind", "parser"},
                         {"input_dim", input_dim_},
                         {"config", config_to_json(config_)},
                         {"upos", upos_},
                         {"labels", labels_}};
  nn::save_checkpoint(path, params_, meta.dump());
}

ParserModel ParserModel::load(const std::string& path) {
  auto ck = nn::load_checkpoint(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ck.metadata);
    if (meta.at("kind").get<std::string>() != "parser") throw DataError(path + ": not a parser model");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad model metadata: " + e.what());
  }
  ParserModel model(config_from_json(meta.at("config")), meta.at("input_dim").get<Index>(),
                    meta.at("upos").get<std::vector<std::string>>(), meta.at("labels").get<std::vector<std::string>>());
  nn::restore(model.params_, ck);
  return model;
}

std::vector<Sentence> parse_all(ParserModel& model, const TreebankData& data, int threads) {
  std::vector<Sentence> out = data.sentences;
  parallel_for(out.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      auto result = model.parse(data.embeddings[k], out[k]);
      for (std::size_t i = 0; i < out[k].tokens.size(); ++i) {
        out[k].tokens[i].head = result.heads[i];
        out[k].tokens[i].deprel = result.labels[i];
      }
    }
  });
  return out;
}

AttachmentScores attachment_scores(const std::vector<Sentence>& gold, const std::vector<Sentence>& predicted,
                                   bool exclude_punct) {
  if (gold.size() != predicted.size()) throw DataError("gold and predicted sentence counts differ");
  std::size_t tokens = 0, head_ok = 0, label_ok = 0;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    if (gold[k].tokens.size() != predicted[k].tokens.size()) {
      throw DataError("sentence " + std::to_string(k + 1) + ": gold and predicted lengths differ");
    }
    for (std::size_t i = 0; i < gold[k].tokens.size(); ++i) {
      const auto& g = gold[k].tokens[i];
      const auto& p = predicted[k].tokens[i];
      if (exclude_punct && g.upos == "PUNCT") continue;
      ++tokens;
      if (p.head == g.head) {
        ++head_ok;
        if (p.deprel == g.deprel) ++label_ok;
      }
    }
  }
  AttachmentScores s;
  s.tokens = tokens;
  if (tokens > 0) {
    s.uas = 100.0 * static_cast<double>(head_ok) / static_cast<double>(tokens);
    s.las = 100.0 * static_cast<double>(label_ok) / static_cast<double>(tokens);
  }
  return s;
}

AttachmentScores evaluate(ParserModel& model, const TreebankData& data, bool exclude_punct, int threads) {
  return attachment_scores(data.sentences, parse_all(model, data, threads), exclude_punct);
}

ParserModel train_parser(const std::vector<TreebankData>& train, const std::vector<TreebankData>& dev,
                         const ParserConfig& config, ParserTrainResult* result, const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw DataError("no training treebanks");
  if (dev.empty()) throw DataError("a development set is required for early stopping");
  Index dim = -1;
  std::set<std::string> upos, labels;
  for (const auto& lang : train) {
    if (lang.sentences.empty()) throw DataError(lang.language + ": empty training treebank");
    for (std::size_t k = 0; k < lang.sentences.size(); ++k) {
      if (dim < 0) dim = lang.embeddings[k].cols();
      if (lang.embeddings[k].cols() != dim) throw DataError("training languages disagree on embedding dimension");
      for (const auto& t : lang.sentences[k].tokens) {
        upos.insert(t.upos);
        labels.insert(t.deprel);
      }
    }
  }
  ParserModel model(config, dim, {upos.begin(), upos.end()}, {labels.begin(), labels.end()});
  nn::Adam adam(model.params(), config.adam);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::vector<std::size_t>> order(train.size());
  std::vector<std::size_t> cursor(train.size(), 0);
  for (std::size_t l = 0; l < train.size(); ++l) {
    order[l].resize(train[l].sentences.size());
    for (std::size_t k = 0; k < order[l].size(); ++k) order[l][k] = k;
    std::shuffle(order[l].begin(), order[l].end(), rng);
  }

  ParserTrainResult local;
  ParserTrainResult& res = result ? *result : local;
  res = {};
  res.best_dev_las = -1.0;
  std::vector<Matrix> best = snapshot(model.params());
  int since_best = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::size_t instances = 0, epoch_tokens = 0;
    double epoch_loss = 0.0;
    while (instances < config.instances_per_epoch) {
      const std::size_t l = std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng);
      const std::size_t take = std::min(config.batch_sentences, config.instances_per_epoch - instances);
      Graph g(true, rng());
      std::vector<Expr> losses;
      std::size_t tokens = 0;
      for (std::size_t b = 0; b < take; ++b) {
        if (cursor[l] == order[l].size()) {
          std::shuffle(order[l].begin(), order[l].end(), rng);
          cursor[l] = 0;
        }
        const std::size_t k = order[l][cursor[l]++];
        if (train[l].sentences[k].size() == 0) continue;
        losses.push_back(model.loss(g, train[l].embeddings[k], train[l].sentences[k]));
        tokens += train[l].sentences[k].size();
      }
      instances += take;
      if (tokens == 0) continue;
      Expr loss = nn::scale(nn::sum_all(losses), 1.0 / static_cast<double>(tokens));
      model.params().zero_grad();
      g.backward(loss);
      adam.step();
      epoch_loss += loss.scalar() * static_cast<double>(tokens);
      epoch_tokens += tokens;
    }

    EpochReport report;
    report.epoch = epoch;
    report.train_loss = epoch_tokens ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0;
    for (const auto& d : dev) report.dev.push_back(evaluate(model, d, false, config.threads));
    for (const auto& s : report.dev) report.dev_las += s.las / static_cast<double>(report.dev.size());
    if (report.dev_las > res.best_dev_las) {
      res.best_dev_las = report.dev_las;
      res.best_epoch = epoch;
      best = snapshot(model.params());
      since_best = 0;
      report.improved = true;
    } else {
      ++since_best;
    }
    res.history.push_back(report);
    if (on_epoch) on_epoch(report);
    if (since_best >= config.patience) break;
  }
  restore_snapshot(model.params(), best);
  return model;
}

}  // namespace ctxalign
