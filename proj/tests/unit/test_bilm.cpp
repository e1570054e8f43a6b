#include <algorithm>
#include <cmath>

#include "ctxalign/bilm.hpp"
#include "ctxalign/nn/optim.hpp"
#include "ctxalign/synth.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ctxalign;

namespace {

BiLMConfig tiny_config() {
  BiLMConfig c;
  c.emb_dim = 8;
  c.hidden = 8;
  c.epochs = 2;
  c.batch = 8;
  c.seed = 5;
  return c;
}

TokenizedCorpus toy_corpus(std::size_t n, std::uint64_t seed) {
  ToyCorpusSpec spec;
  spec.sentences = n;
  spec.seed = seed;
  return synth_toy_corpus(spec).corpus;
}

// Reference trainer with no anchoring code at all.
BiLMModel train_plain(const TokenizedCorpus& corpus, const BiLMConfig& config) {
  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    if (!corpus[k].empty()) order.push_back(k);
  }
  BiLMModel model(config, Vocabulary::build(corpus, config.vocab_cap));
  nn::Adam adam(model.params(), nn::AdamConfig{config.lr});
  std::mt19937_64 rng(config.seed ^ 0x2545f4914f6cdd1dULL);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      nn::Graph g(true, rng());
      std::vector<nn::Expr> fwd, bwd;
      std::size_t predictions = 0;
      for (std::size_t b = start; b < end; ++b) {
        auto l = model.sentence_loss(g, corpus[order[b]]);
        fwd.push_back(l.forward);
        bwd.push_back(l.backward);
        predictions += l.predictions;
      }
      const double inv = 1.0 / static_cast<double>(predictions);
      nn::Expr loss = nn::add(nn::scale(nn::sum_all(fwd), inv), nn::scale(nn::sum_all(bwd), inv));
      model.params().zero_grad();
      g.backward(loss);
      adam.step();
    }
  }
  return model;
}

AnchorTargets random_targets(const Vocabulary& vocab, std::size_t words, Index dim, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix v = scale * test_util::random_matrix(static_cast<Index>(words), dim, rng);
  std::vector<std::string> tokens;
  std::vector<std::uint64_t> counts;
  AnchorTargets at;
  for (std::size_t i = 0; i < words; ++i) {
    tokens.push_back("T" + std::to_string(i));
    counts.push_back(words - i);
    at.dictionary.add(vocab.word(i), tokens.back());
  }
  at.targets = AnchorTable::from_ranked("tgt", tokens, counts, v);
  return at;
}

}  // namespace

TEST_CASE("bilm: lambda zero reproduces a trainer without the regularizer") {
  auto corpus = toy_corpus(40, 1);
  auto cfg = tiny_config();
  cfg.dropout = 0.2;
  auto a = train_bilm(corpus, cfg);
  auto b = train_plain(corpus, cfg);
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params().at(i).value == b.params().at(i).value);

  // the penalty itself is zero with zero gradient at lambda = 0
  auto targets = random_targets(a.vocabulary(), 5, 8, 1.0, 2);
  nn::Graph g;
  auto p = a.anchor_penalty(g, 0.0, targets);
  REQUIRE(p.has_value());
  CHECK(p->scalar() == 0.0);
}

TEST_CASE("bilm: a huge lambda pins dictionary words to their targets") {
  auto corpus = toy_corpus(64, 3);
  auto cfg = tiny_config();
  cfg.epochs = 60;
  cfg.lr = 1e-3;
  BiLMModel probe(cfg, Vocabulary::build(corpus, cfg.vocab_cap));
  cfg.anchor_targets = random_targets(probe.vocabulary(), 10, 8, 0.05, 4);
  cfg.lambda_anchor = 1e6;
  std::vector<double> distances;
  auto m = train_bilm(corpus, cfg, nullptr, [&](const BiLMEpochReport& r) { distances.push_back(r.mean_anchor_distance); });
  CHECK(mean_anchor_distance(m, *cfg.anchor_targets) < 0.01);
  CHECK(distances.front() > distances.back());
}

TEST_CASE("bilm: anchoring needs a usable dictionary") {
  auto corpus = toy_corpus(10, 5);
  auto cfg = tiny_config();
  cfg.lambda_anchor = 1.0;
  CHECK_THROWS_AS(train_bilm(corpus, cfg), DataError);  // no targets
  AnchorTargets none;
  none.dictionary.add("zzz", "T0");
  none.targets = AnchorTable::from_ranked("t", {"T0"}, {1}, Matrix::Zero(1, 8));
  cfg.anchor_targets = none;
  CHECK_THROWS_AS(train_bilm(corpus, cfg), DataError);
  auto zero = tiny_config();
  zero.anchor_targets = none;
  CHECK_THROWS_AS(zero.validate(), DataError);
  auto neg = tiny_config();
  neg.lambda_anchor = -1;
  CHECK_THROWS_AS(neg.validate(), DataError);
}

TEST_CASE("bilm: uniform output distribution has perplexity |V|") {
  auto corpus = toy_corpus(20, 6);
  auto cfg = tiny_config();
  BiLMModel m(cfg, Vocabulary::build(corpus, cfg.vocab_cap));
  m.params().get("out.w").value.setZero();
  m.params().get("out.b").value.setZero();
  const double v = static_cast<double>(m.vocabulary().size());
  CHECK(std::abs(perplexity(m, corpus) - v) / v < 0.01);
}

TEST_CASE("bilm: memorizing one sentence drives perplexity toward one") {
  TokenizedCorpus one = {{"the", "dog", "sees", "a", "cat"}};
  auto cfg = tiny_config();
  cfg.epochs = 300;
  cfg.lr = 0.02;
  auto m = train_bilm(one, cfg);
  CHECK(perplexity(m, one) < 1.05);
}

TEST_CASE("bilm: layer 0 is the embedding table, layer 1 varies with context") {
  auto corpus = toy_corpus(30, 7);
  auto cfg = tiny_config();
  auto m = train_bilm(corpus, cfg);
  const std::string w = m.vocabulary().word(0);
  std::vector<std::string> s1 = {w, m.vocabulary().word(1)}, s2 = {m.vocabulary().word(2), w, w};
  Matrix a = m.embed_sentence(s1, 0), b = m.embed_sentence(s2, 0);
  CHECK(a.row(0) == m.embedding(m.vocabulary().id(w)));
  CHECK(a.row(0) == b.row(1));
  CHECK(b.row(1) == b.row(2));
  Matrix c = m.embed_sentence(s1, 1), d = m.embed_sentence(s2, 1);
  CHECK(c.cols() == 16);
  CHECK((c.row(0) - d.row(1)).norm() > 1e-6);
  CHECK_THROWS_AS(m.embed_sentence(s1, 2), DataError);
  CHECK(m.embed_sentence({"never-seen"}, 0).row(0) == m.embedding(Vocabulary::kUnk));
}

TEST_CASE("bilm: embedding emits one record per token and flags unknown words") {
  auto corpus = toy_corpus(25, 8);
  auto m = train_bilm(corpus, tiny_config());
  TokenizedCorpus text = corpus;
  text.push_back({"qqq", m.vocabulary().word(0)});
  std::size_t tokens = 0;
  for (const auto& s : text) tokens += s.size();
  std::size_t seen = 0;
  auto stats = embed_corpus(m, text, 1, [&](const std::string&, std::uint64_t, std::uint64_t, const Eigen::Ref<const RowVector>& v) {
    ++seen;
    CHECK(v.size() == 16);
  });
  CHECK(seen == tokens);
  CHECK(stats.occurrences == tokens);
  CHECK(stats.unknown == 1);
  CHECK(stats.sentences == text.size());
}

TEST_CASE("bilm: anchors_of matches embedding then averaging") {
  test_util::TempDir dir("bilm");
  auto corpus = toy_corpus(30, 9);
  auto m = train_bilm(corpus, tiny_config());
  {
    OccurrenceWriter w(dir.file("occ.ctx"), m.output_dim(1));
    embed_corpus(m, corpus, 1, w);
    w.close();
  }
  OccurrenceReader reader(dir.file("occ.ctx"));
  auto manual = compute_anchors(occurrences_from(reader), {});
  auto direct = anchors_of(m, corpus, {});
  save_static_embeddings(manual, dir.file("a.vec"));
  save_static_embeddings(direct, dir.file("b.vec"));
  CHECK(test_util::read_text(dir.file("a.vec")) == test_util::read_text(dir.file("b.vec")));
  CHECK(anchors_of(m, corpus, {}).vectors() == direct.vectors());

  // a token seen once has its single contextual vector as anchor
  TokenizedCorpus single = {{"lonely", m.vocabulary().word(0)}};
  auto t = anchors_of(m, single, {});
  CHECK(t.vector(*t.find("lonely")) == m.embed_sentence(single[0], 1).row(0));
}

TEST_CASE("bilm: save and load round trip") {
  test_util::TempDir dir("bilm");
  auto corpus = toy_corpus(15, 10);
  auto m = train_bilm(corpus, tiny_config());
  m.save(dir.file("m.bin"));
  auto back = BiLMModel::load(dir.file("m.bin"));
  CHECK(back.vocabulary().words() == m.vocabulary().words());
  CHECK(back.embed_sentence(corpus[0], 1) == m.embed_sentence(corpus[0], 1));
  CHECK(perplexity(back, corpus) == perplexity(m, corpus));
}
