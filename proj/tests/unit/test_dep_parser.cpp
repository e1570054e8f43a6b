#include <cmath>
#include <map>

#include "ctxalign/dep_parser.hpp"
#include "ctxalign/mst.hpp"
#include "ctxalign/synth.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ctxalign;

namespace {

ParserConfig tiny_config() {
  ParserConfig c;
  c.pos_dim = 4;
  c.lstm_hidden = 8;
  c.lstm_layers = 1;
  c.arc_mlp_dim = 8;
  c.rel_mlp_dim = 4;
  c.dropout = 0.0;
  c.batch_sentences = 8;
  c.instances_per_epoch = 64;
  c.max_epochs = 3;
  c.patience = 3;
  c.adam.lr = 2e-3;
  return c;
}

// Each word form gets one fixed random vector.
TreebankData with_static_vectors(const std::string& lang, const std::vector<Sentence>& sentences, Index dim,
                                 std::map<std::string, RowVector>& lexicon, std::mt19937_64& rng) {
  TreebankData d;
  d.language = lang;
  d.sentences = sentences;
  for (const auto& s : sentences) {
    Matrix m(static_cast<Index>(s.size()), dim);
    for (std::size_t i = 0; i < s.size(); ++i) {
      auto it = lexicon.find(s.tokens[i].form);
      if (it == lexicon.end()) it = lexicon.emplace(s.tokens[i].form, test_util::random_matrix(1, dim, rng)).first;
      m.row(static_cast<Index>(i)) = it->second;
    }
    d.embeddings.push_back(m);
  }
  return d;
}

Sentence chain(std::size_t n) {
  Sentence s;
  s.id = "c" + std::to_string(n);
  for (std::size_t i = 0; i < n; ++i) {
    ConlluToken t;
    t.form = "w" + std::to_string(i);
    t.upos = i % 2 ? "VERB" : "NOUN";
    t.head = static_cast<int>(i);  // token 1 attaches to the root
    t.deprel = i == 0 ? "root" : "dep";
    s.tokens.push_back(t);
  }
  return s;
}

ToyTreebankPair small_pair(std::uint64_t seed) {
  ToyTreebankPairSpec spec;
  spec.train = 40;
  spec.dev = 20;
  spec.test = 20;
  spec.corpus = 10;
  spec.seed = seed;
  return synth_toy_treebank_pair(spec);
}

}  // namespace

TEST_CASE("parser: encoder shapes, zero encoder and context sensitivity") {
  auto cfg = tiny_config();
  ParserModel m(cfg, 5, {"NOUN", "VERB"}, {"dep", "root"});
  std::mt19937_64 rng(1);
  Sentence one = chain(1);
  Matrix e1 = test_util::random_matrix(1, 5, rng);
  {
    nn::Graph g;
    CHECK(m.encode(g, e1, one).tokens.rows() == 2);
  }

  Sentence s = chain(6);
  Matrix e = test_util::random_matrix(6, 5, rng);
  Matrix changed = e;
  changed.row(5) = test_util::random_matrix(1, 5, rng);
  {
    nn::Graph g;
    Matrix a = m.encode(g, e, s).tokens.value();
    Matrix b = m.encode(g, changed, s).tokens.value();
    CHECK((a.row(1) - b.row(1)).norm() > 1e-8);
  }

  for (std::size_t i = 0; i < m.params().size(); ++i) {
    if (m.params().at(i).name().rfind("enc", 0) == 0) m.params().at(i).value.setZero();
  }
  nn::Graph g;
  CHECK(m.encode(g, e, s).tokens.value().isZero());
  CHECK_THROWS_AS(m.encode(g, test_util::random_matrix(6, 4, rng), s), DataError);
}

TEST_CASE("parser: zero biaffine weights give zero arc scores and the root is never a dependent") {
  ParserModel m(tiny_config(), 5, {"NOUN", "VERB"}, {"dep", "root"});
  std::mt19937_64 rng(2);
  Sentence s = chain(4);
  Matrix e = test_util::random_matrix(4, 5, rng);
  Matrix before = m.score_arcs(e, s);
  for (Index i = 0; i < 5; ++i) CHECK(std::isinf(before(i, 0)));
  m.params().get("arc.U").value.setZero();
  m.params().get("arc.b").value.setZero();
  Matrix s0 = m.score_arcs(e, s);
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 1; j < 5; ++j) {
      if (i != j) CHECK(s0(i, j) == 0.0);
    }
  }
}

TEST_CASE("parser: zero parameters give uniform label scores, label bias shifts keep the argmax") {
  std::mt19937_64 rng(3);
  Sentence s = chain(5);
  Matrix e = test_util::random_matrix(5, 5, rng);
  ParserModel m(tiny_config(), 5, {"NOUN", "VERB"}, {"a", "b", "dep", "root"});
  auto before = m.parse(e, s);
  m.params().get("rel.b").value.array() += 3.5;
  auto after = m.parse(e, s);
  CHECK(before.heads == after.heads);
  CHECK(before.labels == after.labels);

  for (std::size_t i = 0; i < m.params().size(); ++i) m.params().at(i).value.setZero();
  Matrix ls = m.score_labels(e, s, {0, 1, 2, 3, 4});
  CHECK((ls.array() == ls(0, 0)).all());
}

TEST_CASE("attachment scores on crafted predictions") {
  auto pair = small_pair(4);
  const auto& gold = pair.a_test;
  auto a = attachment_scores(gold, gold);
  CHECK(a.uas == 100.0);
  CHECK(a.las == 100.0);

  auto wrong_labels = gold;
  for (auto& s : wrong_labels) {
    for (auto& t : s.tokens) t.deprel = "nope";
  }
  auto b = attachment_scores(gold, wrong_labels);
  CHECK(b.uas == 100.0);
  CHECK(b.las == 0.0);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto noisy = gold;
    for (auto& s : noisy) {
      for (auto& t : s.tokens) {
        if (rng() % 3 == 0) t.head = static_cast<int>(rng() % (s.size() + 1));
        if (rng() % 3 == 0) t.deprel = "x";
      }
    }
    auto c = attachment_scores(gold, noisy);
    CHECK(c.las <= c.uas);
  }

  Sentence p = chain(2);
  p.tokens[1].upos = "PUNCT";
  Sentence q = p;
  q.tokens[1].head = 0;
  CHECK(attachment_scores({p}, {q}).uas == 50.0);
  CHECK(attachment_scores({p}, {q}, true).uas == 100.0);
  CHECK(attachment_scores({p}, {q}, true).tokens == 1);
  CHECK_THROWS_AS(attachment_scores({p}, {}), DataError);
}

TEST_CASE("parse: valid single-root trees on random inputs, deterministic, CoNLL-U round trip") {
  ParserModel m(tiny_config(), 3, {"NOUN", "VERB"}, {"dep", "root"});
  std::mt19937_64 rng(6);
  std::vector<Sentence> out;
  for (int trial = 0; trial < 1000; ++trial) {
    Sentence s = chain(1 + rng() % 12);
    Matrix e = test_util::random_matrix(static_cast<Index>(s.size()), 3, rng);
    auto r = m.parse(e, s);
    REQUIRE(tree_violation(r.heads).empty());
    CHECK(std::count(r.heads.begin(), r.heads.end(), 0) == 1);
    if (trial < 10) {
      CHECK(m.parse(e, s).heads == r.heads);
      for (std::size_t i = 0; i < s.size(); ++i) {
        s.tokens[i].head = r.heads[i];
        s.tokens[i].deprel = r.labels[i];
      }
      out.push_back(s);
    }
  }
  CHECK(m.parse(Matrix(0, 3), Sentence{}).heads.empty());

  test_util::TempDir dir("parser");
  save_conllu(out, dir.file("p.conllu"));
  auto back = load_conllu(dir.file("p.conllu"));
  REQUIRE(back.size() == out.size());
  for (std::size_t k = 0; k < out.size(); ++k) CHECK(back[k].heads() == out[k].heads());
}

TEST_CASE("parser: save and load keep predictions") {
  test_util::TempDir dir("parser");
  ParserModel m(tiny_config(), 3, {"NOUN"}, {"dep", "root"});
  m.save(dir.file("m.bin"));
  auto back = ParserModel::load(dir.file("m.bin"));
  std::mt19937_64 rng(7);
  Sentence s = chain(5);
  Matrix e = test_util::random_matrix(5, 3, rng);
  CHECK(back.score_arcs(e, s) == m.score_arcs(e, s));
  CHECK(back.labels() == m.labels());
}

TEST_CASE("train_parser: dev set required, config validated") {
  auto pair = small_pair(8);
  std::map<std::string, RowVector> lex;
  std::mt19937_64 rng(8);
  auto train = with_static_vectors("a", pair.a_train, 6, lex, rng);
  CHECK_THROWS_AS(train_parser({train}, {}, tiny_config()), DataError);
  auto bad = tiny_config();
  bad.patience = 10;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = tiny_config();
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("train_parser: identical language copies score alike and training helps") {
  auto pair = small_pair(9);
  std::map<std::string, RowVector> lex;
  std::mt19937_64 rng(9);
  auto a = with_static_vectors("a", pair.a_train, 8, lex, rng);
  auto b = a;
  b.language = "b";
  auto dev_a = with_static_vectors("a", pair.a_dev, 8, lex, rng);
  auto dev_b = dev_a;
  dev_b.language = "b";
  auto cfg = tiny_config();
  cfg.max_epochs = 6;
  cfg.patience = 6;
  ParserTrainResult res;
  auto model = train_parser({a, b}, {dev_a, dev_b}, cfg, &res);
  REQUIRE(!res.history.empty());
  const auto& best = res.history[static_cast<std::size_t>(res.best_epoch - 1)];
  REQUIRE(best.dev.size() == 2);
  CHECK(std::abs(best.dev[0].las - best.dev[1].las) <= 1.0);
  CHECK(evaluate(model, dev_a).las == doctest::Approx(res.best_dev_las));
  CHECK(res.history.back().train_loss < res.history.front().train_loss);
}
