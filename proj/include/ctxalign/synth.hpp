#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctxalign/corpus_io.hpp"

namespace ctxalign {

// Shapes of synthetic point clouds.
//   gaussian: isotropic standard normal.
//   skewed:   independent centered gamma marginals with distinct shapes and scales.
//   mixture:  unequal-weight Gaussian clusters around random centers.
enum class PointDistribution { gaussian, skewed, mixture };

PointDistribution parse_distribution(const std::string& name);
std::string distribution_name(PointDistribution d);

Matrix sample_points(std::size_t n, Index dim, PointDistribution distribution, std::mt19937_64& rng);

// Haar-random orthogonal matrix; with `proper` the determinant is +1.
Matrix random_orthogonal(Index dim, std::mt19937_64& rng, bool proper = false);

struct RotatedAnchorsSpec {
  Index dim = 50;
  std::size_t vocab = 1000;
  double sigma = 0.0;  // isotropic target noise
  PointDistribution distribution = PointDistribution::gaussian;
  bool proper_rotation = false;
  std::uint64_t seed = 1;
};

// tgt_i = Q src_i + noise. Source tokens "s<i>", target tokens "t<i>", same rank.
struct RotatedAnchors {
  AnchorTable src, tgt;
  Dictionary dict;
  Matrix q;
};

RotatedAnchors synth_rotated_anchors(const RotatedAnchorsSpec& spec);

struct GaussianCloudsSpec {
  Index dim = 16;
  std::size_t vocab = 200;
  std::size_t min_occurrences = 5;
  std::size_t max_occurrences = 50;  // Zipf-like decay from max to min over ranks
  double shift_sigma = 0.1;
  PointDistribution distribution = PointDistribution::gaussian;
  // Also produce a target language whose anchors are Q times the source anchors.
  bool pair = false;
  bool proper_rotation = true;
  std::uint64_t seed = 1;
};

struct CloudSet {
  AnchorTable anchors;  // the generating anchors
  std::vector<ContextualOccurrence> occurrences;
};

struct GaussianClouds {
  CloudSet src;
  std::optional<CloudSet> tgt;
  Dictionary dict;
  Matrix q;
};

GaussianClouds synth_gaussian_clouds(const GaussianCloudsSpec& spec);

// Random dependency grammar over word classes with lexical attachment
// preferences and noun/verb homographs.
struct ToyGrammarSpec {
  std::size_t nouns = 120;
  std::size_t verbs = 60;
  std::size_t adjectives = 40;
  std::size_t adverbs = 15;
  std::size_t determiners = 4;
  std::size_t prepositions = 8;
  std::size_t homographs = 20;  // forms that are both a noun and a verb
  std::uint64_t seed = 1;
};

class ToyGrammar {
 public:
  explicit ToyGrammar(const ToyGrammarSpec& spec);

  Sentence sample(std::mt19937_64& rng) const;
  // All word forms the grammar can produce.
  const std::vector<std::string>& forms() const { return forms_; }

 private:
  std::vector<std::string> forms_;
  std::vector<std::string> nouns_, verbs_, adjectives_, adverbs_, determiners_;
  std::vector<std::string> noun_preps_, verb_preps_;
  std::vector<bool> transitive_;
  std::vector<double> noun_weights_, verb_weights_;
};

struct ToyTreebankPairSpec {
  std::size_t train = 200;
  std::size_t dev = 100;
  std::size_t test = 200;
  std::size_t corpus = 5000;  // LM sentences per language, drawn independently
  ToyGrammarSpec grammar;
  std::uint64_t seed = 1;
};

// Language B is language A with every word form renamed by a fixed random
// bijection; its treebank sentences mirror A's test sentences exactly.
struct ToyTreebankPair {
  std::vector<Sentence> a_train, a_dev, a_test, b_test;
  TokenizedCorpus a_corpus, b_corpus;
  Dictionary a_to_b;
};

ToyTreebankPair synth_toy_treebank_pair(const ToyTreebankPairSpec& spec);

struct ToyCorpusSpec {
  std::size_t sentences = 1000;
  // When > 0, also emit a renamed clone language with this many independent sentences.
  std::size_t pair_sentences = 0;
  ToyGrammarSpec grammar;
  std::uint64_t seed = 1;
};

struct ToyCorpus {
  TokenizedCorpus corpus;
  TokenizedCorpus pair_corpus;
  Dictionary dict;  // corpus language -> clone
};

ToyCorpus synth_toy_corpus(const ToyCorpusSpec& spec);

}  // namespace ctxalign
