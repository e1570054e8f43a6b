#include "ctxalign/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include <Eigen/LU>
#include <Eigen/QR>

namespace ctxalign {

PointDistribution parse_distribution(const std::string& name) {
  if (name == "gaussian") return PointDistribution::gaussian;
  if (name == "skewed") return PointDistribution::skewed;
  if (name == "mixture") return PointDistribution::mixture;
  throw DataError("unknown distribution '" + name + "' (expected gaussian, skewed or mixture)");
}

std::string distribution_name(PointDistribution d) {
  switch (d) {
    case PointDistribution::gaussian: return "gaussian";
    case PointDistribution::skewed: return "skewed";
    default: return "mixture";
  }
}

Matrix sample_points(std::size_t n, Index dim, PointDistribution distribution, std::mt19937_64& rng) {
  if (dim <= 0) throw DataError("dimension must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(static_cast<Index>(n), dim);
  switch (distribution) {
    case PointDistribution::gaussian:
      for (Index i = 0; i < out.rows(); ++i) {
        for (Index k = 0; k < dim; ++k) out(i, k) = normal(rng);
      }
      break;
    case PointDistribution::skewed: {
      // Marginal k: scale_k * (Gamma(a_k) - a_k) / sqrt(a_k), skewness 2 / sqrt(a_k).
      std::vector<std::gamma_distribution<double>> gammas;
      std::vector<double> shape(static_cast<std::size_t>(dim)), scale(static_cast<std::size_t>(dim));
      for (Index k = 0; k < dim; ++k) {
        const double t = dim > 1 ? static_cast<double>(k) / static_cast<double>(dim - 1) : 0.0;
        shape[static_cast<std::size_t>(k)] = 0.5 + 3.5 * t;
        scale[static_cast<std::size_t>(k)] = 1.5 - t;
        gammas.emplace_back(shape[static_cast<std::size_t>(k)], 1.0);
      }
      for (Index i = 0; i < out.rows(); ++i) {
        for (Index k = 0; k < dim; ++k) {
          const auto kk = static_cast<std::size_t>(k);
          out(i, k) = scale[kk] * (gammas[kk](rng) - shape[kk]) / std::sqrt(shape[kk]);
        }
      }
      break;
    }
    case PointDistribution::mixture: {
      // Scaled so that points have norm of order 2 whatever the dimension.
      const std::size_t clusters = static_cast<std::size_t>(std::max<Index>(4, dim));
      const double unit = 1.0 / std::sqrt(static_cast<double>(dim));
      Matrix centers(static_cast<Index>(clusters), dim);
      for (Index c = 0; c < centers.rows(); ++c) {
        for (Index k = 0; k < dim; ++k) centers(c, k) = 2.0 * unit * normal(rng);
      }
      std::vector<double> weights(clusters);
      for (std::size_t c = 0; c < clusters; ++c) weights[c] = 1.0 / static_cast<double>(c + 1);
      std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
      for (Index i = 0; i < out.rows(); ++i) {
        const auto c = static_cast<Index>(pick(rng));
        for (Index k = 0; k < dim; ++k) out(i, k) = centers(c, k) + 0.5 * unit * normal(rng);
      }
      break;
    }
  }
  return out;
}

Matrix random_orthogonal(Index dim, std::mt19937_64& rng, bool proper) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(dim, dim);
  for (Index i = 0; i < dim; ++i) {
    for (Index j = 0; j < dim; ++j) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR();
  for (Index j = 0; j < dim; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  if (proper && q.determinant() < 0) q.col(0) = -q.col(0);
  return q;
}

namespace {

std::vector<std::uint64_t> rank_counts(std::size_t n) {
  std::vector<std::uint64_t> counts(n);
  for (std::size_t i = 0; i < n; ++i) counts[i] = n - i;
  return counts;
}

std::vector<std::string> numbered(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = prefix + std::to_string(i);
  return out;
}

}  // namespace

RotatedAnchors synth_rotated_anchors(const RotatedAnchorsSpec& spec) {
  if (spec.vocab == 0 || spec.dim <= 0) throw DataError("rotated-anchors: vocab and dim must be positive");
  if (!(spec.sigma >= 0.0)) throw DataError("rotated-anchors: sigma must be >= 0");
  std::mt19937_64 rng(spec.seed);
  RotatedAnchors out;
  Matrix src = sample_points(spec.vocab, spec.dim, spec.distribution, rng);
  out.q = random_orthogonal(spec.dim, rng, spec.proper_rotation);
  Matrix tgt = src * out.q.transpose();
  if (spec.sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.sigma);
    for (Index i = 0; i < tgt.size(); ++i) tgt.data()[i] += noise(rng);
  }
  auto src_tokens = numbered("s", spec.vocab), tgt_tokens = numbered("t", spec.vocab);
  for (std::size_t i = 0; i < spec.vocab; ++i) out.dict.add(src_tokens[i], tgt_tokens[i]);
  out.src = AnchorTable::from_ranked("src", std::move(src_tokens), rank_counts(spec.vocab), std::move(src));
  out.tgt = AnchorTable::from_ranked("tgt", std::move(tgt_tokens), rank_counts(spec.vocab), std::move(tgt));
  return out;
}

GaussianClouds synth_gaussian_clouds(const GaussianCloudsSpec& spec) {
  if (spec.vocab == 0 || spec.dim <= 0) throw DataError("gaussian-clouds: vocab and dim must be positive");
  if (spec.min_occurrences == 0 || spec.max_occurrences < spec.min_occurrences) {
    throw DataError("gaussian-clouds: need 0 < min_occurrences <= max_occurrences");
  }
  if (!(spec.shift_sigma >= 0.0)) throw DataError("gaussian-clouds: shift sigma must be >= 0");
  std::mt19937_64 rng(spec.seed);
  Matrix anchors = sample_points(spec.vocab, spec.dim, spec.distribution, rng);
  std::vector<std::size_t> occ(spec.vocab);
  for (std::size_t i = 0; i < spec.vocab; ++i) {
    const double z = static_cast<double>(spec.max_occurrences) / static_cast<double>(i + 1);
    occ[i] = std::max(spec.min_occurrences, static_cast<std::size_t>(std::floor(z)));
  }
  std::normal_distribution<double> shift(0.0, spec.shift_sigma);

  auto make = [&](const Matrix& means, const std::string& prefix, const std::string& space) {
    CloudSet set;
    auto tokens = numbered(prefix, spec.vocab);
    // Occurrences are interleaved into pseudo-sentences of up to 20 tokens.
    std::vector<std::size_t> sequence;
    for (std::size_t i = 0; i < spec.vocab; ++i) sequence.insert(sequence.end(), occ[i], i);
    std::shuffle(sequence.begin(), sequence.end(), rng);
    for (std::size_t k = 0; k < sequence.size(); ++k) {
      ContextualOccurrence o;
      o.token = tokens[sequence[k]];
      o.sentence_id = k / 20;
      o.position = k % 20;
      o.vector = means.row(static_cast<Index>(sequence[k])).transpose();
      for (Index d = 0; d < spec.dim; ++d) o.vector[d] += shift(rng);
      set.occurrences.push_back(std::move(o));
    }
    // Ties in count are ordered lexicographically by from_entries.
    std::vector<AnchorEntry> entries;
    for (std::size_t i = 0; i < spec.vocab; ++i) {
      AnchorEntry e{tokens[i], occ[i], std::vector<double>(static_cast<std::size_t>(spec.dim))};
      for (Index d = 0; d < spec.dim; ++d) e.vector[static_cast<std::size_t>(d)] = means(static_cast<Index>(i), d);
      entries.push_back(std::move(e));
    }
    set.anchors = AnchorTable::from_entries(space, spec.dim, std::move(entries));
    return set;
  };

  GaussianClouds out;
  out.src = make(anchors, "s", "src");
  if (spec.pair) {
    out.q = random_orthogonal(spec.dim, rng, spec.proper_rotation);
    out.tgt = make(anchors * out.q.transpose(), "t", "tgt");
    for (std::size_t i = 0; i < spec.vocab; ++i) out.dict.add("s" + std::to_string(i), "t" + std::to_string(i));
  }
  return out;
}

// ---- toy grammar ---------------------------------------------------------

ToyGrammar::ToyGrammar(const ToyGrammarSpec& spec) {
  if (spec.nouns == 0 || spec.verbs == 0 || spec.determiners == 0 || spec.prepositions < 2) {
    throw DataError("toy grammar needs nouns, verbs, determiners and at least two prepositions");
  }
  if (spec.homographs > std::min(spec.nouns, spec.verbs)) throw DataError("too many homographs");
  std::mt19937_64 rng(spec.seed);
  const std::size_t total = spec.nouns + spec.verbs - spec.homographs + spec.adjectives + spec.adverbs +
                            spec.determiners + spec.prepositions + 1;
  std::vector<std::size_t> ids(total);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::size_t next = 0;
  auto take = [&](std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("w" + std::to_string(ids[next++]));
    return out;
  };
  nouns_ = take(spec.nouns);
  verbs_ = take(spec.verbs - spec.homographs);
  verbs_.insert(verbs_.begin(), nouns_.begin(), nouns_.begin() + static_cast<std::ptrdiff_t>(spec.homographs));
  adjectives_ = take(spec.adjectives);
  adverbs_ = take(spec.adverbs);
  determiners_ = take(spec.determiners);
  auto preps = take(spec.prepositions);
  noun_preps_.assign(preps.begin(), preps.begin() + static_cast<std::ptrdiff_t>(spec.prepositions / 2));
  verb_preps_.assign(preps.begin() + static_cast<std::ptrdiff_t>(spec.prepositions / 2), preps.end());
  forms_ = take(1);  // the sentence-final punctuation form
  std::bernoulli_distribution half(0.5);
  for (std::size_t v = 0; v < verbs_.size(); ++v) transitive_.push_back(half(rng));
  for (std::size_t i = 0; i < nouns_.size(); ++i) noun_weights_.push_back(1.0 / std::sqrt(static_cast<double>(i + 1)));
  for (std::size_t i = 0; i < verbs_.size(); ++i) verb_weights_.push_back(1.0 / std::sqrt(static_cast<double>(i + 1)));

  std::set<std::string> all(forms_.begin(), forms_.end());
  for (const auto* list : {&nouns_, &verbs_, &adjectives_, &adverbs_, &determiners_, &noun_preps_, &verb_preps_}) {
    all.insert(list->begin(), list->end());
  }
  const std::string punct = forms_.front();
  forms_.assign(all.begin(), all.end());
  // Keep the punctuation form addressable at the front.
  forms_.erase(std::find(forms_.begin(), forms_.end(), punct));
  forms_.insert(forms_.begin(), punct);
}

Sentence ToyGrammar::sample(std::mt19937_64& rng) const {
  Sentence s;
  std::vector<std::pair<std::size_t, std::size_t>> links;  // (dependent, head), 0-based token indices
  auto add = [&](const std::string& form, const char* upos, const char* deprel) {
    s.tokens.push_back({form, upos, -1, deprel});
    return s.tokens.size() - 1;
  };
  auto pick = [&](const std::vector<std::string>& list) {
    return list[std::uniform_int_distribution<std::size_t>(0, list.size() - 1)(rng)];
  };
  auto chance = [&](double p) { return std::bernoulli_distribution(p)(rng); };
  std::discrete_distribution<std::size_t> noun_dist(noun_weights_.begin(), noun_weights_.end());
  std::discrete_distribution<std::size_t> verb_dist(verb_weights_.begin(), verb_weights_.end());

  // Noun phrase; returns the index of its head noun.
  auto noun_phrase = [&](const char* deprel) {
    std::vector<std::size_t> mods;
    if (chance(0.7)) mods.push_back(add(pick(determiners_), "DET", "det"));
    int adjectives = chance(0.4) ? (chance(0.3) ? 2 : 1) : 0;
    for (int a = 0; a < adjectives && !adjectives_.empty(); ++a) mods.push_back(add(pick(adjectives_), "ADJ", "amod"));
    std::size_t noun = add(nouns_[noun_dist(rng)], "NOUN", deprel);
    for (auto m : mods) links.emplace_back(m, noun);
    return noun;
  };
  auto prep_phrase = [&](const std::vector<std::string>& preps, std::size_t attach, const char* deprel) {
    std::size_t prep = add(pick(preps), "ADP", "case");
    std::size_t noun = noun_phrase(deprel);
    links.emplace_back(prep, noun);
    links.emplace_back(noun, attach);
  };

  std::size_t subject = noun_phrase("nsubj");
  if (chance(0.15)) prep_phrase(noun_preps_, subject, "nmod");
  const std::size_t v = verb_dist(rng);
  std::size_t verb = add(verbs_[v], "VERB", "root");
  links.emplace_back(subject, verb);
  if (!adverbs_.empty() && chance(0.3)) links.emplace_back(add(pick(adverbs_), "ADV", "advmod"), verb);
  if (transitive_[v]) {
    std::size_t object = noun_phrase("obj");
    links.emplace_back(object, verb);
    if (chance(0.5)) {
      if (chance(0.5)) prep_phrase(noun_preps_, object, "nmod");
      else prep_phrase(verb_preps_, verb, "obl");
    }
  } else if (chance(0.5)) {
    prep_phrase(verb_preps_, verb, "obl");
  }
  links.emplace_back(add(forms_.front(), "PUNCT", "punct"), verb);

  s.tokens[verb].head = 0;
  for (auto [dep, head] : links) s.tokens[dep].head = static_cast<int>(head) + 1;
  return s;
}

namespace {

std::unordered_map<std::string, std::string> rename_map(const std::vector<std::string>& forms, std::mt19937_64& rng) {
  std::vector<std::size_t> ids(forms.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::unordered_map<std::string, std::string> out;
  for (std::size_t i = 0; i < forms.size(); ++i) out.emplace(forms[i], "v" + std::to_string(ids[i]));
  return out;
}

Sentence rename(Sentence s, const std::unordered_map<std::string, std::string>& map) {
  for (auto& t : s.tokens) t.form = map.at(t.form);
  return s;
}

std::vector<std::string> words(const Sentence& s) { return s.forms(); }

Dictionary dictionary_of(const std::vector<std::string>& forms,
                         const std::unordered_map<std::string, std::string>& map) {
  Dictionary d;
  for (const auto& f : forms) d.add(f, map.at(f));
  return d;
}

}  // namespace

ToyTreebankPair synth_toy_treebank_pair(const ToyTreebankPairSpec& spec) {
  if (spec.train == 0 || spec.dev == 0 || spec.test == 0) throw DataError("toy-treebank-pair: split sizes must be positive");
  ToyGrammarSpec gspec = spec.grammar;
  gspec.seed = spec.seed;
  ToyGrammar grammar(gspec);
  std::mt19937_64 rng(spec.seed * 7919 + 11);
  auto map = rename_map(grammar.forms(), rng);
  ToyTreebankPair out;
  auto draw = [&](std::size_t n, const std::string& prefix) {
    std::vector<Sentence> v;
    for (std::size_t i = 0; i < n; ++i) {
      v.push_back(grammar.sample(rng));
      v.back().id = prefix + "-" + std::to_string(i);
    }
    return v;
  };
  out.a_train = draw(spec.train, "train");
  out.a_dev = draw(spec.dev, "dev");
  out.a_test = draw(spec.test, "test");
  for (const auto& s : out.a_test) out.b_test.push_back(rename(s, map));
  for (std::size_t i = 0; i < spec.corpus; ++i) out.a_corpus.push_back(words(grammar.sample(rng)));
  for (std::size_t i = 0; i < spec.corpus; ++i) out.b_corpus.push_back(words(rename(grammar.sample(rng), map)));
  out.a_to_b = dictionary_of(grammar.forms(), map);
  return out;
}

ToyCorpus synth_toy_corpus(const ToyCorpusSpec& spec) {
  if (spec.sentences == 0) throw DataError("toy-corpus: sentence count must be positive");
  ToyGrammarSpec gspec = spec.grammar;
  gspec.seed = spec.seed;
  ToyGrammar grammar(gspec);
  std::mt19937_64 rng(spec.seed * 7919 + 13);
  ToyCorpus out;
  for (std::size_t i = 0; i < spec.sentences; ++i) out.corpus.push_back(words(grammar.sample(rng)));
  if (spec.pair_sentences > 0) {
    auto map = rename_map(grammar.forms(), rng);
    for (std::size_t i = 0; i < spec.pair_sentences; ++i) out.pair_corpus.push_back(words(rename(grammar.sample(rng), map)));
    out.dict = dictionary_of(grammar.forms(), map);
  }
  return out;
}

}  // namespace ctxalign
