#include "ctxalign/adversarial_align.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "ctxalign/linalg_align.hpp"
#include "ctxalign/logging.hpp"
#include "ctxalign/nn/layers.hpp"
#include "ctxalign/nn/optim.hpp"
#include "ctxalign/retrieval.hpp"

namespace ctxalign {

using nn::Expr;
using nn::Graph;

AdversarialVariant parse_variant(const std::string& name) {
  if (name == "anchored") return AdversarialVariant::anchored;
  if (name == "context" || name == "context_based" || name == "context-based") {
    return AdversarialVariant::context_based;
  }
  throw DataError("unknown variant '" + name + "' (expected anchored or context)");
}

std::string variant_name(AdversarialVariant variant) {
  return variant == AdversarialVariant::anchored ? "anchored" : "context";
}

void AdversarialConfig::validate() const {
  auto rate = [](double r) { return r >= 0.0 && r < 1.0; };
  if (disc_hidden <= 0 || disc_layers < 0 || disc_steps <= 0 || batch == 0 || feed_top_k == 0 ||
      eval_every <= 0 || epoch_steps <= 0 || criterion_rank == 0 || k_csls < 1) {
    throw DataError("adversarial sizes must be positive");
  }
  if (steps <= 0) throw DataError("steps must be positive");
  if (!rate(disc_input_dropout) || !(label_smoothing >= 0.0 && label_smoothing < 0.5)) {
    throw DataError("dropout must lie in [0, 1) and label smoothing in [0, 0.5)");
  }
  if (!(map_lr > 0.0) || !(disc_lr > 0.0) || !(lr_decay > 0.0 && lr_decay <= 1.0) ||
      !(lr_shrink > 0.0 && lr_shrink <= 1.0) || !(ortho_beta >= 0.0 && ortho_beta <= 0.5) ||
      !(ortho_guard > 0.0)) {
    throw DataError("invalid adversarial learning-rate settings");
  }
}

void RefineConfig::validate() const {
  if (iterations < 1) throw DataError("refinement needs at least one iteration");
  if (max_rank == 0 || k_csls < 1 || criterion_rank == 0) throw DataError("refinement sizes must be positive");
}

Matrix orthogonalize_step(const Matrix& w, double beta) {
  return (1.0 + beta) * w - beta * (w * w.transpose()) * w;
}

double unsupervised_criterion(const Matrix& w, const AnchorTable& src, const AnchorTable& tgt, std::size_t rank,
                              int k_csls, int threads) {
  if (src.empty() || tgt.empty()) throw DataError("criterion needs non-empty anchor tables");
  if (w.rows() != src.dim() || w.cols() != src.dim() || tgt.dim() != src.dim()) {
    throw DataError("criterion: dimension mismatch");
  }
  Matrix mapped = src.vectors() * w.transpose();
  if (!mapped.allFinite()) return std::numeric_limits<double>::quiet_NaN();
  RetrievalSpace space(mapped, tgt.vectors(), k_csls, threads);
  const std::size_t n = std::min(rank, src.size());
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  auto best = space.nearest_targets(rows, 1, Metric::csls);
  double total = 0.0;
  for (const auto& b : best) total += b.front().score;
  return total / static_cast<double>(n);
}

namespace {

struct Discriminator {
  nn::ParameterSet params;
  std::vector<nn::Dense> layers;
};

Discriminator make_discriminator(Index dim, const AdversarialConfig& c, std::mt19937_64& rng) {
  Discriminator d;
  Index in = dim;
  for (int l = 0; l < c.disc_layers; ++l) {
    d.layers.push_back(nn::add_dense(d.params, "disc.l" + std::to_string(l), in, c.disc_hidden, rng));
    in = c.disc_hidden;
  }
  d.layers.push_back(nn::add_dense(d.params, "disc.out", in, 1, rng));
  return d;
}

Expr discriminate(Graph& g, const Discriminator& d, const AdversarialConfig& c, Expr x) {
  x = nn::dropout(x, c.disc_input_dropout);
  for (std::size_t l = 0; l + 1 < d.layers.size(); ++l) x = nn::leaky_relu(nn::apply(g, d.layers[l], x), c.leaky_slope);
  return nn::apply(g, d.layers.back(), x);
}

Matrix gather(const Matrix& pool, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), pool.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = pool.row(rows[i]);
  return out;
}

}  // namespace

AdversarialResult train_adversarial(const AdversarialData& data, const AdversarialConfig& config,
                                    const AdversarialCallback& on_progress) {
  config.validate();
  if (!data.src_anchors || !data.tgt_anchors) throw DataError("adversarial training needs source and target anchors");
  const AnchorTable& src = *data.src_anchors;
  const AnchorTable& tgt = *data.tgt_anchors;
  if (src.empty() || tgt.empty()) throw DataError("empty anchor table");
  if (src.dim() != tgt.dim()) throw DataError("source and target dimension differ");
  const Index dim = src.dim();

  // Sample pools; anchors are in rank order so topRows() is the frequency cut.
  Matrix src_pool, tgt_pool;
  if (config.variant == AdversarialVariant::anchored) {
    src_pool = src.vectors().topRows(static_cast<Index>(std::min(config.feed_top_k, src.size())));
    tgt_pool = tgt.vectors().topRows(static_cast<Index>(std::min(config.feed_top_k, tgt.size())));
  } else {
    if (!data.src_occurrences || data.src_occurrences->rows() == 0) {
      throw DataError("context-based variant needs source occurrences");
    }
    src_pool = *data.src_occurrences;
    tgt_pool = data.tgt_occurrences ? *data.tgt_occurrences : tgt.vectors();
    if (src_pool.cols() != dim || tgt_pool.cols() != dim) throw DataError("occurrence dimension differs from anchors");
  }

  std::mt19937_64 rng(config.seed);
  Discriminator disc = make_discriminator(dim, config, rng);
  nn::Parameter mapping("W", Matrix::Identity(dim, dim));
  std::vector<nn::Parameter*> disc_params;
  for (std::size_t i = 0; i < disc.params.size(); ++i) disc_params.push_back(&disc.params.at(i));
  nn::Sgd disc_opt(disc_params, config.disc_lr);
  nn::Sgd map_opt({&mapping}, config.map_lr);
  std::uniform_int_distribution<Index> pick_src(0, src_pool.rows() - 1), pick_tgt(0, tgt_pool.rows() - 1);

  const auto b = static_cast<Index>(config.batch);
  std::vector<double> disc_labels(2 * config.batch), map_labels(2 * config.batch);
  for (std::size_t i = 0; i < 2 * config.batch; ++i) {
    disc_labels[i] = i < config.batch ? 1.0 - config.label_smoothing : config.label_smoothing;
    map_labels[i] = 1.0 - disc_labels[i];
  }
  auto sample = [&](std::uniform_int_distribution<Index>& pick, const Matrix& pool) {
    std::vector<Index> rows(config.batch);
    for (auto& r : rows) r = pick(rng);
    return gather(pool, rows);
  };

  AdversarialResult result;
  result.w = AlignmentMatrix{src.space_id(), tgt.space_id(), Matrix::Identity(dim, dim)};
  result.criterion = unsupervised_criterion(result.w.w, src, tgt, config.criterion_rank, config.k_csls, config.threads);
  std::size_t correct = 0, judged = 0;
  double max_orthogonality = 0.0;

  for (long step = 1; step <= config.steps; ++step) {
    for (int d = 0; d < config.disc_steps; ++d) {
      Matrix x(2 * b, dim);
      x.topRows(b) = sample(pick_src, src_pool) * mapping.value.transpose();
      x.bottomRows(b) = sample(pick_tgt, tgt_pool);
      Graph g(true, rng());
      Expr logits = discriminate(g, disc, config, g.constant(std::move(x)));
      Expr loss = nn::sigmoid_cross_entropy(logits, disc_labels);
      disc.params.zero_grad();
      g.backward(loss);
      disc_opt.step();
      const Matrix& lv = logits.value();
      for (Index i = 0; i < 2 * b; ++i) correct += ((lv(i, 0) > 0.0) == (i < b)) ? 1 : 0;
      judged += static_cast<std::size_t>(2 * b);
    }

    {
      Graph g(false);
      Expr mapped = nn::matmul(g.constant(sample(pick_src, src_pool)), nn::transpose(g.parameter(mapping)));
      Expr x = nn::concat_rows({mapped, g.constant(sample(pick_tgt, tgt_pool))});
      Expr loss = nn::sigmoid_cross_entropy(discriminate(g, disc, config, x), map_labels);
      mapping.zero_grad();
      g.backward(loss);
      map_opt.step();
      mapping.value = orthogonalize_step(mapping.value, config.ortho_beta);
      if (orthogonality_error(mapping.value) > config.ortho_guard) mapping.value = nearest_orthogonal(mapping.value);
      max_orthogonality = std::max(max_orthogonality, orthogonality_error(mapping.value));
    }

    if (step % config.eval_every == 0 || step == config.steps) {
      AdversarialProgress p;
      p.step = step;
      p.disc_accuracy = judged ? static_cast<double>(correct) / static_cast<double>(judged) : 0.0;
      p.orthogonality = orthogonality_error(mapping.value);
      p.max_orthogonality = max_orthogonality;
      correct = judged = 0;
      max_orthogonality = 0.0;
      if (!mapping.value.allFinite()) {
        throw DivergenceError("mapping became non-finite at step " + std::to_string(step), result.w);
      }
      Matrix projected = nearest_orthogonal(mapping.value);
      p.criterion = unsupervised_criterion(projected, src, tgt, config.criterion_rank, config.k_csls, config.threads);
      if (std::isnan(p.criterion)) {
        throw DivergenceError("criterion is NaN at step " + std::to_string(step), result.w);
      }
      if (p.criterion > result.criterion) {
        result.criterion = p.criterion;
        result.w.w = projected;
        result.best_step = step;
        p.best = true;
      }
      result.history.push_back(p);
      if (on_progress) on_progress(p);
    }
    if (step % config.epoch_steps == 0) {
      const double criterion =
          unsupervised_criterion(nearest_orthogonal(mapping.value), src, tgt, config.criterion_rank, config.k_csls,
                                 config.threads);
      if (criterion < result.criterion) map_opt.set_lr(map_opt.lr() * config.lr_shrink);
      map_opt.set_lr(map_opt.lr() * config.lr_decay);
      disc_opt.set_lr(disc_opt.lr() * config.lr_decay);
    }
  }
  return result;
}

AdversarialResult train_adversarial_restarts(const AdversarialData& data, const AdversarialConfig& config,
                                             const std::vector<std::uint64_t>& seeds,
                                             const AdversarialCallback& on_progress) {
  if (seeds.empty()) throw DataError("need at least one seed");
  AdversarialResult best;
  bool have = false;
  for (auto seed : seeds) {
    AdversarialConfig c = config;
    c.seed = seed;
    AdversarialResult r;
    try {
      r = train_adversarial(data, c, on_progress);
    } catch (const DivergenceError& e) {
      log_warn("seed " + std::to_string(seed) + " diverged: " + e.what());
      continue;
    }
    log_info("seed " + std::to_string(seed) + ": criterion " + format_double(r.criterion));
    if (!have || r.criterion > best.criterion) {
      best = std::move(r);
      have = true;
    }
  }
  if (!have) throw NumericalError("every adversarial run diverged");
  return best;
}

RefineResult refine(const AlignmentMatrix& w0, const AnchorTable& src, const AnchorTable& tgt,
                    const RefineConfig& config) {
  config.validate();
  RefineResult result;
  result.w = w0;
  result.criterion = unsupervised_criterion(w0.w, src, tgt, config.criterion_rank, config.k_csls, config.threads);
  result.criteria.push_back(result.criterion);
  result.dictionary_sizes.push_back(0);
  AlignmentMatrix current = w0;
  for (int it = 1; it <= config.iterations; ++it) {
    Dictionary dict;
    try {
      dict = build_synthetic_dictionary(apply_alignment(current, src), tgt, config.max_rank, config.k_csls,
                                        config.threads);
    } catch (const DataError&) {
      if (it == 1) throw;
      log_warn("refinement stopped at iteration " + std::to_string(it) + ": empty dictionary");
      break;
    }
    auto pairing = pairs_from_dictionary(src, tgt, dict);
    current = orthogonal_procrustes(pairing.points);
    current.source_space = w0.source_space;
    current.target_space = w0.target_space;
    const double c = unsupervised_criterion(current.w, src, tgt, config.criterion_rank, config.k_csls, config.threads);
    result.criteria.push_back(c);
    result.dictionary_sizes.push_back(dict.size());
    if (c > result.criterion) {
      result.criterion = c;
      result.w = current;
      result.best_iteration = it;
    }
  }
  return result;
}

}  // namespace ctxalign
