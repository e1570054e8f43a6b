#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctxalign/corpus_io.hpp"

namespace ctxalign {

enum class AdversarialVariant { anchored, context_based };

AdversarialVariant parse_variant(const std::string& name);
std::string variant_name(AdversarialVariant variant);

struct AdversarialConfig {
  AdversarialVariant variant = AdversarialVariant::anchored;
  Index disc_hidden = 2048;
  int disc_layers = 2;
  double disc_input_dropout = 0.1;
  double leaky_slope = 0.2;
  double label_smoothing = 0.2;
  int disc_steps = 5;  // discriminator updates per mapping update
  long steps = 50000;  // mapping updates
  std::size_t batch = 32;
  double map_lr = 0.1;
  double disc_lr = 0.1;
  // Every epoch_steps mapping updates both learning rates are multiplied by
  // lr_decay, and map_lr also by lr_shrink when the criterion fell below the best so far.
  long epoch_steps = 31250;
  double lr_decay = 0.98;
  double lr_shrink = 0.5;
  double ortho_beta = 0.001;
  // When one orthogonalize_step leaves ||W^T W - I||_F above this, W is snapped
  // to its nearest orthogonal matrix.
  double ortho_guard = 0.1;
  std::size_t feed_top_k = 50000;
  long eval_every = 1000;
  std::size_t criterion_rank = 10000;
  int k_csls = 10;
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;
};

struct RefineConfig {
  int iterations = 5;
  std::size_t max_rank = 10000;
  int k_csls = 10;
  std::size_t criterion_rank = 10000;
  int threads = 1;

  void validate() const;
};

// The criterion became NaN or W stopped being finite. Carries the best
// checkpoint seen before that happened.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, AlignmentMatrix last_finite)
      : NumericalError(what), last_finite_(std::move(last_finite)) {}
  const AlignmentMatrix& last_finite() const { return last_finite_; }

 private:
  AlignmentMatrix last_finite_;
};

// W <- (1 + beta) W - beta (W W^T) W
Matrix orthogonalize_step(const Matrix& w, double beta);

// Mean CSLS score between the first `rank` source anchors (mapped by W) and
// their CSLS-nearest target anchor.
double unsupervised_criterion(const Matrix& w, const AnchorTable& src, const AnchorTable& tgt,
                              std::size_t rank = 10000, int k_csls = 10, int threads = 1);

struct AdversarialProgress {
  long step = 0;
  double disc_accuracy = 0.0;  // over the discriminator updates since the last report
  double criterion = 0.0;
  double orthogonality = 0.0;      // ||W^T W - I||_F at this step
  double max_orthogonality = 0.0;  // largest value after any update since the last report
  bool best = false;
};

struct AdversarialResult {
  AlignmentMatrix w;
  double criterion = 0.0;
  long best_step = 0;
  std::vector<AdversarialProgress> history;
};

using AdversarialCallback = std::function<void(const AdversarialProgress&)>;

// Samples for the discriminator: anchor rows (anchored variant) or occurrence
// vectors (context-based variant). Anchors are always used for model selection.
struct AdversarialData {
  const AnchorTable* src_anchors = nullptr;
  const AnchorTable* tgt_anchors = nullptr;
  const Matrix* src_occurrences = nullptr;  // context-based only
  const Matrix* tgt_occurrences = nullptr;  // context-based only; target anchors when absent
};

// Starts from W = I. Returns the checkpoint with the best criterion, projected
// onto the orthogonal group.
AdversarialResult train_adversarial(const AdversarialData& data, const AdversarialConfig& config,
                                    const AdversarialCallback& on_progress = {});

// Runs train_adversarial once per seed and keeps the run with the best criterion.
AdversarialResult train_adversarial_restarts(const AdversarialData& data, const AdversarialConfig& config,
                                             const std::vector<std::uint64_t>& seeds,
                                             const AdversarialCallback& on_progress = {});

struct RefineResult {
  AlignmentMatrix w;
  double criterion = 0.0;
  int best_iteration = 0;  // 0 = the input W0
  std::vector<double> criteria;  // criteria[0] is W0's
  std::vector<std::size_t> dictionary_sizes;
};

// Alternates mutual-nearest-neighbor dictionary induction and Procrustes.
// Never returns an iterate worse than W0 under the criterion.
RefineResult refine(const AlignmentMatrix& w0, const AnchorTable& src, const AnchorTable& tgt,
                    const RefineConfig& config);

}  // namespace ctxalign
