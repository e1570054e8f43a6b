#pragma once

#include <functional>
#include <string>

#include "ctxalign/nn/graph.hpp"

namespace ctxalign::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_entry;
  std::size_t entries_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-4;
  // Denominator floor: error = |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-3;
  // 0 checks every entry; otherwise at most this many per parameter, evenly strided.
  std::size_t max_entries_per_parameter = 0;
};

// Compares backward() against central differences of `build_loss`, which must
// build a fresh graph and return a scalar loss. It is called many times and
// must be deterministic.
GradCheckResult check_gradients(ParameterSet& params, const std::function<Expr(Graph&)>& build_loss,
                                const GradCheckOptions& options = {});

}  // namespace ctxalign::nn
