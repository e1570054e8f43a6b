#include "ctxalign/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ctxalign::nn {

GradCheckResult check_gradients(ParameterSet& params, const std::function<Expr(Graph&)>& build_loss,
                                const GradCheckOptions& options) {
  params.zero_grad();
  {
    Graph g;
    Expr loss = build_loss(g);
    g.backward(loss);
  }
  auto evaluate = [&] {
    Graph g;
    return build_loss(g).scalar();
  };

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params.at(pi);
    const auto total = static_cast<std::size_t>(p.value.size());
    std::size_t stride = 1;
    if (options.max_entries_per_parameter > 0 && total > options.max_entries_per_parameter) {
      stride = (total + options.max_entries_per_parameter - 1) / options.max_entries_per_parameter;
    }
    for (std::size_t k = 0; k < total; k += stride) {
      const Index r = static_cast<Index>(k) / p.cols(), c = static_cast<Index>(k) % p.cols();
      const double saved = p.value(r, c);
      p.value(r, c) = saved + options.step;
      const double up = evaluate();
      p.value(r, c) = saved - options.step;
      const double down = evaluate();
      p.value(r, c) = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p.grad(r, c);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      const double err = std::abs(analytic - numeric) / denom;
      ++result.entries_checked;
      if (err > result.max_relative_error || !std::isfinite(err)) {
        result.max_relative_error = std::isfinite(err) ? err : INFINITY;
        result.worst_entry = p.name() + "(" + std::to_string(r) + "," + std::to_string(c) +
                             ") analytic=" + std::to_string(analytic) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace ctxalign::nn
