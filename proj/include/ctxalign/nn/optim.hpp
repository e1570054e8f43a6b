#pragma once

#include <vector>

#include "ctxalign/nn/graph.hpp"

namespace ctxalign::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are kept per parameter, in ParameterSet order.
class Adam {
 public:
  Adam(ParameterSet& params, AdamConfig config = {});

  // Applies one update from the accumulated gradients; does not clear them.
  void step();
  long steps() const { return steps_; }
  AdamConfig& config() { return config_; }

 private:
  ParameterSet* params_;
  AdamConfig config_;
  std::vector<Matrix> m_, v_;
  long steps_ = 0;
};

// Plain SGD over a chosen subset of parameters.
class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, double lr) : params_(std::move(params)), lr_(lr) {}
  void step();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Parameter*> params_;
  double lr_;
};

}  // namespace ctxalign::nn
