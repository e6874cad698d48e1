#pragma once

#include "timt/nn/param_store.hpp"

#include <vector>

namespace timt::train {

// Adam with optional global-norm gradient clipping. step() consumes and
// zeroes the accumulated gradients.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<nn::Param*> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  // clip_norm <= 0 disables clipping
  void step(double clip_norm);

  int64_t steps_taken() const { return t_; }

 private:
  std::vector<nn::Param*> params_;
  std::vector<Mat> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace timt::train
