#pragma once

#include "timt/nn/param_store.hpp"

#include <functional>
#include <string>
#include <vector>

namespace timt::loss {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int n_checked = 0;  // coordinates evaluated
};

// Central finite differences against analytic gradients. For each parameter a
// numeric gradient is assembled coordinate by coordinate (all coordinates, or
// a seeded random sample of max_coords_per_param when the array is larger)
// and compared as vectors: |a - n| / max(|a|, |n|, 1e-8) in the Euclidean
// norm. The maximum over parameters is returned. loss_fn(true) must zero
// grads, run forward+backward and return the loss; loss_fn(false) returns
// the value only. The loss must be deterministic across calls.
GradCheckResult gradient_check(const std::function<double(bool compute_grads)>& loss_fn,
                               const std::vector<nn::Param*>& params, double epsilon,
                               uint64_t seed, int max_coords_per_param = 0);

struct LossCheck {
  std::string name;
  GradCheckResult result;
};

// Builds every training loss at toy dimensions (B=2, l=3, d=4, vocab=6) and
// checks its gradients. Covers the three likelihood losses and the six
// distillation terms.
std::vector<LossCheck> check_all_losses(double epsilon, uint64_t seed);

}  // namespace timt::loss
