#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ccdc/tensor.hpp"

namespace ccdc {

struct GradCheckOptions {
  double step = 1e-5;              // narrow probe width; 100*step is also probed
  Index max_coords_per_param = 6;  // coordinates sampled per parameter
  std::uint64_t seed = 0;
};

struct GradCheckGroup {
  std::string name;          // parameter-name prefix up to the first '.'
  double worst_rel_err = 0;  // over sampled coordinates with signal
  Index coords_checked = 0;
  bool has_grad_path = false;  // any sampled coordinate moved the loss
  std::string worst_param;
  Index worst_coord = -1;
  bool non_finite = false;  // loss became non-finite at some perturbation
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double worst_rel_err = 0;  // over groups with a gradient path
  bool any_non_finite = false;
};

// eval(true) must rebuild the computation from the store's current values,
// run backward, and leave analytic gradients in Parameter::grad (grads are
// zeroed here first). eval(false) is a pure forward evaluation.
GradCheckReport grad_check(ParameterStore& store, const std::function<double(bool)>& eval,
                           const GradCheckOptions& opts = {});

}  // namespace ccdc
