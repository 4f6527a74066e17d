#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hiervl/tensor.hpp"

namespace hiervl::ad {

using LossFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of `loss` with central finite differences
/// over every element of every input. Returns
/// ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||, 1e-8), all inputs concatenated.
double gradient_relative_error(const LossFn& loss, const std::vector<Tensor>& inputs,
                               double step = 1e-5);

/// A named, seedable gradient check. `make` builds fresh leaf inputs and the
/// scalar loss over them for one seed.
struct GradCheckCase {
  std::string name;
  std::function<std::pair<std::vector<Tensor>, LossFn>(std::uint64_t seed)> make;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;
  int seeds = 0;
  bool passed = false;
};

/// One case per registered tensor op; each reduces the op output to a scalar
/// through a fixed random projection so every output element contributes.
std::vector<GradCheckCase> op_gradcheck_cases();

GradCheckResult run_gradcheck(const GradCheckCase& c, int seeds, double tolerance);

}  // namespace hiervl::ad
