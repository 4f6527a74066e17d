#pragma once

#include "hiervl/gradcheck.hpp"

namespace hiervl {

/// Finite-difference checks of the encoders, both aggregators and every loss
/// on tiny configurations; inputs are model parameters and embeddings.
std::vector<ad::GradCheckCase> model_gradcheck_cases();

/// Op cases followed by model cases.
std::vector<ad::GradCheckCase> all_gradcheck_cases();

}  // namespace hiervl
