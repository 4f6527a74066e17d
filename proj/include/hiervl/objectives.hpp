#pragma once

// Grouped InfoNCE losses for both levels of the hierarchy. All losses are the
// negated log-ratio, so lower is better and perfect alignment approaches 0.

#include "hiervl/tensor.hpp"

namespace hiervl::objectives {

using ad::Mask;
using ad::Scalar;
using ad::Tensor;

class Temperature {
 public:
  explicit Temperature(Scalar tau = Scalar{0.05});
  Scalar value() const { return tau_; }

 private:
  Scalar tau_;
};

/// Clip/narration embeddings of one child batch; positive_mask is B x B with
/// entry (i, j) set when j is a positive for anchor i.
struct ChildBatch {
  Tensor clips;
  Tensor narrations;
  Mask positive_mask;
};

/// Long-term embeddings of one parent batch. Any of the three may be left
/// undefined when the active loss variant does not use it.
struct ParentBatch {
  Tensor videos;      // f_V
  Tensor narrations;  // f_N
  Tensor summaries;   // f_n(S)
  Mask positive_mask;
};

/// Checks the mask invariants for a B x B batch: diagonal set, no empty rows.
void validate_positive_mask(const Mask& mask, std::size_t batch);

Mask diagonal_mask(std::size_t batch);
Mask transpose_mask(const Mask& mask, std::size_t batch);

/// -(1/B) sum_i log( sum_{j in P_i} exp(a_i.t_j / tau) / sum_j exp(a_i.t_j / tau) ),
/// evaluated with log-sum-exp on both sides.
Tensor nce_grouped(const Tensor& anchors, const Tensor& targets, const Mask& positive_mask,
                   Temperature tau);

/// Clip->narration, averaged with narration->clip unless `one_sided`.
Tensor child_loss(const ChildBatch& batch, Temperature tau, bool one_sided = false);

/// L^SV + L^SN, each with the summary embeddings as targets. With
/// `with_summary_narration == false` only L^SV remains.
Tensor parent_loss(const ParentBatch& batch, Temperature tau, bool with_summary_narration = true);

/// Parent level without summaries: f_V anchors against f_N targets.
Tensor parent_loss_no_summary(const ParentBatch& batch, Temperature tau);

}  // namespace hiervl::objectives
