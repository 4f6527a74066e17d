#include "hiervl/objectives.hpp"

#include "hiervl/errors.hpp"

namespace hiervl::objectives {

Temperature::Temperature(Scalar tau) : tau_(tau) {
  if (!(tau > 0)) throw ConfigError("temperature must be positive");
}

void validate_positive_mask(const Mask& mask, std::size_t batch) {
  if (mask.size() != batch * batch) {
    throw DimensionError("positive mask has " + std::to_string(mask.size()) + " entries for batch " +
                         std::to_string(batch));
  }
  for (std::size_t i = 0; i < batch; ++i) {
    if (!mask[i * batch + i]) {
      throw ContractError("positive mask: row " + std::to_string(i) + " does not contain itself");
    }
  }
}

Mask diagonal_mask(std::size_t batch) {
  Mask m(batch * batch, 0);
  for (std::size_t i = 0; i < batch; ++i) m[i * batch + i] = 1;
  return m;
}

Mask transpose_mask(const Mask& mask, std::size_t batch) {
  Mask t(mask.size());
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t j = 0; j < batch; ++j) t[j * batch + i] = mask[i * batch + j];
  return t;
}

Tensor nce_grouped(const Tensor& anchors, const Tensor& targets, const Mask& positive_mask,
                   Temperature tau) {
  if (anchors.rank() != 2 || targets.rank() != 2 || anchors.shape() != targets.shape()) {
    throw DimensionError("nce: anchors " + ad::to_string(anchors.shape()) + " vs targets " +
                         ad::to_string(targets.shape()));
  }
  const std::size_t b = anchors.dim(0);
  validate_positive_mask(positive_mask, b);
  Tensor logits = ad::scale(ad::matmul(anchors, ad::transpose(targets)), 1 / tau.value());
  Tensor all = ad::logsumexp(logits);
  Tensor pos = ad::masked_logsumexp(logits, positive_mask);
  return ad::mean_all(ad::sub(all, pos));
}

Tensor child_loss(const ChildBatch& batch, Temperature tau, bool one_sided) {
  Tensor forward = nce_grouped(batch.clips, batch.narrations, batch.positive_mask, tau);
  if (one_sided) return forward;
  const std::size_t b = batch.clips.dim(0);
  Tensor reverse =
      nce_grouped(batch.narrations, batch.clips, transpose_mask(batch.positive_mask, b), tau);
  return ad::scale(ad::add(forward, reverse), Scalar{0.5});
}

Tensor parent_loss(const ParentBatch& batch, Temperature tau, bool with_summary_narration) {
  if (!batch.videos.defined() || !batch.summaries.defined()) {
    throw ContractError("parent_loss: needs f_V and summary embeddings");
  }
  Tensor sv = nce_grouped(batch.videos, batch.summaries, batch.positive_mask, tau);
  if (!with_summary_narration) return sv;
  if (!batch.narrations.defined()) throw ContractError("parent_loss: needs f_N embeddings");
  return ad::add(sv, nce_grouped(batch.narrations, batch.summaries, batch.positive_mask, tau));
}

Tensor parent_loss_no_summary(const ParentBatch& batch, Temperature tau) {
  if (!batch.videos.defined() || !batch.narrations.defined()) {
    throw ContractError("parent_loss_no_summary: needs f_V and f_N embeddings");
  }
  return nce_grouped(batch.videos, batch.narrations, batch.positive_mask, tau);
}

}  // namespace hiervl::objectives
