#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "hiervl/encoders.hpp"

namespace hiervl::corpus {
struct VideoRecord;
}

namespace hiervl::model {

enum class AggregatorKind { Average, SelfAttention };

std::string to_string(AggregatorKind kind);
AggregatorKind aggregator_kind_from_string(const std::string& s);

struct AggregatorConfig {
  AggregatorKind kind = AggregatorKind::SelfAttention;
  std::size_t clips_per_video = 16;  // K
  std::size_t sa_layers = 2;
  std::size_t sa_heads = 4;
  std::size_t sa_model_dim = 32;  // must equal the encoders' embed_dim
  std::size_t sa_mlp_dim = 64;

  void validate(std::size_t embed_dim) const;
};

/// K short-term embeddings in temporal order with their source clip indices.
struct FeatureSequence {
  std::vector<EmbeddingVec> features;
  std::vector<std::size_t> clip_indices;  // non-decreasing
};

/// K indices spread over [0, num_clips): floor(j * num_clips / K). When the
/// video is shorter than K, indices repeat.
std::vector<std::size_t> sample_uniform(std::size_t num_clips, std::size_t k);

/// Parameter-free mean followed by L2 normalisation. The per-coordinate sum
/// runs over sorted values, so the result is bit-identical under any
/// reordering of the sequence.
EmbeddingVec aggregate_avg(const FeatureSequence& seq);

/// Agg: [B, K, E] -> [B, E]. Average or order-aware self-attention; one
/// instance serves both modalities.
class Aggregator {
 public:
  Aggregator() = default;
  Aggregator(const AggregatorConfig& config, std::size_t embed_dim, std::mt19937_64& rng);

  Tensor forward(const Tensor& features) const;
  EmbeddingVec aggregate(const FeatureSequence& seq) const;

  AggregatorKind kind() const { return config_.kind; }
  const AggregatorConfig& config() const { return config_; }
  // Empty for Average.
  ParamList parameters() const;
  static std::size_t param_count(const AggregatorConfig& c, std::size_t embed_dim);

  // Diagnostic switch: drop positional encodings (the SA stack then sees a set).
  void set_positional_encoding(bool enabled) { use_positions_ = enabled; }
  bool positional_encoding() const { return use_positions_; }

 private:
  AggregatorConfig config_;
  std::size_t embed_dim_ = 0;
  bool use_positions_ = true;
  Tensor cls_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_ln_;
  Linear out_proj_;
};

/// Stacks K embeddings as a [1, K, E] tensor.
Tensor stack_sequence(const FeatureSequence& seq);

/// f_V: sample K clips, encode each with f_v, aggregate.
EmbeddingVec long_term_visual(const corpus::VideoRecord& video, const ClipEncoder& clip_encoder,
                              const Aggregator& agg);
/// f_N: the same K indices through f_n over the narrations.
EmbeddingVec long_term_textual(const corpus::VideoRecord& video, const TextEncoder& text_encoder,
                               const Aggregator& agg);

}  // namespace hiervl::model
