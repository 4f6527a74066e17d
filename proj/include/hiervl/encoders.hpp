#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "hiervl/transformer.hpp"

namespace hiervl::model {

/// A point in the shared child/parent embedding space; always unit norm.
class EmbeddingVec {
 public:
  EmbeddingVec() = default;
  // Throws ContractError unless | ||values|| - 1 | < 1e-6.
  explicit EmbeddingVec(std::vector<Scalar> values);
  // Row `row` of a [N, E] tensor.
  static EmbeddingVec from_row(const Tensor& rows, std::size_t row);

  const std::vector<Scalar>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  EmbeddingVec operator-() const;

 private:
  std::vector<Scalar> values_;
};

/// Dot product of two unit vectors.
Scalar similarity(const EmbeddingVec& a, const EmbeddingVec& b);

struct EncoderConfig {
  std::size_t model_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t mlp_dim = 128;
  std::size_t max_seq_len = 16;
  std::size_t vocab_size = 256;
  std::size_t frame_feature_dim = 32;
  std::size_t embed_dim = 32;

  void validate() const;
};

/// Frames of one clip, one row per frame. Rows past `valid_len` are padding.
struct ClipInput {
  std::size_t rows = 0;
  std::size_t feature_dim = 0;
  std::vector<Scalar> frames;  // rows * feature_dim
  std::size_t valid_len = 0;

  ClipInput padded_to(std::size_t new_rows) const;
  bool operator==(const ClipInput&) const = default;
};

/// Token ids of a narration or summary. Ids past `valid_len` are padding.
struct TextInput {
  std::vector<std::int64_t> tokens;
  std::size_t valid_len = 0;

  TextInput padded_to(std::size_t length) const;
  bool operator==(const TextInput&) const = default;
};

/// f_v: frame sequence -> EmbeddingVec. Learned CLS token, sinusoidal
/// positions, masked transformer stack, projection of the CLS output.
class ClipEncoder {
 public:
  ClipEncoder() = default;
  ClipEncoder(const EncoderConfig& config, std::mt19937_64& rng);

  // [N, embed_dim], rows unit norm. Items are padded to the longest one.
  Tensor forward(std::span<const ClipInput> clips) const;
  EmbeddingVec encode(const ClipInput& clip) const;

  ParamList parameters() const;
  const EncoderConfig& config() const { return config_; }
  static std::size_t param_count(const EncoderConfig& c);

 private:
  EncoderConfig config_;
  Linear frame_proj_;
  Tensor cls_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_ln_;
  Linear out_proj_;
};

/// f_n: token sequence -> EmbeddingVec. Narrations and summaries share one
/// instance.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const EncoderConfig& config, std::mt19937_64& rng);

  Tensor forward(std::span<const TextInput> texts) const;
  EmbeddingVec encode(const TextInput& text) const;

  ParamList parameters() const;
  const EncoderConfig& config() const { return config_; }
  static std::size_t param_count(const EncoderConfig& c);

 private:
  EncoderConfig config_;
  Tensor token_table_;
  Tensor cls_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_ln_;
  Linear out_proj_;
};

}  // namespace hiervl::model
