#include "hiervl/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "hiervl/errors.hpp"

namespace hiervl::model {

EmbeddingVec::EmbeddingVec(std::vector<Scalar> values) : values_(std::move(values)) {
  double ss = 0;
  for (Scalar v : values_) ss += double(v) * double(v);
  if (std::abs(std::sqrt(ss) - 1.0) >= 1e-6) {
    throw ContractError("EmbeddingVec: norm " + std::to_string(std::sqrt(ss)) + " is not 1");
  }
}

EmbeddingVec EmbeddingVec::from_row(const Tensor& rows, std::size_t row) {
  const std::size_t e = rows.dim(1);
  auto d = rows.data().subspan(row * e, e);
  return EmbeddingVec(std::vector<Scalar>(d.begin(), d.end()));
}

EmbeddingVec EmbeddingVec::operator-() const {
  EmbeddingVec out = *this;
  for (auto& v : out.values_) v = -v;
  return out;
}

Scalar similarity(const EmbeddingVec& a, const EmbeddingVec& b) {
  if (a.size() != b.size()) throw DimensionError("similarity: embedding sizes differ");
  Scalar s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

void EncoderConfig::validate() const {
  if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
    throw ConfigError("encoder: model_dim must be a positive multiple of num_heads");
  }
  if (num_layers == 0 || mlp_dim == 0 || max_seq_len == 0 || embed_dim == 0 ||
      vocab_size == 0 || frame_feature_dim == 0) {
    throw ConfigError("encoder: all sizes must be positive");
  }
}

ClipInput ClipInput::padded_to(std::size_t new_rows) const {
  if (new_rows < valid_len) throw ContractError("ClipInput: cannot pad below valid_len");
  ClipInput out = *this;
  out.rows = new_rows;
  out.frames.assign(new_rows * feature_dim, Scalar{0});
  std::copy_n(frames.begin(), valid_len * feature_dim, out.frames.begin());
  return out;
}

TextInput TextInput::padded_to(std::size_t length) const {
  if (length < valid_len) throw ContractError("TextInput: cannot pad below valid_len");
  TextInput out = *this;
  out.tokens.resize(valid_len);
  out.tokens.resize(length, 0);
  return out;
}

namespace {

void build_stack(const EncoderConfig& c, std::mt19937_64& rng,
                 std::vector<TransformerBlock>& blocks) {
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    blocks.push_back(TransformerBlock::init(c.model_dim, c.num_heads, c.mlp_dim, rng));
  }
}

// Shared tail: add positions, run the stack with the key mask, pool CLS.
Tensor encode_tail(const EncoderConfig& c, const Tensor& cls, const Tensor& tokens,
                   const std::vector<std::size_t>& valid, const std::vector<TransformerBlock>& blocks,
                   const LayerNorm& final_ln, const Linear& out_proj) {
  const std::size_t n = tokens.dim(0);
  const std::size_t t = tokens.dim(1) + 1;
  Tensor x = prepend_token(cls, tokens);
  x = ad::add(x, sinusoidal_positions(t, c.model_dim));
  Mask key_mask(n * t, 0);
  bool any_pad = false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= valid[i]; ++j) key_mask[i * t + j] = 1;
    any_pad = any_pad || valid[i] + 1 < t;
  }
  if (!any_pad) key_mask.clear();
  for (const auto& b : blocks) x = b(x, key_mask);
  Tensor pooled = ad::reshape(ad::slice(x, 1, 0, 1), {n, c.model_dim});
  return ad::l2_normalize(out_proj(final_ln(pooled)));
}

std::size_t stack_params(const EncoderConfig& c) {
  return c.num_layers * TransformerBlock::param_count(c.model_dim, c.mlp_dim);
}

void collect_stack(const std::vector<TransformerBlock>& blocks, ParamList& out) {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, "block" + std::to_string(i));
}

}  // namespace

ClipEncoder::ClipEncoder(const EncoderConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  frame_proj_ = Linear::init(config_.frame_feature_dim, config_.model_dim, rng);
  cls_ = Tensor::from({config_.model_dim}, normal_values(config_.model_dim, 0.02, rng), true);
  build_stack(config_, rng, blocks_);
  final_ln_ = LayerNorm::init(config_.model_dim);
  out_proj_ = Linear::init(config_.model_dim, config_.embed_dim, rng);
}

Tensor ClipEncoder::forward(std::span<const ClipInput> clips) const {
  if (clips.empty()) throw ContractError("encode_clip: empty batch");
  std::size_t rows = 0;
  std::vector<std::size_t> valid;
  for (const auto& c : clips) {
    if (c.valid_len == 0) throw ContractError("encode_clip: valid_len is 0");
    if (c.valid_len > c.rows || c.rows > config_.max_seq_len) {
      throw ContractError("encode_clip: valid_len " + std::to_string(c.valid_len) + " / rows " +
                          std::to_string(c.rows) + " exceed limits (max_seq_len " +
                          std::to_string(config_.max_seq_len) + ")");
    }
    if (c.feature_dim != config_.frame_feature_dim || c.frames.size() != c.rows * c.feature_dim) {
      throw DimensionError("encode_clip: frame feature dim mismatch");
    }
    rows = std::max(rows, c.rows);
    valid.push_back(c.valid_len);
  }
  const std::size_t f = config_.frame_feature_dim;
  std::vector<Scalar> buf(clips.size() * rows * f, Scalar{0});
  for (std::size_t i = 0; i < clips.size(); ++i) {
    std::copy(clips[i].frames.begin(), clips[i].frames.end(), buf.begin() + i * rows * f);
  }
  Tensor frames = Tensor::from({clips.size(), rows, f}, std::move(buf));
  return encode_tail(config_, cls_, frame_proj_(frames), valid, blocks_, final_ln_, out_proj_);
}

EmbeddingVec ClipEncoder::encode(const ClipInput& clip) const {
  return EmbeddingVec::from_row(forward(std::span(&clip, 1)), 0);
}

ParamList ClipEncoder::parameters() const {
  ParamList p;
  frame_proj_.collect(p, "frame_proj");
  p.add("cls", cls_);
  collect_stack(blocks_, p);
  final_ln_.collect(p, "final_ln");
  out_proj_.collect(p, "out_proj");
  return p;
}

std::size_t ClipEncoder::param_count(const EncoderConfig& c) {
  const std::size_t d = c.model_dim;
  return c.frame_feature_dim * d + d + d + stack_params(c) + 2 * d + d * c.embed_dim + c.embed_dim;
}

TextEncoder::TextEncoder(const EncoderConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  token_table_ = Tensor::from({config_.vocab_size, config_.model_dim},
                              normal_values(config_.vocab_size * config_.model_dim, 1.0, rng), true);
  cls_ = Tensor::from({config_.model_dim}, normal_values(config_.model_dim, 0.02, rng), true);
  build_stack(config_, rng, blocks_);
  final_ln_ = LayerNorm::init(config_.model_dim);
  out_proj_ = Linear::init(config_.model_dim, config_.embed_dim, rng);
}

Tensor TextEncoder::forward(std::span<const TextInput> texts) const {
  if (texts.empty()) throw ContractError("encode_text: empty batch");
  std::size_t len = 0;
  std::vector<std::size_t> valid;
  for (const auto& t : texts) {
    if (t.valid_len == 0) throw ContractError("encode_text: valid_len is 0");
    if (t.valid_len > t.tokens.size() || t.tokens.size() > config_.max_seq_len) {
      throw ContractError("encode_text: " + std::to_string(t.tokens.size()) +
                          " tokens exceed max_seq_len " + std::to_string(config_.max_seq_len));
    }
    for (auto id : t.tokens) {
      if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
        throw ContractError("encode_text: token id " + std::to_string(id) + " outside vocabulary");
      }
    }
    len = std::max(len, t.tokens.size());
    valid.push_back(t.valid_len);
  }
  std::vector<std::int64_t> ids(texts.size() * len, 0);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::copy(texts[i].tokens.begin(), texts[i].tokens.end(), ids.begin() + i * len);
  }
  Tensor tokens = ad::embedding(token_table_, ids, {texts.size(), len});
  return encode_tail(config_, cls_, tokens, valid, blocks_, final_ln_, out_proj_);
}

EmbeddingVec TextEncoder::encode(const TextInput& text) const {
  return EmbeddingVec::from_row(forward(std::span(&text, 1)), 0);
}

ParamList TextEncoder::parameters() const {
  ParamList p;
  p.add("token_table", token_table_);
  p.add("cls", cls_);
  collect_stack(blocks_, p);
  final_ln_.collect(p, "final_ln");
  out_proj_.collect(p, "out_proj");
  return p;
}

std::size_t TextEncoder::param_count(const EncoderConfig& c) {
  const std::size_t d = c.model_dim;
  return c.vocab_size * d + d + stack_params(c) + 2 * d + d * c.embed_dim + c.embed_dim;
}

}  // namespace hiervl::model
