#include "hiervl/aggregation.hpp"

#include "hiervl/corpus.hpp"
#include "hiervl/errors.hpp"

namespace hiervl::model {

std::string to_string(AggregatorKind kind) {
  return kind == AggregatorKind::Average ? "average" : "self-attention";
}

AggregatorKind aggregator_kind_from_string(const std::string& s) {
  if (s == "average" || s == "avg") return AggregatorKind::Average;
  if (s == "self-attention" || s == "sa") return AggregatorKind::SelfAttention;
  throw ConfigError("unknown aggregator kind '" + s + "'");
}

void AggregatorConfig::validate(std::size_t embed_dim) const {
  if (clips_per_video == 0) throw ConfigError("aggregator: K must be >= 1");
  if (kind == AggregatorKind::SelfAttention) {
    if (sa_model_dim != embed_dim) {
      throw ConfigError("aggregator: sa_model_dim " + std::to_string(sa_model_dim) +
                        " must equal embed_dim " + std::to_string(embed_dim));
    }
    if (sa_layers == 0 || sa_layers > 6) throw ConfigError("aggregator: sa_layers must be in [1, 6]");
    if (sa_heads == 0 || sa_model_dim % sa_heads != 0 || sa_mlp_dim == 0) {
      throw ConfigError("aggregator: invalid head/mlp sizes");
    }
  }
}

std::vector<std::size_t> sample_uniform(std::size_t num_clips, std::size_t k) {
  if (num_clips == 0) throw ContractError("sample_uniform: video has no clips");
  if (k == 0) throw ContractError("sample_uniform: K must be >= 1");
  std::vector<std::size_t> idx(k);
  for (std::size_t j = 0; j < k; ++j) idx[j] = j * num_clips / k;
  return idx;
}

Tensor stack_sequence(const FeatureSequence& seq) {
  if (seq.features.empty()) throw ContractError("aggregate: empty feature sequence");
  const std::size_t e = seq.features[0].size();
  std::vector<Scalar> buf;
  buf.reserve(seq.features.size() * e);
  for (const auto& f : seq.features) {
    if (f.size() != e) throw DimensionError("aggregate: ragged feature sequence");
    buf.insert(buf.end(), f.values().begin(), f.values().end());
  }
  return Tensor::from({1, seq.features.size(), e}, std::move(buf));
}

EmbeddingVec aggregate_avg(const FeatureSequence& seq) {
  Tensor m = ad::mean(stack_sequence(seq), 1, /*order_invariant=*/true);
  return EmbeddingVec::from_row(ad::l2_normalize(m, 1e-8), 0);
}

Aggregator::Aggregator(const AggregatorConfig& config, std::size_t embed_dim, std::mt19937_64& rng)
    : config_(config), embed_dim_(embed_dim) {
  config_.validate(embed_dim);
  if (config_.kind == AggregatorKind::Average) return;
  const std::size_t d = config_.sa_model_dim;
  cls_ = Tensor::from({d}, normal_values(d, 0.02, rng), true);
  for (std::size_t i = 0; i < config_.sa_layers; ++i) {
    blocks_.push_back(TransformerBlock::init(d, config_.sa_heads, config_.sa_mlp_dim, rng));
  }
  final_ln_ = LayerNorm::init(d);
  out_proj_ = Linear::init(d, embed_dim, rng);
}

Tensor Aggregator::forward(const Tensor& features) const {
  if (features.rank() != 3 || features.dim(2) != embed_dim_ || features.dim(1) == 0) {
    throw DimensionError("aggregate: expected [B, K, " + std::to_string(embed_dim_) + "], got " +
                         ad::to_string(features.shape()));
  }
  if (config_.kind == AggregatorKind::Average) {
    return ad::l2_normalize(ad::mean(features, 1, /*order_invariant=*/true), 1e-8);
  }
  const std::size_t b = features.dim(0);
  const std::size_t k = features.dim(1);
  Tensor x = features;
  if (use_positions_) x = ad::add(x, sinusoidal_positions(k, embed_dim_));
  x = prepend_token(cls_, x);
  for (const auto& blk : blocks_) x = blk(x, {});
  Tensor pooled = ad::reshape(ad::slice(x, 1, 0, 1), {b, embed_dim_});
  return ad::l2_normalize(out_proj_(final_ln_(pooled)));
}

EmbeddingVec Aggregator::aggregate(const FeatureSequence& seq) const {
  return EmbeddingVec::from_row(forward(stack_sequence(seq)), 0);
}

ParamList Aggregator::parameters() const {
  ParamList p;
  if (config_.kind == AggregatorKind::Average) return p;
  p.add("cls", cls_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(p, "block" + std::to_string(i));
  final_ln_.collect(p, "final_ln");
  out_proj_.collect(p, "out_proj");
  return p;
}

std::size_t Aggregator::param_count(const AggregatorConfig& c, std::size_t embed_dim) {
  if (c.kind == AggregatorKind::Average) return 0;
  const std::size_t d = c.sa_model_dim;
  return d + c.sa_layers * TransformerBlock::param_count(d, c.sa_mlp_dim) + 2 * d + d * embed_dim +
         embed_dim;
}

namespace {

template <typename Encoder, typename Pick>
EmbeddingVec long_term(const corpus::VideoRecord& video, const Encoder& enc, const Aggregator& agg,
                       Pick pick) {
  auto idx = sample_uniform(video.clips.size(), agg.config().clips_per_video);
  std::vector<std::decay_t<decltype(pick(video.clips[0]))>> inputs;
  for (std::size_t i : idx) inputs.push_back(pick(video.clips[i]));
  Tensor feats = enc.forward(inputs);
  const std::size_t e = feats.dim(1);
  return EmbeddingVec::from_row(agg.forward(ad::reshape(feats, {1, idx.size(), e})), 0);
}

}  // namespace

EmbeddingVec long_term_visual(const corpus::VideoRecord& video, const ClipEncoder& clip_encoder,
                              const Aggregator& agg) {
  return long_term(video, clip_encoder, agg, [](const corpus::ClipRecord& c) { return c.frames; });
}

EmbeddingVec long_term_textual(const corpus::VideoRecord& video, const TextEncoder& text_encoder,
                               const Aggregator& agg) {
  return long_term(video, text_encoder, agg, [](const corpus::ClipRecord& c) { return c.narration; });
}

}  // namespace hiervl::model
