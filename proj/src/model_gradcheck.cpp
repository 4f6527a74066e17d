#include "hiervl/model_gradcheck.hpp"

#include <random>

#include "hiervl/aggregation.hpp"
#include "hiervl/encoders.hpp"
#include "hiervl/objectives.hpp"

namespace hiervl {

using ad::GradCheckCase;
using ad::LossFn;
using ad::Tensor;

namespace {

model::EncoderConfig tiny_encoder() {
  model::EncoderConfig c;
  c.model_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.mlp_dim = 12;
  c.max_seq_len = 6;
  c.vocab_size = 12;
  c.frame_feature_dim = 5;
  c.embed_dim = 6;
  return c;
}

model::AggregatorConfig tiny_aggregator(model::AggregatorKind kind) {
  model::AggregatorConfig c;
  c.kind = kind;
  c.clips_per_video = 3;
  c.sa_layers = 1;
  c.sa_heads = 2;
  c.sa_model_dim = 6;
  c.sa_mlp_dim = 8;
  return c;
}

Tensor random_tensor(std::mt19937_64& rng, ad::Shape shape, bool rg) {
  auto n = ad::numel(shape);
  return Tensor::from(std::move(shape), model::normal_values(n, 1.0, rng), rg);
}

// Clips of unequal length so padding masks are exercised.
std::vector<model::ClipInput> random_clips(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::vector<model::ClipInput> out;
  for (std::size_t i = 0; i < n; ++i) {
    model::ClipInput c;
    c.rows = 2 + i % 3;
    c.valid_len = c.rows;
    c.feature_dim = dim;
    c.frames = model::normal_values(c.rows * dim, 1.0, rng);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<model::TextInput> random_texts(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<std::int64_t> tok(1, std::int64_t(vocab) - 1);
  std::vector<model::TextInput> out;
  for (std::size_t i = 0; i < n; ++i) {
    model::TextInput t;
    t.tokens.resize(4);
    for (auto& x : t.tokens) x = tok(rng);
    t.valid_len = 2 + i % 3;
    for (std::size_t j = t.valid_len; j < t.tokens.size(); ++j) t.tokens[j] = 0;
    out.push_back(std::move(t));
  }
  return out;
}

ad::Mask group_mask(std::mt19937_64& rng, std::size_t b) {
  std::uniform_int_distribution<int> label(0, 2);
  std::vector<int> y(b);
  for (auto& v : y) v = label(rng);
  ad::Mask m(b * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) m[i * b + j] = (i == j || y[i] == y[j]) ? 1 : 0;
  return m;
}

std::vector<Tensor> unit_rows(std::mt19937_64& rng, std::size_t count, std::size_t b, std::size_t e) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_tensor(rng, {b, e}, true));
  return out;
}

Tensor project(const Tensor& out, const Tensor& r) { return ad::sum_all(ad::mul(out, r)); }

}  // namespace

std::vector<GradCheckCase> model_gradcheck_cases() {
  std::vector<GradCheckCase> cases;
  const objectives::Temperature tau(0.05);

  cases.push_back({"clip_encoder", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto enc = std::make_shared<model::ClipEncoder>(tiny_encoder(), rng);
                     auto clips = random_clips(rng, 3, tiny_encoder().frame_feature_dim);
                     Tensor r = random_tensor(rng, {3, tiny_encoder().embed_dim}, false);
                     LossFn fn = [enc, clips, r](const std::vector<Tensor>&) {
                       return project(enc->forward(clips), r);
                     };
                     return std::pair{enc->parameters().tensors, fn};
                   }});
  cases.push_back({"text_encoder", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto enc = std::make_shared<model::TextEncoder>(tiny_encoder(), rng);
                     auto texts = random_texts(rng, 3, tiny_encoder().vocab_size);
                     Tensor r = random_tensor(rng, {3, tiny_encoder().embed_dim}, false);
                     LossFn fn = [enc, texts, r](const std::vector<Tensor>&) {
                       return project(enc->forward(texts), r);
                     };
                     return std::pair{enc->parameters().tensors, fn};
                   }});
  for (auto kind : {model::AggregatorKind::Average, model::AggregatorKind::SelfAttention}) {
    cases.push_back({"aggregator_" + model::to_string(kind), [kind](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       auto agg = std::make_shared<model::Aggregator>(tiny_aggregator(kind), 6, rng);
                       Tensor feats = random_tensor(rng, {2, 3, 6}, true);
                       Tensor r = random_tensor(rng, {2, 6}, false);
                       auto inputs = agg->parameters().tensors;
                       inputs.push_back(feats);
                       LossFn fn = [agg, feats, r](const std::vector<Tensor>&) {
                         return project(agg->forward(feats), r);
                       };
                       return std::pair{inputs, fn};
                     }});
  }
  cases.push_back({"child_loss", [tau](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto in = unit_rows(rng, 2, 5, 6);
                     ad::Mask mask = group_mask(rng, 5);
                     LossFn fn = [tau, mask](const std::vector<Tensor>& x) {
                       objectives::ChildBatch b{ad::l2_normalize(x[0]), ad::l2_normalize(x[1]), mask};
                       return objectives::child_loss(b, tau);
                     };
                     return std::pair{in, fn};
                   }});
  cases.push_back({"parent_loss", [tau](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto in = unit_rows(rng, 3, 4, 6);
                     LossFn fn = [tau](const std::vector<Tensor>& x) {
                       objectives::ParentBatch b{ad::l2_normalize(x[0]), ad::l2_normalize(x[1]),
                                                 ad::l2_normalize(x[2]), objectives::diagonal_mask(4)};
                       return objectives::parent_loss(b, tau, true);
                     };
                     return std::pair{in, fn};
                   }});
  cases.push_back({"parent_loss_video_summary_only", [tau](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto in = unit_rows(rng, 2, 4, 6);
                     LossFn fn = [tau](const std::vector<Tensor>& x) {
                       objectives::ParentBatch b{ad::l2_normalize(x[0]), Tensor(), ad::l2_normalize(x[1]),
                                                 objectives::diagonal_mask(4)};
                       return objectives::parent_loss(b, tau, false);
                     };
                     return std::pair{in, fn};
                   }});
  cases.push_back({"parent_loss_no_summary", [tau](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto in = unit_rows(rng, 2, 4, 6);
                     LossFn fn = [tau](const std::vector<Tensor>& x) {
                       objectives::ParentBatch b{ad::l2_normalize(x[0]), ad::l2_normalize(x[1]), Tensor(),
                                                 objectives::diagonal_mask(4)};
                       return objectives::parent_loss_no_summary(b, tau);
                     };
                     return std::pair{in, fn};
                   }});
  cases.push_back({"hierarchical_end_to_end", [tau](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto clip = std::make_shared<model::ClipEncoder>(tiny_encoder(), rng);
                     auto text = std::make_shared<model::TextEncoder>(tiny_encoder(), rng);
                     auto agg = std::make_shared<model::Aggregator>(
                         tiny_aggregator(model::AggregatorKind::SelfAttention), 6, rng);
                     auto clips = random_clips(rng, 6, tiny_encoder().frame_feature_dim);
                     auto narr = random_texts(rng, 6, tiny_encoder().vocab_size);
                     auto summ = random_texts(rng, 2, tiny_encoder().vocab_size);
                     auto inputs = clip->parameters().tensors;
                     for (auto& t : text->parameters().tensors) inputs.push_back(t);
                     for (auto& t : agg->parameters().tensors) inputs.push_back(t);
                     LossFn fn = [=](const std::vector<Tensor>&) {
                       objectives::ParentBatch b;
                       b.videos = agg->forward(ad::reshape(clip->forward(clips), {2, 3, 6}));
                       b.narrations = agg->forward(ad::reshape(text->forward(narr), {2, 3, 6}));
                       b.summaries = text->forward(summ);
                       b.positive_mask = objectives::diagonal_mask(2);
                       return objectives::parent_loss(b, objectives::Temperature(0.5), true);
                     };
                     return std::pair{inputs, fn};
                   }});
  return cases;
}

std::vector<GradCheckCase> all_gradcheck_cases() {
  auto cases = ad::op_gradcheck_cases();
  for (auto& c : model_gradcheck_cases()) cases.push_back(std::move(c));
  return cases;
}

}  // namespace hiervl
