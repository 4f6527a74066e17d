#include "hiervl/transformer.hpp"

#include <cmath>

#include "hiervl/errors.hpp"

namespace hiervl::model {

std::vector<Scalar> normal_values(std::size_t n, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<Scalar> v(n);
  for (auto& x : v) x = static_cast<Scalar>(dist(rng));
  return v;
}

Linear Linear::init(std::size_t in, std::size_t out, std::mt19937_64& rng, bool with_bias) {
  Linear l;
  l.weight = Tensor::from({in, out}, normal_values(in * out, 1.0 / std::sqrt(double(in)), rng), true);
  if (with_bias) l.bias = Tensor::zeros({out}, true);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = ad::matmul(x, weight);
  return bias.defined() ? ad::add(y, bias) : y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.add(prefix + ".weight", weight);
  if (bias.defined()) out.add(prefix + ".bias", bias);
}

LayerNorm LayerNorm::init(std::size_t dim) {
  return {Tensor::full({dim}, Scalar{1}, true), Tensor::zeros({dim}, true)};
}

Tensor LayerNorm::operator()(const Tensor& x) const { return ad::layer_norm(x, gamma, beta); }

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
}

TransformerBlock TransformerBlock::init(std::size_t model_dim, std::size_t num_heads,
                                        std::size_t mlp_dim, std::mt19937_64& rng) {
  if (num_heads == 0 || model_dim % num_heads != 0) {
    throw ConfigError("transformer: model_dim " + std::to_string(model_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  TransformerBlock b;
  b.model_dim = model_dim;
  b.num_heads = num_heads;
  b.ln_attn = LayerNorm::init(model_dim);
  b.qkv = Linear::init(model_dim, 3 * model_dim, rng);
  b.attn_out = Linear::init(model_dim, model_dim, rng);
  b.ln_mlp = LayerNorm::init(model_dim);
  b.mlp_in = Linear::init(model_dim, mlp_dim, rng);
  b.mlp_out = Linear::init(mlp_dim, model_dim, rng);
  return b;
}

std::size_t TransformerBlock::param_count(std::size_t d, std::size_t m) {
  return 4 * d * d + 2 * d * m + 9 * d + m;
}

Tensor TransformerBlock::operator()(const Tensor& x, const Mask& key_mask) const {
  const std::size_t n = x.dim(0);
  const std::size_t t = x.dim(1);
  const std::size_t d = model_dim;
  const std::size_t h = num_heads;
  const std::size_t dh = d / h;

  Tensor qkv_all = qkv(ln_attn(x));  // [N, T, 3D]
  auto heads = [&](std::size_t part) {
    Tensor p = ad::slice(qkv_all, 2, part * d, (part + 1) * d);
    p = ad::permute(ad::reshape(p, {n, t, h, dh}), {0, 2, 1, 3});
    return ad::reshape(p, {n * h, t, dh});
  };
  Tensor q = heads(0);
  Tensor k = heads(1);
  Tensor v = heads(2);

  Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k)), Scalar{1} / std::sqrt(Scalar(dh)));
  Mask mask;
  if (!key_mask.empty()) {
    mask.resize(n * h * t * t);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t hh = 0; hh < h; ++hh)
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < t; ++j)
            mask[((b * h + hh) * t + i) * t + j] = key_mask[b * t + j];
  }
  Tensor attn = ad::masked_softmax(scores, mask);
  Tensor ctx = ad::matmul(attn, v);  // [N*H, T, dh]
  ctx = ad::reshape(ad::permute(ad::reshape(ctx, {n, h, t, dh}), {0, 2, 1, 3}), {n, t, d});
  Tensor y = ad::add(x, attn_out(ctx));
  return ad::add(y, mlp_out(ad::gelu(mlp_in(ln_mlp(y)))));
}

void TransformerBlock::collect(ParamList& out, const std::string& prefix) const {
  ln_attn.collect(out, prefix + ".ln_attn");
  qkv.collect(out, prefix + ".qkv");
  attn_out.collect(out, prefix + ".attn_out");
  ln_mlp.collect(out, prefix + ".ln_mlp");
  mlp_in.collect(out, prefix + ".mlp_in");
  mlp_out.collect(out, prefix + ".mlp_out");
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  std::vector<Scalar> v(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -double(2 * (i / 2)) / double(dim));
      const double a = double(pos) * rate;
      v[pos * dim + i] = static_cast<Scalar>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  }
  return Tensor::from({length, dim}, std::move(v));
}

Tensor prepend_token(const Tensor& token, const Tensor& x) {
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(2);
  Tensor one = ad::reshape(token, {1, 1, d});
  std::vector<Tensor> copies(n, one);
  return ad::concat({ad::concat(copies, 0), x}, 1);
}

}  // namespace hiervl::model
