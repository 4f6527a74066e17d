#pragma once

// Pre-LN transformer pieces shared by the short-term encoders and the
// self-attention aggregator.

#include <random>
#include <string>

#include "hiervl/optim.hpp"
#include "hiervl/tensor.hpp"

namespace hiervl::model {

using ad::Mask;
using ad::ParamList;
using ad::Scalar;
using ad::Shape;
using ad::Tensor;

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], undefined when the layer has no bias

  static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm init(std::size_t dim);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct TransformerBlock {
  std::size_t model_dim = 0;
  std::size_t num_heads = 0;
  LayerNorm ln_attn;
  Linear qkv;
  Linear attn_out;
  LayerNorm ln_mlp;
  Linear mlp_in;
  Linear mlp_out;

  static TransformerBlock init(std::size_t model_dim, std::size_t num_heads, std::size_t mlp_dim,
                               std::mt19937_64& rng);
  // x: [N, T, D]; key_mask: N*T bytes, nonzero where the position is real.
  // An empty mask attends everywhere.
  Tensor operator()(const Tensor& x, const Mask& key_mask) const;
  void collect(ParamList& out, const std::string& prefix) const;

  static std::size_t param_count(std::size_t model_dim, std::size_t mlp_dim);
};

/// Fixed sinusoidal table, [length, dim].
Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

/// Prepends a learned [D] token to every item of x: [N, T, D] -> [N, T+1, D].
Tensor prepend_token(const Tensor& token, const Tensor& x);

std::vector<Scalar> normal_values(std::size_t n, double sd, std::mt19937_64& rng);

}  // namespace hiervl::model
