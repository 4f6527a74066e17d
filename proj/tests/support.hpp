#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "hiervl/encoders.hpp"
#include "hiervl/tensor.hpp"

namespace testing_support {

using hiervl::ad::Scalar;
using hiervl::ad::Tensor;

inline Tensor randn(std::mt19937_64& rng, hiervl::ad::Shape shape, bool rg = false, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<Scalar> v(hiervl::ad::numel(shape));
  for (auto& x : v) x = Scalar(d(rng));
  return Tensor::from(std::move(shape), std::move(v), rg);
}

inline std::vector<Scalar> unit_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<Scalar> v(dim);
  double n = 0;
  for (auto& x : v) {
    x = Scalar(d(rng));
    n += double(x) * double(x);
  }
  for (auto& x : v) x = Scalar(double(x) / std::sqrt(n));
  return v;
}

inline Tensor unit_rows(std::mt19937_64& rng, std::size_t rows, std::size_t dim) {
  std::vector<Scalar> flat;
  for (std::size_t r = 0; r < rows; ++r) {
    auto u = unit_vector(rng, dim);
    flat.insert(flat.end(), u.begin(), u.end());
  }
  return Tensor::from({rows, dim}, std::move(flat));
}

// Central difference of `f` with respect to element `i` of `t`.
template <typename F>
double central_difference(Tensor t, std::size_t i, F&& f, double h = 1e-5) {
  auto w = t.mutable_data();
  const Scalar orig = w[i];
  w[i] = orig + Scalar(h);
  const double up = f();
  w[i] = orig - Scalar(h);
  const double down = f();
  w[i] = orig;
  return (up - down) / (2 * h);
}

inline double l2_distance(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (double(a[i]) - double(b[i])) * (double(a[i]) - double(b[i]));
  return std::sqrt(s);
}

inline hiervl::model::EncoderConfig small_encoder() {
  hiervl::model::EncoderConfig c;
  c.model_dim = 16;
  c.num_layers = 1;
  c.num_heads = 2;
  c.mlp_dim = 32;
  c.max_seq_len = 16;
  c.vocab_size = 256;
  c.frame_feature_dim = 32;
  c.embed_dim = 16;
  return c;
}

}  // namespace testing_support
