#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hiervl/tensor.hpp"

namespace hiervl::ad {

/// An ordered, named collection of leaf tensors. Order is part of the
/// checkpoint format, so modules must register parameters deterministically.
struct ParamList {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  void add(std::string name, Tensor t) {
    names.push_back(std::move(name));
    tensors.push_back(std::move(t));
  }
  void append(const ParamList& other, const std::string& prefix = "");
  std::size_t size() const { return tensors.size(); }
  std::size_t scalar_count() const;
  void zero_grad();
  Scalar grad_norm() const;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Moments are shape-matched to the parameters they were created for; `step`
/// counts completed updates.
struct AdamWState {
  AdamWConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<Scalar>> first_moment;
  std::vector<std::vector<Scalar>> second_moment;
};

AdamWState make_adamw_state(const ParamList& params, const AdamWConfig& config);

// Decoupled weight decay followed by the bias-corrected Adam update.
void adamw_step(std::span<Tensor> params, std::span<const std::vector<Scalar>> grads,
                AdamWState& state);
// Same, reading each parameter's accumulated gradient.
void adamw_step(ParamList& params, AdamWState& state);

}  // namespace hiervl::ad
