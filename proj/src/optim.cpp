#include "hiervl/optim.hpp"

#include <cmath>

#include "hiervl/errors.hpp"

namespace hiervl::ad {

void ParamList::append(const ParamList& other, const std::string& prefix) {
  for (std::size_t i = 0; i < other.size(); ++i) add(prefix + other.names[i], other.tensors[i]);
}

std::size_t ParamList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

void ParamList::zero_grad() {
  for (auto& t : tensors) t.zero_grad();
}

Scalar ParamList::grad_norm() const {
  Scalar ss = 0;
  for (const auto& t : tensors) {
    if (!t.has_grad()) continue;
    for (Scalar g : t.grad()) ss += g * g;
  }
  return std::sqrt(ss);
}

AdamWState make_adamw_state(const ParamList& params, const AdamWConfig& config) {
  if (!(config.lr > 0) || !(config.eps > 0) || config.weight_decay < 0 || config.beta1 < 0 ||
      config.beta1 >= 1 || config.beta2 < 0 || config.beta2 >= 1) {
    throw ConfigError("adamw: invalid hyperparameters");
  }
  AdamWState s;
  s.config = config;
  for (const auto& t : params.tensors) {
    s.first_moment.emplace_back(t.numel(), Scalar{0});
    s.second_moment.emplace_back(t.numel(), Scalar{0});
  }
  return s;
}

void adamw_step(std::span<Tensor> params, std::span<const std::vector<Scalar>> grads,
                AdamWState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ContractError("adamw: parameter/gradient/state counts differ");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p].numel() || state.first_moment[p].size() != params[p].numel()) {
      throw ContractError("adamw: gradient shape does not match parameter " + std::to_string(p));
    }
    for (Scalar g : grads[p]) {
      if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient for parameter " +
                                                std::to_string(p));
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const auto decay = static_cast<Scalar>(1.0 - c.lr * c.weight_decay);
  const auto b1 = static_cast<Scalar>(c.beta1);
  const auto b2 = static_cast<Scalar>(c.beta2);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params[p].mutable_data();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= decay;
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= static_cast<Scalar>(c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

void adamw_step(ParamList& params, AdamWState& state) {
  std::vector<std::vector<Scalar>> grads;
  grads.reserve(params.size());
  for (const auto& t : params.tensors) grads.push_back(t.grad());
  adamw_step(params.tensors, grads, state);
}

}  // namespace hiervl::ad
