#include "hiervl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hiervl/errors.hpp"

namespace hiervl::ad {

double gradient_relative_error(const LossFn& loss, const std::vector<Tensor>& inputs,
                               double step) {
  for (auto t : inputs) t.zero_grad();
  Tensor out = loss(inputs);
  backward(out);
  std::vector<double> analytic;
  for (const auto& t : inputs)
    for (Scalar g : t.grad()) analytic.push_back(g);

  std::vector<double> numeric;
  for (auto t : inputs) {
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const Scalar orig = w[i];
      w[i] = orig + static_cast<Scalar>(step);
      const double up = loss(inputs).item();
      w[i] = orig - static_cast<Scalar>(step);
      const double down = loss(inputs).item();
      w[i] = orig;
      numeric.push_back((up - down) / (2 * step));
    }
  }
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

GradCheckResult run_gradcheck(const GradCheckCase& c, int seeds, double tolerance) {
  GradCheckResult r;
  r.name = c.name;
  for (int s = 0; s < seeds; ++s) {
    auto [inputs, fn] = c.make(static_cast<std::uint64_t>(s) * 7919 + 17);
    r.max_rel_error = std::max(r.max_rel_error, gradient_relative_error(fn, inputs));
    ++r.seeds;
  }
  r.passed = r.max_rel_error < tolerance;
  return r;
}

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool rg = true, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<Scalar> v(numel(shape));
  for (auto& x : v) x = static_cast<Scalar>(dist(rng));
  return Tensor::from(std::move(shape), std::move(v), rg);
}

Tensor positive_tensor(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> dist(0.5, 2.0);
  std::vector<Scalar> v(numel(shape));
  for (auto& x : v) x = static_cast<Scalar>(dist(rng));
  return Tensor::from(std::move(shape), std::move(v), true);
}

Mask random_mask(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::bernoulli_distribution keep(0.6);
  Mask m(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m[r * cols + c] = keep(rng) ? 1 : 0;
    m[r * cols + r % cols] = 1;
  }
  return m;
}

// Wraps an op into a scalar loss <op(inputs), R> with R drawn once per seed.
// Ops that need randomness (masks) get the same generator state on every call.
GradCheckCase projected(std::string name,
                        std::function<std::vector<Tensor>(std::mt19937_64&)> inputs,
                        std::function<Tensor(const std::vector<Tensor>&, std::mt19937_64&)> op) {
  return {std::move(name), [inputs, op](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            auto in = inputs(rng);
            const std::uint64_t op_seed = rng();
            std::mt19937_64 probe_rng(op_seed);
            Tensor proj = random_tensor(rng, op(in, probe_rng).shape(), false);
            LossFn fn = [op, proj, op_seed](const std::vector<Tensor>& xs) {
              std::mt19937_64 r(op_seed);
              return sum_all(mul(op(xs, r), proj));
            };
            return std::pair{in, fn};
          }};
}

}  // namespace

std::vector<GradCheckCase> op_gradcheck_cases() {
  using Rng = std::mt19937_64;
  using In = std::vector<Tensor>;
  std::vector<GradCheckCase> cases;
  auto two = [](Shape a, Shape b) {
    return [a, b](Rng& r) { return In{random_tensor(r, a), random_tensor(r, b)}; };
  };
  auto one = [](Shape a) { return [a](Rng& r) { return In{random_tensor(r, a)}; }; };

  cases.push_back(projected("add", two({3, 4}, {4}),
                            [](const In& x, Rng&) { return add(x[0], x[1]); }));
  cases.push_back(projected("sub", two({2, 3, 4}, {3, 1}),
                            [](const In& x, Rng&) { return sub(x[0], x[1]); }));
  cases.push_back(projected("mul", two({3, 4}, {3, 4}),
                            [](const In& x, Rng&) { return mul(x[0], x[1]); }));
  cases.push_back(projected("scale", one({5}), [](const In& x, Rng&) { return scale(x[0], 2.5); }));
  cases.push_back(projected("matmul", two({3, 4}, {4, 2}),
                            [](const In& x, Rng&) { return matmul(x[0], x[1]); }));
  cases.push_back(projected("matmul_batched", two({2, 3, 4}, {2, 4, 5}),
                            [](const In& x, Rng&) { return matmul(x[0], x[1]); }));
  cases.push_back(projected("matmul_shared_rhs", two({2, 3, 4}, {4, 5}),
                            [](const In& x, Rng&) { return matmul(x[0], x[1]); }));
  cases.push_back(projected("transpose", one({2, 3, 4}),
                            [](const In& x, Rng&) { return transpose(x[0]); }));
  cases.push_back(projected("permute", one({2, 3, 4}),
                            [](const In& x, Rng&) { return permute(x[0], {2, 0, 1}); }));
  cases.push_back(projected("reshape", one({2, 6}),
                            [](const In& x, Rng&) { return reshape(x[0], {3, 4}); }));
  cases.push_back(projected("concat", two({2, 3}, {2, 2}),
                            [](const In& x, Rng&) { return concat({x[0], x[1]}, 1); }));
  cases.push_back(projected("slice", one({4, 5}),
                            [](const In& x, Rng&) { return slice(x[0], 1, 1, 4); }));
  cases.push_back(projected("softmax", one({3, 5}), [](const In& x, Rng&) { return softmax(x[0]); }));
  cases.push_back(projected("masked_softmax", one({4, 5}), [](const In& x, Rng& r) {
    return masked_softmax(x[0], random_mask(r, 4, 5));
  }));
  cases.push_back(projected(
      "layer_norm",
      [](Rng& r) { return In{random_tensor(r, {3, 6}), random_tensor(r, {6}), random_tensor(r, {6})}; },
      [](const In& x, Rng&) { return layer_norm(x[0], x[1], x[2]); }));
  cases.push_back(projected("gelu", one({10}), [](const In& x, Rng&) { return gelu(x[0]); }));
  cases.push_back(projected("exp", one({6}), [](const In& x, Rng&) { return exp(x[0]); }));
  cases.push_back(projected(
      "log", [](Rng& r) { return In{positive_tensor(r, {6})}; },
      [](const In& x, Rng&) { return log(x[0]); }));
  cases.push_back(projected("embedding", one({7, 3}), [](const In& x, Rng&) {
    return embedding(x[0], {1, 4, 4, 0, 6, 1}, {2, 3});
  }));
  cases.push_back(projected("mean", one({2, 5, 3}), [](const In& x, Rng&) { return mean(x[0], 1); }));
  cases.push_back(projected("mean_order_invariant", one({5, 4}),
                            [](const In& x, Rng&) { return mean(x[0], 0, true); }));
  cases.push_back(projected("sum_all", one({3, 3}), [](const In& x, Rng&) { return sum_all(x[0]); }));
  cases.push_back(projected("l2_normalize", one({3, 4}),
                            [](const In& x, Rng&) { return l2_normalize(x[0]); }));
  cases.push_back(projected("logsumexp", one({3, 5}), [](const In& x, Rng&) { return logsumexp(x[0]); }));
  cases.push_back(projected("masked_logsumexp", one({4, 5}), [](const In& x, Rng& r) {
    return masked_logsumexp(x[0], random_mask(r, 4, 5));
  }));
  return cases;
}

}  // namespace hiervl::ad
