#include <cmath>
#include <limits>

#include "doctest.h"
#include "hiervl/errors.hpp"
#include "hiervl/gradcheck.hpp"
#include "hiervl/objectives.hpp"
#include "hiervl/optim.hpp"
#include "support.hpp"

using namespace hiervl;
using namespace hiervl::ad;
using namespace testing_support;

TEST_CASE("softmax of equal logits is uniform") {
  auto s = softmax(Tensor::from({3}, {0, 0, 0}));
  for (Scalar v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("l2_normalize of a 3-4-5 triangle") {
  auto n = l2_normalize(Tensor::from({2}, {3, 4}));
  CHECK(n.data()[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n.data()[1] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("identity matmul returns its argument") {
  std::mt19937_64 rng(3);
  auto x = randn(rng, {3, 3});
  auto i3 = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto y = matmul(i3, x);
  for (std::size_t k = 0; k < 9; ++k) CHECK(y.data()[k] == x.data()[k]);
}

TEST_CASE("matmul agrees with a naive triple loop") {
  std::mt19937_64 rng(5);
  auto a = randn(rng, {2, 3, 4});
  auto b = randn(rng, {2, 4, 5});
  auto c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 5});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at({n, i, k}) * b.at({n, k, j});
        CHECK(c.at({n, i, j}) == doctest::Approx(s).epsilon(1e-13));
      }
}

TEST_CASE("derivative of x*x at 3 is 6") {
  auto x = Tensor::from({1}, {3}, true);
  backward(sum_all(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("fan-out accumulates additively") {
  auto x = Tensor::from({2}, {1.5, -2}, true);
  backward(sum_all(add(x, x)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);

  auto y = Tensor::from({2}, {1.5, -2}, true);
  auto shared = mul(y, y);
  backward(sum_all(add(shared, shared)));
  CHECK(y.grad()[0] == doctest::Approx(4 * 1.5));
  CHECK(y.grad()[1] == doctest::Approx(4 * -2.0));
}

TEST_CASE("unreachable leaves receive zero gradient of their shape") {
  auto x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  auto unused = Tensor::from({3}, {1, 1, 1}, true);
  backward(sum_all(x));
  auto g = unused.grad();
  REQUIRE(g.size() == 3);
  for (Scalar v : g) CHECK(v == 0);
}

TEST_CASE("backward needs a scalar") {
  auto x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
}

TEST_CASE("shape mismatches raise dimension errors") {
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), DimensionError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("non-finite values are errors, never propagated") {
  CHECK_THROWS_AS(log(Tensor::from({1}, {0.0})), NumericError);
  CHECK_THROWS_AS(exp(Tensor::from({1}, {1e4})), NumericError);
  CHECK_THROWS_AS(Tensor::from({1}, {std::numeric_limits<Scalar>::quiet_NaN()}), NumericError);
}

TEST_CASE("l2_normalize gradient at [1,0] along [0,1] matches a central difference") {
  auto x = Tensor::from({2}, {1, 0}, true);
  auto dir = Tensor::from({2}, {0, 1});
  auto loss = [&] { return sum_all(mul(l2_normalize(x), dir)); };
  backward(loss());
  const auto g = x.grad();
  for (std::size_t i = 0; i < 2; ++i) {
    double fd = central_difference(x, i, [&] { return double(loss().item()); });
    CHECK(std::abs(g[i] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
  }
  CHECK(g[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("child loss gradient on a 4-item batch matches central differences for every entry") {
  std::mt19937_64 rng(11);
  auto clips = randn(rng, {4, 6}, true);
  auto narr = randn(rng, {4, 6}, true);
  Mask mask = {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  auto loss = [&] {
    objectives::ChildBatch b{l2_normalize(clips), l2_normalize(narr), mask};
    return objectives::child_loss(b, objectives::Temperature(0.05));
  };
  backward(loss());
  std::vector<double> auto_g, fd_g;
  for (auto* t : {&clips, &narr}) {
    auto g = t->grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto_g.push_back(g[i]);
      fd_g.push_back(central_difference(*t, i, [&] { return double(loss().item()); }));
    }
  }
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < auto_g.size(); ++i) {
    diff += (auto_g[i] - fd_g[i]) * (auto_g[i] - fd_g[i]);
    norm += fd_g[i] * fd_g[i];
  }
  CHECK(std::sqrt(diff) / std::sqrt(norm) < 1e-4);
}

TEST_CASE("every registered op passes the finite-difference check over 10 seeds") {
  for (const auto& c : op_gradcheck_cases()) {
    auto r = run_gradcheck(c, 10, 1e-4);
    INFO(c.name << " rel err " << r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.seeds == 10);
  }
}

TEST_CASE("gradient_relative_error flags a wrong gradient") {
  auto x = Tensor::from({3}, {0.3, -0.2, 0.9}, true);
  LossFn wrong = [](const std::vector<Tensor>& in) {
    return sum_all(add(sub(in[0], in[0].detach()), exp(in[0]).detach()));
  };
  CHECK(gradient_relative_error(wrong, {x}) > 0.1);
}

TEST_CASE("softmax rows sum to one and layer norm standardises rows") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = randn(rng, {5, 9}, false, 3.0);
    auto s = softmax(x);
    for (std::size_t r = 0; r < 5; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < 9; ++c) sum += s.at({r, c});
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    auto ln = layer_norm(x, Tensor::full({9}, 1), Tensor::zeros({9}), 1e-12);
    for (std::size_t r = 0; r < 5; ++r) {
      double mean = 0, var = 0;
      for (std::size_t c = 0; c < 9; ++c) mean += ln.at({r, c});
      mean /= 9;
      for (std::size_t c = 0; c < 9; ++c) var += (ln.at({r, c}) - mean) * (ln.at({r, c}) - mean);
      var /= 9;
      CHECK(std::abs(mean) < 1e-10);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("masked softmax gives exact zeros on masked entries and rejects empty rows") {
  auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto s = masked_softmax(x, {1, 0, 1, 0, 1, 0});
  CHECK(s.at({0, 1}) == 0.0);
  CHECK(s.at({1, 0}) == 0.0);
  CHECK(s.at({1, 1}) == 1.0);
  CHECK_THROWS_AS(masked_softmax(x, {1, 1, 1, 0, 0, 0}), ContractError);
}

TEST_CASE("embedding rejects out-of-range ids") {
  auto table = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(embedding(table, {0, 4}, {2}), ContractError);
}

// ---- AdamW -------------------------------------------------------------------

namespace {

ParamList one_param(std::vector<Scalar> values, std::vector<Scalar> grad) {
  ParamList p;
  const std::size_t n = values.size();
  auto t = Tensor::from({n}, std::move(values), true);
  auto g = Tensor::from({n}, std::move(grad));
  backward(sum_all(mul(t, g)));
  p.add("w", t);
  return p;
}

}  // namespace

TEST_CASE("AdamW with zero gradient and no decay leaves parameters unchanged") {
  auto p = one_param({0.5, -1.25, 3}, {0, 0, 0});
  AdamWConfig c;
  c.weight_decay = 0;
  auto s = make_adamw_state(p, c);
  adamw_step(p, s);
  CHECK(p.tensors[0].data()[0] == 0.5);
  CHECK(p.tensors[0].data()[1] == -1.25);
  CHECK(p.tensors[0].data()[2] == 3);
  CHECK(s.step == 1);
}

TEST_CASE("AdamW decoupled decay scales parameters by 1 - lr*wd") {
  auto p = one_param({0.5, -1.25, 3}, {0, 0, 0});
  AdamWConfig c;
  c.lr = 0.1;
  c.weight_decay = 0.01;
  auto s = make_adamw_state(p, c);
  adamw_step(p, s);
  CHECK(p.tensors[0].data()[0] == doctest::Approx(0.5 * 0.999).epsilon(1e-15));
  CHECK(p.tensors[0].data()[1] == doctest::Approx(-1.25 * 0.999).epsilon(1e-15));
  CHECK(p.tensors[0].data()[2] == doctest::Approx(3 * 0.999).epsilon(1e-15));
}

TEST_CASE("AdamW under a constant gradient moves by lr against its sign") {
  std::vector<Scalar> g = {0.3, -2.0, 1e-3};
  auto p = one_param({0, 0, 0}, g);
  AdamWConfig c;
  c.lr = 0.01;
  c.weight_decay = 0;
  auto s = make_adamw_state(p, c);
  std::vector<Scalar> before(3);
  for (int step = 0; step < 2000; ++step) {
    auto d = p.tensors[0].data();
    before.assign(d.begin(), d.end());
    adamw_step(p, s);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const double delta = p.tensors[0].data()[i] - before[i];
    CHECK(delta == doctest::Approx(-c.lr * (g[i] > 0 ? 1 : -1)).epsilon(1e-3));
  }
  CHECK(s.step == 2000);
}

TEST_CASE("AdamW matches an independent reference over several steps") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> d;
  const AdamWConfig c{0.02, 0.9, 0.999, 1e-8, 0.05};
  std::vector<double> w = {0.1, -0.4, 0.7, 1.1};
  std::vector<double> m(4, 0), v(4, 0);
  ParamList p;
  p.add("w", Tensor::from({4}, std::vector<Scalar>(w.begin(), w.end()), true));
  auto s = make_adamw_state(p, c);
  for (int t = 1; t <= 5; ++t) {
    std::vector<Scalar> g(4);
    for (auto& x : g) x = d(rng);
    adamw_step(std::span<Tensor>(p.tensors), std::span<const std::vector<Scalar>>(&g, 1), s);
    for (int i = 0; i < 4; ++i) {
      w[i] *= 1 - c.lr * c.weight_decay;
      m[i] = c.beta1 * m[i] + (1 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1 - c.beta2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(c.beta1, t));
      const double vh = v[i] / (1 - std::pow(c.beta2, t));
      w[i] -= c.lr * mh / (std::sqrt(vh) + c.eps);
    }
  }
  for (int i = 0; i < 4; ++i) CHECK(p.tensors[0].data()[i] == doctest::Approx(w[i]).epsilon(1e-12));
}

TEST_CASE("AdamW rejects mismatched gradients and invalid settings") {
  ParamList p;
  p.add("w", Tensor::zeros({3}, true));
  auto s = make_adamw_state(p, {});
  std::vector<Scalar> wrong(2, 0.0);
  CHECK_THROWS_AS(adamw_step(std::span<Tensor>(p.tensors), std::span<const std::vector<Scalar>>(&wrong, 1), s),
                  ContractError);
  AdamWConfig bad;
  bad.lr = -1;
  CHECK_THROWS_AS(make_adamw_state(p, bad), ConfigError);
}
