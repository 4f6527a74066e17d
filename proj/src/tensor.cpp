#include "hiervl/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "hiervl/errors.hpp"

namespace hiervl::ad {

namespace {

using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const Mat>;
using MapM = Eigen::Map<Mat>;

constexpr Scalar kSqrtHalf = static_cast<Scalar>(0.70710678118654752440);
constexpr Scalar kInvSqrt2Pi = static_cast<Scalar>(0.39894228040143267794);

void check_finite(const std::vector<Scalar>& v, const std::string& op) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream os;
      os << op << ": non-finite output at element " << i << " (" << v[i] << ")";
      throw NumericError(os.str());
    }
  }
}

// Builds the result node. Inputs and the backward closure are only kept when
// some input takes part in differentiation.
Tensor make_result(std::string op, Shape shape, std::vector<Scalar> value,
                   std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
  check_finite(value, op);
  auto n = std::make_shared<Node>();
  n->op = std::move(op);
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = std::any_of(inputs.begin(), inputs.end(),
                        [](const NodePtr& p) { return p->requires_grad; });
  if (rg) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(bw);
  }
  return Tensor(std::move(n));
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                           to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Offset into an input of shape `in` for every element of the broadcast
// output `out`. Empty when the shapes are identical.
std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  if (in == out) return {};
  std::size_t r = out.size();
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    std::size_t axis = in.size() - 1 - k;
    std::size_t oaxis = r - 1 - k;
    in_stride[oaxis] = in[axis] == 1 ? 0 : s;
    s *= in[axis];
  }
  std::size_t n = numel(out);
  std::vector<std::size_t> offs(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    offs[i] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += in_stride[d];
      if (idx[d] < out[d]) break;
      off -= in_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return offs;
}

inline std::size_t at_off(const std::vector<std::size_t>& offs, std::size_t i) {
  return offs.empty() ? i : offs[i];
}

template <typename Fwd, typename GradA, typename GradB>
Tensor binary_broadcast(const char* op, const Tensor& a, const Tensor& b, Fwd f, GradA ga,
                        GradB gb) {
  Shape out = broadcast_shape(a.shape(), b.shape(), op);
  auto oa = broadcast_offsets(a.shape(), out);
  auto ob = broadcast_offsets(b.shape(), out);
  std::size_t n = numel(out);
  std::vector<Scalar> v(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) v[i] = f(av[at_off(oa, i)], bv[at_off(ob, i)]);
  NodePtr na = a.node();
  NodePtr nb = b.node();
  return make_result(op, out, std::move(v), {na, nb},
                     [na, nb, oa, ob, ga, gb](Node& self) {
                       if (na->requires_grad) na->ensure_grad();
                       if (nb->requires_grad) nb->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         std::size_t ia = at_off(oa, i);
                         std::size_t ib = at_off(ob, i);
                         Scalar g = self.grad[i];
                         Scalar x = na->value[ia];
                         Scalar y = nb->value[ib];
                         if (na->requires_grad) na->grad[ia] += ga(g, x, y);
                         if (nb->requires_grad) nb->grad[ib] += gb(g, x, y);
                       }
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd f, Deriv d) {
  std::vector<Scalar> v(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(av[i]);
  NodePtr na = a.node();
  return make_result(op, a.shape(), std::move(v), {na}, [na, d](Node& self) {
    na->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      na->grad[i] += self.grad[i] * d(na->value[i], self.value[i]);
    }
  });
}

// Output-to-input index map for a permutation of axes.
std::vector<std::size_t> permute_map(const Shape& in, const std::vector<std::size_t>& axes,
                                     Shape& out) {
  std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t d = r; d-- > 1;) in_stride[d - 1] = in_stride[d] * in[d];
  out.assign(r, 0);
  std::vector<std::size_t> stride(r);
  for (std::size_t d = 0; d < r; ++d) {
    out[d] = in[axes[d]];
    stride[d] = in_stride[axes[d]];
  }
  std::size_t n = numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += stride[d];
      if (idx[d] < out[d]) break;
      off -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

std::size_t last_dim(const Tensor& a, const char* op) {
  if (a.rank() == 0) throw DimensionError(std::string(op) + ": needs rank >= 1");
  return a.shape().back();
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), Scalar{0});
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Scalar{0}, requires_grad);
}

Tensor Tensor::full(Shape shape, Scalar v, bool requires_grad) {
  std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<Scalar>(n, v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> data, bool requires_grad) {
  if (ad::numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + to_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  check_finite(data, "tensor");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(Scalar v) { return from({}, {v}); }

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

Scalar Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("at: index rank mismatch");
  std::size_t off = 0;
  std::size_t d = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[d]) throw DimensionError("at: index out of range");
    off = off * node_->shape[d] + i;
    ++d;
  }
  return node_->value[off];
}

std::vector<Scalar> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<Scalar>(node_->value.size(), Scalar{0});
  return node_->grad;
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

namespace {

std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // children before parents
}

}  // namespace

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) return;
  auto order = topo_order(root);
  root->ensure_grad();
  root->grad[0] += Scalar{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

std::size_t graph_size(const Tensor& root) {
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    for (auto& in : n->inputs) stack.push_back(in.get());
  }
  return seen.size();
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "add", a, b, [](Scalar x, Scalar y) { return x + y; },
      [](Scalar g, Scalar, Scalar) { return g; }, [](Scalar g, Scalar, Scalar) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "sub", a, b, [](Scalar x, Scalar y) { return x - y; },
      [](Scalar g, Scalar, Scalar) { return g; }, [](Scalar g, Scalar, Scalar) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "mul", a, b, [](Scalar x, Scalar y) { return x * y; },
      [](Scalar g, Scalar, Scalar y) { return g * y; },
      [](Scalar g, Scalar x, Scalar) { return g * x; });
}

Tensor scale(const Tensor& a, Scalar s) {
  return unary(
      "scale", a, [s](Scalar x) { return x * s; }, [s](Scalar, Scalar) { return s; });
}

Tensor neg(const Tensor& a) { return scale(a, Scalar{-1}); }

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](Scalar x) { return std::log(x); }, [](Scalar x, Scalar) { return 1 / x; });
}

Tensor gelu(const Tensor& a) {
  return unary(
      "gelu", a, [](Scalar x) { return Scalar{0.5} * x * (1 + std::erf(x * kSqrtHalf)); },
      [](Scalar x, Scalar) {
        Scalar cdf = Scalar{0.5} * (1 + std::erf(x * kSqrtHalf));
        Scalar pdf = kInvSqrt2Pi * std::exp(Scalar{-0.5} * x * x);
        return cdf + x * pdf;
      });
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = (sa.size() == 2 && sb.size() == 2) || (sa.size() == 3 && sb.size() == 3) ||
            (sa.size() == 3 && sb.size() == 2);
  if (!ok) throw DimensionError("matmul: unsupported ranks " + to_string(sa) + " x " + to_string(sb));
  std::size_t k = sa.back();
  std::size_t kb = sb[sb.size() - 2];
  if (k != kb || (sa.size() == 3 && sb.size() == 3 && sa[0] != sb[0])) {
    throw DimensionError("matmul: " + to_string(sa) + " x " + to_string(sb));
  }
  std::size_t n = sb.back();
  bool batched = sb.size() == 3;
  std::size_t batches = batched ? sa[0] : 1;
  // A rank-3 left operand against a matrix folds into one tall product.
  std::size_t m = batched ? sa[1] : numel(sa) / k;
  Shape out = sa;
  out.back() = n;

  std::vector<Scalar> v(numel(out));
  for (std::size_t bi = 0; bi < batches; ++bi) {
    MapC A(a.data().data() + bi * m * k, m, k);
    MapC B(b.data().data() + (batched ? bi * k * n : 0), k, n);
    MapM C(v.data() + bi * m * n, m, n);
    C.noalias() = A * B;
  }
  NodePtr na = a.node();
  NodePtr nb = b.node();
  return make_result("matmul", out, std::move(v), {na, nb},
                     [na, nb, batches, batched, m, k, n](Node& self) {
                       if (na->requires_grad) na->ensure_grad();
                       if (nb->requires_grad) nb->ensure_grad();
                       for (std::size_t bi = 0; bi < batches; ++bi) {
                         MapC G(self.grad.data() + bi * m * n, m, n);
                         std::size_t boff = batched ? bi * k * n : 0;
                         if (na->requires_grad) {
                           MapC B(nb->value.data() + boff, k, n);
                           MapM GA(na->grad.data() + bi * m * k, m, k);
                           GA.noalias() += G * B.transpose();
                         }
                         if (nb->requires_grad) {
                           MapC A(na->value.data() + bi * m * k, m, k);
                           MapM GB(nb->grad.data() + boff, k, n);
                           GB.noalias() += A.transpose() * G;
                         }
                       }
                     });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  std::size_t r = a.rank();
  std::vector<std::size_t> check(axes);
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < check.size(); ++i) {
    if (check.size() != r || check[i] != i) throw DimensionError("permute: invalid axes");
  }
  Shape out;
  auto map = permute_map(a.shape(), axes, out);
  std::vector<Scalar> v(map.size());
  auto av = a.data();
  for (std::size_t i = 0; i < map.size(); ++i) v[i] = av[map[i]];
  NodePtr na = a.node();
  return make_result("permute", out, std::move(v), {na}, [na, map](Node& self) {
    na->ensure_grad();
    for (std::size_t i = 0; i < map.size(); ++i) na->grad[map[i]] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw DimensionError("transpose: needs rank >= 2");
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  NodePtr na = a.node();
  std::vector<Scalar> v(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(v), {na}, [na](Node& self) {
    na->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range");
  Shape out = s0;
  out[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool same = s.size() == s0.size();
    for (std::size_t d = 0; same && d < s.size(); ++d) same = d == axis || s[d] == s0[d];
    if (!same) throw DimensionError("concat: " + to_string(s) + " vs " + to_string(s0));
    out[axis] += s[axis];
  }
  std::size_t outer = numel(Shape(s0.begin(), s0.begin() + axis));
  std::size_t inner = numel(Shape(s0.begin() + axis + 1, s0.end()));
  std::size_t row = out[axis] * inner;
  std::vector<Scalar> v(numel(out));
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> starts;
  std::size_t start = 0;
  for (const auto& p : parts) {
    std::size_t chunk = p.dim(axis) * inner;
    auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk, v.data() + o * row + start);
    }
    nodes.push_back(p.node());
    starts.push_back(start);
    start += chunk;
  }
  return make_result("concat", out, std::move(v), nodes,
                     [nodes, starts, outer, row](Node& self) {
                       for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                         Node& p = *nodes[pi];
                         if (!p.requires_grad) continue;
                         p.ensure_grad();
                         std::size_t chunk = p.value.size() / outer;
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t j = 0; j < chunk; ++j) {
                             p.grad[o * chunk + j] += self.grad[o * row + starts[pi] + j];
                           }
                         }
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " of " + to_string(s));
  }
  Shape out = s;
  out[axis] = end - begin;
  std::size_t outer = numel(Shape(s.begin(), s.begin() + axis));
  std::size_t inner = numel(Shape(s.begin() + axis + 1, s.end()));
  std::size_t in_row = s[axis] * inner;
  std::size_t chunk = out[axis] * inner;
  std::size_t off = begin * inner;
  std::vector<Scalar> v(numel(out));
  auto av = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(av.data() + o * in_row + off, chunk, v.data() + o * chunk);
  }
  NodePtr na = a.node();
  return make_result("slice", out, std::move(v), {na},
                     [na, outer, in_row, chunk, off](Node& self) {
                       na->ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t j = 0; j < chunk; ++j) {
                           na->grad[o * in_row + off + j] += self.grad[o * chunk + j];
                         }
                       }
                     });
}

// ---- normalisation / reductions -------------------------------------------

Tensor masked_softmax(const Tensor& a, const Mask& mask) {
  std::size_t d = last_dim(a, "softmax");
  if (!mask.empty() && mask.size() != a.numel()) {
    throw DimensionError("softmax: mask has " + std::to_string(mask.size()) + " entries for " +
                         to_string(a.shape()));
  }
  std::size_t rows = a.numel() / d;
  auto av = a.data();
  std::vector<Scalar> v(a.numel(), Scalar{0});
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* x = av.data() + r * d;
    Scalar* y = v.data() + r * d;
    auto keep = [&](std::size_t j) { return mask.empty() || mask[r * d + j] != 0; };
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t j = 0; j < d; ++j)
      if (keep(j)) mx = std::max(mx, x[j]);
    if (!std::isfinite(mx)) throw ContractError("softmax: row " + std::to_string(r) + " fully masked");
    Scalar z = 0;
    for (std::size_t j = 0; j < d; ++j) {
      if (keep(j)) {
        y[j] = std::exp(x[j] - mx);
        z += y[j];
      }
    }
    for (std::size_t j = 0; j < d; ++j) y[j] /= z;
  }
  NodePtr na = a.node();
  return make_result("softmax", a.shape(), std::move(v), {na}, [na, d, rows](Node& self) {
    na->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const Scalar* y = self.value.data() + r * d;
      const Scalar* g = self.grad.data() + r * d;
      Scalar dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < d; ++j) na->grad[r * d + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor softmax(const Tensor& a) { return masked_softmax(a, {}); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  std::size_t d = last_dim(x, "layer_norm");
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine params must have shape [" + std::to_string(d) + "]");
  }
  std::size_t rows = x.numel() / d;
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<Scalar> v(x.numel());
  std::vector<Scalar> xhat(x.numel());
  std::vector<Scalar> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* in = xv.data() + r * d;
    Scalar mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<Scalar>(d);
    Scalar var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<Scalar>(d);
    rstd[r] = 1 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mu) * rstd[r];
      v[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  NodePtr nx = x.node();
  NodePtr ng = gamma.node();
  NodePtr nb = beta.node();
  return make_result(
      "layer_norm", x.shape(), std::move(v), {nx, ng, nb},
      [nx, ng, nb, xhat = std::move(xhat), rstd = std::move(rstd), d, rows](Node& self) {
        if (nx->requires_grad) nx->ensure_grad();
        if (ng->requires_grad) ng->ensure_grad();
        if (nb->requires_grad) nb->ensure_grad();
        const Scalar inv_d = Scalar{1} / static_cast<Scalar>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const Scalar* g = self.grad.data() + r * d;
          const Scalar* xh = xhat.data() + r * d;
          Scalar sum_dxh = 0;
          Scalar sum_dxh_xh = 0;
          for (std::size_t j = 0; j < d; ++j) {
            Scalar dxh = g[j] * ng->value[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
            if (ng->requires_grad) ng->grad[j] += g[j] * xh[j];
            if (nb->requires_grad) nb->grad[j] += g[j];
          }
          if (!nx->requires_grad) continue;
          for (std::size_t j = 0; j < d; ++j) {
            Scalar dxh = g[j] * ng->value[j];
            nx->grad[r * d + j] +=
                rstd[r] * (dxh - sum_dxh * inv_d - xh[j] * sum_dxh_xh * inv_d);
          }
        }
      });
}

Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids, Shape index_shape) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  if (numel(index_shape) != ids.size()) throw DimensionError("embedding: index shape mismatch");
  std::size_t vocab = table.dim(0);
  std::size_t d = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ContractError("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(vocab));
    }
  }
  Shape out = index_shape;
  out.push_back(d);
  std::vector<Scalar> v(ids.size() * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, v.data() + i * d);
  }
  NodePtr nt = table.node();
  return make_result("embedding", out, std::move(v), {nt}, [nt, ids, d](Node& self) {
    nt->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Scalar* dst = nt->grad.data() + static_cast<std::size_t>(ids[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[i * d + j];
    }
  });
}

Tensor mean(const Tensor& a, std::size_t axis, bool order_invariant) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw DimensionError("mean: axis out of range");
  std::size_t n = s[axis];
  std::size_t outer = numel(Shape(s.begin(), s.begin() + axis));
  std::size_t inner = numel(Shape(s.begin() + axis + 1, s.end()));
  Shape out = s;
  out.erase(out.begin() + axis);
  std::vector<Scalar> v(outer * inner);
  std::vector<Scalar> buf(n);
  auto av = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      for (std::size_t k = 0; k < n; ++k) buf[k] = av[(o * n + k) * inner + i];
      if (order_invariant) std::sort(buf.begin(), buf.end());
      Scalar acc = 0;
      for (Scalar x : buf) acc += x;
      v[o * inner + i] = acc / static_cast<Scalar>(n);
    }
  }
  NodePtr na = a.node();
  return make_result("mean", out, std::move(v), {na}, [na, n, outer, inner](Node& self) {
    na->ensure_grad();
    const Scalar w = Scalar{1} / static_cast<Scalar>(n);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i)
          na->grad[(o * n + k) * inner + i] += self.grad[o * inner + i] * w;
  });
}

Tensor sum_all(const Tensor& a) {
  Scalar acc = 0;
  for (Scalar x : a.data()) acc += x;
  NodePtr na = a.node();
  return make_result("sum", {}, {acc}, {na}, [na](Node& self) {
    na->ensure_grad();
    for (auto& g : na->grad) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean_all: empty tensor");
  return scale(sum_all(a), Scalar{1} / static_cast<Scalar>(a.numel()));
}

Tensor l2_normalize(const Tensor& a, Scalar min_norm) {
  std::size_t d = last_dim(a, "l2_normalize");
  std::size_t rows = a.numel() / d;
  auto av = a.data();
  std::vector<Scalar> v(a.numel());
  std::vector<Scalar> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    Scalar ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += av[r * d + j] * av[r * d + j];
    norms[r] = std::sqrt(ss);
    if (!(norms[r] >= min_norm)) {
      std::ostringstream os;
      os << "l2_normalize: row " << r << " has norm " << norms[r] << " below " << min_norm;
      throw DegenerateAggregateError(os.str());
    }
    for (std::size_t j = 0; j < d; ++j) v[r * d + j] = av[r * d + j] / norms[r];
  }
  NodePtr na = a.node();
  return make_result("l2_normalize", a.shape(), std::move(v), {na},
                     [na, norms = std::move(norms), d, rows](Node& self) {
                       na->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const Scalar* y = self.value.data() + r * d;
                         const Scalar* g = self.grad.data() + r * d;
                         Scalar dot = 0;
                         for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
                         for (std::size_t j = 0; j < d; ++j)
                           na->grad[r * d + j] += (g[j] - y[j] * dot) / norms[r];
                       }
                     });
}

Tensor masked_logsumexp(const Tensor& a, const Mask& mask) {
  std::size_t d = last_dim(a, "logsumexp");
  if (!mask.empty() && mask.size() != a.numel()) throw DimensionError("logsumexp: mask size mismatch");
  std::size_t rows = a.numel() / d;
  Shape out(a.shape().begin(), a.shape().end() - 1);
  auto av = a.data();
  std::vector<Scalar> v(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto keep = [&](std::size_t j) { return mask.empty() || mask[r * d + j] != 0; };
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t j = 0; j < d; ++j)
      if (keep(j)) mx = std::max(mx, av[r * d + j]);
    if (!std::isfinite(mx)) {
      throw ContractError("logsumexp: row " + std::to_string(r) + " has no kept entries");
    }
    Scalar z = 0;
    for (std::size_t j = 0; j < d; ++j)
      if (keep(j)) z += std::exp(av[r * d + j] - mx);
    v[r] = mx + std::log(z);
  }
  NodePtr na = a.node();
  return make_result("logsumexp", out, std::move(v), {na}, [na, mask, d, rows](Node& self) {
    na->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        if (!mask.empty() && mask[r * d + j] == 0) continue;
        na->grad[r * d + j] += self.grad[r] * std::exp(na->value[r * d + j] - self.value[r]);
      }
    }
  });
}

Tensor logsumexp(const Tensor& a) { return masked_logsumexp(a, {}); }

}  // namespace hiervl::ad
