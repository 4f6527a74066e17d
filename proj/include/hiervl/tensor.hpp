#pragma once

// Dense row-major tensors with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle to a graph node. Ops record their inputs and a
// backward closure whenever at least one input requires a gradient; the graph
// lives exactly as long as some handle references its root. All forward ops
// reject non-finite results.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hiervl::ad {

#ifdef HIERVL_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;
using Mask = std::vector<std::uint8_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node {
  std::string op = "leaf";
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;  // lazily sized on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad();
};

using NodePtr = std::shared_ptr<Node>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Scalar> data, bool requires_grad = false);
  static Tensor scalar(Scalar v);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }

  std::span<const Scalar> data() const { return node_->value; }
  // Mutable access is meant for leaves (parameters, optimizer updates).
  std::span<Scalar> mutable_data() { return node_->value; }
  Scalar item() const;
  Scalar at(std::initializer_list<std::size_t> index) const;

  // Gradient of the last backward pass; zeros when this node was unreachable.
  std::vector<Scalar> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  // Detached copy of the values (no graph, no gradient).
  Tensor detach() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Runs reverse-mode accumulation from a scalar loss. Gradients are summed into
/// every reachable node; leaves keep accumulating until `zero_grad`.
void backward(const Tensor& loss);

/// Number of distinct nodes reachable from `root` (including leaves).
std::size_t graph_size(const Tensor& root);

// ---- forward ops ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
Tensor neg(const Tensor& a);

// [M,K]x[K,N], [B,M,K]x[B,K,N] or [B,M,K]x[K,N].
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

// Row-wise over the last axis. A masked entry gets probability exactly zero;
// `mask` has one byte per element of `a` (nonzero = keep).
Tensor softmax(const Tensor& a);
Tensor masked_softmax(const Tensor& a, const Mask& mask);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = 1e-5);
Tensor gelu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// table [V,D] gathered by `ids`; result shape is `index_shape` + [D].
Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids, Shape index_shape);

// Mean over `axis` (removed from the shape). With `order_invariant` the
// summation runs over sorted values so any permutation along `axis` yields
// bit-identical output.
Tensor mean(const Tensor& a, std::size_t axis, bool order_invariant = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Unit L2 norm over the last axis. Rows whose norm falls below `min_norm`
// raise DegenerateAggregateError.
Tensor l2_normalize(const Tensor& a, Scalar min_norm = 1e-12);

// log(sum(exp(a))) over the last axis restricted to `mask`, stabilised by the
// row maximum. Every row needs at least one kept entry.
Tensor masked_logsumexp(const Tensor& a, const Mask& mask);
Tensor logsumexp(const Tensor& a);

}  // namespace hiervl::ad
