#pragma once

// Dense row-major float64 tensors with tape-based reverse-mode
// differentiation.
//
// Operations on tensors that require gradients are recorded on the tape that
// is active on the calling thread (see TapeScope). Without an active tape, or
// inside a NoGradScope, operations compute values only. Parameters are leaf
// tensors created with Tensor::Parameter; Tape::Backward returns the gradient
// of a scalar loss with respect to every leaf that contributed to it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dtr {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

// Independent seed for sub-stream `stream` of `seed` (splitmix64 mixing).
std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t stream);

std::size_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

class Tape;
class BackwardContext;

namespace detail {

using BackwardFn = std::function<void(BackwardContext&)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  bool is_leaf = true;
  const Tape* tape = nullptr;
  std::size_t tape_index = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

class Tensor {
 public:
  // A rank-0 constant holding 0.
  Tensor();

  static Tensor FromVector(Shape shape, std::vector<double> data);
  static Tensor Zeros(Shape shape);
  static Tensor Full(Shape shape, double value);
  static Tensor Scalar(double value);
  // Leaf tensor whose gradient is reported by Tape::Backward.
  static Tensor Parameter(Shape shape, std::vector<double> data);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const;
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }

  std::span<const double> data() const { return node_->value; }
  // Writable view of the values. Intended for leaves (parameter updates,
  // finite-difference probes); mutating a recorded intermediate corrupts the
  // tape that recorded it.
  std::span<double> mutable_data() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  // Same values, disconnected from any tape.
  Tensor Detach() const;
  // Deep copy of the values. Leaves keep their requires_grad flag.
  Tensor Clone() const;

  // Identity used to key gradients. Stable for the lifetime of the tensor.
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend class Tape;
  friend class BackwardContext;
  friend Tensor MakeResult(const char* op, Shape shape,
                           std::vector<double> value,
                           const std::vector<Tensor>& parents,
                           detail::BackwardFn backward);
};

// Gradients of one backward pass, keyed by leaf identity.
class Gradients {
 public:
  // Empty span when the leaf did not participate.
  std::span<const double> Find(const Tensor& leaf) const;
  // Gradient of `leaf`, zeros when it did not participate.
  std::vector<double> Of(const Tensor& leaf) const;
  bool Contains(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const void*, std::vector<double>> grads_;
  friend class Tape;
};

// Ordered record of the primitive operations executed while it is active.
// Recording order is a topological order of the computation graph. A tape
// can be differentiated exactly once.
class Tape {
 public:
  Tape() = default;
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Throws GradientError when `loss` is not a rank-0 tensor, when it was
  // recorded on another tape, or when this tape was already differentiated.
  Gradients Backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  void Record(const std::shared_ptr<detail::Node>& node);

  std::vector<std::shared_ptr<detail::Node>> nodes_;
  bool consumed_ = false;

  friend Tensor MakeResult(const char* op, Shape shape,
                           std::vector<double> value,
                           const std::vector<Tensor>& parents,
                           detail::BackwardFn backward);
};

// Makes `tape` the recording tape of the current thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on the current thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool previous_;
};

bool IsRecording();

// Handed to an operation's backward function.
class BackwardContext {
 public:
  std::span<const double> grad_output() const { return grad_output_; }
  std::span<const double> output() const { return node_->value; }
  const Shape& output_shape() const { return node_->shape; }
  std::span<const double> input(std::size_t i) const {
    return node_->parents[i]->value;
  }
  const Shape& input_shape(std::size_t i) const {
    return node_->parents[i]->shape;
  }
  // Accumulation buffer for the gradient of input `i`; empty when that input
  // does not require a gradient.
  std::span<double> input_grad(std::size_t i);

 private:
  BackwardContext(const detail::Node* node, std::span<const double> grad_output,
                  std::function<std::span<double>(const detail::Node*)> sink)
      : node_(node), grad_output_(grad_output), sink_(std::move(sink)) {}

  const detail::Node* node_;
  std::span<const double> grad_output_;
  std::function<std::span<double>(const detail::Node*)> sink_;

  friend class Tape;
};

// Builds the result of a primitive. Records it on the active tape when some
// parent requires a gradient; otherwise `backward` is dropped. Throws
// NumericalError when `value` holds a NaN or infinity.
Tensor MakeResult(const char* op, Shape shape, std::vector<double> value,
                  const std::vector<Tensor>& parents,
                  detail::BackwardFn backward);

// ---------------------------------------------------------------------------
// Primitives. Binary elementwise operations broadcast numpy-style.

Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
// Throws DomainError when a divisor is zero.
Tensor Div(const Tensor& a, const Tensor& b);
Tensor Minimum(const Tensor& a, const Tensor& b);

Tensor Scale(const Tensor& x, double factor);
Tensor AddScalar(const Tensor& x, double offset);
Tensor Neg(const Tensor& x);
Tensor Square(const Tensor& x);
Tensor Exp(const Tensor& x);
// Throws DomainError on non-positive input.
Tensor Log(const Tensor& x);
Tensor Tanh(const Tensor& x);
Tensor Relu(const Tensor& x);

// [..., M, K] x [K, N] or [..., M, K] x [..., K, N] with equal leading dims.
Tensor MatMul(const Tensor& a, const Tensor& b);

// Normalizations over the last axis.
Tensor Softmax(const Tensor& x);
Tensor LogSoftmax(const Tensor& x);
// Zero mean, unit variance over the last axis; no affine terms.
Tensor LayerNorm(const Tensor& x, double epsilon = 1e-5);

// Reductions.
Tensor Sum(const Tensor& x);
Tensor Mean(const Tensor& x);
Tensor SumAxis(const Tensor& x, std::size_t axis, bool keep_dim = false);

// Structure.
Tensor Reshape(const Tensor& x, Shape shape);
Tensor Permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor Slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);
Tensor Concat(const std::vector<Tensor>& parts, std::size_t axis);

// Rows of `table` ([V, D]) selected by `indices`; result shape is
// index_shape + [D].
Tensor EmbeddingLookup(const Tensor& table,
                       const std::vector<std::size_t>& indices,
                       const Shape& index_shape);

// Inverted dropout: kept entries are scaled by 1 / (1 - rate). Identity when
// `training` is false or rate is 0.
Tensor Dropout(const Tensor& x, double rate, Rng& rng, bool training);

// Entries where `mask` (broadcastable to x) is nonzero are replaced by
// `value` and receive no gradient.
Tensor MaskedFill(const Tensor& x, const Shape& mask_shape,
                  const std::vector<std::uint8_t>& mask, double value);

}  // namespace dtr
