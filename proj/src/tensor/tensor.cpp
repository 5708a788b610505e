#include "dtr/tensor.hpp"

#include <cmath>
#include <sstream>

#include "dtr/errors.hpp"

namespace dtr {

std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
namespace {

thread_local Tape* active_tape = nullptr;
thread_local bool grad_disabled = false;

std::shared_ptr<detail::Node> NewNode(Shape shape, std::vector<double> value) {
  if (NumElements(shape) != value.size()) {
    throw ShapeError("tensor of shape " + ShapeToString(shape) + " cannot hold " +
                     std::to_string(value.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

}  // namespace

std::size_t NumElements(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor() : node_(NewNode({}, {0.0})) {}

Tensor Tensor::FromVector(Shape shape, std::vector<double> data) {
  return Tensor(NewNode(std::move(shape), std::move(data)));
}

Tensor Tensor::Zeros(Shape shape) {
  std::size_t n = NumElements(shape);
  return FromVector(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::Full(Shape shape, double value) {
  std::size_t n = NumElements(shape);
  return FromVector(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::Scalar(double value) { return FromVector({}, {value}); }

Tensor Tensor::Parameter(Shape shape, std::vector<double> data) {
  auto node = NewNode(std::move(shape), std::move(data));
  node->requires_grad = true;
  return Tensor(std::move(node));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     ShapeToString(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got shape " +
                     ShapeToString(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw ShapeError("index rank does not match shape " + ShapeToString(shape()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) {
      throw ShapeError("index out of range for shape " + ShapeToString(shape()));
    }
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

Tensor Tensor::Detach() const {
  return Tensor(NewNode(node_->shape, node_->value));
}

Tensor Tensor::Clone() const {
  auto node = NewNode(node_->shape, node_->value);
  node->requires_grad = node_->is_leaf && node_->requires_grad;
  return Tensor(std::move(node));
}

std::span<const double> Gradients::Find(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) return {};
  return it->second;
}

std::vector<double> Gradients::Of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) return std::vector<double>(leaf.size(), 0.0);
  return it->second;
}

bool Gradients::Contains(const Tensor& leaf) const {
  return grads_.count(leaf.id()) > 0;
}

std::span<double> BackwardContext::input_grad(std::size_t i) {
  const detail::Node* parent = node_->parents[i].get();
  if (!parent->requires_grad) return {};
  return sink_(parent);
}

Tape::~Tape() {
  // Break parent links iteratively so long chains do not recurse on release.
  for (auto& node : nodes_) {
    node->backward = nullptr;
    node->parents.clear();
  }
}

void Tape::Record(const std::shared_ptr<detail::Node>& node) {
  if (consumed_) {
    throw GradientError("cannot record on a tape that was already differentiated");
  }
  node->tape = this;
  node->tape_index = nodes_.size();
  nodes_.push_back(node);
}

Gradients Tape::Backward(const Tensor& loss) {
  if (consumed_) {
    throw GradientError("backward called twice on the same tape");
  }
  if (loss.rank() != 0) {
    throw GradientError("backward needs a scalar loss, got shape " +
                        ShapeToString(loss.shape()));
  }
  const detail::Node* root = loss.node_.get();
  Gradients result;
  if (root->requires_grad && root->is_leaf) {
    result.grads_[root] = {1.0};
    consumed_ = true;
    return result;
  }
  if (root->requires_grad && root->tape != this) {
    throw GradientError("loss was not recorded on this tape");
  }
  consumed_ = true;
  if (!root->requires_grad) return result;

  std::vector<std::vector<double>> node_grads(nodes_.size());
  auto sink = [&](const detail::Node* target) -> std::span<double> {
    std::vector<double>* buffer = nullptr;
    if (target->is_leaf) {
      buffer = &result.grads_[target];
    } else if (target->tape == this) {
      buffer = &node_grads[target->tape_index];
    } else {
      throw GradientError("operation input was recorded on another tape");
    }
    if (buffer->empty()) buffer->assign(target->value.size(), 0.0);
    return *buffer;
  };

  node_grads[root->tape_index] = {1.0};
  for (std::size_t i = root->tape_index + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node_grads[i].empty()) continue;
    BackwardContext ctx(node.get(), node_grads[i], sink);
    node->backward(ctx);
    node_grads[i].clear();
    node_grads[i].shrink_to_fit();
  }
  for (auto& node : nodes_) {
    node->backward = nullptr;
    node->parents.clear();
  }
  return result;
}

TapeScope::TapeScope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }

TapeScope::~TapeScope() { active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(grad_disabled) { grad_disabled = true; }

NoGradScope::~NoGradScope() { grad_disabled = previous_; }

bool IsRecording() { return active_tape != nullptr && !grad_disabled; }

Tensor MakeResult(const char* op, Shape shape, std::vector<double> value,
                  const std::vector<Tensor>& parents,
                  detail::BackwardFn backward) {
  for (double v : value) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by ") + op);
    }
  }
  auto node = NewNode(std::move(shape), std::move(value));
  node->op = op;
  bool needs_grad = false;
  if (IsRecording()) {
    for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents) node->parents.push_back(p.node_);
    node->backward = std::move(backward);
    active_tape->Record(node);
  }
  return Tensor(std::move(node));
}

}  // namespace dtr
