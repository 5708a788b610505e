#include "dtr/nn.hpp"

#include <cmath>

#include "dtr/errors.hpp"

namespace dtr {
namespace {

std::vector<double> UniformValues(std::size_t n, double bound, Rng& rng) {
  std::uniform_real_distribution<double> uniform(-bound, bound);
  std::vector<double> values(n);
  for (double& v : values) v = uniform(rng);
  return values;
}

void CheckAligned(const ParameterList& source, const ParameterList& target) {
  if (source.size() != target.size()) {
    throw ShapeError("parameter lists differ in length: " +
                     std::to_string(source.size()) + " vs " +
                     std::to_string(target.size()));
  }
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i].tensor.shape() != target[i].tensor.shape()) {
      throw ShapeError("parameter " + source[i].name + " has shape " +
                       ShapeToString(source[i].tensor.shape()) + " but " +
                       target[i].name + " has shape " +
                       ShapeToString(target[i].tensor.shape()));
    }
  }
}

}  // namespace

void CopyParameters(const ParameterList& source, ParameterList& target) {
  CheckAligned(source, target);
  for (std::size_t i = 0; i < source.size(); ++i) {
    auto src = source[i].tensor.data();
    auto dst = target[i].tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void BlendParameters(const ParameterList& source, ParameterList& target, double tau) {
  CheckAligned(source, target);
  for (std::size_t i = 0; i < source.size(); ++i) {
    auto src = source[i].tensor.data();
    auto dst = target[i].tensor.mutable_data();
    for (std::size_t j = 0; j < src.size(); ++j) {
      // Written as a step toward the source so that equal tensors stay fixed.
      dst[j] = tau == 1.0 ? src[j] : dst[j] + tau * (src[j] - dst[j]);
    }
  }
}

std::size_t CountParameters(const ParameterList& params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.size();
  return total;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias) : has_bias_(bias) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = Tensor::Parameter({in, out}, UniformValues(in * out, bound, rng));
  if (bias) bias_ = Tensor::Parameter({out}, UniformValues(out, bound, rng));
}

Tensor Linear::Forward(const Tensor& x) const {
  Tensor y = MatMul(x, weight_);
  return has_bias_ ? Add(y, bias_) : y;
}

void Linear::AppendParameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + "weight", weight_});
  if (has_bias_) out.push_back({prefix + "bias", bias_});
}

AffineLayerNorm::AffineLayerNorm(std::size_t dim, double epsilon)
    : gain_(Tensor::Parameter({dim}, std::vector<double>(dim, 1.0))),
      shift_(Tensor::Parameter({dim}, std::vector<double>(dim, 0.0))),
      epsilon_(epsilon) {}

Tensor AffineLayerNorm::Forward(const Tensor& x) const {
  return Add(Mul(LayerNorm(x, epsilon_), gain_), shift_);
}

void AffineLayerNorm::AppendParameters(const std::string& prefix,
                                       ParameterList& out) const {
  out.push_back({prefix + "gain", gain_});
  out.push_back({prefix + "shift", shift_});
}

Tensor Activate(const Tensor& x, Activation activation) {
  switch (activation) {
    case Activation::kRelu:
      return Relu(x);
    case Activation::kTanh:
      return Tanh(x);
    case Activation::kNone:
      break;
  }
  return x;
}

Mlp::Mlp(const MlpConfig& config, Rng& rng) : config_(config) {
  if (config.input_dim == 0 || config.output_dim == 0 || config.hidden_dim == 0) {
    throw InvalidArgument("MLP dimensions must be positive");
  }
  std::size_t width = config.input_dim;
  for (std::size_t i = 0; i < config.hidden_layers; ++i) {
    layers_.emplace_back(width, config.hidden_dim, rng);
    width = config.hidden_dim;
  }
  layers_.emplace_back(width, config.output_dim, rng);
}

Tensor Mlp::Forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    h = Activate(layers_[i].Forward(h), config_.hidden_activation);
  }
  return Activate(layers_.back().Forward(h), config_.output_activation);
}

ParameterList Mlp::Parameters(const std::string& prefix) const {
  ParameterList out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].AppendParameters(prefix + "layer" + std::to_string(i) + ".", out);
  }
  return out;
}

}  // namespace dtr
