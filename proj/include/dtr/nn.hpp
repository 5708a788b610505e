#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dtr/tensor.hpp"

namespace dtr {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

// Copies values from `source` into `target`; names and shapes must agree
// position by position.
void CopyParameters(const ParameterList& source, ParameterList& target);

// target <- tau * source + (1 - tau) * target, elementwise.
void BlendParameters(const ParameterList& source, ParameterList& target, double tau);

std::size_t CountParameters(const ParameterList& params);

// Affine map y = x W + b over the last axis. Weights and bias start uniform
// in [-1/sqrt(in), 1/sqrt(in)]. Without a bias, y = x W.
class Linear {
 public:
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Tensor Forward(const Tensor& x) const;
  void AppendParameters(const std::string& prefix, ParameterList& out) const;

  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }

 private:
  Tensor weight_;
  Tensor bias_;
  bool has_bias_ = true;
};

// Layer normalization followed by a learned per-feature scale and shift.
class AffineLayerNorm {
 public:
  explicit AffineLayerNorm(std::size_t dim, double epsilon = 1e-5);

  Tensor Forward(const Tensor& x) const;
  void AppendParameters(const std::string& prefix, ParameterList& out) const;

 private:
  Tensor gain_;
  Tensor shift_;
  double epsilon_;
};

enum class Activation { kNone, kRelu, kTanh };

Tensor Activate(const Tensor& x, Activation activation);

struct MlpConfig {
  std::size_t input_dim = 1;
  std::size_t hidden_dim = 256;
  std::size_t hidden_layers = 3;
  std::size_t output_dim = 1;
  Activation hidden_activation = Activation::kRelu;
  Activation output_activation = Activation::kNone;
};

// `hidden_layers` hidden layers of width `hidden_dim` followed by a linear
// output layer.
class Mlp {
 public:
  Mlp(const MlpConfig& config, Rng& rng);

  Tensor Forward(const Tensor& x) const;
  ParameterList Parameters(const std::string& prefix = "") const;
  const MlpConfig& config() const { return config_; }

 private:
  MlpConfig config_;
  std::vector<Linear> layers_;
};

}  // namespace dtr
