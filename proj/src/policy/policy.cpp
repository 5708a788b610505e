#include "dtr/policy.hpp"

#include <cmath>
#include <fstream>

#include "dtr/checkpoint.hpp"
#include "dtr/errors.hpp"

namespace dtr {

namespace {

constexpr double kMaskFill = -1e30;

Tensor NormalTable(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = normal(rng);
  return Tensor::Parameter({rows, cols}, std::move(v));
}

// Causal mask over 3L tokens; padding keys are hidden from every other query.
std::vector<std::uint8_t> AttentionMask(const WindowBatch& w) {
  std::size_t T = 3 * w.length;
  std::vector<std::uint8_t> mask(w.batch * T * T, 0);
  for (std::size_t b = 0; b < w.batch; ++b) {
    for (std::size_t q = 0; q < T; ++q) {
      for (std::size_t k = 0; k < T; ++k) {
        bool hidden = k > q || (k != q && !w.Valid(b, k / 3));
        mask[(b * T + q) * T + k] = hidden ? 1 : 0;
      }
    }
  }
  return mask;
}

Tensor ValidWeights(const WindowBatch& w, std::size_t length, std::size_t offset,
                    std::size_t& count) {
  // weights[b, i] = 1 / count where positions i + offset and i are valid.
  std::vector<double> weights(w.batch * length, 0.0);
  count = 0;
  for (std::size_t b = 0; b < w.batch; ++b) {
    for (std::size_t i = 0; i < length; ++i) {
      if (w.Valid(b, i) && w.Valid(b, i + offset)) {
        weights[b * length + i] = 1.0;
        ++count;
      }
    }
  }
  if (count > 0) {
    for (double& x : weights) x /= static_cast<double>(count);
  }
  return Tensor::FromVector({w.batch, length, 1}, std::move(weights));
}

}  // namespace

void DtConfig::Validate() const {
  if (state_dim == 0 || action_dim == 0) throw InvalidArgument("policy dimensions must be positive");
  if (context == 0) throw InvalidArgument("context length must be at least 1");
  if (heads == 0 || embed_dim % heads != 0) {
    throw InvalidArgument("embedding size " + std::to_string(embed_dim) +
                          " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("dropout must lie in [0, 1)");
  if (action_bound <= 0.0) throw InvalidArgument("action bound must be positive");
}

nlohmann::json DtConfig::ToJson() const {
  return {{"state_dim", state_dim}, {"action_dim", action_dim},   {"context", context},
          {"embed_dim", embed_dim}, {"layers", layers},           {"heads", heads},
          {"dropout", dropout},     {"max_timestep", max_timestep}, {"action_bound", action_bound},
          {"mlp_ratio", mlp_ratio}};
}

DtConfig DtConfig::FromJson(const nlohmann::json& j) {
  DtConfig c;
  c.state_dim = j.at("state_dim");
  c.action_dim = j.at("action_dim");
  c.context = j.at("context");
  c.embed_dim = j.at("embed_dim");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.dropout = j.at("dropout");
  c.max_timestep = j.at("max_timestep");
  c.action_bound = j.at("action_bound");
  c.mlp_ratio = j.at("mlp_ratio");
  c.Validate();
  return c;
}

DtPolicy::DtPolicy(const DtConfig& config, Rng& rng)
    : config_((config.Validate(), config)),
      embed_rtg_(1, config.embed_dim, rng),
      embed_state_(config.state_dim, config.embed_dim, rng),
      embed_action_(config.action_dim, config.embed_dim, rng),
      timestep_table_(NormalTable(config.max_timestep + 1, config.embed_dim, 0.02, rng)),
      embed_ln_(config.embed_dim),
      final_ln_(config.embed_dim),
      action_head_(config.embed_dim, config.action_dim, rng),
      state_head_(config.embed_dim, config.state_dim, rng) {
  std::size_t d = config.embed_dim;
  for (std::size_t l = 0; l < config.layers; ++l) {
    // A key bias only shifts every score of a query equally, so it is left out.
    blocks_.push_back(Block{AffineLayerNorm(d), Linear(d, d, rng), Linear(d, d, rng, false),
                            Linear(d, d, rng), Linear(d, d, rng), AffineLayerNorm(d),
                            Linear(d, config.mlp_ratio * d, rng),
                            Linear(config.mlp_ratio * d, d, rng)});
  }
}

Tensor DtPolicy::Attention(const Block& block, const Tensor& x, const Shape& mask_shape,
                           const std::vector<std::uint8_t>& mask, Rng* rng,
                           bool training) const {
  std::size_t B = x.dim(0), T = x.dim(1), D = config_.embed_dim;
  std::size_t h = config_.heads, dh = D / h;
  auto split = [&](const Tensor& t) { return Permute(Reshape(t, {B, T, h, dh}), {0, 2, 1, 3}); };
  Tensor q = split(block.query.Forward(x));
  Tensor k = Permute(Reshape(block.key.Forward(x), {B, T, h, dh}), {0, 2, 3, 1});
  Tensor v = split(block.value.Forward(x));
  Tensor scores = Scale(MatMul(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor att = Softmax(MaskedFill(scores, mask_shape, mask, kMaskFill));
  if (training && config_.dropout > 0.0) att = Dropout(att, config_.dropout, *rng, true);
  Tensor out = Reshape(Permute(MatMul(att, v), {0, 2, 1, 3}), {B, T, D});
  return block.proj.Forward(out);
}

DtOutput DtPolicy::Forward(const WindowBatch& window, Rng* rng, bool training,
                           const Tensor* actions) const {
  std::size_t B = window.batch, L = window.length, D = config_.embed_dim;
  if (L == 0 || L > config_.context) {
    throw InvalidArgument("window length " + std::to_string(L) + " outside [1, " +
                          std::to_string(config_.context) + "]");
  }
  if (window.state_dim != config_.state_dim || window.action_dim != config_.action_dim) {
    throw ShapeError("window dimensions do not match the policy");
  }
  if (training && config_.dropout > 0.0 && rng == nullptr) {
    throw InvalidArgument("training forward needs a dropout generator");
  }
  for (std::size_t t : window.timesteps) {
    if (t > config_.max_timestep) throw InvalidArgument("timestep beyond max_timestep");
  }
  const Tensor& acts = actions ? *actions : window.actions;
  Tensor te = EmbeddingLookup(timestep_table_, window.timesteps, {B, L});
  auto token = [&](const Linear& embed, const Tensor& x) {
    return Reshape(Add(embed.Forward(x), te), {B, L, 1, D});
  };
  Tensor x = Concat({token(embed_rtg_, window.rtg), token(embed_state_, window.states),
                     token(embed_action_, acts)},
                    2);
  std::size_t T = 3 * L;
  x = embed_ln_.Forward(Reshape(x, {B, T, D}));
  if (training && config_.dropout > 0.0) x = Dropout(x, config_.dropout, *rng, true);

  Shape mask_shape{B, 1, T, T};
  std::vector<std::uint8_t> mask = AttentionMask(window);
  for (const Block& block : blocks_) {
    Tensor a = Attention(block, block.ln1.Forward(x), mask_shape, mask, rng, training);
    if (training && config_.dropout > 0.0) a = Dropout(a, config_.dropout, *rng, true);
    x = Add(x, a);
    Tensor m = block.fc2.Forward(Relu(block.fc1.Forward(block.ln2.Forward(x))));
    if (training && config_.dropout > 0.0) m = Dropout(m, config_.dropout, *rng, true);
    x = Add(x, m);
  }
  x = Reshape(final_ln_.Forward(x), {B, L, 3, D});
  Tensor state_tokens = Reshape(Slice(x, 2, 1, 2), {B, L, D});
  Tensor action_tokens = Reshape(Slice(x, 2, 2, 3), {B, L, D});
  DtOutput out;
  out.actions = Scale(Tanh(action_head_.Forward(state_tokens)), config_.action_bound);
  out.next_states = state_head_.Forward(action_tokens);
  return out;
}

ParameterList DtPolicy::Parameters(const std::string& prefix) const {
  ParameterList out;
  embed_rtg_.AppendParameters(prefix + "embed_rtg.", out);
  embed_state_.AppendParameters(prefix + "embed_state.", out);
  embed_action_.AppendParameters(prefix + "embed_action.", out);
  out.push_back({prefix + "timestep_table", timestep_table_});
  embed_ln_.AppendParameters(prefix + "embed_ln.", out);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    std::string p = prefix + "block" + std::to_string(l) + ".";
    const Block& b = blocks_[l];
    b.ln1.AppendParameters(p + "ln1.", out);
    b.query.AppendParameters(p + "query.", out);
    b.key.AppendParameters(p + "key.", out);
    b.value.AppendParameters(p + "value.", out);
    b.proj.AppendParameters(p + "proj.", out);
    b.ln2.AppendParameters(p + "ln2.", out);
    b.fc1.AppendParameters(p + "fc1.", out);
    b.fc2.AppendParameters(p + "fc2.", out);
  }
  final_ln_.AppendParameters(prefix + "final_ln.", out);
  action_head_.AppendParameters(prefix + "action_head.", out);
  state_head_.AppendParameters(prefix + "state_head.", out);
  return out;
}

DtPolicy DtPolicy::Clone() const {
  Rng scratch(0);
  DtPolicy copy(config_, scratch);
  ParameterList target = copy.Parameters();
  CopyParameters(Parameters(), target);
  return copy;
}

Tensor DtLoss(const DtOutput& output, const WindowBatch& window) {
  std::size_t L = window.length;
  std::size_t count = 0;
  Tensor weights = ValidWeights(window, L, 0, count);
  Tensor loss = Sum(Mul(Square(Sub(output.actions, window.actions)), weights));
  if (L > 1) {
    Tensor next_weights = ValidWeights(window, L - 1, 1, count);
    if (count > 0) {
      Tensor predicted = Slice(output.next_states, 1, 0, L - 1);
      Tensor target = Slice(window.states, 1, 1, L);
      loss = Add(loss, Sum(Mul(Square(Sub(predicted, target)), next_weights)));
    }
  }
  return loss;
}

Tensor DtLoss(const DtPolicy& policy, const WindowBatch& window, Rng* rng, bool training) {
  return DtLoss(policy.Forward(window, rng, training), window);
}

Tensor RolloutWindowActions(const DtPolicy& policy, const WindowBatch& window, Rng* rng,
                            bool training) {
  std::size_t B = window.batch, ad = window.action_dim;
  Tensor blank = Tensor::Zeros({B, 1, ad});
  Tensor generated;
  for (std::size_t i = 0; i < window.length; ++i) {
    WindowBatch prefix = window.Prefix(i + 1);
    Tensor fed = i == 0 ? blank : Concat({generated, blank}, 1);
    DtOutput out = policy.Forward(prefix, rng, training, &fed);
    Tensor step = Slice(out.actions, 1, i, i + 1);
    generated = i == 0 ? step : Concat({generated, step}, 1);
  }
  return generated;
}

void SavePolicy(const DtPolicy& policy, const std::filesystem::path& path,
                const nlohmann::json& extra) {
  SaveCheckpoint(path, policy.Parameters());
  nlohmann::json side = extra;
  side["policy_config"] = policy.config().ToJson();
  std::ofstream out(path.string() + ".json", std::ios::trunc);
  if (!out) throw ArtifactError("cannot write policy sidecar for " + path.string());
  out << side.dump(2) << '\n';
}

std::pair<DtPolicy, nlohmann::json> LoadPolicy(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) throw ArtifactError("missing policy sidecar for " + path.string());
  nlohmann::json side;
  DtConfig config;
  try {
    side = nlohmann::json::parse(in);
    config = DtConfig::FromJson(side.at("policy_config"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("policy sidecar " + path.string() + ".json: " + e.what(), 0);
  }
  Rng scratch(0);
  DtPolicy policy(config, scratch);
  ParameterList params = policy.Parameters();
  LoadCheckpoint(path, params);
  return {std::move(policy), std::move(side)};
}

}  // namespace dtr
