#pragma once

// Decision Transformer over interleaved (return-to-go, state, action) tokens
// with an action head and an auxiliary next-state head.

#include <filesystem>
#include <string>
#include <vector>

#include "dtr/nn.hpp"
#include "dtr/window.hpp"
#include "json.hpp"

namespace dtr {

struct DtConfig {
  std::size_t state_dim = 1;
  std::size_t action_dim = 1;
  std::size_t context = 20;
  std::size_t embed_dim = 256;
  std::size_t layers = 4;
  std::size_t heads = 4;
  double dropout = 0.1;
  std::size_t max_timestep = 1000;
  double action_bound = 1.0;
  std::size_t mlp_ratio = 4;

  // Throws InvalidArgument on an inconsistent configuration.
  void Validate() const;
  nlohmann::json ToJson() const;
  static DtConfig FromJson(const nlohmann::json& j);
};

struct DtOutput {
  Tensor actions;      // [B, L, action_dim], read at the state tokens
  Tensor next_states;  // [B, L, state_dim], read at the action tokens: predicts s_{i+1}
};

class DtPolicy {
 public:
  DtPolicy(const DtConfig& config, Rng& rng);
  // Copies would share parameter storage; use Clone().
  DtPolicy(const DtPolicy&) = delete;
  DtPolicy& operator=(const DtPolicy&) = delete;
  DtPolicy(DtPolicy&&) = default;
  DtPolicy& operator=(DtPolicy&&) = default;

  // `actions` replaces window.actions when given (autoregressive feedback).
  // `rng` drives dropout and may be null when training is false.
  DtOutput Forward(const WindowBatch& window, Rng* rng, bool training,
                   const Tensor* actions = nullptr) const;

  ParameterList Parameters(const std::string& prefix = "") const;
  const DtConfig& config() const { return config_; }
  // Independent copy with the same parameter values.
  DtPolicy Clone() const;

 private:
  struct Block {
    AffineLayerNorm ln1;
    Linear query;
    Linear key;
    Linear value;
    Linear proj;
    AffineLayerNorm ln2;
    Linear fc1;
    Linear fc2;
  };

  Tensor Attention(const Block& block, const Tensor& x, const Shape& mask_shape,
                   const std::vector<std::uint8_t>& mask, Rng* rng, bool training) const;

  DtConfig config_;
  Linear embed_rtg_;
  Linear embed_state_;
  Linear embed_action_;
  Tensor timestep_table_;
  AffineLayerNorm embed_ln_;
  std::vector<Block> blocks_;
  AffineLayerNorm final_ln_;
  Linear action_head_;
  Linear state_head_;
};

// Mean over valid positions of ||a_hat - a||^2 plus mean over positions whose
// predecessor is valid of ||s_hat - s||^2.
Tensor DtLoss(const DtOutput& output, const WindowBatch& window);
Tensor DtLoss(const DtPolicy& policy, const WindowBatch& window, Rng* rng, bool training);

// Generates a_hat_1..a_hat_L position by position, feeding each prediction
// back as the action token of its position. [B, L, action_dim].
Tensor RolloutWindowActions(const DtPolicy& policy, const WindowBatch& window, Rng* rng,
                            bool training);

// Checkpoint plus "<path>.json" holding the config and `extra`.
void SavePolicy(const DtPolicy& policy, const std::filesystem::path& path,
                const nlohmann::json& extra);
// Restores the config from the sidecar; returns the policy and the sidecar.
std::pair<DtPolicy, nlohmann::json> LoadPolicy(const std::filesystem::path& path);

}  // namespace dtr
