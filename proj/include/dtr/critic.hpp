#pragma once

// Twin Q-networks with exponentially averaged targets, n-step targets over
// policy windows, and a greedy one-step TD mode for tabular checks.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dtr/env.hpp"
#include "dtr/nn.hpp"
#include "dtr/oracle.hpp"
#include "dtr/policy.hpp"

namespace dtr {

enum class BootstrapPolicy { kTarget, kOnline };

struct CriticConfig {
  std::size_t hidden_dim = 256;
  std::size_t hidden_layers = 3;
  double gamma = 0.99;
  double tau = 5e-3;
  BootstrapPolicy bootstrap_policy = BootstrapPolicy::kTarget;

  void Validate() const;
};

class TwinCritic {
 public:
  TwinCritic(std::size_t state_dim, std::size_t action_dim, const CriticConfig& config, Rng& rng);
  TwinCritic(const TwinCritic&) = delete;
  TwinCritic& operator=(const TwinCritic&) = delete;
  TwinCritic(TwinCritic&&) = default;
  TwinCritic& operator=(TwinCritic&&) = default;

  // states [..., state_dim] and actions [..., action_dim] give [..., 1].
  // twin is 0 or 1.
  Tensor Q(std::size_t twin, const Tensor& states, const Tensor& actions) const;
  Tensor TargetQ(std::size_t twin, const Tensor& states, const Tensor& actions) const;
  // Elementwise minimum of the two target twins, outside any tape.
  Tensor MinTargetQ(const Tensor& states, const Tensor& actions) const;

  // target <- tau * online + (1 - tau) * target for both twins.
  void EmaUpdate(double tau);
  void EmaUpdate() { EmaUpdate(config_.tau); }
  // Copies the online twins into the targets.
  void SyncTargets();

  ParameterList Parameters() const;        // online twins
  ParameterList TargetParameters() const;  // target twins
  ParameterList AllParameters() const;     // online then target
  const CriticConfig& config() const { return config_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }

 private:
  Tensor Evaluate(const Mlp& net, const Tensor& states, const Tensor& actions) const;

  CriticConfig config_;
  std::size_t state_dim_;
  std::size_t action_dim_;
  std::vector<Mlp> online_;
  std::vector<Mlp> target_;
};

// sum_{j} gamma^j r_j + gamma^{n} bootstrap for rewards r_0..r_{n-1}; the
// bootstrap term is dropped when `use_bootstrap` is false.
double NStepTarget(const std::vector<double>& rewards, double bootstrap, double gamma,
                   bool use_bootstrap);

// Targets for every window position: rewards run from the position to the
// window end, then bootstrap[b] one step past it. 0 on padding. B * L.
std::vector<double> WindowTargets(const CriticBatch& batch, const std::vector<double>& bootstrap,
                                  double gamma);

// Bootstrap values: min target Q at the state after each window, with the
// action the policy predicts there. Computed without recording.
std::vector<double> BootstrapValues(const TwinCritic& critic, const DtPolicy& policy,
                                    const CriticBatch& batch);

// Mean over valid positions of (Q_k - target)^2, summed over both twins.
Tensor QLoss(const TwinCritic& critic, const WindowBatch& window,
             const std::vector<double>& targets);

// Mean absolute online Q1 over valid positions with dataset actions.
double MeanAbsQ(const TwinCritic& critic, const WindowBatch& window);

// Greedy one-step TD: Q(s, a) <- r + gamma * max_{a'} min Q'(s', a') where a'
// ranges over actions the dataset takes at s'. Requires tabular ids.
struct TdConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};
void TrainGreedyTd(TwinCritic& critic, const OfflineDataset& dataset,
                   const StateNormalizer& normalizer, const ContinuousWrapper& wrapper,
                   const TdConfig& config);

// Regresses both twins on fixed (state, action) -> target pairs, then syncs
// the targets. Returns the final mean squared error.
struct SupervisedConfig {
  std::size_t steps = 2000;
  double learning_rate = 1e-3;
};
double PretrainCritic(TwinCritic& critic, const Tensor& states, const Tensor& actions,
                      const std::vector<double>& targets, const SupervisedConfig& config);

// Largest |Q_k(s, a) - Q_DP(s, a)| over both online twins and every dataset
// step, where Q_DP is the dataset-constrained DP solution for `rewards`.
double FittedQGap(const TwinCritic& critic, const TabularMdp& mdp, const RewardTable& rewards,
                  const OfflineDataset& dataset, const StateNormalizer& normalizer);

// Normalized dataset states and actions, one row per step, and the matching
// constrained DP values.
struct DatasetPairs {
  Tensor states;
  Tensor actions;
  std::vector<int> state_ids;
  std::vector<int> action_ids;
};
DatasetPairs CollectDatasetPairs(const OfflineDataset& dataset, const StateNormalizer& normalizer);

void SaveCritic(const TwinCritic& critic, const std::filesystem::path& path);
void LoadCritic(TwinCritic& critic, const std::filesystem::path& path);

}  // namespace dtr
