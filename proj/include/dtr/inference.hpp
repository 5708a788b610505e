#pragma once

// Inference with K return-to-go targets: every track proposes an action, the
// critic picks one, and all tracks see the executed action.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dtr/critic.hpp"
#include "dtr/env.hpp"
#include "dtr/policy.hpp"
#include "dtr/reward.hpp"

namespace dtr {

inline const std::vector<double> kRtgMultipliers = {0.5, 0.75, 1.0, 1.5, 2.0};

// Multipliers times return_max. Throws InvalidArgument unless return_max > 0.
std::vector<double> InitialRtgTargets(double return_max,
                                      const std::vector<double>& multipliers = kRtgMultipliers);

// Index of the largest value; the lowest index wins ties.
std::size_t ArgmaxLowest(const std::vector<double>& values);

enum class RtgUpdate { kFixedDecrement, kLearnedReward };

class InferenceState {
 public:
  InferenceState(std::vector<double> targets, std::size_t context, std::size_t max_timestep,
                 double rtg_scale, std::size_t state_dim, std::size_t action_dim);

  // Appends the current (normalized) state; the action slot stays empty
  // until Act().
  void Observe(std::vector<double> state);
  // K rows, one per track, ending at the current state.
  WindowBatch Window() const;
  // Appends the executed action to every track.
  void Act(std::vector<double> action);
  // R_{t+1} = R_t - R_0 / max_timestep on every track.
  void StepFixed();
  // R_{t+1} = R_t - reward on every track.
  void StepReward(double reward);

  std::size_t tracks() const { return initial_.size(); }
  std::size_t timestep() const { return timestep_; }
  const std::vector<double>& initial() const { return initial_; }
  const std::vector<double>& current() const { return current_; }
  // Overrides one track's current target (used by independence tests).
  void set_current(std::size_t track, double value) { current_.at(track) = value; }

 private:
  std::vector<double> initial_;
  std::vector<double> current_;
  std::size_t context_;
  std::size_t max_timestep_;
  double rtg_scale_;
  std::size_t state_dim_;
  std::size_t action_dim_;
  std::size_t timestep_ = 0;
  // Per step: states, actions and each track's target at that step.
  std::vector<std::vector<double>> states_;
  std::vector<std::vector<double>> actions_;
  std::vector<std::vector<double>> rtg_;  // [step][track]
};

enum class PolicyQ { kQ1, kMin };

struct Selection {
  std::size_t track = 0;
  std::vector<double> action;
  std::vector<std::vector<double>> candidates;  // one per track
  std::vector<double> q;                        // critic score per candidate
};

// One batched forward over the K tracks, then argmax over the critic score of
// each candidate at the current state.
Selection SelectAction(const DtPolicy& policy, const TwinCritic& critic,
                       const InferenceState& state, PolicyQ policy_q = PolicyQ::kQ1);

struct EvalOptions {
  std::vector<double> multipliers = kRtgMultipliers;
  double return_max = 1.0;
  double rtg_scale = 1.0;
  // Timesteps used by fixed return-to-go decrements and the policy's timestep embedding.
  std::size_t max_timestep = 0;  // 0: mdp.horizon
  RtgUpdate update = RtgUpdate::kFixedDecrement;
  const RewardEnsemble* reward = nullptr;  // for kLearnedReward
  PolicyQ policy_q = PolicyQ::kQ1;
  std::optional<int> start;  // otherwise uniform over initial states
};

struct EvalReport {
  std::vector<double> returns;
  double mean = 0.0;
  double std = 0.0;
  std::vector<std::vector<int>> paths;  // visited states per episode

  nlohmann::json ToJson() const;
};

// Greedy inference for `episodes` episodes, scored with the MDP's rewards.
// Episode e uses its own generator derived from `seed`.
EvalReport Evaluate(const DtPolicy& policy, const TwinCritic& critic, const TabularMdp& mdp,
                    const ContinuousWrapper& wrapper, const StateNormalizer& normalizer,
                    const EvalOptions& options, std::size_t episodes, std::uint64_t seed);

}  // namespace dtr
