#pragma once

// Preference-based reward learning: an ensemble of MLP reward models trained
// with the Bradley-Terry cross-entropy, and min-max ensemble normalization
// for relabeling offline data.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dtr/dataset.hpp"
#include "dtr/errors.hpp"
#include "dtr/nn.hpp"

namespace dtr {

// A member whose outputs are constant over the dataset being relabeled.
class DegenerateMemberError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

enum class RewardNormalization { kMinMax, kZScore };

struct RewardConfig {
  std::size_t ensemble_size = 3;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::size_t hidden_dim = 256;
  std::size_t hidden_layers = 3;
  double learning_rate = 3e-4;
  double weight_decay = 0.0;
  // A member stops after the first epoch whose training accuracy exceeds this.
  double early_stop_accuracy = 0.968;
  RewardNormalization normalization = RewardNormalization::kMinMax;
  // Map degenerate members to 0 instead of failing.
  bool permissive = false;
};

// r(s, a) = tanh(MLP([normalized s, a])).
class RewardNet {
 public:
  RewardNet(std::size_t state_dim, std::size_t action_dim, const RewardConfig& config, Rng& rng);

  // inputs: [N, state_dim + action_dim] of already-normalized states.
  Tensor Forward(const Tensor& inputs) const;
  ParameterList Parameters(const std::string& prefix = "") const { return mlp_.Parameters(prefix); }

  std::size_t input_dim() const { return mlp_.config().input_dim; }

 private:
  Mlp mlp_;
};

// Packs both segments of each pair into one padded batch.
struct PreferenceBatch {
  Tensor inputs;              // [2 * B * L, in]
  Tensor mask;                // [2 * B, L], 1 on real steps
  Tensor labels;              // [B, 2] columns (1 - y, y)
  std::vector<double> y;
  std::size_t pairs = 0;
  std::size_t max_length = 0;
};

PreferenceBatch MakePreferenceBatch(const OfflineDataset& dataset,
                                    const StateNormalizer& normalizer,
                                    const std::vector<PreferencePair>& pairs);

// Per-pair predicted reward sums as [B, 2] (column 0: seg0, column 1: seg1).
Tensor SegmentReturns(const RewardNet& net, const PreferenceBatch& batch);

// log P[seg1 > seg0] and log P[seg0 > seg1] via log-softmax over the two sums.
// Returns [B, 2] log-probabilities in (seg0 preferred, seg1 preferred) order.
Tensor PreferenceLogProbs(const RewardNet& net, const PreferenceBatch& batch);

// P[seg1 > seg0] for one pair, computed in log space.
double PreferenceProbability(const RewardNet& net, const OfflineDataset& dataset,
                             const StateNormalizer& normalizer, const PreferencePair& pair);

// Mean over the batch of -[(1 - y) log P0 + y log P1].
Tensor CrossEntropyLoss(const RewardNet& net, const PreferenceBatch& batch);

// Fraction of pairs with y != 0.5 whose predicted side (P1 > 0.5 vs < 0.5)
// matches the label side. nullopt when every label is 0.5.
std::optional<double> PreferenceAccuracy(const RewardNet& net, const OfflineDataset& dataset,
                                         const StateNormalizer& normalizer,
                                         const PreferenceSet& prefs);

struct MemberTrace {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
  bool reached_threshold = false;
  std::size_t epochs_run = 0;
};

// Per-member statistics of raw outputs over the dataset last relabeled.
struct MemberStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;
};

// Mean over members of Norm_i(raw_i). raw[i][k] is member i's raw output on
// step k. Min-max maps each member to [0, 1] using its own min and max over
// the steps; z-score uses its own mean and std. Throws DegenerateMemberError
// when a member is constant (unless permissive, which maps it to 0).
std::vector<double> NormalizeAndAverage(const std::vector<std::vector<double>>& raw,
                                        RewardNormalization mode, bool permissive,
                                        std::vector<MemberStats>* stats = nullptr);

class RewardEnsemble {
 public:
  RewardEnsemble(std::size_t state_dim, std::size_t action_dim, const RewardConfig& config,
                 std::uint64_t seed);

  // Trains every member on `prefs` with its own initialization and batch
  // order. Fits the state normalizer on `dataset` first.
  void Train(const OfflineDataset& dataset, const PreferenceSet& prefs);

  // Raw member outputs on every step of `dataset` in trajectory order.
  std::vector<std::vector<double>> RawOutputs(const OfflineDataset& dataset) const;

  // Normalizes against `dataset`, stores the statistics and returns a copy
  // with relabeled rewards and recomputed returns-to-go.
  OfflineDataset Relabel(const OfflineDataset& dataset);

  // Ensemble reward of one raw (unnormalized) state and action, normalized
  // with the statistics of the last relabeled dataset.
  double NormalizedReward(const std::vector<double>& state,
                          const std::vector<double>& action) const;

  std::size_t size() const { return members_.size(); }
  const RewardNet& member(std::size_t i) const { return members_.at(i); }
  const RewardConfig& config() const { return config_; }
  const std::vector<MemberTrace>& traces() const { return traces_; }
  const std::vector<MemberStats>& stats() const { return stats_; }
  const StateNormalizer& normalizer() const { return normalizer_; }
  void set_normalizer(StateNormalizer n) { normalizer_ = std::move(n); }

  ParameterList Parameters() const;

  // Checkpoint plus "<path>.json" sidecar (normalizer, statistics, traces).
  void Save(const std::filesystem::path& path, const std::string& config_hash) const;
  // Returns the config hash recorded in the sidecar.
  std::string Load(const std::filesystem::path& path);

 private:
  RewardConfig config_;
  std::uint64_t seed_;
  std::vector<RewardNet> members_;
  std::vector<MemberTrace> traces_;
  std::vector<MemberStats> stats_;
  StateNormalizer normalizer_;
};

}  // namespace dtr
