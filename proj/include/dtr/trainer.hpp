#pragma once

// Interleaved critic and policy updates with the dynamic Q coefficient.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtr/critic.hpp"
#include "dtr/inference.hpp"
#include "dtr/policy.hpp"

namespace dtr {

enum class Objective { kDtr, kPbDt };
enum class EtaMode { kDynamic, kConstant };

struct TrainConfig {
  Objective objective = Objective::kDtr;
  std::size_t batch_size = 256;
  std::size_t steps_per_iteration = 1000;
  std::size_t iterations = 50;
  double eta_max = 1.0;
  EtaMode eta_mode = EtaMode::kDynamic;
  double policy_lr = 3e-4;
  double critic_lr = 3e-4;
  double weight_decay = 1e-4;
  std::size_t warmup_steps = 10000;
  std::size_t eval_episodes = 10;
  bool normalize_states = true;
  // Return-to-go tokens are divided by this; 0 means the dataset's return_max.
  double rtg_scale = 0.0;
  PolicyQ policy_q = PolicyQ::kQ1;
  std::uint64_t seed = 0;
  DtConfig policy;        // state/action dims and max_timestep are filled from the data
  CriticConfig critic;

  std::size_t max_step() const { return steps_per_iteration * iterations; }
  void Validate() const;
};

// eta = step * eta_max / max_step (dynamic) or eta_max (constant).
double Eta(std::size_t step, double eta_max, std::size_t max_step, EtaMode mode = EtaMode::kDynamic);

inline constexpr double kLambdaEpsilon = 1e-8;
// lambda = eta / max(mean |Q|, epsilon).
double LambdaCoefficient(double eta, double mean_abs_q);

// L_DT - lambda * mean over valid positions of Q(s_i, a_hat_i), a_hat from the
// autoregressive rollout. With lambda == 0 the rollout is skipped and the
// result is L_DT itself.
struct PolicyLossParts {
  Tensor total;
  double l_dt = 0.0;
  double q_term = 0.0;
};
PolicyLossParts PolicyLoss(const DtPolicy& policy, const TwinCritic& critic,
                           const WindowBatch& window, double lambda, Rng* rng, bool training,
                           PolicyQ policy_q = PolicyQ::kQ1);

struct MetricsRow {
  std::size_t iteration = 0;
  std::size_t step = 0;
  double l_dt = 0.0;
  double q_loss = 0.0;
  double policy_loss = 0.0;
  double eta = 0.0;
  double lambda = 0.0;
  double mean_abs_q = 0.0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
  double wall_seconds = 0.0;
};

inline const char* kMetricsHeader =
    "iteration,step,l_dt,q_loss,policy_loss,eta,lambda,mean_abs_q,eval_return_mean,"
    "eval_return_std,wall_seconds";
std::string FormatMetricsRow(const MetricsRow& row);
// Appends rows, writing the header first when the file is new or empty.
void AppendMetrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

// Optional per-iteration evaluation environment.
struct EvalEnv {
  const TabularMdp* mdp = nullptr;
  const ContinuousWrapper* wrapper = nullptr;
  EvalOptions options;  // return_max / rtg_scale are filled in by the trainer
  std::uint64_t seed = 0;
};

struct TrainResult {
  DtPolicy policy;
  DtPolicy target_policy;
  TwinCritic critic;
  StateNormalizer normalizer;
  double rtg_scale = 1.0;
  double return_max = 0.0;
  std::vector<MetricsRow> metrics;
};

using MetricsCallback = std::function<void(const MetricsRow&)>;

// Runs the full schedule on a relabeled dataset. A NaN or infinity aborts
// with NumericalError; when `diagnostic_dir` is set, the current networks are
// written there first. `on_row` sees each metrics row as it is produced.
TrainResult Train(const TrainConfig& config, const OfflineDataset& dataset,
                  const EvalEnv* eval = nullptr,
                  const std::optional<std::filesystem::path>& diagnostic_dir = std::nullopt,
                  const MetricsCallback& on_row = nullptr);

}  // namespace dtr
