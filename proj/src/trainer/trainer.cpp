#include "dtr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

#include "dtr/errors.hpp"
#include "dtr/optim.hpp"

namespace dtr {

void TrainConfig::Validate() const {
  if (!(eta_max >= 0.0)) throw InvalidArgument("eta_max must be non-negative");
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (steps_per_iteration == 0 || iterations == 0) {
    throw InvalidArgument("training needs at least one step and one iteration");
  }
  if (policy_lr <= 0.0 || critic_lr <= 0.0) throw InvalidArgument("learning rates must be positive");
  if (rtg_scale < 0.0) throw InvalidArgument("rtg_scale must be non-negative");
  critic.Validate();
}

double Eta(std::size_t step, double eta_max, std::size_t max_step, EtaMode mode) {
  if (max_step == 0) throw InvalidArgument("max_step must be positive");
  if (mode == EtaMode::kConstant) return eta_max;
  return static_cast<double>(step) * eta_max / static_cast<double>(max_step);
}

double LambdaCoefficient(double eta, double mean_abs_q) {
  if (mean_abs_q < 0.0) throw InvalidArgument("mean |Q| cannot be negative");
  return eta / std::max(mean_abs_q, kLambdaEpsilon);
}

PolicyLossParts PolicyLoss(const DtPolicy& policy, const TwinCritic& critic,
                           const WindowBatch& window, double lambda, Rng* rng, bool training,
                           PolicyQ policy_q) {
  PolicyLossParts parts;
  Tensor l_dt = DtLoss(policy, window, rng, training);
  parts.l_dt = l_dt.item();
  if (lambda == 0.0) {
    parts.total = l_dt;
    return parts;
  }
  Tensor generated = RolloutWindowActions(policy, window, rng, training);
  Tensor q = critic.Q(0, window.states, generated);
  if (policy_q == PolicyQ::kMin) q = Minimum(q, critic.Q(1, window.states, generated));
  std::vector<double> mask(window.valid.begin(), window.valid.end());
  double count = static_cast<double>(window.ValidCount());
  Tensor q_mean = Scale(
      Sum(Mul(q, Tensor::FromVector({window.batch, window.length, 1}, std::move(mask)))),
      1.0 / count);
  parts.q_term = q_mean.item();
  parts.total = Sub(l_dt, Scale(q_mean, lambda));
  return parts;
}

std::string FormatMetricsRow(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f",
                r.iteration, r.step, r.l_dt, r.q_loss, r.policy_loss, r.eta, r.lambda,
                r.mean_abs_q, r.eval_return_mean, r.eval_return_std, r.wall_seconds);
  return buf;
}

void AppendMetrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw ArtifactError("cannot append metrics to " + path.string());
  if (fresh) out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << FormatMetricsRow(r) << '\n';
}

namespace {

StateNormalizer IdentityNormalizer(std::size_t dim) {
  return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

}  // namespace

TrainResult Train(const TrainConfig& config, const OfflineDataset& dataset, const EvalEnv* eval,
                  const std::optional<std::filesystem::path>& diagnostic_dir,
                  const MetricsCallback& on_row) {
  config.Validate();
  if (dataset.size() == 0) throw InvalidArgument("cannot train on an empty dataset");
  std::size_t sd = dataset.at(0).states[0].size();
  std::size_t ad = dataset.at(0).actions[0].size();
  StateNormalizer normalizer =
      config.normalize_states ? FitStateNormalizer(dataset) : IdentityNormalizer(sd);
  double return_max = dataset.return_max();
  double rtg_scale = config.rtg_scale > 0.0 ? config.rtg_scale
                                            : (return_max > 0.0 ? return_max : 1.0);

  DtConfig pc = config.policy;
  pc.state_dim = sd;
  pc.action_dim = ad;
  std::size_t longest = 0;
  for (const auto& t : dataset.trajectories()) longest = std::max(longest, t.size());
  pc.max_timestep = std::max(pc.max_timestep, longest);
  if (eval && eval->mdp) {
    pc.max_timestep = std::max(pc.max_timestep, static_cast<std::size_t>(eval->mdp->horizon));
  }
  WindowSpec spec{pc.context, rtg_scale, pc.max_timestep};

  Rng policy_init(DeriveSeed(config.seed, 0));
  Rng critic_init(DeriveSeed(config.seed, 1));
  Rng sampler(DeriveSeed(config.seed, 2));
  Rng dropout(DeriveSeed(config.seed, 3));
  DtPolicy policy(pc, policy_init);
  DtPolicy target_policy = policy.Clone();
  TwinCritic critic(sd, ad, config.critic, critic_init);

  AdamOptions popts;
  popts.learning_rate = config.policy_lr;
  popts.weight_decay = config.weight_decay;
  popts.schedule = config.warmup_steps > 0
                       ? LrSchedule{LrSchedule::Kind::kLinearWarmup, config.warmup_steps}
                       : LrSchedule::Constant();
  Adam policy_opt(policy.Parameters(), popts);
  AdamOptions copts;
  copts.learning_rate = config.critic_lr;
  copts.schedule = LrSchedule::Constant();
  Adam critic_opt(critic.Parameters(), copts);

  bool dtr = config.objective == Objective::kDtr;
  std::size_t max_step = config.max_step();
  auto start = std::chrono::steady_clock::now();
  std::vector<MetricsRow> metrics;
  MetricsRow acc;
  std::size_t in_iteration = 0;

  for (std::size_t step = 0; step < max_step; ++step) {
    try {
      std::vector<WindowRef> refs = SampleWindowRefs(dataset, config.batch_size, sampler);
      double eta = Eta(step, config.eta_max, max_step, config.eta_mode);
      double lambda = 0.0;
      WindowBatch window;
      if (dtr) {
        CriticBatch cb = MakeCriticBatch(dataset, normalizer, refs, spec);
        const DtPolicy& boot_policy =
            config.critic.bootstrap_policy == BootstrapPolicy::kTarget ? target_policy : policy;
        std::vector<double> targets =
            WindowTargets(cb, BootstrapValues(critic, boot_policy, cb), config.critic.gamma);
        {
          Tape tape;
          TapeScope scope(tape);
          Tensor q_loss = QLoss(critic, cb.window, targets);
          acc.q_loss += q_loss.item();
          critic_opt.Step(tape.Backward(q_loss));
        }
        double mean_abs_q = MeanAbsQ(critic, cb.window);
        acc.mean_abs_q += mean_abs_q;
        lambda = LambdaCoefficient(eta, mean_abs_q);
        window = std::move(cb.window);
      } else {
        window = MakeWindows(dataset, normalizer, refs, spec);
      }
      {
        Tape tape;
        TapeScope scope(tape);
        PolicyLossParts parts =
            PolicyLoss(policy, critic, window, lambda, &dropout, true, config.policy_q);
        acc.l_dt += parts.l_dt;
        acc.policy_loss += parts.total.item();
        policy_opt.Step(tape.Backward(parts.total));
      }
      if (dtr) {
        critic.EmaUpdate();
        ParameterList target = target_policy.Parameters();
        BlendParameters(policy.Parameters(), target, config.critic.tau);
      }
      acc.eta = eta;
      acc.lambda = lambda;
    } catch (const NumericalError& e) {
      if (diagnostic_dir) {
        std::filesystem::create_directories(*diagnostic_dir);
        SavePolicy(policy, *diagnostic_dir / "diagnostic_policy.ckpt",
                   {{"step", step}, {"error", e.what()}});
        SaveCritic(critic, *diagnostic_dir / "diagnostic_critic.ckpt");
      }
      throw NumericalError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    ++in_iteration;
    if ((step + 1) % config.steps_per_iteration == 0) {
      double n = static_cast<double>(in_iteration);
      MetricsRow row = acc;
      row.iteration = (step + 1) / config.steps_per_iteration;
      row.step = step + 1;
      row.l_dt /= n;
      row.q_loss /= n;
      row.policy_loss /= n;
      row.mean_abs_q /= n;
      if (eval && eval->mdp && config.eval_episodes > 0) {
        EvalOptions options = eval->options;
        options.return_max = return_max > 0.0 ? return_max : rtg_scale;
        options.rtg_scale = rtg_scale;
        EvalReport report = Evaluate(policy, critic, *eval->mdp, *eval->wrapper, normalizer,
                                     options, config.eval_episodes, eval->seed);
        row.eval_return_mean = report.mean;
        row.eval_return_std = report.std;
      }
      row.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      metrics.push_back(row);
      if (on_row) on_row(row);
      acc = MetricsRow{};
      in_iteration = 0;
    }
  }
  return TrainResult{std::move(policy), std::move(target_policy), std::move(critic),
                     std::move(normalizer), rtg_scale, return_max, std::move(metrics)};
}

}  // namespace dtr
