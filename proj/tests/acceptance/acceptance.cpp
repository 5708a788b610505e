// Acceptance suite. Usage: dtr_acceptance [criterion...] (1-10, default all).
// Prints one PASS/FAIL line per criterion; exits nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dtr/errors.hpp"
#include "dtr/inference.hpp"
#include "dtr/oracle.hpp"
#include "dtr/pipeline.hpp"
#include "dtr/stats.hpp"
#include "dtr/trainer.hpp"
#include "json.hpp"
#include "support/gradcheck.hpp"

using namespace dtr;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kC1BudgetSeconds = 300.0;
constexpr double kGradTolerance = 1e-4;
constexpr int kGradDraws = 20;
constexpr double kC2BudgetSeconds = 120.0;
constexpr double kAccuracyThreshold = 0.968;
constexpr std::size_t kMaxRewardEpochs = 100;
constexpr double kMinSpearman = 0.9;
constexpr double kC3BudgetSeconds = 600.0;
constexpr double kAffineTolerance = 1e-12;
constexpr double kRtgZeroTolerance = 1e-9;
constexpr int kMonotoneMaps = 100;
constexpr double kCriticGap = 0.05;
constexpr int kC8Seeds = 3;
constexpr double kC8BudgetSeconds = 1800.0;
constexpr double kScalingBand = 0.02;
constexpr double kCoverage = 0.9;
constexpr int kCoverageSeeds = 20;
constexpr double kC10BudgetSeconds = 120.0;

struct Outcome {
  bool pass = true;
  std::string detail;

  void Require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "failed: " + what;
    }
  }
  void Note(const std::string& text) {
    if (!detail.empty()) detail += "; ";
    detail += text;
  }
};

std::string Fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double Seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path WorkDir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("dtr_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json ReadJson(const fs::path& path) {
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

TabularMdp SmallGridMdp() {
  GridworldSpec spec;
  spec.width = 4;
  spec.height = 4;
  spec.goal = 15;
  spec.traps = {5};
  spec.horizon = 16;
  return BuildGridworld(spec);
}

OfflineDataset UniformData(const TabularMdp& mdp, int episodes, std::uint64_t seed,
                           double noise = 0.01) {
  ContinuousWrapper wrapper(mdp, noise);
  return OfflineDataset(Rollout(mdp, BehaviorPolicy::Uniform(), seed, episodes, wrapper),
                        {mdp.name, seed, "gt", ""});
}

// ---------------------------------------------------------------------------

Outcome FigureOneStitching() {
  Outcome o;
  auto t0 = std::chrono::steady_clock::now();
  using namespace figure1;
  TabularMdp biased = WithBiasedReward(BuildFigure1Mdp());

  DpSolution dp = ValueIteration(biased, 1.0);
  std::vector<int> tdl = FollowPolicy(biased, dp.greedy, kS1);
  o.Require(tdl == std::vector<int>{kS1, kS4, kS5}, "DP-greedy path is (s1,s4,s5)");

  OfflineDataset data = MakeFigure1Dataset(biased, 0);
  InDatasetBest csm = BestInDatasetReturn(data, kS1);
  o.Require(csm.id == "red", "in-dataset oracle picks red (s1,s3,s5), got " + csm.id);

  RunContext ctx;
  ctx.config.MergePreset("figure1");
  ctx.out = WorkDir("c1");
  RunPipeline(ctx);
  nlohmann::json eval = ReadJson(ctx.out / "eval.json");
  auto paths = eval.at("paths").get<std::vector<std::vector<int>>>();
  bool all_red = !paths.empty();
  for (const auto& p : paths) all_red = all_red && p == std::vector<int>{kS1, kS3, kS5};
  o.Require(all_red, "every DTR evaluation episode follows (s1,s3,s5)");
  double secs = Seconds(t0);
  o.Require(secs < kC1BudgetSeconds, "runtime < " + Fmt(kC1BudgetSeconds) + " s");
  o.Note("TDL " + std::string(tdl == std::vector<int>{0, 3, 4} ? "s1-s4-s5" : "other") +
         ", CSM " + csm.id + ", DTR " + std::to_string(paths.size()) + " episodes via s3, " +
         Fmt(secs, 3) + " s");
  return o;
}

Outcome GradientIntegrity() {
  Outcome o;
  auto t0 = std::chrono::steady_clock::now();
  TabularMdp mdp = SmallGridMdp();
  double worst_reward = 0.0, worst_policy = 0.0, worst_critic = 0.0, worst_objective = 0.0;

  for (int draw = 0; draw < kGradDraws; ++draw) {
    std::uint64_t seed = 1000 + static_cast<std::uint64_t>(draw);
    OfflineDataset d = UniformData(mdp, 20, seed);
    StateNormalizer norm = FitStateNormalizer(d);
    std::size_t sd = d.at(0).states[0].size();
    Rng rng(seed);

    RewardConfig rc;
    rc.ensemble_size = 1;
    rc.hidden_dim = 6;
    rc.hidden_layers = 2;
    RewardNet net(sd, 4, rc, rng);
    PreferenceSet prefs = MakePreferences(d, 3, 4, AnnotationMode::kStochastic, seed);
    PreferenceBatch pb = MakePreferenceBatch(d, norm, prefs.pairs);
    worst_reward = std::max(
        worst_reward,
        testing::CheckGradients([&] { return CrossEntropyLoss(net, pb); }, net.Parameters(), 1e-7)
            .max_relative_error);

    DtConfig pc;
    pc.state_dim = sd;
    pc.action_dim = 4;
    pc.context = 3;
    pc.embed_dim = 8;
    pc.layers = 2;
    pc.heads = 2;
    pc.dropout = 0.0;
    pc.max_timestep = 16;
    pc.mlp_ratio = 2;
    DtPolicy policy(pc, rng);
    WindowBatch w = MakeWindows(d, norm, SampleWindowRefs(d, 3, rng), {3, 1.0, 16});
    worst_policy = std::max(
        worst_policy, testing::CheckGradients([&] { return DtLoss(policy, w, nullptr, false); },
                                              policy.Parameters(), 1e-6)
                          .max_relative_error);

    CriticConfig cc;
    cc.hidden_dim = 16;
    cc.hidden_layers = 2;
    TwinCritic critic(sd, 4, cc, rng);
    std::vector<double> targets = testing::RandomValues(w.batch * w.length, rng);
    worst_critic = std::max(
        worst_critic, testing::CheckGradients([&] { return QLoss(critic, w, targets); },
                                              critic.Parameters(), 1e-7)
                          .max_relative_error);

    worst_objective = std::max(
        worst_objective,
        testing::CheckGradients(
            [&] { return PolicyLoss(policy, critic, w, 0.8, nullptr, false).total; },
            policy.Parameters(), 1e-6)
            .max_relative_error);
  }
  o.Require(worst_reward < kGradTolerance, "reward net");
  o.Require(worst_policy < kGradTolerance, "DT policy");
  o.Require(worst_critic < kGradTolerance, "twin critics");
  o.Require(worst_objective < kGradTolerance, "policy objective with Q term");
  double secs = Seconds(t0);
  o.Require(secs < kC2BudgetSeconds, "runtime < " + Fmt(kC2BudgetSeconds) + " s");
  o.Note(std::to_string(kGradDraws) + " draws each, max rel err reward " + Fmt(worst_reward) +
         ", policy " + Fmt(worst_policy) + ", critic " + Fmt(worst_critic) + ", objective " +
         Fmt(worst_objective) + " (tol " + Fmt(kGradTolerance) + "), " + Fmt(secs, 3) + " s");
  return o;
}

// Planted 6x6 gridworld, uniform data, deterministic labels on length-5
// segments, 3-member ensemble. Returns Spearman against ground truth.
double RewardRecovery(std::size_t pairs, std::uint64_t seed, std::vector<MemberTrace>* traces) {
  ExperimentConfig c;
  c.Merge(
      "env = gridworld\n"
      "grid.width = 6\n"
      "grid.height = 6\n"
      "grid.planted = true\n"
      "grid.planted_seed = 3\n"
      "grid.horizon = 30\n"
      "data.mixture = 1:200\n"
      "pref.mode = deterministic\n"
      "pref.length = 5\n"
      "reward.ensemble_size = 3\n"
      "reward.hidden_dim = 64\n"
      "reward.hidden_layers = 2\n"
      "reward.lr = 0.003\n"
      "reward.epochs = 100\n",
      "reward-recovery", {});
  c.Set("pref.count", std::to_string(pairs));
  c.Set("seed", std::to_string(seed));
  TabularMdp mdp = BuildEnvironment(c);
  OfflineDataset d = GenerateDataset(c, mdp);
  PreferenceSet prefs = MakePreferences(d, c.GetSize("pref.length"), pairs,
                                        AnnotationMode::kDeterministic,
                                        StageSeed(c, Stage::kAnnotate), true);
  RewardEnsemble ensemble(d.at(0).states[0].size(), d.at(0).actions[0].size(),
                          RewardConfigFrom(c), StageSeed(c, Stage::kTrainReward));
  ensemble.Train(d, prefs);
  OfflineDataset relabeled = ensemble.Relabel(d);
  std::vector<double> gt, learned;
  for (std::size_t k = 0; k < d.size(); ++k) {
    for (std::size_t i = 0; i < d.at(k).size(); ++i) {
      gt.push_back(d.at(k).rewards[i]);
      learned.push_back(relabeled.at(k).rewards[i]);
    }
  }
  if (traces) *traces = ensemble.traces();
  return Spearman(learned, gt);
}

Outcome RewardRecoveryCriterion() {
  Outcome o;
  auto t0 = std::chrono::steady_clock::now();
  std::vector<MemberTrace> traces;
  double rho = RewardRecovery(2000, 0, &traces);
  std::string epochs;
  for (std::size_t m = 0; m < traces.size(); ++m) {
    const MemberTrace& t = traces[m];
    double acc = t.epoch_accuracy.empty() ? 0.0 : t.epoch_accuracy.back();
    o.Require(t.reached_threshold && t.epochs_run <= kMaxRewardEpochs &&
                  acc >= kAccuracyThreshold,
              "member " + std::to_string(m) + " reaches 96.8% within 100 epochs");
    epochs += (m ? "/" : "") + std::to_string(t.epochs_run) + "@" + Fmt(acc);
  }
  o.Require(rho >= kMinSpearman, "Spearman >= " + Fmt(kMinSpearman));
  double secs = Seconds(t0);
  o.Require(secs < kC3BudgetSeconds, "runtime < " + Fmt(kC3BudgetSeconds) + " s");
  o.Note("epochs@acc " + epochs + ", Spearman " + Fmt(rho) + ", " + Fmt(secs, 3) + " s");
  return o;
}

Outcome NormalizationInvariants() {
  Outcome o;
  TabularMdp mdp = SmallGridMdp();
  OfflineDataset d = UniformData(mdp, 60, 4);
  RewardConfig rc;
  rc.ensemble_size = 3;
  rc.hidden_dim = 16;
  rc.hidden_layers = 2;
  rc.epochs = 5;
  RewardEnsemble ensemble(d.at(0).states[0].size(), 4, rc, 5);
  ensemble.Train(d, MakePreferences(d, 4, 200, AnnotationMode::kStochastic, 6));
  OfflineDataset relabeled = ensemble.Relabel(d);
  std::vector<double> rewards;
  for (std::size_t k = 0; k < relabeled.size(); ++k) {
    for (double r : relabeled.at(k).rewards) rewards.push_back(r);
  }
  bool in_range = std::all_of(rewards.begin(), rewards.end(),
                              [](double r) { return r >= 0.0 && r <= 1.0; });
  o.Require(in_range, "relabeled rewards in [0, 1]");

  auto raw = ensemble.RawOutputs(d);
  auto base = NormalizeAndAverage(raw, RewardNormalization::kMinMax, false);
  o.Require(base == rewards, "relabel equals the normalized average of raw outputs");

  // Power-of-two scalings are exact in floating point, so the result must be
  // bit-identical. General affine maps round once per value.
  Rng rng(7);
  std::uniform_int_distribution<int> exponent(-6, 6);
  std::uniform_real_distribution<double> scale(0.05, 20.0), shift(-5.0, 5.0);
  double worst_general = 0.0;
  bool exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    auto pow2 = raw;
    auto general = raw;
    for (std::size_t m = 0; m < raw.size(); ++m) {
      double s2 = std::ldexp(1.0, exponent(rng));
      double a = scale(rng), b = shift(rng);
      for (std::size_t k = 0; k < raw[m].size(); ++k) {
        pow2[m][k] = s2 * raw[m][k];
        general[m][k] = a * raw[m][k] + b;
      }
    }
    exact = exact && NormalizeAndAverage(pow2, RewardNormalization::kMinMax, false) == base;
    auto moved = NormalizeAndAverage(general, RewardNormalization::kMinMax, false);
    for (std::size_t k = 0; k < base.size(); ++k) {
      worst_general = std::max(worst_general, std::abs(moved[k] - base[k]));
    }
  }
  o.Require(exact, "bit-identical under exact positive scalings");
  o.Require(worst_general < kAffineTolerance, "general affine maps within 1e-12");

  auto degenerate = raw;
  std::fill(degenerate[1].begin(), degenerate[1].end(), 0.25);
  bool threw = false;
  try {
    NormalizeAndAverage(degenerate, RewardNormalization::kMinMax, false);
  } catch (const DegenerateMemberError&) {
    threw = true;
  }
  o.Require(threw, "constant member raises DegenerateMemberError");
  o.Note(std::to_string(rewards.size()) + " rewards in [0,1], exact scalings bit-identical, " +
         "general affine max diff " + Fmt(worst_general, 3) + ", degenerate member rejected");
  return o;
}

std::vector<double> Flatten(const ParameterList& params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

Outcome ScheduleExactness() {
  Outcome o;
  const std::size_t max_step = 1000;
  const double eta_max = 2.5;
  bool linear = true;
  for (std::size_t step : {0, 1, 9, 77, 250, 333, 500, 761, 999, 1000}) {
    linear = linear && Eta(step, eta_max, max_step) ==
                           static_cast<double>(step) * eta_max / static_cast<double>(max_step);
  }
  o.Require(Eta(0, eta_max, max_step) == 0.0, "eta(0) = 0");
  o.Require(Eta(max_step, eta_max, max_step) == eta_max, "eta(max_step) = eta_max");
  o.Require(linear, "linear at 10 probes");
  o.Require(LambdaCoefficient(Eta(0, eta_max, max_step), 3.7) == 0.0, "lambda(0) = 0");

  TabularMdp mdp = SmallGridMdp();
  OfflineDataset d = UniformData(mdp, 30, 5);
  TrainConfig c;
  c.batch_size = 8;
  c.steps_per_iteration = 5;
  c.iterations = 3;
  c.warmup_steps = 0;
  c.eval_episodes = 0;
  c.seed = 11;
  c.policy.context = 3;
  c.policy.embed_dim = 8;
  c.policy.layers = 1;
  c.policy.heads = 2;
  c.policy.mlp_ratio = 2;
  c.policy.dropout = 0.1;
  c.policy.max_timestep = 16;
  c.critic.hidden_dim = 16;
  c.critic.hidden_layers = 2;
  c.eta_max = 0.0;
  TrainResult zero = Train(c, d);
  c.objective = Objective::kPbDt;
  TrainResult pbdt = Train(c, d);
  bool lambdas_zero = true;
  for (const auto& row : zero.metrics) lambdas_zero = lambdas_zero && row.lambda == 0.0;
  o.Require(lambdas_zero, "lambda identically 0 when eta_max = 0");
  o.Require(Flatten(zero.policy.Parameters()) == Flatten(pbdt.policy.Parameters()),
            "eta_max = 0 reproduces Pb-DT parameters bit-identically");
  o.Note("eta exact at 10 probes, lambda(0) = 0, " +
         std::to_string(Flatten(pbdt.policy.Parameters()).size()) +
         " policy parameters bit-identical to Pb-DT");
  return o;
}

Outcome InferenceArithmetic() {
  Outcome o;
  const std::vector<double> multipliers{0.5, 0.75, 1.0, 1.5, 2.0};
  bool targets_exact = true;
  for (double return_max : {1.0, 3.5, 13.7715, 100.0, 0.125}) {
    std::vector<double> expected;
    for (double m : multipliers) expected.push_back(m * return_max);
    targets_exact = targets_exact && InitialRtgTargets(return_max) == expected;
  }
  o.Require(targets_exact, "initial targets equal multipliers x Return_max");

  const std::size_t max_timestep = 64;
  const double return_max = 13.7715;
  InferenceState state(InitialRtgTargets(return_max), 4, max_timestep, 1.0, 2, 2);
  for (std::size_t t = 0; t < max_timestep; ++t) {
    state.Observe({0.0, 1.0});
    state.Act({1.0, 0.0});
    state.StepFixed();
  }
  double worst = 0.0;
  for (double r : state.current()) worst = std::max(worst, std::abs(r));
  o.Require(worst < kRtgZeroTolerance, "every track reaches 0 after max_timestep updates");

  // Random strictly increasing maps built from increasing pieces.
  Rng rng(17);
  std::uniform_real_distribution<double> u(-3.0, 3.0), pos(0.1, 5.0);
  std::uniform_int_distribution<int> pick(0, 3);
  bool invariant = true;
  for (int trial = 0; trial < kMonotoneMaps; ++trial) {
    std::vector<double> q(5);
    for (double& v : q) v = u(rng);
    if (trial % 10 == 0) q[4] = q[2];
    double a = pos(rng), b = u(rng);
    int kind = pick(rng);
    std::vector<double> mapped;
    for (double v : q) {
      double x = a * v + b;
      switch (kind) {
        case 0: mapped.push_back(x); break;
        case 1: mapped.push_back(x * x * x + x); break;
        case 2: mapped.push_back(std::exp(0.5 * x)); break;
        default: mapped.push_back(std::atan(x) + 0.01 * x); break;
      }
    }
    invariant = invariant && ArgmaxLowest(mapped) == ArgmaxLowest(q);
  }
  o.Require(invariant, "argmax invariant under 100 increasing maps");
  o.Note("targets exact, max |RTG| after " + std::to_string(max_timestep) + " steps " +
         Fmt(worst, 3) + ", argmax invariant over " + std::to_string(kMonotoneMaps) + " maps");
  return o;
}

Outcome CriticAgreement() {
  Outcome o;
  using namespace figure1;
  TabularMdp mdp = WithBiasedReward(BuildFigure1Mdp());
  OfflineDataset d = MakeFigure1Dataset(mdp, 1);
  StateNormalizer norm = FitStateNormalizer(d);
  ContinuousWrapper wrapper(mdp);
  DpSolution dp = DatasetConstrainedValueIteration(mdp, mdp.reward, d, 1.0);
  o.Require(dp.q[kS1][1] > dp.q[kS1][0], "DP orders Q(s1,->s4) > Q(s1,->s3)");

  CriticConfig cc;
  cc.hidden_dim = 16;
  cc.hidden_layers = 2;
  cc.gamma = 1.0;
  cc.tau = 0.05;
  Rng rng(14);
  TwinCritic td(6, 2, cc, rng);
  TrainGreedyTd(td, d, norm, wrapper, {6000, 16, 1e-3, 3});
  const Trajectory& red = d.at(d.IndexOf("red"));
  std::vector<double> s = norm.Apply(red.states[0]);
  std::vector<double> both(s);
  both.insert(both.end(), s.begin(), s.end());
  auto q = td.Q(0, Tensor::FromVector({2, 6}, both), Tensor::FromVector({2, 2}, {1, 0, 0, 1}))
               .values();
  o.Require(q[1] > q[0], "TD critic orders Q(s1,->s4) > Q(s1,->s3)");

  Rng rng2(13);
  TwinCritic supervised(6, 2, cc, rng2);
  DatasetPairs pairs = CollectDatasetPairs(d, norm);
  std::vector<double> targets;
  for (std::size_t i = 0; i < pairs.state_ids.size(); ++i) {
    targets.push_back(dp.q[pairs.state_ids[i]][pairs.action_ids[i]]);
  }
  PretrainCritic(supervised, pairs.states, pairs.actions, targets, {1500, 3e-3});
  double gap = FittedQGap(supervised, mdp, mdp.reward, d, norm);
  o.Require(gap < kCriticGap, "supervised critic within 0.05 of DP Q");
  o.Note("DP Q(s1) = [" + Fmt(dp.q[kS1][0]) + ", " + Fmt(dp.q[kS1][1]) + "], TD critic [" +
         Fmt(q[0]) + ", " + Fmt(q[1]) + "], supervised sup-gap " + Fmt(gap, 3));
  return o;
}

Outcome DirectionalPerformance() {
  Outcome o;
  auto t0 = std::chrono::steady_clock::now();
  std::vector<double> dtr_means, pbdt_means;
  for (int seed = 0; seed < kC8Seeds; ++seed) {
    RunContext base;
    base.config.MergePreset("gridworld-medium");
    base.config.Set("seed", std::to_string(seed));
    base.out = WorkDir("c8_s" + std::to_string(seed));
    CmdGenData(base);
    CmdAnnotate(base);
    CmdTrainReward(base);
    CmdRelabel(base);
    for (bool ablation : {false, true}) {
      RunContext ctx = base;
      ctx.out = base.out.string() + (ablation ? "_eta0" : "_dtr");
      fs::remove_all(ctx.out);
      fs::copy(base.out, ctx.out, fs::copy_options::recursive);
      if (ablation) ctx.config.Set("train.eta_max", "0");
      CmdTrainPolicy(ctx);
      CmdEval(ctx);
      double mean = ReadJson(ctx.out / "eval.json").at("mean").get<double>();
      (ablation ? pbdt_means : dtr_means).push_back(mean);
    }
  }
  double dtr = Mean(dtr_means), pbdt = Mean(pbdt_means);
  o.Require(dtr >= pbdt, "mean DTR return >= mean Pb-DT return");
  double secs = Seconds(t0);
  o.Require(secs < kC8BudgetSeconds, "runtime < " + Fmt(kC8BudgetSeconds) + " s");
  std::string per_seed;
  for (std::size_t i = 0; i < dtr_means.size(); ++i) {
    per_seed += (i ? ", " : "") + Fmt(dtr_means[i], 6) + "/" + Fmt(pbdt_means[i], 6);
  }
  o.Note("DTR " + Fmt(dtr, 6) + " vs Pb-DT(eta_max=0) " + Fmt(pbdt, 6) + " (per seed " +
         per_seed + "), " + Fmt(secs, 4) + " s");
  return o;
}

Outcome PreferenceScaling() {
  Outcome o;
  auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::size_t> counts{100, 500, 2000};
  std::vector<double> means;
  for (std::size_t n : counts) {
    std::vector<double> rhos;
    for (std::uint64_t seed = 0; seed < 3; ++seed) rhos.push_back(RewardRecovery(n, seed, nullptr));
    means.push_back(Mean(rhos));
  }
  std::string trend;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    trend += (i ? ", " : "") + std::to_string(counts[i]) + ": " + Fmt(means[i]);
    if (i > 0) {
      o.Require(means[i] >= means[i - 1] - kScalingBand,
                "non-decreasing from " + std::to_string(counts[i - 1]) + " to " +
                    std::to_string(counts[i]));
    }
  }
  o.Note("mean Spearman over 3 seeds {" + trend + "}, band " + Fmt(kScalingBand) + ", " +
         Fmt(Seconds(t0), 4) + " s");
  return o;
}

Outcome PessimisticDemo() {
  Outcome o;
  auto t0 = std::chrono::steady_clock::now();
  PessimismDemoCase demo = MakePessimismDemoCase();
  auto candidates = LatticeCandidates(demo.mdp, demo.edges, demo.values);
  auto gt_it = std::find(candidates.begin(), candidates.end(), demo.mdp.reward);
  o.Require(gt_it != candidates.end(), "ground truth on the lattice");
  std::size_t gt = static_cast<std::size_t>(gt_it - candidates.begin());
  const std::size_t num_pairs = 100;
  const double delta = 0.1;
  double zeta = ConfidenceSlack(candidates.size(), num_pairs, delta);

  int covered = 0;
  bool singleton = true, nested = true;
  for (int seed = 0; seed < kCoverageSeeds; ++seed) {
    OfflineDataset d = UniformData(demo.mdp, 40, 500 + seed, 0.0);
    PreferenceSet prefs = SampleDistinctPreferences(d, num_pairs, 900 + seed);
    ConfidenceSet zero = BuildConfidenceSet(d, prefs, candidates, 0.0);
    singleton = singleton && zero.count() == 1 && zero.member[zero.mle];
    ConfidenceSet previous = zero;
    for (double z : {0.1, 0.5, 1.0, 2.0, zeta, 10.0, 50.0}) {
      if (z < previous.zeta) continue;
      ConfidenceSet next = BuildConfidenceSet(d, prefs, candidates, z);
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        nested = nested && (!previous.member[i] || next.member[i]);
      }
      previous = next;
    }
    if (BuildConfidenceSet(d, prefs, candidates, zeta).member[gt]) ++covered;
  }
  double coverage = static_cast<double>(covered) / kCoverageSeeds;
  o.Require(singleton, "Psi(0) = {MLE}");
  o.Require(nested, "Psi nested in zeta");
  o.Require(coverage >= kCoverage, "ground-truth coverage >= 0.9");
  double secs = Seconds(t0);
  o.Require(secs < kC10BudgetSeconds, "runtime < " + Fmt(kC10BudgetSeconds) + " s");
  o.Note(std::to_string(candidates.size()) + " candidates, zeta " + Fmt(zeta) + ", coverage " +
         std::to_string(covered) + "/" + std::to_string(kCoverageSeeds) + ", " + Fmt(secs, 3) +
         " s");
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "figure1 stitching", FigureOneStitching},
      {2, "gradient integrity", GradientIntegrity},
      {3, "reward recovery", RewardRecoveryCriterion},
      {4, "ensemble normalization", NormalizationInvariants},
      {5, "schedule exactness", ScheduleExactness},
      {6, "inference arithmetic", InferenceArithmetic},
      {7, "critic vs DP", CriticAgreement},
      {8, "directional performance", DirectionalPerformance},
      {9, "preference scaling", PreferenceScaling},
      {10, "pessimistic MLE demo", PessimisticDemo},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::stoi(argv[i]));
  bool all_pass = true;
  for (const auto& c : criteria) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), c.id) == selected.end()) {
      continue;
    }
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " C" << c.id << " " << c.name << ": " << o.detail
              << std::endl;
  }
  return all_pass ? 0 : 1;
}
