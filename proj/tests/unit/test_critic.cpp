#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "dtr/critic.hpp"
#include "dtr/errors.hpp"
#include "support/gradcheck.hpp"

using namespace dtr;

namespace {

CriticConfig Small(double gamma = 0.99) {
  CriticConfig c;
  c.hidden_dim = 16;
  c.hidden_layers = 2;
  c.gamma = gamma;
  return c;
}

OfflineDataset SmallGrid(int episodes, std::uint64_t seed) {
  GridworldSpec spec;
  spec.width = 4;
  spec.height = 4;
  spec.goal = 15;
  spec.traps = {5};
  spec.horizon = 16;
  TabularMdp mdp = BuildGridworld(spec);
  ContinuousWrapper wrapper(mdp);
  return OfflineDataset(Rollout(mdp, BehaviorPolicy::Uniform(), seed, episodes, wrapper),
                        {mdp.name, seed, "gt", ""});
}

double MaxAbsDiff(const ParameterList& a, const ParameterList& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].tensor.size(); ++k) {
      m = std::max(m, std::abs(a[i].tensor.data()[k] - b[i].tensor.data()[k]));
    }
  }
  return m;
}

}  // namespace

TEST_CASE("n-step target examples") {
  CHECK(NStepTarget({1, 2}, 4, 0.5, true) == 3.0);
  CHECK(NStepTarget({}, 4.25, 0.9, true) == 4.25);
  CHECK(NStepTarget({1, 2}, 100, 0.5, false) == 2.0);
  CHECK(NStepTarget({1, 1, 1}, 0, 1.0, true) == 3.0);
}

TEST_CASE("window targets agree with the direct sum") {
  OfflineDataset d = SmallGrid(40, 1);
  StateNormalizer norm = FitStateNormalizer(d);
  Rng rng(2);
  WindowSpec spec{4, 1.0, 16};
  CriticBatch batch = MakeCriticBatch(d, norm, SampleWindowRefs(d, 64, rng), spec);
  std::vector<double> boot(64);
  for (std::size_t b = 0; b < 64; ++b) boot[b] = 0.1 * static_cast<double>(b) - 3.0;
  auto targets = WindowTargets(batch, boot, 0.9);
  for (std::size_t b = 0; b < 64; ++b) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (!batch.window.Valid(b, i)) {
        CHECK(targets[b * 4 + i] == 0.0);
        continue;
      }
      std::vector<double> r(batch.rewards.begin() + b * 4 + i, batch.rewards.begin() + b * 4 + 4);
      CHECK(targets[b * 4 + i] ==
            doctest::Approx(NStepTarget(r, boot[b], 0.9, batch.has_bootstrap[b])).epsilon(1e-12));
    }
  }
}

TEST_CASE("Q loss reduction") {
  OfflineDataset d = SmallGrid(30, 3);
  StateNormalizer norm = FitStateNormalizer(d);
  Rng rng(4);
  TwinCritic critic(d.at(0).states[0].size(), 4, Small(), rng);
  // Make the twins identical.
  ParameterList params = critic.Parameters();
  std::size_t half = params.size() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    auto src = params[i].tensor.data();
    std::copy(src.begin(), src.end(), params[half + i].tensor.mutable_data().begin());
  }
  Rng wr(5);
  WindowBatch w = MakeWindows(d, norm, SampleWindowRefs(d, 8, wr), {3, 1.0, 16});
  auto q = critic.Q(0, w.states, w.actions).values();
  CHECK(QLoss(critic, w, q).item() == 0.0);

  double count = static_cast<double>(w.ValidCount());
  std::size_t pos = 0;
  while (!w.valid[pos]) ++pos;
  auto shifted = q;
  shifted[pos] += 0.5;
  CHECK(QLoss(critic, w, shifted).item() == doctest::Approx(2 * 0.25 / count).epsilon(1e-12));

  // Twin 2 shifted everywhere by delta through its output bias.
  params[params.size() - 1].tensor.mutable_data()[0] += 0.3;
  CHECK(QLoss(critic, w, q).item() == doctest::Approx(0.09).epsilon(1e-12));
}

TEST_CASE("Q loss gradient matches finite differences") {
  OfflineDataset d = SmallGrid(30, 6);
  StateNormalizer norm = FitStateNormalizer(d);
  Rng rng(7);
  TwinCritic critic(d.at(0).states[0].size(), 4, Small(), rng);
  Rng wr(8);
  WindowBatch w = MakeWindows(d, norm, SampleWindowRefs(d, 4, wr), {3, 1.0, 16});
  std::vector<double> targets = testing::RandomValues(w.batch * w.length, wr);
  auto report = testing::CheckGradients([&] { return QLoss(critic, w, targets); },
                                        critic.Parameters(), 1e-7);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("targets never receive gradients") {
  OfflineDataset d = SmallGrid(30, 9);
  StateNormalizer norm = FitStateNormalizer(d);
  Rng rng(10);
  TwinCritic critic(d.at(0).states[0].size(), 4, Small(), rng);
  DtConfig pc;
  pc.state_dim = d.at(0).states[0].size();
  pc.action_dim = 4;
  pc.context = 3;
  pc.embed_dim = 8;
  pc.layers = 1;
  pc.heads = 2;
  pc.dropout = 0.0;
  pc.max_timestep = 16;
  DtPolicy policy(pc, rng);
  Rng wr(11);
  CriticBatch batch = MakeCriticBatch(d, norm, SampleWindowRefs(d, 8, wr), {3, 1.0, 16});
  Gradients g;
  {
    Tape tape;
    TapeScope scope(tape);
    auto boot = BootstrapValues(critic, policy, batch);
    Tensor loss = QLoss(critic, batch.window, WindowTargets(batch, boot, 0.99));
    g = tape.Backward(loss);
  }
  for (const auto& p : critic.TargetParameters()) CHECK_FALSE(g.Contains(p.tensor));
  for (const auto& p : policy.Parameters()) CHECK_FALSE(g.Contains(p.tensor));
  std::size_t online = 0;
  for (const auto& p : critic.Parameters()) online += g.Contains(p.tensor) ? 1 : 0;
  CHECK(online == critic.Parameters().size());

  // The bootstrap uses the smaller target twin.
  Tensor s = Tensor::FromVector({3, pc.state_dim}, testing::RandomValues(3 * pc.state_dim, wr));
  Tensor a = Tensor::FromVector({3, 4}, testing::RandomValues(12, wr));
  Tensor m = critic.MinTargetQ(s, a);
  auto q1 = critic.TargetQ(0, s, a).values(), q2 = critic.TargetQ(1, s, a).values();
  for (std::size_t i = 0; i < 3; ++i) CHECK(m.data()[i] == std::min(q1[i], q2[i]));
}

TEST_CASE("EMA updates") {
  Rng rng(12);
  TwinCritic critic(5, 2, Small(), rng);
  auto before = critic.TargetParameters();
  std::vector<std::vector<double>> saved;
  for (auto& p : before) saved.push_back(p.tensor.values());
  critic.EmaUpdate(0.3);  // online == target after construction
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].tensor.values() == saved[i]);

  // Move the online twins, then relax the targets geometrically.
  for (auto& p : critic.Parameters()) {
    for (double& v : p.tensor.mutable_data()) v += 1.0;
  }
  double gap0 = MaxAbsDiff(critic.Parameters(), critic.TargetParameters());
  CHECK(gap0 == doctest::Approx(1.0).epsilon(1e-12));
  double tau = 5e-3;
  double previous = gap0;
  for (int step = 1; step <= 100; ++step) {
    critic.EmaUpdate(tau);
    double gap = MaxAbsDiff(critic.Parameters(), critic.TargetParameters());
    CHECK(gap / previous == doctest::Approx(1.0 - tau).epsilon(1e-9));
    previous = gap;
  }
  CHECK(previous == doctest::Approx(std::pow(1.0 - tau, 100)).epsilon(1e-9));
  critic.EmaUpdate(1.0);
  CHECK(MaxAbsDiff(critic.Parameters(), critic.TargetParameters()) == 0.0);
}

TEST_CASE("supervised critic matches the dataset-constrained DP solution") {
  TabularMdp mdp = figure1::WithBiasedReward(BuildFigure1Mdp());
  OfflineDataset d = MakeFigure1Dataset(mdp, 1);
  StateNormalizer norm = FitStateNormalizer(d);
  Rng rng(13);
  TwinCritic critic(6, 2, Small(1.0), rng);
  CHECK(FittedQGap(critic, mdp, mdp.reward, d, norm) > 0.5);

  DpSolution dp = DatasetConstrainedValueIteration(mdp, mdp.reward, d, 1.0);
  DatasetPairs pairs = CollectDatasetPairs(d, norm);
  std::vector<double> targets;
  for (std::size_t i = 0; i < pairs.state_ids.size(); ++i) {
    targets.push_back(dp.q[pairs.state_ids[i]][pairs.action_ids[i]]);
  }
  PretrainCritic(critic, pairs.states, pairs.actions, targets, {1500, 3e-3});
  CHECK(FittedQGap(critic, mdp, mdp.reward, d, norm) < 0.05);
}

TEST_CASE("greedy TD critic reproduces the optimistic stitching order") {
  TabularMdp mdp = figure1::WithBiasedReward(BuildFigure1Mdp());
  OfflineDataset d = MakeFigure1Dataset(mdp, 1);
  StateNormalizer norm = FitStateNormalizer(d);
  ContinuousWrapper wrapper(mdp);
  DpSolution dp = DatasetConstrainedValueIteration(mdp, mdp.reward, d, 1.0);
  REQUIRE(dp.q[figure1::kS1][1] > dp.q[figure1::kS1][0]);

  Rng rng(14);
  CriticConfig cfg = Small(1.0);
  cfg.tau = 0.05;
  TwinCritic critic(6, 2, cfg, rng);
  TrainGreedyTd(critic, d, norm, wrapper, {6000, 16, 1e-3, 3});
  // Evaluate at s1 as recorded in the dataset (red starts there).
  const Trajectory& red = d.at(d.IndexOf("red"));
  Tensor s = Tensor::FromVector({2, 6}, [&] {
    auto v = norm.Apply(red.states[0]);
    std::vector<double> both(v);
    both.insert(both.end(), v.begin(), v.end());
    return both;
  }());
  Tensor a = Tensor::FromVector({2, 2}, {1, 0, 0, 1});
  auto q = critic.Q(0, s, a).values();
  CHECK(q[1] > q[0]);
  CHECK(FittedQGap(critic, mdp, mdp.reward, d, norm) < 0.25);
}

TEST_CASE("critic checkpoint round trip") {
  Rng rng(15);
  TwinCritic critic(5, 2, Small(), rng);
  for (auto& p : critic.Parameters()) p.tensor.mutable_data()[0] += 0.5;
  auto dir = std::filesystem::temp_directory_path() / "dtr_test_critic";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  SaveCritic(critic, dir / "c.ckpt");
  Rng other(99);
  TwinCritic loaded(5, 2, Small(), other);
  LoadCritic(loaded, dir / "c.ckpt");
  CHECK(MaxAbsDiff(critic.AllParameters(), loaded.AllParameters()) == 0.0);
}
