#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dtr/errors.hpp"
#include "dtr/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace dtr;

namespace {

TabularMdp SmallGridMdp() {
  GridworldSpec spec;
  spec.width = 4;
  spec.height = 4;
  spec.goal = 15;
  spec.traps = {5};
  spec.horizon = 16;
  return BuildGridworld(spec);
}

OfflineDataset SmallGrid(int episodes, std::uint64_t seed) {
  TabularMdp mdp = SmallGridMdp();
  ContinuousWrapper wrapper(mdp);
  return OfflineDataset(Rollout(mdp, BehaviorPolicy::Uniform(), seed, episodes, wrapper),
                        {mdp.name, seed, "gt", ""});
}

TrainConfig TinyTrain(std::uint64_t seed) {
  TrainConfig c;
  c.batch_size = 8;
  c.steps_per_iteration = 5;
  c.iterations = 3;
  c.warmup_steps = 0;
  c.policy_lr = 1e-3;
  c.critic_lr = 1e-3;
  c.eval_episodes = 0;
  c.seed = seed;
  c.policy.context = 3;
  c.policy.embed_dim = 8;
  c.policy.layers = 1;
  c.policy.heads = 2;
  c.policy.mlp_ratio = 2;
  c.policy.dropout = 0.1;
  c.policy.max_timestep = 16;
  c.critic.hidden_dim = 16;
  c.critic.hidden_layers = 2;
  return c;
}

std::vector<double> Flatten(const ParameterList& params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

std::vector<WindowRef> FirstRefs(const OfflineDataset& d, std::size_t count) {
  std::vector<WindowRef> refs;
  for (std::size_t t = 0; refs.size() < count; ++t) {
    refs.push_back({t % d.size(), d.at(t % d.size()).size() - 1});
  }
  return refs;
}

}  // namespace

TEST_CASE("eta schedule is exact") {
  for (std::size_t step : {0, 1, 2, 7, 100, 250, 333, 500, 999, 1000}) {
    CHECK(Eta(step, 1.0, 1000) == static_cast<double>(step) / 1000.0);
    CHECK(Eta(step, 2.5, 1000) == static_cast<double>(step) * 2.5 / 1000.0);
    CHECK(Eta(step, 2.5, 1000, EtaMode::kConstant) == 2.5);
  }
  CHECK(Eta(0, 1.0, 1000) == 0.0);
  CHECK(Eta(500, 1.0, 1000) == 0.5);
  CHECK(Eta(1000, 1.0, 1000) == 1.0);
  CHECK_THROWS_AS(Eta(1, 1.0, 0), InvalidArgument);
}

TEST_CASE("lambda coefficient") {
  CHECK(LambdaCoefficient(Eta(0, 1.0, 100), 3.0) == 0.0);
  CHECK(LambdaCoefficient(1.0, 2.0) == 0.5);
  CHECK(LambdaCoefficient(1.0, 0.0) == 1.0 / kLambdaEpsilon);
  CHECK(LambdaCoefficient(1.0, 1e-12) == 1.0 / kLambdaEpsilon);
  CHECK(std::isfinite(LambdaCoefficient(1.0, 0.0)));
  CHECK_THROWS_AS(LambdaCoefficient(1.0, -1.0), InvalidArgument);
}

TEST_CASE("policy loss with lambda zero equals the DT loss") {
  OfflineDataset d = SmallGrid(20, 1);
  StateNormalizer norm = FitStateNormalizer(d);
  TrainConfig c = TinyTrain(1);
  c.policy.state_dim = d.at(0).states[0].size();
  c.policy.action_dim = 4;
  Rng rng(2);
  DtPolicy policy(c.policy, rng);
  TwinCritic critic(c.policy.state_dim, 4, c.critic, rng);
  WindowBatch w = MakeWindows(d, norm, FirstRefs(d, 6), {3, 1.0, 16});
  PolicyLossParts parts = PolicyLoss(policy, critic, w, 0.0, nullptr, false);
  CHECK(parts.total.item() == DtLoss(policy, w, nullptr, false).item());
  CHECK(parts.q_term == 0.0);

  PolicyLossParts with_q = PolicyLoss(policy, critic, w, 0.7, nullptr, false);
  CHECK(with_q.l_dt == parts.l_dt);
  CHECK(with_q.total.item() == doctest::Approx(with_q.l_dt - 0.7 * with_q.q_term).epsilon(1e-12));

  PolicyLossParts with_min = PolicyLoss(policy, critic, w, 0.7, nullptr, false, PolicyQ::kMin);
  CHECK(with_min.q_term <= with_q.q_term + 1e-12);
}

TEST_CASE("policy loss gradient check") {
  OfflineDataset d = SmallGrid(20, 3);
  StateNormalizer norm = FitStateNormalizer(d);
  TrainConfig c = TinyTrain(3);
  c.policy.state_dim = d.at(0).states[0].size();
  c.policy.action_dim = 4;
  c.policy.dropout = 0.0;
  Rng rng(4);
  DtPolicy policy(c.policy, rng);
  TwinCritic critic(c.policy.state_dim, 4, c.critic, rng);
  WindowBatch w = MakeWindows(d, norm, FirstRefs(d, 3), {3, 1.0, 16});
  auto report = testing::CheckGradients(
      [&] { return PolicyLoss(policy, critic, w, 0.8, nullptr, false).total; },
      policy.Parameters(), 1e-6);
  INFO(report.worst_parameter);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("training is deterministic and eta_max zero reproduces Pb-DT") {
  OfflineDataset d = SmallGrid(30, 5);
  TrainConfig c = TinyTrain(9);
  TrainResult a = Train(c, d);
  TrainResult b = Train(c, d);
  CHECK(Flatten(a.policy.Parameters()) == Flatten(b.policy.Parameters()));
  CHECK(Flatten(a.critic.AllParameters()) == Flatten(b.critic.AllParameters()));
  REQUIRE(a.metrics.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    MetricsRow ra = a.metrics[i], rb = b.metrics[i];
    ra.wall_seconds = rb.wall_seconds = 0.0;
    CHECK(FormatMetricsRow(ra) == FormatMetricsRow(rb));
  }
  CHECK(a.rtg_scale == (d.return_max() > 0.0 ? d.return_max() : 1.0));

  TrainConfig zero = c;
  zero.eta_max = 0.0;
  TrainConfig pbdt = c;
  pbdt.objective = Objective::kPbDt;
  TrainResult z = Train(zero, d);
  TrainResult p = Train(pbdt, d);
  CHECK(Flatten(z.policy.Parameters()) == Flatten(p.policy.Parameters()));
  for (const auto& row : z.metrics) CHECK(row.lambda == 0.0);
  for (const auto& row : p.metrics) CHECK(row.q_loss == 0.0);
  CHECK(Flatten(z.policy.Parameters()) != Flatten(a.policy.Parameters()));
}

TEST_CASE("metrics rows follow the schedule") {
  OfflineDataset d = SmallGrid(30, 6);
  TrainConfig c = TinyTrain(10);
  TrainResult dynamic = Train(c, d);
  for (std::size_t i = 0; i < dynamic.metrics.size(); ++i) {
    const MetricsRow& r = dynamic.metrics[i];
    CHECK(r.iteration == i + 1);
    CHECK(r.step == (i + 1) * 5);
    CHECK(r.eta == Eta(r.step - 1, 1.0, 15));
    CHECK(r.lambda > 0.0);
  }
  c.eta_mode = EtaMode::kConstant;
  c.eta_max = 0.3;
  TrainResult constant = Train(c, d);
  for (const auto& r : constant.metrics) CHECK(r.eta == 0.3);
}

TEST_CASE("metrics CSV") {
  auto path = std::filesystem::temp_directory_path() / "dtr_metrics_test.csv";
  std::filesystem::remove(path);
  MetricsRow r;
  r.iteration = 1;
  r.step = 10;
  r.l_dt = 0.5;
  AppendMetrics(path, {r});
  r.iteration = 2;
  AppendMetrics(path, {r});
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == kMetricsHeader);
  for (const auto& l : lines) CHECK(std::count(l.begin(), l.end(), ',') == 10);
  CHECK(lines[1].rfind("1,10,0.5,", 0) == 0);
  CHECK(lines[2].rfind("2,10,", 0) == 0);
  std::filesystem::remove(path);
}

TEST_CASE("training evaluates when an environment is given") {
  TabularMdp mdp = SmallGridMdp();
  ContinuousWrapper wrapper(mdp);
  OfflineDataset d = SmallGrid(30, 7);
  TrainConfig c = TinyTrain(11);
  c.eval_episodes = 2;
  EvalEnv env{&mdp, &wrapper, {}, 3};
  TrainResult r = Train(c, d, &env);
  for (const auto& row : r.metrics) {
    CHECK(std::isfinite(row.eval_return_mean));
    CHECK(row.eval_return_std >= 0.0);
  }
}

TEST_CASE("config validation") {
  TrainConfig c = TinyTrain(1);
  c.eta_max = -1.0;
  CHECK_THROWS_AS(c.Validate(), InvalidArgument);
  c = TinyTrain(1);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.Validate(), InvalidArgument);
  c = TinyTrain(1);
  c.iterations = 0;
  CHECK_THROWS_AS(c.Validate(), InvalidArgument);
  c = TinyTrain(1);
  c.critic.gamma = 0.0;
  CHECK_THROWS_AS(c.Validate(), InvalidArgument);
  OfflineDataset empty({}, {"none", 0, "gt", ""});
  CHECK_THROWS_AS(Train(TinyTrain(1), empty), InvalidArgument);
}
