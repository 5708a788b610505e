#include "dtr/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "dtr/errors.hpp"

namespace dtr {
namespace {

constexpr double kResidualTolerance = 1e-10;
constexpr int kMaxIterations = 10000000;

void CheckRewards(const TabularMdp& mdp, const RewardTable& rewards) {
  if (rewards.size() != static_cast<std::size_t>(mdp.num_states)) {
    throw ShapeError("reward table needs one row per state");
  }
  for (const auto& row : rewards) {
    if (row.size() != static_cast<std::size_t>(mdp.num_actions)) {
      throw ShapeError("reward table row has the wrong number of actions");
    }
  }
}

// True when some non-terminal state can reach itself.
bool HasCycle(const TabularMdp& mdp) {
  enum Mark { kWhite, kGrey, kBlack };
  std::vector<Mark> mark(mdp.num_states, kWhite);
  std::function<bool(int)> visit = [&](int s) {
    mark[s] = kGrey;
    for (int a = 0; a < mdp.num_actions; ++a) {
      if (mdp.Ends(s, a)) continue;
      int n = mdp.Next(s, a);
      if (mark[n] == kGrey) return true;
      if (mark[n] == kWhite && visit(n)) return true;
    }
    mark[s] = kBlack;
    return false;
  };
  for (int s = 0; s < mdp.num_states; ++s) {
    if (!mdp.terminal[s] && mark[s] == kWhite && visit(s)) return true;
  }
  return false;
}

DpSolution Solve(const TabularMdp& mdp, const RewardTable& rewards, double gamma,
                 const std::vector<std::vector<bool>>* support) {
  mdp.Validate();
  CheckRewards(mdp, rewards);
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in (0, 1]");
  if (gamma == 1.0 && HasCycle(mdp)) {
    throw DomainError("mdp " + mdp.name + " does not terminate; gamma = 1 is undefined");
  }
  const double kUnsupported = -std::numeric_limits<double>::infinity();
  DpSolution sol;
  sol.gamma = gamma;
  sol.q.assign(mdp.num_states, std::vector<double>(mdp.num_actions, 0.0));
  sol.v.assign(mdp.num_states, 0.0);
  sol.greedy.assign(mdp.num_states, 0);
  auto supported = [&](int s, int a) { return !support || (*support)[s][a]; };

  for (int it = 0; it < kMaxIterations; ++it) {
    double residual = 0.0;
    std::vector<double> v_new(mdp.num_states, 0.0);
    for (int s = 0; s < mdp.num_states; ++s) {
      if (mdp.terminal[s]) continue;
      double best = kUnsupported;
      for (int a = 0; a < mdp.num_actions; ++a) {
        if (!supported(s, a)) {
          sol.q[s][a] = kUnsupported;
          continue;
        }
        double cont = mdp.Ends(s, a) ? 0.0 : sol.v[mdp.Next(s, a)];
        sol.q[s][a] = rewards[s][a] + gamma * cont;
        best = std::max(best, sol.q[s][a]);
      }
      v_new[s] = best == kUnsupported ? 0.0 : best;
      residual = std::max(residual, std::abs(v_new[s] - sol.v[s]));
    }
    sol.v = std::move(v_new);
    sol.iterations = it + 1;
    sol.residual = residual;
    if (residual < kResidualTolerance) break;
  }
  if (sol.residual >= kResidualTolerance) {
    throw NumericalError("value iteration did not converge on " + mdp.name);
  }
  // One more backup from the final V, then V = max_a Q holds exactly.
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      if (mdp.terminal[s]) {
        sol.q[s][a] = 0.0;
      } else if (supported(s, a)) {
        sol.q[s][a] = rewards[s][a] + gamma * (mdp.Ends(s, a) ? 0.0 : sol.v[mdp.Next(s, a)]);
      }
    }
    auto row = sol.q[s];
    sol.greedy[s] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  for (int s = 0; s < mdp.num_states; ++s) {
    double best = sol.q[s][sol.greedy[s]];
    if (!mdp.terminal[s]) sol.v[s] = best == kUnsupported ? 0.0 : best;
  }
  if (support) sol.support = *support;
  return sol;
}

}  // namespace

DpSolution ValueIteration(const TabularMdp& mdp, const RewardTable& rewards, double gamma) {
  return Solve(mdp, rewards, gamma, nullptr);
}

OfflineDataset WithTableRewards(const OfflineDataset& dataset, const RewardTable& rewards,
                                const std::string& provenance) {
  std::vector<std::vector<double>> out;
  for (const auto& t : dataset.trajectories()) {
    if (t.state_ids.empty()) throw InvalidArgument("table rewards need tabular ids");
    std::vector<double> r;
    for (std::size_t k = 0; k < t.size(); ++k) r.push_back(rewards.at(t.state_ids[k]).at(t.action_ids[k]));
    out.push_back(std::move(r));
  }
  return dataset.WithRewards(out, provenance);
}

OfflineDataset MakeFigure1Dataset(const TabularMdp& mdp, std::uint64_t seed) {
  ContinuousWrapper wrapper(mdp);
  std::vector<ScriptedTrajectory> script;
  auto colored = figure1::DatasetTrajectories();
  for (const auto& c : colored) script.push_back({c.start, c.actions});
  auto trajs = Rollout(mdp, BehaviorPolicy::Scripted(script), seed,
                       static_cast<int>(colored.size()), wrapper);
  for (std::size_t i = 0; i < trajs.size(); ++i) trajs[i].id = colored[i].color;
  return OfflineDataset(std::move(trajs), {mdp.name, seed, "gt", ""});
}

DpSolution DatasetConstrainedValueIteration(const TabularMdp& mdp, const RewardTable& rewards,
                                            const OfflineDataset& dataset, double gamma) {
  std::vector<std::vector<bool>> support(mdp.num_states,
                                         std::vector<bool>(mdp.num_actions, false));
  for (const auto& traj : dataset.trajectories()) {
    if (traj.state_ids.empty()) {
      throw InvalidArgument("dataset-constrained Q needs tabular ids in trajectory " + traj.id);
    }
    for (std::size_t t = 0; t < traj.size(); ++t) {
      support.at(traj.state_ids[t]).at(traj.action_ids[t]) = true;
    }
  }
  return Solve(mdp, rewards, gamma, &support);
}

std::vector<int> FollowPolicy(const TabularMdp& mdp, const std::vector<int>& policy, int start) {
  std::vector<int> path = {start};
  int s = start;
  for (int t = 0; t < mdp.horizon; ++t) {
    int a = policy.at(s);
    int n = mdp.Next(s, a);
    if (n == kTerminal) break;
    path.push_back(n);
    if (mdp.terminal[n]) break;
    s = n;
  }
  return path;
}

double PathReturn(const TabularMdp& mdp, const RewardTable& rewards,
                  const std::vector<int>& policy, int start) {
  double total = 0.0;
  int s = start;
  for (int t = 0; t < mdp.horizon; ++t) {
    int a = policy.at(s);
    total += rewards[s][a];
    if (mdp.Ends(s, a)) break;
    s = mdp.Next(s, a);
  }
  return total;
}

InDatasetBest BestInDatasetReturn(const OfflineDataset& dataset, int start) {
  bool found = false;
  InDatasetBest best;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& traj = dataset.at(i);
    auto it = std::find(traj.state_ids.begin(), traj.state_ids.end(), start);
    if (it == traj.state_ids.end()) continue;
    std::size_t t = static_cast<std::size_t>(it - traj.state_ids.begin());
    if (!found || traj.rtg[t] > best.value) {
      best = {traj.rtg[t], traj.id, i, t};
      found = true;
    }
  }
  if (!found) {
    throw InvalidArgument("no dataset trajectory visits state " + std::to_string(start));
  }
  return best;
}

std::map<std::vector<int>, double> EnumerateReturns(const TabularMdp& mdp,
                                                    const RewardTable& rewards, int start,
                                                    std::size_t budget) {
  CheckRewards(mdp, rewards);
  std::map<std::vector<int>, double> out;
  std::size_t produced = 0;
  std::vector<int> path = {start};
  std::function<void(int, int, double)> walk = [&](int s, int depth, double total) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      double value = total + rewards[s][a];
      int n = mdp.Next(s, a);
      bool ends = mdp.Ends(s, a);
      if (n != kTerminal) path.push_back(n);
      if (ends || depth + 1 == mdp.horizon) {
        if (++produced > budget) {
          throw InvalidArgument("trajectory enumeration exceeded its budget of " +
                                std::to_string(budget));
        }
        auto [it, inserted] = out.emplace(path, value);
        if (!inserted) it->second = std::max(it->second, value);
      } else {
        walk(n, depth + 1, value);
      }
      if (n != kTerminal) path.pop_back();
    }
  };
  if (mdp.terminal.at(start)) return out;
  walk(start, 0, 0.0);
  return out;
}

BehaviorPolicy EpsilonOptimalPolicy(const TabularMdp& mdp, double epsilon, double gamma) {
  return BehaviorPolicy::EpsilonGreedy(ValueIteration(mdp, gamma).greedy, epsilon);
}

std::vector<RewardTable> LatticeCandidates(const TabularMdp& mdp,
                                           const std::vector<RewardEdge>& edges,
                                           const std::vector<double>& values) {
  if (values.empty()) throw InvalidArgument("lattice needs at least one value");
  double count = std::pow(static_cast<double>(values.size()), static_cast<double>(edges.size()));
  if (count > 1e4) throw InvalidArgument("lattice exceeds 10^4 candidates");
  for (const auto& e : edges) {
    if (e.state < 0 || e.state >= mdp.num_states || e.action < 0 ||
        e.action >= mdp.num_actions) {
      throw InvalidArgument("lattice edge out of range");
    }
  }
  std::vector<RewardTable> out;
  std::vector<std::size_t> digits(edges.size(), 0);
  while (true) {
    RewardTable table = mdp.reward;
    for (std::size_t k = 0; k < edges.size(); ++k) {
      table[edges[k].state][edges[k].action] = values[digits[k]];
    }
    out.push_back(std::move(table));
    // Odometer, last edge fastest.
    std::size_t k = edges.size();
    while (k > 0) {
      --k;
      if (++digits[k] < values.size()) break;
      digits[k] = 0;
      if (k == 0) return out;
    }
    if (edges.empty()) return out;
  }
}

namespace {

double TabularSegmentReturn(const OfflineDataset& dataset, const Segment& seg,
                            const RewardTable& rewards) {
  const auto& traj = dataset.at(seg.trajectory);
  if (traj.state_ids.empty()) throw InvalidArgument("trajectory " + traj.id + " is not tabular");
  double total = 0.0;
  for (std::size_t t = seg.start; t < seg.start + seg.length; ++t) {
    total += rewards[traj.state_ids[t]][traj.action_ids[t]];
  }
  return total;
}

// log sigmoid(x) without overflow.
double LogSigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace

double PreferenceLogLikelihood(const OfflineDataset& dataset, const PreferenceSet& prefs,
                               const RewardTable& rewards) {
  double total = 0.0;
  for (const auto& p : prefs.pairs) {
    double d = TabularSegmentReturn(dataset, p.seg1, rewards) -
               TabularSegmentReturn(dataset, p.seg0, rewards);
    total += p.y * LogSigmoid(d) + (1.0 - p.y) * LogSigmoid(-d);
  }
  return total;
}

std::size_t ConfidenceSet::count() const {
  return static_cast<std::size_t>(std::count(member.begin(), member.end(), true));
}

ConfidenceSet BuildConfidenceSet(const OfflineDataset& dataset, const PreferenceSet& prefs,
                                 const std::vector<RewardTable>& candidates, double zeta) {
  if (candidates.empty()) throw InvalidArgument("confidence set needs candidates");
  if (!(zeta >= 0.0)) throw InvalidArgument("slack must be non-negative");
  ConfidenceSet set;
  set.zeta = zeta;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    set.loglik.push_back(PreferenceLogLikelihood(dataset, prefs, candidates[i]));
    if (set.loglik[i] > set.loglik[set.mle]) set.mle = i;
  }
  double threshold = set.loglik[set.mle] - zeta;
  for (double ll : set.loglik) set.member.push_back(ll >= threshold);
  return set;
}

double ConfidenceSlack(std::size_t num_candidates, std::size_t num_pairs, double delta,
                       double c) {
  if (num_candidates == 0 || num_pairs == 0 || !(delta > 0.0)) {
    throw InvalidArgument("slack needs candidates, pairs and a positive delta");
  }
  double zeta = c * std::log(static_cast<double>(num_candidates) /
                             (static_cast<double>(num_pairs) * delta));
  return std::max(0.0, zeta);
}

PessimismResult PessimisticMleDemo(const TabularMdp& mdp, const OfflineDataset& dataset,
                                   const PreferenceSet& prefs,
                                   const std::vector<RewardTable>& candidates, double zeta) {
  PessimismResult result;
  result.set = BuildConfidenceSet(dataset, prefs, candidates, zeta);
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (result.set.member[i]) members.push_back(i);
  }
  // The MLE always belongs to the set.
  if (members.empty()) throw Error("confidence set is empty");

  // Reference baseline per member: mean dataset-trajectory return.
  std::vector<double> baseline(candidates.size(), 0.0);
  for (std::size_t i : members) {
    double total = 0.0;
    for (std::size_t k = 0; k < dataset.size(); ++k) {
      total += TabularSegmentReturn(dataset, {k, 0, dataset.at(k).size()}, candidates[i]);
    }
    baseline[i] = total / static_cast<double>(std::max<std::size_t>(1, dataset.size()));
  }

  std::vector<int> acting;
  for (int s = 0; s < mdp.num_states; ++s) {
    if (!mdp.terminal[s]) acting.push_back(s);
  }
  double policies = std::pow(static_cast<double>(mdp.num_actions),
                             static_cast<double>(acting.size()));
  if (policies > 1e5) throw InvalidArgument("too many deterministic policies to enumerate");

  std::vector<int> policy(mdp.num_states, 0);
  bool first = true;
  while (true) {
    double worst = std::numeric_limits<double>::infinity();
    std::size_t arg = members.front();
    for (std::size_t i : members) {
      double value = 0.0;
      for (int s0 : mdp.initial_states) value += PathReturn(mdp, candidates[i], policy, s0);
      value /= static_cast<double>(mdp.initial_states.size());
      double gap = value - baseline[i];
      if (gap < worst) {
        worst = gap;
        arg = i;
      }
    }
    if (first || worst > result.objective) {
      result.objective = worst;
      result.policy = policy;
      result.least_favorable = arg;
      first = false;
    }
    std::size_t k = acting.size();
    bool done = true;
    while (k > 0) {
      --k;
      if (++policy[acting[k]] < mdp.num_actions) {
        done = false;
        break;
      }
      policy[acting[k]] = 0;
    }
    if (done) break;
  }
  return result;
}

PessimismDemoCase MakePessimismDemoCase() {
  PessimismDemoCase c;
  TabularMdp& mdp = c.mdp;
  mdp.name = "pessimism-demo";
  mdp.num_states = 3;
  mdp.num_actions = 2;
  mdp.next = {{1, 2}, {kTerminal, 2}, {kTerminal, kTerminal}};
  mdp.reward = {{0.5, 1.5}, {1.0, 0.0}, {1.5, 0.5}};
  mdp.terminal = {false, false, false};
  mdp.initial_states = {0};
  mdp.horizon = 3;
  mdp.Validate();
  for (int s = 0; s < 3; ++s) {
    for (int a = 0; a < 2; ++a) c.edges.push_back({s, a});
  }
  c.values = {0.0, 0.5, 1.0, 1.5};
  return c;
}

PreferenceSet SampleDistinctPreferences(const OfflineDataset& dataset, std::size_t count,
                                        std::uint64_t seed) {
  if (dataset.size() == 0) throw InvalidArgument("dataset is empty");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_traj(0, dataset.size() - 1);
  auto random_segment = [&] {
    std::size_t i = pick_traj(rng);
    std::size_t n = dataset.at(i).size();
    std::uniform_int_distribution<std::size_t> pick_start(0, n - 1);
    std::size_t start = pick_start(rng);
    std::uniform_int_distribution<std::size_t> pick_len(1, n - start);
    return Segment{i, start, pick_len(rng)};
  };
  PreferenceSet prefs;
  prefs.mode = "stochastic";
  prefs.seed = seed;
  std::size_t attempts = 0;
  while (prefs.pairs.size() < count) {
    if (++attempts > 1000 * (count + 1)) {
      throw InvalidArgument("dataset has too few segments with distinct returns");
    }
    Segment a = random_segment();
    Segment b = random_segment();
    if (SegmentReturn(dataset, a) == SegmentReturn(dataset, b)) continue;
    prefs.pairs.push_back({a, b, Annotate(dataset, a, b, AnnotationMode::kStochastic, rng)});
  }
  return prefs;
}

}  // namespace dtr
