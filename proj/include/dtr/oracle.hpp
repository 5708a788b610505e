#pragma once

// Exact oracles for tabular environments: value iteration, the CSM
// in-dataset oracle, exhaustive trajectory enumeration and a brute-force
// pessimistic maximum-likelihood demonstration.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dtr/dataset.hpp"
#include "dtr/env.hpp"

namespace dtr {

using RewardTable = std::vector<std::vector<double>>;

struct DpSolution {
  RewardTable q;            // S x A
  std::vector<double> v;    // S; 0 on terminal states
  std::vector<int> greedy;  // argmax_a q, lowest index on ties
  double gamma = 1.0;
  double residual = 0.0;    // sup-norm Bellman residual at exit
  int iterations = 0;
  // Dataset-constrained solutions only: support[s][a] is true when (s, a)
  // occurs in the dataset. Unsupported entries of q hold -infinity.
  std::vector<std::vector<bool>> support;
};

// Q(s,a) = r(s,a) + gamma * V(next(s,a)), V = max_a Q, V = 0 once the
// episode ends. gamma must lie in (0, 1]; gamma = 1 requires an acyclic
// transition graph (DomainError otherwise). Iterates until the Bellman
// residual is below 1e-10.
DpSolution ValueIteration(const TabularMdp& mdp, const RewardTable& rewards, double gamma);
inline DpSolution ValueIteration(const TabularMdp& mdp, double gamma) {
  return ValueIteration(mdp, mdp.reward, gamma);
}

// Value iteration restricted to (s, a) pairs present in `dataset` (which
// must carry tabular ids); the max at each state ranges over supported
// actions only and states without support have value 0.
DpSolution DatasetConstrainedValueIteration(const TabularMdp& mdp, const RewardTable& rewards,
                                            const OfflineDataset& dataset, double gamma);

// Copy of `dataset` whose rewards are read from the table via tabular ids.
OfflineDataset WithTableRewards(const OfflineDataset& dataset, const RewardTable& rewards,
                                const std::string& provenance);

// The four colored figure1 trajectories with rewards from `mdp`.
OfflineDataset MakeFigure1Dataset(const TabularMdp& mdp, std::uint64_t seed);

// States visited by following `policy` from `start` until the episode ends
// or the horizon runs out. Includes the final state when one exists.
std::vector<int> FollowPolicy(const TabularMdp& mdp, const std::vector<int>& policy, int start);
double PathReturn(const TabularMdp& mdp, const RewardTable& rewards,
                  const std::vector<int>& policy, int start);

struct InDatasetBest {
  double value = 0.0;   // rtg at the first visit of the start state
  std::string id;
  std::size_t trajectory = 0;
  std::size_t step = 0;
};

// The conditional-sequence-modeling oracle: the dataset trajectory with the
// largest return-to-go from its first visit of `start`. Earliest trajectory
// wins ties. Throws InvalidArgument when no trajectory visits `start`.
InDatasetBest BestInDatasetReturn(const OfflineDataset& dataset, int start);

// Every feasible trajectory from `start`, keyed by visited-state path, with
// its exact return. Paths reached by several action sequences keep the
// largest return. Throws InvalidArgument past `budget` trajectories.
std::map<std::vector<int>, double> EnumerateReturns(const TabularMdp& mdp,
                                                    const RewardTable& rewards, int start,
                                                    std::size_t budget = 1000000);

// Behavior policy acting greedily w.r.t. the optimal Q with probability
// 1 - epsilon and uniformly otherwise.
BehaviorPolicy EpsilonOptimalPolicy(const TabularMdp& mdp, double epsilon, double gamma);

// ---------------------------------------------------------------------------
// Pessimistic MLE over a finite reward class.

struct RewardEdge {
  int state;
  int action;
};

// Axis-aligned lattice: each listed edge takes every value in `values`;
// unlisted entries keep the mdp's reward. At most 10^4 candidates.
std::vector<RewardTable> LatticeCandidates(const TabularMdp& mdp,
                                           const std::vector<RewardEdge>& edges,
                                           const std::vector<double>& values);

// Bradley-Terry log-likelihood of the labels under `rewards`; segment
// returns are computed from the tabular ids in `dataset`.
double PreferenceLogLikelihood(const OfflineDataset& dataset, const PreferenceSet& prefs,
                               const RewardTable& rewards);

struct ConfidenceSet {
  std::vector<double> loglik;
  std::size_t mle = 0;  // first candidate attaining the maximum
  double zeta = 0.0;
  std::vector<bool> member;

  std::size_t count() const;
};

// member[i] iff loglik[i] >= loglik[mle] - zeta.
ConfidenceSet BuildConfidenceSet(const OfflineDataset& dataset, const PreferenceSet& prefs,
                                 const std::vector<RewardTable>& candidates, double zeta);

// Slack of the confidence set: c * log(N_G / (N_p * delta)), floored at 0.
double ConfidenceSlack(std::size_t num_candidates, std::size_t num_pairs, double delta,
                       double c = 1.0);

struct PessimismResult {
  std::vector<int> policy;           // action per state
  std::size_t least_favorable = 0;   // candidate index of the minimizer
  double objective = 0.0;            // max over policies of min over the set
  ConfidenceSet set;
};

// For every deterministic policy, the minimum over set members of
//   V_psi(policy) - E_ref[return_psi(tau)],
// with V averaged over initial states and the reference expectation taken
// over dataset trajectories. Returns the max-min policy (first in
// enumeration order on ties) and its minimizing candidate.
PessimismResult PessimisticMleDemo(const TabularMdp& mdp, const OfflineDataset& dataset,
                                   const PreferenceSet& prefs,
                                   const std::vector<RewardTable>& candidates, double zeta);

// A three-state MDP small enough for exhaustive policy enumeration:
//   s0 -> {s1, s2}, s1 -> {end, s2}, s2 -> {end, end}.
// Every (state, action) is a lattice edge over {0, 0.5, 1, 1.5}; the ground
// truth lies on the lattice.
struct PessimismDemoCase {
  TabularMdp mdp;
  std::vector<RewardEdge> edges;
  std::vector<double> values;
};
PessimismDemoCase MakePessimismDemoCase();

// Preference pairs over random sub-segments of random length with distinct
// ground-truth returns, labelled by Bradley-Terry sampling under the dataset
// rewards.
PreferenceSet SampleDistinctPreferences(const OfflineDataset& dataset, std::size_t count,
                                        std::uint64_t seed);

}  // namespace dtr
